use crate::error::{invalid, Result};
use crate::filtergen::{Activation, FilterNetwork};
use crate::numcore::tensor::advance_index;
use crate::numcore::Tensor;

/// Three-layer Heaviside circuit over integer coordinates `[0, r)^N`.
///
/// Layer 1 holds a pair of comparators `[x_n ≥ j]`, `[x_n ≤ j]` for every
/// axis and value. Unit `j` of layer 2 is the conjunction of the `2N`
/// comparators for value `j`. The output unit is a disjunction over the
/// retained layer-2 units.
#[derive(Debug, Clone)]
pub struct ThresholdNetwork {
    axes: usize,
    length: usize,
    delta: f64,
    net: FilterNetwork,
}

impl ThresholdNetwork {
    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Bias shared by the layer-2 conjunction units.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn hidden_width(&self) -> usize {
        self.net.widths()[1]
    }

    pub fn widths(&self) -> &[usize] {
        self.net.widths()
    }

    pub fn network(&self) -> &FilterNetwork {
        &self.net
    }

    pub fn eval(&self, coords: &[usize]) -> Result<f64> {
        let x: Vec<f64> = coords.iter().map(|&c| c as f64).collect();
        Ok(self.net.eval(&x)?[0])
    }
}

fn comparator(axis: usize, value: usize, upper: bool, length: usize) -> usize {
    2 * (axis * length + value) + usize::from(upper)
}

/// Builds the circuit whose evaluated tensor is the `N`-axis identity of
/// side `r`.
pub fn build_identity_network(axes: usize, length: usize) -> Result<ThresholdNetwork> {
    if axes < 2 || length < 2 {
        return Err(invalid(format!("need N ≥ 2 and r ≥ 2, got N={axes}, r={length}")));
    }
    let f = 2 * axes * length;
    let mut w1 = vec![0.0; axes * f];
    let mut b1 = vec![0.0; f];
    for n in 0..axes {
        for j in 0..length {
            let lo = comparator(n, j, false, length);
            let hi = comparator(n, j, true, length);
            w1[n * f + lo] = 1.0;
            b1[lo] = 0.5 - j as f64;
            w1[n * f + hi] = -1.0;
            b1[hi] = j as f64 + 0.5;
        }
    }
    let delta = 0.5 - 2.0 * axes as f64;
    let mut w2 = vec![0.0; f * length];
    for n in 0..axes {
        for j in 0..length {
            for upper in [false, true] {
                w2[comparator(n, j, upper, length) * length + j] = 1.0;
            }
        }
    }
    let b2 = vec![delta; length];
    let w3 = vec![1.0; length];
    let net = FilterNetwork::from_weights(
        "theory",
        vec![
            Tensor::from_vec(vec![axes, f], w1)?,
            Tensor::from_vec(vec![f, length], w2)?,
            Tensor::from_vec(vec![length, 1], w3)?,
        ],
        vec![
            Tensor::from_vec(vec![f], b1)?,
            Tensor::from_vec(vec![length], b2)?,
            Tensor::scalar(-0.5).reshape(&[1])?,
        ],
        Activation::Sign,
    )?;
    Ok(ThresholdNetwork {
        axes,
        length,
        delta,
        net,
    })
}

/// Keeps only the first `r'` conjunction units in the output disjunction.
pub fn truncate_to_rank(net: &ThresholdNetwork, rank: usize) -> Result<ThresholdNetwork> {
    if rank < 2 || rank > net.length {
        return Err(invalid(format!("rank {rank} outside [2, {}]", net.length)));
    }
    let w3 = Tensor::from_fn(&[net.length, 1], |i| if i[0] < rank { 1.0 } else { 0.0 });
    let weights = vec![net.net.weight(0).clone(), net.net.weight(1).clone(), w3];
    let biases = (0..3).map(|l| net.net.bias(l).clone()).collect();
    Ok(ThresholdNetwork {
        net: FilterNetwork::from_weights("theory", weights, biases, Activation::Sign)?,
        ..net.clone()
    })
}

/// Evaluates the circuit at every coordinate of `[0, r)^N`.
pub fn evaluate_network_tensor(net: &ThresholdNetwork) -> Result<Tensor> {
    let shape = vec![net.length; net.axes];
    let total = net.length.pow(net.axes as u32);
    let mut idx = vec![0; net.axes];
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        data.push(net.eval(&idx)?);
        advance_index(&mut idx, &shape);
    }
    Tensor::from_vec(shape, data)
}

/// Ones where all indices agree and are below `diagonal`, zeros elsewhere.
pub fn identity_tensor(axes: usize, length: usize, diagonal: usize) -> Tensor {
    Tensor::from_fn(&vec![length; axes], |i| {
        if i[0] < diagonal && i.iter().all(|&v| v == i[0]) {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtergen::{ffn_evaluations, reset_ffn_evaluations};

    #[test]
    fn two_by_two_identity() {
        let net = build_identity_network(2, 2).unwrap();
        assert_eq!(net.eval(&[0, 0]).unwrap(), 1.0);
        assert_eq!(net.eval(&[1, 1]).unwrap(), 1.0);
        assert_eq!(net.eval(&[0, 1]).unwrap(), 0.0);
        assert_eq!(net.eval(&[1, 0]).unwrap(), 0.0);
        let t = evaluate_network_tensor(&net).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn widths_follow_construction() {
        let net = build_identity_network(2, 4).unwrap();
        assert_eq!(net.widths(), &[2, 16, 4, 1]);
        assert_eq!(net.hidden_width(), 2 * 2 * 4);
        assert_eq!(net.delta(), -3.5);
        assert!(build_identity_network(1, 4).is_err());
        assert!(build_identity_network(2, 1).is_err());
    }

    #[test]
    fn three_axis_diagonal_count() {
        let t = evaluate_network_tensor(&build_identity_network(3, 3).unwrap()).unwrap();
        assert_eq!(t.sum(), 3.0);
        let t8 = evaluate_network_tensor(&build_identity_network(2, 8).unwrap()).unwrap();
        assert_eq!(t8.sum(), 8.0);
        assert_eq!((0..8).map(|i| t8.get(&[i, i])).sum::<f64>(), 8.0);
    }

    #[test]
    fn evaluation_visits_every_coordinate() {
        let net = build_identity_network(3, 4).unwrap();
        reset_ffn_evaluations();
        evaluate_network_tensor(&net).unwrap();
        assert_eq!(ffn_evaluations(), 64);
    }

    #[test]
    fn truncation_keeps_leading_diagonal() {
        let net = build_identity_network(2, 4).unwrap();
        let full = truncate_to_rank(&net, 4).unwrap();
        assert_eq!(
            evaluate_network_tensor(&full).unwrap(),
            evaluate_network_tensor(&net).unwrap()
        );
        let two = evaluate_network_tensor(&truncate_to_rank(&net, 2).unwrap()).unwrap();
        assert_eq!(two, identity_tensor(2, 4, 2));
        assert!(truncate_to_rank(&net, 1).is_err());
        assert!(truncate_to_rank(&net, 5).is_err());
    }
}
