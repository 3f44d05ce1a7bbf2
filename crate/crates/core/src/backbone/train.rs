use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Classifier;
use crate::error::{invalid, shape_err, Error, Result};
use crate::numcore::{Module, Param, Tape, Tensor};

/// Images `(N, H, W, c)` with integer labels in `[0, classes)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    /// Class count inferred as one past the largest label.
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::with_classes(images, labels, classes)
    }

    pub fn with_classes(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(shape_err(format!(
                "{} labels for images {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(invalid(format!("label {bad} outside {classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let s = self.images.shape();
        let per = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let images = Tensor::from_vec(vec![indices.len(), s[1], s[2], s[3]], data)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx)?;
        Dataset::with_classes(images, labels, self.classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            steps: 100,
            seed: 0,
        }
    }
}

/// Adaptive-moment optimizer state, one slot per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: &TrainConfig) -> Self {
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>, grads: &[Tensor]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if self.lr == 0.0 {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Mini-batch trainer with a seeded reshuffle at every pass over the data.
pub struct Trainer {
    config: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        Ok(Trainer {
            adam: Adam::new(&config),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            cursor: 0,
            step: 0,
            config,
        })
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let want = self.config.batch_size.min(n);
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One optimizer step; returns the batch loss before the update.
    pub fn step(&mut self, model: &mut Classifier, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let step = self.step;
        let diverged = |loss: f64| Error::Diverged { step, loss };
        let (images, labels) = data.batch(&self.next_indices(data.len()))?;
        let mut tape = Tape::new();
        let result = model
            .forward(&mut tape, &images)
            .and_then(|logits| tape.cross_entropy(logits, &labels));
        let loss = match result {
            Ok(l) => l,
            Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
            Err(e) => return Err(e),
        };
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(diverged(value));
        }
        let grads = tape.backward(loss).map_err(|e| match e {
            Error::NonFinite(_) => diverged(value),
            e => e,
        })?;
        let g = tape.param_gradients(&grads, &model.params());
        if g.iter().any(|t| !t.all_finite()) {
            return Err(diverged(value));
        }
        drop(tape);
        self.adam.step(model.params_mut(), &g);
        model.project_params();
        self.step += 1;
        Ok(value)
    }
}

/// Runs `config.steps` updates and returns the per-step losses.
pub fn train_epoch(model: &mut Classifier, data: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(config.clone())?;
    (0..config.steps).map(|_| trainer.step(model, data)).collect()
}

/// Mean loss and accuracy over a dataset, in batches of `batch_size`.
pub fn evaluate(model: &Classifier, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (images, labels) = data.batch(chunk)?;
        let mut tape = Tape::inference();
        let logits = model.forward(&mut tape, &images)?;
        let l = tape.cross_entropy(logits, &labels)?;
        loss += tape.value(l).data()[0] * chunk.len() as f64;
        let k = tape.shape(logits)[1];
        for (row, &y) in tape.value(logits).data().chunks(k).zip(&labels) {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            correct += usize::from(pred == y);
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::block::{build_plan, MixerKind, PlanMode};
    use crate::backbone::model::ModelConfig;

    fn setup() -> (Classifier, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = build_plan(1, PlanMode::HyenaOnly, MixerKind::Hyena2d).unwrap();
        let mut cfg = ModelConfig::new(plan);
        cfg.image_size = 8;
        cfg.patch = 4;
        cfg.channels = 4;
        cfg.heads = 1;
        cfg.classes = 3;
        cfg.encoding_width = 4;
        let model = Classifier::new(cfg, &mut rng).unwrap();
        let images = Tensor::randn(&[6, 8, 8, 3], 1.0, &mut rng);
        (model, Dataset::new(images, vec![0, 1, 2, 0, 1, 2]).unwrap())
    }

    fn cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            batch_size: 4,
            steps: 3,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_step_size_leaves_parameters() {
        let (mut model, data) = setup();
        let before: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
        train_epoch(&mut model, &data, &cfg(0.0)).unwrap();
        for (p, b) in model.params().iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let (mut a, data) = setup();
        let mut b = a.clone();
        let ta = train_epoch(&mut a, &data, &cfg(1e-2)).unwrap();
        let tb = train_epoch(&mut b, &data, &cfg(1e-2)).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 3);
    }

    #[test]
    fn divergence_reports_step() {
        let (mut model, data) = setup();
        let mut trainer = Trainer::new(cfg(1e-3)).unwrap();
        trainer.step(&mut model, &data).unwrap();
        model.head.weight.value.data_mut()[0] = f64::INFINITY;
        match trainer.step(&mut model, &data) {
            Err(Error::Diverged { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn batches_cover_dataset() {
        let (_, data) = setup();
        let mut t = Trainer::new(TrainConfig {
            batch_size: 3,
            ..cfg(0.0)
        })
        .unwrap();
        let mut seen: Vec<usize> = t.next_indices(6);
        seen.extend(t.next_indices(6));
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
        assert!(evaluate(&setup().0, &data, 4).unwrap().1 <= 1.0);
    }
}
