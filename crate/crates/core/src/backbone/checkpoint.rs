use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Module, Tensor};

const MAGIC: &str = "HYND-CHECKPOINT v1";

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Parameter names and shapes as listed in a checkpoint manifest.
pub type Manifest = Vec<(String, Vec<usize>)>;

/// Writes a text manifest (`name dims` per line, `END`) followed by every
/// parameter and state value as little-endian f64 in manifest order.
pub fn save_checkpoint(module: &impl Module, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut params = module.params();
    params.extend(module.state());
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "params {}", params.len())?;
    for p in &params {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        writeln!(w, "{} {}", p.name, dims.join(","))?;
    }
    writeln!(w, "END")?;
    for p in &params {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(corrupt("manifest ended early"));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

fn parse_manifest(r: &mut impl BufRead) -> Result<Manifest> {
    if read_line(r)? != MAGIC {
        return Err(corrupt("missing checkpoint header"));
    }
    let count: usize = read_line(r)?
        .strip_prefix("params ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| corrupt("missing parameter count"))?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = read_line(r)?;
        let (name, dims) = line
            .rsplit_once(' ')
            .ok_or_else(|| corrupt(format!("bad manifest line '{line}'")))?;
        let dims = dims
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| corrupt(format!("bad shape in '{line}'")))?;
        entries.push((name.to_string(), dims));
    }
    if read_line(r)? != "END" {
        return Err(corrupt("manifest is not terminated"));
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    parse_manifest(&mut BufReader::new(File::open(path)?))
}

/// Loads values into a module with the same parameter names and shapes.
pub fn load_checkpoint(module: &mut impl Module, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let manifest = parse_manifest(&mut r)?;
    let mut values: HashMap<String, Tensor> = HashMap::with_capacity(manifest.len());
    for (name, dims) in manifest {
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| corrupt(format!("payload for '{name}' is truncated")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        values.insert(name, Tensor::from_vec(dims, data)?);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(corrupt("trailing bytes after payload"));
    }
    {
        let mut expected = module.params();
        expected.extend(module.state());
        if expected.len() != values.len() {
            return Err(corrupt(format!(
                "checkpoint holds {} tensors, model has {}",
                values.len(),
                expected.len()
            )));
        }
        for p in expected {
            match values.get(&p.name) {
                Some(v) if v.shape() == p.value.shape() => {}
                Some(v) => {
                    return Err(corrupt(format!(
                        "'{}' has shape {:?} in checkpoint, {:?} in model",
                        p.name,
                        v.shape(),
                        p.value.shape()
                    )))
                }
                None => return Err(corrupt(format!("'{}' missing from checkpoint", p.name))),
            }
        }
    }
    for p in module.params_mut() {
        p.value = values.remove(&p.name).expect("validated above");
    }
    for p in module.state_mut() {
        p.value = values.remove(&p.name).expect("validated above");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::block::{build_plan, MixerKind, PlanMode};
    use crate::backbone::model::{forward_classifier, Classifier, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Classifier {
        let plan = build_plan(2, PlanMode::Alternate, MixerKind::Hyena2d).unwrap();
        let mut cfg = ModelConfig::new(plan);
        cfg.image_size = 8;
        cfg.patch = 4;
        cfg.channels = 4;
        cfg.heads = 2;
        cfg.encoding_width = 4;
        Classifier::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn round_trip_restores_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = model(1);
        save_checkpoint(&a, &path).unwrap();
        let mut b = model(2);
        let x = Tensor::randn(&[2, 8, 8, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_ne!(forward_classifier(&a, &x).unwrap(), forward_classifier(&b, &x).unwrap());
        load_checkpoint(&mut b, &path).unwrap();
        assert_eq!(forward_classifier(&a, &x).unwrap(), forward_classifier(&b, &x).unwrap());
        let manifest = read_manifest(&path).unwrap();
        assert_eq!(manifest.len(), a.params().len() + a.state().len());
        assert_eq!(manifest[0], ("embed.weight".to_string(), vec![48, 4]));
    }

    #[test]
    fn rejects_truncated_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model(1), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&mut model(1), &path),
            Err(Error::Checkpoint(_))
        ));
        std::fs::write(&path, b"not a checkpoint\n").unwrap();
        assert!(load_checkpoint(&mut model(1), &path).is_err());

        let plan = build_plan(1, PlanMode::HyenaOnly, MixerKind::Hyena2d).unwrap();
        let mut cfg = ModelConfig::new(plan);
        cfg.image_size = 8;
        cfg.patch = 4;
        cfg.channels = 4;
        cfg.encoding_width = 4;
        let other = Classifier::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        save_checkpoint(&other, &path).unwrap();
        assert!(load_checkpoint(&mut model(1), &path).is_err());
    }
}
