//! Trainable-state serialization: a text manifest naming every tensor and
//! its shape, followed by the raw values as little-endian 64-bit floats in
//! manifest order. Round trips are bit-exact.

use crate::error::{io_err, GnfError, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const FORMAT_TAG: &str = "gnf-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub module: String,
    pub seed: u64,
    pub step: u64,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(module: &str, seed: u64, step: u64) -> Checkpoint {
        Checkpoint { module: module.to_string(), seed, step, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
            return Err(GnfError::Data(format!("bad tensor name {name:?}")));
        }
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(GnfError::Data(format!("duplicate tensor name {name:?}")));
        }
        self.tensors.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(FORMAT_TAG);
        header.push('\n');
        header.push_str(&format!("module {}\n", self.module));
        header.push_str(&format!("seed {}\n", self.seed));
        header.push_str(&format!("step {}\n", self.step));
        header.push_str(&format!("tensors {}\n", self.tensors.len()));
        for (name, t) in &self.tensors {
            header.push_str(&format!("{name} {} {}\n", t.rows(), t.cols()));
        }
        header.push_str("end\n");

        let mut out = header.into_bytes();
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |what: &str| GnfError::Data(format!("checkpoint: {what}"));
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<&str> {
            let rest = &bytes[*pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| bad("header is not valid text"))?;
            *pos += nl + 1;
            Ok(line)
        };

        if next_line(&mut pos)? != FORMAT_TAG {
            return Err(bad("unrecognized format tag"));
        }
        let field = |line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}` line, got {line:?}")))
        };
        let module = field(next_line(&mut pos)?, "module")?;
        let seed: u64 = field(next_line(&mut pos)?, "seed")?
            .parse()
            .map_err(|_| bad("seed is not an integer"))?;
        let step: u64 = field(next_line(&mut pos)?, "step")?
            .parse()
            .map_err(|_| bad("step is not an integer"))?;
        let count: usize = field(next_line(&mut pos)?, "tensors")?
            .parse()
            .map_err(|_| bad("tensor count is not an integer"))?;

        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next_line(&mut pos)?;
            let mut parts = line.split(' ');
            let name = parts.next().filter(|s| !s.is_empty());
            let rows = parts.next().and_then(|s| s.parse::<usize>().ok());
            let cols = parts.next().and_then(|s| s.parse::<usize>().ok());
            match (name, rows, cols, parts.next()) {
                (Some(n), Some(r), Some(c), None) => manifest.push((n.to_string(), r, c)),
                _ => return Err(bad(&format!("bad manifest line {line:?}"))),
            }
        }
        if next_line(&mut pos)? != "end" {
            return Err(bad("missing end marker"));
        }

        let payload = &bytes[pos..];
        let expected: usize = manifest.iter().map(|(_, r, c)| r * c * 8).sum();
        if payload.len() < expected {
            return Err(bad(&format!(
                "payload holds {} bytes, manifest needs {expected}",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(bad(&format!(
                "{} trailing bytes after payload",
                payload.len() - expected
            )));
        }

        let mut ckpt = Checkpoint::new(&module, seed, step);
        let mut off = 0usize;
        for (name, rows, cols) in manifest {
            let n = rows * cols;
            let mut data = Vec::with_capacity(n);
            for k in 0..n {
                let b: [u8; 8] = payload[off + k * 8..off + k * 8 + 8].try_into().unwrap();
                data.push(f64::from_le_bytes(b));
            }
            off += n * 8;
            ckpt.push(&name, Tensor::from_vec(rows, cols, data)?)?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
        }
        fs::write(path, self.to_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Build a checkpoint from a model's named parameters.
pub fn pack(module: &str, seed: u64, step: u64, named: &[(String, &Tensor)]) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new(module, seed, step);
    for (name, t) in named {
        ckpt.push(name, (*t).clone())?;
    }
    Ok(ckpt)
}

/// Restore parameters by name. Every requested name must be present with a
/// matching shape; extra tensors in the checkpoint are left alone (modules
/// store auxiliary statistics alongside weights).
pub fn unpack_into(ckpt: &Checkpoint, names: &[String], slots: &mut [&mut Tensor]) -> Result<()> {
    if names.len() != slots.len() {
        return Err(GnfError::Shape(format!(
            "{} names for {} parameter slots",
            names.len(),
            slots.len()
        )));
    }
    for (name, slot) in names.iter().zip(slots.iter_mut()) {
        let t = ckpt
            .get(name)
            .ok_or_else(|| GnfError::Data(format!("checkpoint is missing tensor {name:?}")))?;
        if t.shape() != slot.shape() {
            return Err(GnfError::Shape(format!(
                "checkpoint tensor {name:?} is {}x{}, model wants {}x{}",
                t.rows(),
                t.cols(),
                slot.rows(),
                slot.cols()
            )));
        }
        **slot = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowConfig, FlowModel};
    use crate::rng::Rng;

    fn tricky_tensor() -> Tensor {
        Tensor::from_vec(
            2,
            4,
            vec![
                0.0,
                -0.0,
                f64::MIN_POSITIVE / 8.0,
                std::f64::consts::PI,
                -1.7e308,
                2.2e-308,
                1.0 + f64::EPSILON,
                -42.5,
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ckpt = Checkpoint::new("density", 7, 1234);
        ckpt.push("w", tricky_tensor()).unwrap();
        ckpt.push("step0.f1.wq", Tensor::filled(3, 2, -0.25)).unwrap();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.module, "density");
        assert_eq!(back.seed, 7);
        assert_eq!(back.step, 1234);
        assert_eq!(back.tensors().len(), 2);
        for ((an, a), (bn, b)) in ckpt.tensors().iter().zip(back.tensors()) {
            assert_eq!(an, bn);
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("gnf-ckpt-test");
        let path = dir.join("model.ckpt");
        let mut ckpt = Checkpoint::new("toy", 1, 2);
        ckpt.push("a", tricky_tensor()).unwrap();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_inputs_are_rejected_with_reasons() {
        let err = Checkpoint::from_bytes(b"not a checkpoint\n").unwrap_err();
        assert!(err.to_string().contains("format tag"), "{err}");

        let mut ckpt = Checkpoint::new("m", 0, 0);
        ckpt.push("a", Tensor::filled(2, 2, 1.0)).unwrap();
        let mut bytes = ckpt.to_bytes();
        bytes.pop();
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");

        let mut bytes = ckpt.to_bytes();
        bytes.push(0u8);
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");

        let garbled = String::from_utf8(ckpt.to_bytes()[..60].to_vec());
        drop(garbled);
        let text = format!("{FORMAT_TAG}\nmodule m\nseed x\n");
        let err = Checkpoint::from_bytes(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn names_with_whitespace_are_rejected() {
        let mut ckpt = Checkpoint::new("m", 0, 0);
        assert!(ckpt.push("has space", Tensor::zeros(1, 1)).is_err());
        assert!(ckpt.push("", Tensor::zeros(1, 1)).is_err());
        ckpt.push("ok", Tensor::zeros(1, 1)).unwrap();
        assert!(ckpt.push("ok", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn flow_model_round_trips_through_pack_and_unpack() {
        let cfg = FlowConfig {
            feature_dim: 4,
            steps: 2,
            heads: 2,
            head_dim: 2,
            msg_hidden: vec![3],
            msg_dim: 2,
            normalize_input: true,
        };
        let model = FlowModel::init(cfg.clone(), &mut Rng::new(50)).unwrap();
        let ckpt = pack("flow", 50, 0, &model.named()).unwrap();
        let bytes = ckpt.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();

        let mut fresh = FlowModel::init(cfg, &mut Rng::new(99)).unwrap();
        let names: Vec<String> = fresh.named().iter().map(|(n, _)| n.clone()).collect();
        unpack_into(&loaded, &names, &mut fresh.tensors_mut()).unwrap();
        for (a, b) in model.tensors().iter().zip(fresh.tensors()) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn unpack_rejects_missing_names_and_shape_mismatches() {
        let mut ckpt = Checkpoint::new("m", 0, 0);
        ckpt.push("w", Tensor::filled(2, 3, 1.0)).unwrap();

        let mut slot = Tensor::zeros(2, 3);
        let missing = ["nope".to_string()];
        let err = unpack_into(&ckpt, &missing, &mut [&mut slot]).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");

        let mut wrong = Tensor::zeros(3, 2);
        let names = ["w".to_string()];
        let err = unpack_into(&ckpt, &names, &mut [&mut wrong]).unwrap_err();
        assert!(err.to_string().contains("2x3"), "{err}");
    }
}
