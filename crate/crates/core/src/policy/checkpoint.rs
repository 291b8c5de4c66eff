use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyConfig, PolicyParams};
use crate::error::{Error, Result};

const FORMAT: &str = "finegrain-policy/1";

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: PolicyConfig,
    tensors: Vec<Tensor>,
}

pub(super) fn save(policy: &Policy, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        config: policy.config,
        tensors: policy
            .params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| Tensor {
                name: name.into(),
                shape,
                data: data.to_vec(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&ckpt)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(super) fn load(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format != FORMAT {
        return Err(Error::parse(path, 1, format!("unknown checkpoint format {:?}", ckpt.format)));
    }
    let mut params = PolicyParams::init(&ckpt.config)?;
    let expected: Vec<_> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if expected.len() != ckpt.tensors.len() {
        return Err(Error::parse(path, 1, "tensor count does not match config"));
    }
    for (((name, shape), (_, dst)), t) in expected.into_iter().zip(params.tensors_mut()).zip(&ckpt.tensors) {
        if t.name != name || t.shape != shape || t.data.len() != dst.len() {
            return Err(Error::parse(
                path,
                1,
                format!("tensor {} {:?} does not match expected {name} {shape:?}", t.name, t.shape),
            ));
        }
        dst.copy_from_slice(&t.data);
    }
    if let Some(name) = params.first_non_finite() {
        return Err(Error::parse(path, 1, format!("non-finite value in {name}")));
    }
    Policy::from_params(ckpt.config, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = Policy::new(PolicyConfig {
            embed_dim: 3,
            hidden_dim: 4,
            vocab_size: 9,
            max_len: 8,
            seed: 21,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();
        let q = Policy::load(&path).unwrap();
        assert_eq!(p, q);
        std::fs::write(&path, "{\"format\":\"x\"}").unwrap();
        assert!(Policy::load(&path).is_err());
    }
}
