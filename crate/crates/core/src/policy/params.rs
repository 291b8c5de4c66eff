use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl PolicyConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 128,
            vocab_size,
            max_len: 128,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1 || self.hidden_dim < 1 || self.vocab_size < 5 || self.max_len < 2 {
            return Err(Error::InvalidConfig(format!("invalid policy config {self:?}")));
        }
        Ok(())
    }

    /// Attention projection width.
    pub fn attention_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Number of scalar parameters implied by the dimensions.
    pub fn parameter_count(&self) -> usize {
        let (v, e, h, a) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.attention_dim());
        let encoder = v * e + 3 * h * e + 3 * h * h + 3 * h;
        let decoder = v * e + 3 * h * (e + h) + 3 * h * h + 3 * h;
        let attention = 2 * a * h + 2 * a;
        let output = v * 2 * h + v;
        let value = 2 * h + 1;
        encoder + decoder + attention + output + value
    }
}

macro_rules! param_struct {
    ($($name:ident : $kind:ident),* $(,)?) => {
        /// Trainable tensors of the encoder-decoder policy. The same type
        /// holds gradients and optimizer moments.
        #[derive(Debug, Clone, PartialEq)]
        pub struct PolicyParams {
            $(pub $name: $kind<f64>,)*
        }

        impl PolicyParams {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            /// Every tensor as `(name, shape, values)` in a fixed order.
            pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
                vec![$((
                    stringify!($name),
                    self.$name.shape().to_vec(),
                    self.$name.as_slice().expect("standard layout"),
                )),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
                vec![$((
                    stringify!($name),
                    self.$name.as_slice_mut().expect("standard layout"),
                )),*]
            }

            pub fn zeros_like(&self) -> Self {
                Self { $($name: $kind::zeros(self.$name.raw_dim()),)* }
            }
        }
    };
}

param_struct! {
    enc_embed: Array2,
    enc_wx: Array2,
    enc_wh: Array2,
    enc_b: Array1,
    dec_embed: Array2,
    dec_wx: Array2,
    dec_wh: Array2,
    dec_b: Array1,
    att_wq: Array2,
    att_wk: Array2,
    att_b: Array1,
    att_v: Array1,
    out_w: Array2,
    out_b: Array1,
    value_w: Array1,
    value_b: Array1,
}

impl PolicyParams {
    /// Seeded initialization, uniform in `±1/sqrt(fan_in)`. Embedding rows
    /// use fan-in 1.
    pub fn init(cfg: &PolicyConfig) -> Result<Self> {
        cfg.validate()?;
        let (v, e, h, a) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.attention_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut mat = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
        };
        let enc_embed = mat(v, e, 1);
        let enc_wx = mat(3 * h, e, e);
        let enc_wh = mat(3 * h, h, h);
        let enc_b = mat(1, 3 * h, h);
        let dec_embed = mat(v, e, 1);
        let dec_wx = mat(3 * h, e + h, e + h);
        let dec_wh = mat(3 * h, h, h);
        let dec_b = mat(1, 3 * h, h);
        let att_wq = mat(a, h, h);
        let att_wk = mat(a, h, h);
        let att_b = mat(1, a, h);
        let att_v = mat(1, a, a);
        let out_w = mat(v, 2 * h, 2 * h);
        let out_b = mat(1, v, 2 * h);
        let value_w = mat(1, 2 * h, 2 * h);
        let value_b = mat(1, 1, 2 * h);
        let row = |m: Array2<f64>| {
            let n = m.len();
            m.into_shape_with_order(n).expect("row vector")
        };
        Ok(Self {
            enc_embed,
            enc_wx,
            enc_wh,
            enc_b: row(enc_b),
            dec_embed,
            dec_wx,
            dec_wh,
            dec_b: row(dec_b),
            att_wq,
            att_wk,
            att_b: row(att_b),
            att_v: row(att_v),
            out_w,
            out_b: row(out_b),
            value_w: row(value_w),
            value_b: row(value_b),
        })
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// Flat index → `(tensor, offset)` lookup.
    pub fn locate(&self, mut index: usize) -> Option<(&'static str, usize)> {
        for (name, _, data) in self.tensors() {
            if index < data.len() {
                return Some((name, index));
            }
            index -= data.len();
        }
        None
    }

    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for (_, _, data) in self.tensors() {
            if i < data.len() {
                return data[i];
            }
            i -= data.len();
        }
        panic!("flat index {index} out of range")
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for (_, data) in self.tensors_mut() {
            if i < data.len() {
                data[i] = value;
                return;
            }
            i -= data.len();
        }
        panic!("flat index {index} out of range")
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for ((_, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.2.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|x| x.is_finite()))
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|t| t.2.iter().any(|x| !x.is_finite()))
            .map(|t| t.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PolicyConfig {
        PolicyConfig {
            embed_dim: 4,
            hidden_dim: 4,
            vocab_size: 8,
            max_len: 10,
            seed: 3,
        }
    }

    #[test]
    fn seeded_init() {
        let a = PolicyParams::init(&tiny()).unwrap();
        assert_eq!(a, PolicyParams::init(&tiny()).unwrap());
        let b = PolicyParams::init(&PolicyConfig { seed: 4, ..tiny() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn parameter_count_matches_shapes() {
        for cfg in [tiny(), PolicyConfig::new(50)] {
            let p = PolicyParams::init(&cfg).unwrap();
            // Closed form written out independently of parameter_count().
            let (v, e, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
            let expected = 2 * v * e
                + 3 * h * e + 3 * h * h + 3 * h
                + 3 * h * (e + h) + 3 * h * h + 3 * h
                + h * h + h * h + h + h
                + v * 2 * h + v
                + 2 * h + 1;
            assert_eq!(p.len(), expected);
            assert_eq!(cfg.parameter_count(), expected);
        }
    }

    #[test]
    fn init_respects_bounds() {
        let cfg = tiny();
        let p = PolicyParams::init(&cfg).unwrap();
        let bound = 1.0 / ((cfg.embed_dim + cfg.hidden_dim) as f64).sqrt();
        assert!(p.dec_wx.iter().all(|x| x.abs() <= bound));
        assert!(p.enc_embed.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn flat_indexing_round_trips() {
        let mut p = PolicyParams::init(&tiny()).unwrap();
        let n = p.len();
        p.set_flat(n - 1, 42.0);
        assert_eq!(p.value_b[0], 42.0);
        assert_eq!(p.get_flat(n - 1), 42.0);
        assert_eq!(p.locate(0), Some(("enc_embed", 0)));
        assert!(p.locate(n).is_none());
    }
}
