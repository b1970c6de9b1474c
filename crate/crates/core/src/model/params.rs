use super::config::{Modality, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use std::collections::HashMap;

/// Named parameter tensors of all four stacks.
///
/// Names look like `lyric.enc.layer0.self.wq`; the first two components
/// identify the stack (`lyric.enc`, `lyric.dec`, `melody.enc`, `melody.dec`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Matrix>,
    index: HashMap<String, usize>,
}

pub fn stack_name(m: Modality, decoder: bool) -> String {
    format!("{}.{}", m.name(), if decoder { "dec" } else { "enc" })
}

fn attention_shapes(prefix: &str, d: usize, out: &mut Vec<(String, usize, usize)>) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push((format!("{prefix}.{w}"), d, d));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        out.push((format!("{prefix}.{b}"), 1, d));
    }
}

fn norm_shapes(prefix: &str, d: usize, out: &mut Vec<(String, usize, usize)>) {
    out.push((format!("{prefix}.g"), 1, d));
    out.push((format!("{prefix}.b"), 1, d));
}

/// Every parameter name with its shape, in a fixed order.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let (d, ff) = (cfg.hidden, cfg.ff);
    let mut out = Vec::new();
    for m in [Modality::Lyric, Modality::Melody] {
        let v = cfg.vocab(m);
        for decoder in [false, true] {
            let s = stack_name(m, decoder);
            out.push((format!("{s}.embed"), v, d));
            for l in 0..cfg.layers {
                let p = format!("{s}.layer{l}");
                attention_shapes(&format!("{p}.self"), d, &mut out);
                if decoder {
                    attention_shapes(&format!("{p}.cross"), d, &mut out);
                }
                let norms = if decoder { 3 } else { 2 };
                for n in 1..=norms {
                    norm_shapes(&format!("{p}.ln{n}"), d, &mut out);
                }
                out.push((format!("{p}.ff.w1"), d, ff));
                out.push((format!("{p}.ff.b1"), 1, ff));
                out.push((format!("{p}.ff.w2"), ff, d));
                out.push((format!("{p}.ff.b2"), 1, d));
            }
            norm_shapes(&format!("{s}.ln"), d, &mut out);
            if decoder {
                out.push((format!("{s}.out.w"), d, v));
                out.push((format!("{s}.out.b"), 1, v));
            }
        }
    }
    out
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, r, c) in parameter_shapes(cfg) {
            let leaf = name.rsplit('.').next().unwrap_or("");
            let m = if name.ends_with(".embed") {
                let dist = Uniform::new_inclusive(-0.1, 0.1);
                Matrix::from_vec(r, c, (0..r * c).map(|_| dist.sample(&mut rng)).collect())
            } else if r == 1 {
                let fill = if leaf == "g" { 1.0 } else { 0.0 };
                Matrix::filled(r, c, fill)
            } else {
                let a = (6.0 / (r + c) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a);
                Matrix::from_vec(r, c, (0..r * c).map(|_| dist.sample(&mut rng)).collect())
            };
            names.push(name);
            tensors.push(m);
        }
        Ok(Self::from_parts(names, tensors))
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Matrix>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    /// Checks names and shapes against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = parameter_shapes(cfg);
        if expected.len() != self.names.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", expected.len(), self.names.len())));
        }
        for (name, r, c) in expected {
            let t = self.get(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != (r, c) {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", t.shape(), (r, c))));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Stack prefix (`lyric.enc`, ...) of parameter `i`.
    pub fn stack_of(&self, i: usize) -> &str {
        let n = &self.names[i];
        let second = n.match_indices('.').nth(1).map_or(n.len(), |(p, _)| p);
        &n[..second]
    }

    pub fn count_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}
