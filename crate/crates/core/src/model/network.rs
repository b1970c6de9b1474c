//! Pre-norm transformer encoder/decoder stacks recorded on an autograd tape.

use super::attention::{causal_mask, sentence_mask};
use super::config::{Modality, ModelConfig};
use super::params::{stack_name, ModelParams};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub fn positional_encoding(positions: &[usize], d: usize) -> Matrix {
    let mut pe = Matrix::zeros(positions.len(), d);
    for (r, &pos) in positions.iter().enumerate() {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            pe[(r, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

pub(crate) struct Net<'a> {
    pub g: Graph,
    params: &'a ModelParams,
    cfg: &'a ModelConfig,
}

/// Decoder output for one sequence.
pub(crate) struct DecoderOut {
    pub logits: Var,
    /// Last-layer cross-attention averaged over heads (target x source).
    pub attention: Var,
}

impl<'a> Net<'a> {
    pub fn new(g: Graph, params: &'a ModelParams, cfg: &'a ModelConfig) -> Self {
        Self { g, params, cfg }
    }

    fn p(&mut self, name: &str) -> Var {
        let i = self.params.index_of(name).unwrap_or_else(|| panic!("no parameter named {name}"));
        self.g.param(i, &self.params.tensors()[i])
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Var {
        let w = self.p(w);
        let b = self.p(b);
        let y = self.g.matmul(x, w);
        self.g.add_row(y, b)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        self.g.layer_norm(x, g, b)
    }

    fn embed(&mut self, stack: &str, ids: &[usize], positions: &[usize]) -> Result<Var> {
        let d = self.cfg.hidden;
        let table = self.p(&format!("{stack}.embed"));
        let vocab = self.g.value(table).rows;
        if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        if let Some(&p) = positions.iter().max() {
            if p >= self.cfg.max_len {
                return Err(Error::TooLong { len: p + 1, max_len: self.cfg.max_len });
            }
        }
        let e = self.g.gather(table, ids);
        let e = self.g.scale(e, (d as f64).sqrt());
        let pe = positional_encoding(positions, d);
        let x = self.g.add_const(e, &pe);
        Ok(self.g.dropout(x))
    }

    /// Multi-head attention; returns the output projection and per-head weights.
    fn attention(&mut self, prefix: &str, q_in: Var, kv_in: Var, mask: Option<&Matrix>) -> Result<(Var, Vec<Var>)> {
        let q = self.linear(q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
        let k = self.linear(kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
        let v = self.linear(kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
        let dk = self.cfg.head_dim();
        let mut contexts = Vec::with_capacity(self.cfg.heads);
        let mut weights = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let qh = self.g.cols(q, h * dk, dk);
            let kh = self.g.cols(k, h * dk, dk);
            let vh = self.g.cols(v, h * dk, dk);
            let s = self.g.matmul_t(qh, kh);
            let mut s = self.g.scale(s, 1.0 / (dk as f64).sqrt());
            if let Some(m) = mask {
                s = self.g.add_const(s, m);
            }
            let a = self.g.softmax_rows(s)?;
            contexts.push(self.g.matmul(a, vh));
            weights.push(a);
        }
        let ctx = if contexts.len() == 1 { contexts[0] } else { self.g.concat_cols(&contexts) };
        let out = self.linear(ctx, &format!("{prefix}.wo"), &format!("{prefix}.bo"));
        Ok((out, weights))
    }

    fn feed_forward(&mut self, x: Var, prefix: &str) -> Var {
        let h = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
        let h = self.g.relu(h);
        self.linear(h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    fn residual(&mut self, x: Var, branch: Var) -> Var {
        let b = self.g.dropout(branch);
        self.g.add(x, b)
    }

    pub fn encode(&mut self, m: Modality, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Input("empty source sequence".into()));
        }
        if ids.len() > self.cfg.max_len {
            return Err(Error::TooLong { len: ids.len(), max_len: self.cfg.max_len });
        }
        let s = stack_name(m, false);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let mut h = self.embed(&s, ids, &positions)?;
        for l in 0..self.cfg.layers {
            let p = format!("{s}.layer{l}");
            let n = self.norm(h, &format!("{p}.ln1"));
            let (a, _) = self.attention(&format!("{p}.self"), n, n, None)?;
            h = self.residual(h, a);
            let n = self.norm(h, &format!("{p}.ln2"));
            let f = self.feed_forward(n, &format!("{p}.ff"));
            h = self.residual(h, f);
        }
        Ok(self.norm(h, &format!("{s}.ln")))
    }

    /// Runs the decoder of modality `m` over `input` against encoder states `enc`.
    ///
    /// Each decoder row may only attend to source tokens of its own sentence.
    pub fn decode(
        &mut self,
        m: Modality,
        enc: Var,
        input: &[usize],
        positions: &[usize],
        target_sentence_ids: &[usize],
        source_sentence_ids: &[usize],
    ) -> Result<DecoderOut> {
        let s = stack_name(m, true);
        let self_mask = causal_mask(input.len());
        let cross_mask = sentence_mask(target_sentence_ids, source_sentence_ids);
        let mut h = self.embed(&s, input, positions)?;
        let mut last_heads = Vec::new();
        for l in 0..self.cfg.layers {
            let p = format!("{s}.layer{l}");
            let n = self.norm(h, &format!("{p}.ln1"));
            let (a, _) = self.attention(&format!("{p}.self"), n, n, Some(&self_mask))?;
            h = self.residual(h, a);
            let n = self.norm(h, &format!("{p}.ln2"));
            let (c, heads) = self.attention(&format!("{p}.cross"), n, enc, Some(&cross_mask))?;
            h = self.residual(h, c);
            let n = self.norm(h, &format!("{p}.ln3"));
            let f = self.feed_forward(n, &format!("{p}.ff"));
            h = self.residual(h, f);
            last_heads = heads;
        }
        let h = self.norm(h, &format!("{s}.ln"));
        let logits = self.linear(h, &format!("{s}.out.w"), &format!("{s}.out.b"));
        let w = 1.0 / last_heads.len() as f64;
        let terms: Vec<(Var, f64)> = last_heads.iter().map(|&v| (v, w)).collect();
        let attention = self.g.weighted_sum(&terms);
        Ok(DecoderOut { logits, attention })
    }
}
