use super::attention::AttentionTarget;
use super::config::{Mode, ModelConfig};
use super::network::Net;
use super::params::ModelParams;
use crate::align::Alignment;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::mask::{sentence_ids_of, MaskedPair};
use crate::tensor::{AttentionMatrix, Matrix};
use crate::vocab::Vocabulary;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// One training sequence pair, already mapped to ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub source: Vec<usize>,
    pub decoder_input: Vec<usize>,
    pub target: Vec<usize>,
    /// Position of every decoder token in the target song.
    pub target_positions: Vec<usize>,
    pub target_sentence_ids: Vec<usize>,
    pub attention_target: Option<AttentionTarget>,
}

impl Example {
    pub fn from_masked(mp: &MaskedPair) -> Self {
        Self {
            source: mp.encoder_input.clone(),
            decoder_input: mp.decoder_input.clone(),
            target: mp.decoder_target.clone(),
            target_positions: mp.target_positions.clone(),
            target_sentence_ids: mp.target_sentence_ids.clone(),
            attention_target: None,
        }
    }

    /// Whole-sequence teacher forcing: the decoder reads `[EOS]` followed by
    /// the target shifted right. `alignment` maps target rows to source columns.
    pub fn paired(source: &[usize], target: &[usize], alignment: Option<&Alignment>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::Input("empty source or target".into()));
        }
        let mut decoder_input = Vec::with_capacity(target.len());
        decoder_input.push(Vocabulary::EOS);
        decoder_input.extend_from_slice(&target[..target.len() - 1]);
        let target_sentence_ids = sentence_ids_of(target);
        let attention_target =
            alignment.map(|al| AttentionTarget::new(al, &target_sentence_ids, &sentence_ids_of(source))).transpose()?;
        Ok(Self {
            source: source.to_vec(),
            decoder_input,
            target: target.to_vec(),
            target_positions: (0..target.len()).collect(),
            target_sentence_ids,
            attention_target,
        })
    }

    pub fn source_sentence_ids(&self) -> Vec<usize> {
        sentence_ids_of(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub mode: Mode,
    /// `nll + alpha * l_att` (the regularizer only counts when alignments exist).
    pub loss: f64,
    /// Mean negative log-likelihood per target token.
    pub nll: f64,
    /// Mean regularizer over aligned examples; reported even when alpha is 0.
    pub l_att: Option<f64>,
    pub tokens: usize,
    pub attention: Vec<AttentionMatrix>,
}

/// Per-parameter gradients, zero for parameters the loss does not touch.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self { grads: params.tensors().iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect() }
    }

    pub fn get<'a>(&'a self, params: &ModelParams, name: &str) -> Option<&'a Matrix> {
        params.index_of(name).map(|i| &self.grads[i])
    }
}

struct Term {
    loss: Var,
    nll_sum: Var,
    att: Option<Var>,
    tokens: usize,
    attention: Vec<Var>,
}

fn build_term(net: &mut Net, cfg: &ModelConfig, mode: Mode, batch: &[Example]) -> Result<Term> {
    if batch.is_empty() {
        return Err(Error::Input(format!("empty batch for {mode}")));
    }
    let mut nll_terms = Vec::new();
    let mut att_terms = Vec::new();
    let mut attention = Vec::new();
    let mut tokens = 0;
    for ex in batch {
        let n = ex.target.len();
        if ex.decoder_input.len() != n || ex.target_positions.len() != n || ex.target_sentence_ids.len() != n {
            return Err(Error::Input("decoder input, target and positions differ in length".into()));
        }
        let enc = net.encode(mode.source(), &ex.source)?;
        let out = net.decode(
            mode.target(),
            enc,
            &ex.decoder_input,
            &ex.target_positions,
            &ex.target_sentence_ids,
            &ex.source_sentence_ids(),
        )?;
        if let Some(&bad) = ex.target.iter().find(|&&t| t >= net.g.value(out.logits).cols) {
            return Err(Error::Input(format!("target id {bad} outside vocabulary")));
        }
        nll_terms.push((net.g.cross_entropy_sum(out.logits, &ex.target)?, 1.0));
        if let Some(t) = &ex.attention_target {
            if t.u.shape() != net.g.value(out.attention).shape() {
                return Err(Error::Input("attention target shape mismatch".into()));
            }
            let reg = net.g.attention_regularizer(
                out.attention,
                Rc::new(t.u.clone()),
                Rc::new(t.weights.clone()),
                cfg.att_norm == super::config::AttNorm::Squared,
            );
            att_terms.push(reg);
        }
        attention.push(out.attention);
        tokens += n;
    }
    let nll_sum = net.g.weighted_sum(&nll_terms);
    let mut loss_terms = vec![(nll_sum, 1.0 / tokens as f64)];
    let att = if att_terms.is_empty() {
        None
    } else {
        let w = 1.0 / att_terms.len() as f64;
        let terms: Vec<(Var, f64)> = att_terms.iter().map(|&v| (v, w)).collect();
        Some(net.g.weighted_sum(&terms))
    };
    if let (Some(a), true) = (att, cfg.alpha > 0.0) {
        loss_terms.push((a, cfg.alpha));
    }
    let loss = net.g.weighted_sum(&loss_terms);
    Ok(Term { loss, nll_sum, att, tokens, attention })
}

fn report(g: &Graph, mode: Mode, t: &Term) -> LossReport {
    LossReport {
        mode,
        loss: g.scalar(t.loss),
        nll: g.scalar(t.nll_sum) / t.tokens as f64,
        l_att: t.att.map(|a| g.scalar(a)),
        tokens: t.tokens,
        attention: t.attention.iter().map(|&a| g.value(a).clone()).collect(),
    }
}

/// Loss of one mode on one batch, without dropout.
pub fn forward_loss(params: &ModelParams, cfg: &ModelConfig, mode: Mode, batch: &[Example]) -> Result<LossReport> {
    let mut net = Net::new(Graph::new(), params, cfg);
    let term = build_term(&mut net, cfg, mode, batch)?;
    let r = report(&net.g, mode, &term);
    if !r.loss.is_finite() {
        return Err(Error::NonFinite(format!("{mode} loss")));
    }
    Ok(r)
}

/// Gradients of the single-mode loss, without dropout.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
    batch: &[Example],
) -> Result<(LossReport, Gradients)> {
    let (_, mut reports, grads, _) = joint_loss_and_gradients(params, cfg, &[(mode, batch)], None)?;
    Ok((reports.remove(0), grads))
}

/// Sums the losses of several `(mode, batch)` terms on one tape and
/// differentiates the total. Passing an RNG turns dropout on; it is handed
/// back afterwards.
pub fn joint_loss_and_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    terms: &[(Mode, &[Example])],
    dropout_rng: Option<ChaCha8Rng>,
) -> Result<(f64, Vec<LossReport>, Gradients, Option<ChaCha8Rng>)> {
    let graph = match dropout_rng {
        Some(rng) => Graph::with_dropout(cfg.dropout, rng),
        None => Graph::new(),
    };
    let mut net = Net::new(graph, params, cfg);
    let mut built = Vec::with_capacity(terms.len());
    for &(mode, batch) in terms {
        built.push((mode, build_term(&mut net, cfg, mode, batch)?));
    }
    let parts: Vec<(Var, f64)> = built.iter().map(|(_, t)| (t.loss, 1.0)).collect();
    let total_var = net.g.weighted_sum(&parts);
    let total = net.g.scalar(total_var);
    let reports: Vec<LossReport> = built.iter().map(|(m, t)| report(&net.g, *m, t)).collect();
    if !total.is_finite() {
        let culprit = reports.iter().find(|r| !r.loss.is_finite()).map_or("total".to_string(), |r| r.mode.to_string());
        return Err(Error::NonFinite(format!("{culprit} loss")));
    }
    let raw = net.g.backward(total_var);
    let mut grads = Gradients::zeros_like(params);
    for (i, g) in raw {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", params.names()[i])));
        }
        grads.grads[i] = g;
    }
    let rng = net.g.take_rng();
    Ok((total, reports, grads, rng))
}

/// `exp` of the mean token NLL over a whole dataset under teacher forcing.
pub fn perplexity(params: &ModelParams, cfg: &ModelConfig, mode: Mode, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("perplexity of an empty dataset".into()));
    }
    let mut nll = 0.0;
    let mut tokens = 0;
    for chunk in data.chunks(8) {
        let r = forward_loss(params, cfg, mode, chunk)?;
        nll += r.nll * r.tokens as f64;
        tokens += r.tokens;
    }
    Ok((nll / tokens as f64).exp())
}
