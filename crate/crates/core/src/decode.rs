//! Autoregressive generation that attends to one source sentence at a time.
//!
//! The decoder starts on source sentence 0 and moves to the next one each
//! time it emits `[SEP]`, so the output always has exactly as many sentences
//! as the input. Melody output is additionally constrained to strict
//! pitch/duration alternation.

use crate::align::{Aligner, Alignment};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::mask::sentence_ids_of;
use crate::model::network::Net;
use crate::model::{Modality, Mode, ModelConfig, ModelParams};
use crate::registry::Registry;
use crate::score::{duration_from_token, pitch_from_token};
use crate::tensor::{AttentionMatrix, Matrix};
use crate::vocab::Vocabulary;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub trait DecodeStrategy {
    fn name(&self) -> &'static str;
    /// Chooses a token; disallowed entries of `logits` are `-inf`.
    fn pick(&mut self, logits: &[f64]) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyOptions {
    pub top_k: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        Self { top_k: 5, temperature: 1.0, seed: 0 }
    }
}

/// Highest logit; ties go to the lowest id.
pub struct Greedy;

impl DecodeStrategy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn pick(&mut self, logits: &[f64]) -> usize {
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        best
    }
}

/// Samples from the `k` best allowed tokens at the given temperature.
pub struct TopK {
    k: usize,
    temperature: f64,
    rng: ChaCha8Rng,
}

impl TopK {
    pub fn new(opts: &StrategyOptions) -> Self {
        Self {
            k: opts.top_k.max(1),
            temperature: if opts.temperature > 0.0 { opts.temperature } else { 1.0 },
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
        }
    }
}

impl DecodeStrategy for TopK {
    fn name(&self) -> &'static str {
        "top-k"
    }

    fn pick(&mut self, logits: &[f64]) -> usize {
        let mut ids: Vec<usize> = (0..logits.len()).filter(|&i| logits[i].is_finite()).collect();
        ids.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        ids.truncate(self.k);
        let max = logits[ids[0]];
        let weights: Vec<f64> = ids.iter().map(|&i| ((logits[i] - max) / self.temperature).exp()).collect();
        let dist = WeightedIndex::new(&weights).expect("at least one finite weight");
        ids[dist.sample(&mut self.rng)]
    }
}

pub fn strategies() -> Registry<dyn DecodeStrategy, StrategyOptions> {
    let mut reg: Registry<dyn DecodeStrategy, StrategyOptions> = Registry::new("decode strategy");
    reg.register("greedy", |_| Box::new(Greedy)).register("top-k", |o| Box::new(TopK::new(o)));
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    /// Sentence length cap as a multiple of the source sentence length.
    /// Lengths count words for lyrics and notes (pitch/duration pairs) for
    /// melodies, so the cap means the same thing in both directions.
    pub max_sentence_factor: usize,
    /// Absolute cap, in the target's units, that overrides the factor when set.
    pub max_sentence_len: Option<usize>,
    /// Total decoding steps allowed; unlimited when `None`.
    pub step_budget: Option<usize>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { max_sentence_factor: 2, max_sentence_len: None, step_budget: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Special,
    Sep,
    Pitch,
    Duration,
    Word,
}

fn classify(vocab: &Vocabulary, target: Modality) -> Vec<Class> {
    (0..vocab.len())
        .map(|id| {
            if id == Vocabulary::SEP {
                Class::Sep
            } else if Vocabulary::is_special(id) {
                Class::Special
            } else {
                let tok = vocab.token(id).unwrap_or("");
                match target {
                    Modality::Lyric => Class::Word,
                    Modality::Melody if pitch_from_token(tok).is_some() => Class::Pitch,
                    Modality::Melody if duration_from_token(tok).is_some() => Class::Duration,
                    Modality::Melody => Class::Special,
                }
            }
        })
        .collect()
}

/// Progress of one generation.
#[derive(Debug, Clone, Default)]
pub struct DecodeState {
    pub generated: Vec<usize>,
    pub sentence: usize,
    pub sentence_len: usize,
    /// Attention rows of the current sentence, restricted to its source tokens.
    pub rows: Vec<Vec<f64>>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// One matrix per sentence: generated tokens (with `[SEP]`) by source
    /// sentence tokens (with `[SEP]`).
    pub attention: Vec<AttentionMatrix>,
}

/// Which classes may come next given the sentence so far.
fn allowed(classes: &[Class], target: Modality, state: &DecodeState, cap: usize) -> Vec<bool> {
    let last = state.generated.last().filter(|_| state.sentence_len > 0).map(|&t| classes[t]);
    let units = match target {
        Modality::Lyric => state.sentence_len,
        Modality::Melody => state.sentence_len / 2,
    };
    let at_cap = units >= cap;
    classes
        .iter()
        .map(|&c| match (target, c) {
            (_, Class::Special) => false,
            (Modality::Lyric, Class::Sep) => state.sentence_len > 0,
            (Modality::Lyric, Class::Word) => !at_cap,
            (Modality::Melody, Class::Sep) => last == Some(Class::Duration),
            (Modality::Melody, Class::Pitch) => last != Some(Class::Pitch) && !at_cap,
            (Modality::Melody, Class::Duration) => last == Some(Class::Pitch),
            _ => false,
        })
        .collect()
}

/// Generates a target sequence for `source` (ids ending in `[SEP]`).
pub fn generate(
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
    source: &[usize],
    target_vocab: &Vocabulary,
    strategy: &mut dyn DecodeStrategy,
    opts: &GenerateConfig,
) -> Result<Generation> {
    if source.last() != Some(&Vocabulary::SEP) {
        return Err(Error::MalformedSequence("source must end with [SEP]".into()));
    }
    let src_sent = sentence_ids_of(source);
    let n_sent = src_sent[source.len() - 1] + 1;
    let mut ranges = Vec::with_capacity(n_sent);
    let mut start = 0;
    for (i, &t) in source.iter().enumerate() {
        if t == Vocabulary::SEP {
            if i == start {
                return Err(Error::MalformedSequence(format!("empty source sentence at {i}")));
            }
            ranges.push(start..i + 1);
            start = i + 1;
        }
    }
    let target = mode.target();
    if target_vocab.len() != cfg.vocab(target) {
        return Err(Error::Input(format!(
            "target vocabulary has {} tokens, model expects {}",
            target_vocab.len(),
            cfg.vocab(target)
        )));
    }
    let classes = classify(target_vocab, target);
    let cap_of = |s: usize| {
        let content = ranges[s].len() - 1;
        let source_units = match mode.source() {
            Modality::Lyric => content,
            Modality::Melody => content.div_ceil(2),
        };
        opts.max_sentence_len.unwrap_or(opts.max_sentence_factor * source_units).max(1)
    };

    let enc = {
        let mut net = Net::new(Graph::new(), params, cfg);
        let v = net.encode(mode.source(), source)?;
        net.g.value(v).clone()
    };

    let mut state = DecodeState::default();
    let mut out = Generation { tokens: Vec::new(), attention: Vec::new() };
    while state.sentence < n_sent {
        if opts.step_budget.is_some_and(|b| state.steps >= b) {
            return Err(Error::Truncated {
                partial: state.generated,
                sentences_done: state.sentence,
                sentences_total: n_sent,
            });
        }
        let mut input = Vec::with_capacity(state.generated.len() + 1);
        input.push(Vocabulary::EOS);
        input.extend_from_slice(&state.generated);
        let mut tgt_sent = sentence_ids_of(&input[1..]);
        tgt_sent.push(state.sentence);
        let positions: Vec<usize> = (0..input.len()).collect();

        let mut net = Net::new(Graph::new(), params, cfg);
        let e = net.g.input(enc.clone());
        let d = net.decode(target, e, &input, &positions, &tgt_sent, &src_sent)?;
        let logits = net.g.value(d.logits);
        let last = logits.rows - 1;
        let ok = allowed(&classes, target, &state, cap_of(state.sentence));
        let masked: Vec<f64> =
            logits.row(last).iter().zip(&ok).map(|(&l, &a)| if a { l } else { f64::NEG_INFINITY }).collect();
        if masked.iter().all(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "no admissible token at step {} (vocabulary lacks required token types)",
                state.steps
            )));
        }
        let tok = strategy.pick(&masked);
        let range = ranges[state.sentence].clone();
        state.rows.push(net.g.value(d.attention).row(last)[range].to_vec());
        state.generated.push(tok);
        state.steps += 1;
        if tok == Vocabulary::SEP {
            out.attention.push(Matrix::from_rows(&std::mem::take(&mut state.rows)));
            state.sentence += 1;
            state.sentence_len = 0;
        } else {
            state.sentence_len += 1;
        }
    }
    out.tokens = state.generated;
    Ok(out)
}

/// Word-to-note alignment of a generation, one DP (or other aligner) run per
/// sentence on content tokens. Melody tokens are merged per note: pitch and
/// duration rows are averaged, columns are summed.
///
/// The result maps word positions (source) to note positions (target) across
/// the whole song.
pub fn extract_alignment(mode: Mode, attention: &[AttentionMatrix], aligner: &dyn Aligner) -> Result<Alignment> {
    let mut song = Alignment::default();
    let (mut word_off, mut note_off) = (0, 0);
    for (s, a) in attention.iter().enumerate() {
        if a.rows < 2 || a.cols < 2 {
            return Err(Error::MalformedSequence(format!("sentence {s} has no content tokens")));
        }
        let content = a.block(0, a.rows - 1, 0, a.cols - 1);
        let (al, words, notes) = match mode {
            Mode::Lyric2Melody => {
                let m = merge_rows(&content, s)?;
                let (al, _) = aligner.align(&m)?;
                (al, m.cols, m.rows)
            }
            Mode::Melody2Lyric => {
                let m = merge_cols(&content, s)?;
                let (al, _) = aligner.align(&m)?;
                (al.transposed(), m.rows, m.cols)
            }
            other => return Err(Error::Input(format!("no word/note alignment for {other}"))),
        };
        for p in al.pairs {
            song.push(p.source.shifted(word_off), p.target.shifted(note_off));
        }
        word_off += words;
        note_off += notes;
    }
    Ok(song)
}

fn merge_rows(m: &Matrix, s: usize) -> Result<Matrix> {
    if !m.rows.is_multiple_of(2) {
        return Err(Error::MalformedSequence(format!("sentence {s}: odd number of melody tokens")));
    }
    let mut out = Matrix::zeros(m.rows / 2, m.cols);
    for r in 0..out.rows {
        for c in 0..m.cols {
            out[(r, c)] = 0.5 * (m[(2 * r, c)] + m[(2 * r + 1, c)]);
        }
    }
    Ok(out)
}

fn merge_cols(m: &Matrix, s: usize) -> Result<Matrix> {
    if !m.cols.is_multiple_of(2) {
        return Err(Error::MalformedSequence(format!("sentence {s}: odd number of melody tokens")));
    }
    let mut out = Matrix::zeros(m.rows, m.cols / 2);
    for r in 0..m.rows {
        for c in 0..out.cols {
            out[(r, c)] = m[(r, 2 * c)] + m[(r, 2 * c + 1)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::DpAligner;

    fn melody_vocab() -> Vocabulary {
        Vocabulary::from_tokens(["C4", "D4", "1/4", "1/8"]).unwrap()
    }

    fn lyric_vocab() -> Vocabulary {
        Vocabulary::from_tokens(["la", "di", "da"]).unwrap()
    }

    fn model(seed: u64) -> (ModelConfig, ModelParams) {
        let mut cfg = ModelConfig::with_vocab(8, 9);
        cfg.layers = 1;
        cfg.hidden = 8;
        cfg.ff = 8;
        (cfg.clone(), ModelParams::init(&cfg, seed).unwrap())
    }

    /// Makes `[SEP]` the least likely output of the melody decoder.
    fn never_sep(p: &mut ModelParams) {
        let b = p.get_mut("melody.dec.out.b").unwrap();
        b.data[Vocabulary::SEP] = -1e6;
    }

    #[test]
    fn sentence_count_and_grammar() {
        let (cfg, p) = model(1);
        let src = [5, 6, 3, 7, 3, 5, 3];
        for name in ["greedy", "top-k"] {
            let mut s = strategies().create(name, &StrategyOptions::default()).unwrap();
            let g =
                generate(&p, &cfg, Mode::Lyric2Melody, &src, &melody_vocab(), s.as_mut(), &GenerateConfig::default())
                    .unwrap();
            assert_eq!(g.tokens.iter().filter(|&&t| t == 3).count(), 3);
            assert_eq!(g.attention.len(), 3);
            assert_eq!(g.tokens.last(), Some(&3));
            let v = melody_vocab();
            let toks: Vec<&str> = g.tokens.iter().map(|&t| v.token(t).unwrap()).collect();
            crate::score::MelodyTokenSequence::from_strings(&toks).unwrap();
        }
    }

    #[test]
    fn cap_forces_sep() {
        let (cfg, mut p) = model(2);
        never_sep(&mut p);
        let opts = GenerateConfig { max_sentence_len: Some(2), ..GenerateConfig::default() };
        let g =
            generate(&p, &cfg, Mode::Lyric2Melody, &[5, 6, 7, 3, 5, 3], &melody_vocab(), &mut Greedy, &opts).unwrap();
        // two notes (four tokens) per sentence, then the forced [SEP]
        assert_eq!(g.tokens.len(), 10);
        assert_eq!(g.tokens[4], 3);
        assert_eq!(g.tokens[9], 3);
        for a in &g.attention {
            assert_eq!(a.rows, 5);
        }
        assert_eq!(g.attention[0].cols, 4);
        assert_eq!(g.attention[1].cols, 2);
    }

    #[test]
    fn attention_rows_cover_current_sentence_only() {
        let (cfg, p) = model(3);
        let g = generate(
            &p,
            &cfg,
            Mode::Melody2Lyric,
            &[5, 7, 6, 8, 3, 5, 8, 3],
            &lyric_vocab(),
            &mut Greedy,
            &GenerateConfig::default(),
        )
        .unwrap();
        let widths: Vec<usize> = g.attention.iter().map(|a| a.cols).collect();
        assert_eq!(widths, vec![5, 3]);
        for a in &g.attention {
            for r in 0..a.rows {
                assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn budget_exhaustion_reports_partial_output() {
        let (cfg, p) = model(4);
        let opts = GenerateConfig { step_budget: Some(3), ..GenerateConfig::default() };
        match generate(&p, &cfg, Mode::Lyric2Melody, &[5, 6, 3, 7, 3], &melody_vocab(), &mut Greedy, &opts) {
            Err(Error::Truncated { partial, sentences_total, .. }) => {
                assert_eq!(partial.len(), 3);
                assert_eq!(sentences_total, 2);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn malformed_source() {
        let (cfg, p) = model(5);
        let v = melody_vocab();
        let g = GenerateConfig::default();
        assert!(generate(&p, &cfg, Mode::Lyric2Melody, &[5, 6], &v, &mut Greedy, &g).is_err());
        assert!(generate(&p, &cfg, Mode::Lyric2Melody, &[3, 5, 3], &v, &mut Greedy, &g).is_err());
    }

    #[test]
    fn top_k_one_is_greedy_and_seeded() {
        let logits = [0.1, f64::NEG_INFINITY, 2.0, 1.9];
        let mut t = TopK::new(&StrategyOptions { top_k: 1, ..Default::default() });
        assert_eq!(t.pick(&logits), 2);
        let opts = StrategyOptions { top_k: 3, seed: 9, ..Default::default() };
        let a: Vec<usize> = {
            let mut s = TopK::new(&opts);
            (0..20).map(|_| s.pick(&logits)).collect()
        };
        let b: Vec<usize> = {
            let mut s = TopK::new(&opts);
            (0..20).map(|_| s.pick(&logits)).collect()
        };
        assert_eq!(a, b);
        assert!(!a.contains(&1));
    }

    #[test]
    fn alignment_from_sentence_attention() {
        // two words, three notes (six tokens) + [SEP] each side
        let rows = vec![
            vec![0.9, 0.1, 0.0],
            vec![0.8, 0.2, 0.0],
            vec![0.2, 0.8, 0.0],
            vec![0.1, 0.9, 0.0],
            vec![0.3, 0.7, 0.0],
            vec![0.2, 0.8, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let a = Matrix::from_rows(&rows);
        let al = extract_alignment(Mode::Lyric2Melody, &[a.clone(), a], &DpAligner).unwrap();
        assert_eq!(al.to_string(), "1-1:1-1 2-2:2-3 3-3:4-4 4-4:5-6");
    }
}
