//! Song-level masked sequence-to-sequence samples.
//!
//! Every sentence of a song gets one contiguous masked span. The encoder sees
//! the song with those spans replaced by `[MASK]`; the decoder predicts the
//! original span tokens, sentence after sentence.

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MASK_RATIO: f64 = 0.5;

/// Masked span of one sentence; `start..=end` are positions in the song sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl MaskSpan {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedPair {
    pub encoder_input: Vec<usize>,
    pub encoder_sentence_ids: Vec<usize>,
    /// Teacher-forcing inputs: each span shifted right behind a start token.
    pub decoder_input: Vec<usize>,
    pub decoder_target: Vec<usize>,
    /// Original song positions of the decoder tokens.
    pub target_positions: Vec<usize>,
    pub target_sentence_ids: Vec<usize>,
    pub spans: Vec<MaskSpan>,
}

/// Sentence IDs for an id sequence; a `[SEP]` belongs to the sentence it closes.
pub fn sentence_ids_of(ids: &[usize]) -> Vec<usize> {
    let mut id = 0;
    ids.iter()
        .map(|&t| {
            let cur = id;
            if t == Vocabulary::SEP {
                id += 1;
            }
            cur
        })
        .collect()
}

/// Number of tokens masked in a sentence of `len` tokens.
pub fn span_length(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).round() as usize).clamp(1, len)
}

/// Sentence token ranges, excluding the closing `[SEP]`.
fn content_ranges(ids: &[usize]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &t) in ids.iter().enumerate() {
        if t == Vocabulary::SEP {
            if i == start {
                return Err(Error::MalformedSequence(format!("sentence {} is empty (position {i})", out.len())));
            }
            out.push((start, i));
            start = i + 1;
        }
    }
    if start < ids.len() {
        out.push((start, ids.len()));
    }
    if out.is_empty() {
        return Err(Error::MalformedSequence("no sentences".into()));
    }
    Ok(out)
}

/// Masks one span per sentence with a seeded uniform start position.
pub fn mask_song(ids: &[usize], ratio: f64, seed: u64) -> Result<MaskedPair> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("mask ratio must be in (0, 1], got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = content_ranges(ids)?
        .into_iter()
        .map(|(s, e)| {
            let len = e - s;
            let span = span_length(len, ratio);
            s + rng.gen_range(0..=len - span)
        })
        .collect::<Vec<_>>();
    mask_song_at(ids, ratio, &starts)
}

/// Masks with explicit span start positions (one per sentence).
pub fn mask_song_at(ids: &[usize], ratio: f64, starts: &[usize]) -> Result<MaskedPair> {
    let ranges = content_ranges(ids)?;
    if starts.len() != ranges.len() {
        return Err(Error::Input(format!("{} span starts for {} sentences", starts.len(), ranges.len())));
    }
    let mut encoder_input = ids.to_vec();
    let encoder_sentence_ids = sentence_ids_of(ids);
    let mut out = MaskedPair {
        encoder_input: Vec::new(),
        encoder_sentence_ids,
        decoder_input: Vec::new(),
        decoder_target: Vec::new(),
        target_positions: Vec::new(),
        target_sentence_ids: Vec::new(),
        spans: Vec::new(),
    };
    for (sentence, (&(s, e), &start)) in ranges.iter().zip(starts).enumerate() {
        let span = span_length(e - s, ratio);
        if start < s || start + span > e {
            return Err(Error::Input(format!(
                "span start {start} (len {span}) outside sentence {sentence} [{s}, {e})"
            )));
        }
        let end = start + span - 1;
        for p in start..=end {
            out.decoder_input.push(if p == start { Vocabulary::EOS } else { ids[p - 1] });
            out.decoder_target.push(ids[p]);
            out.target_positions.push(p);
            out.target_sentence_ids.push(sentence);
            encoder_input[p] = Vocabulary::MASK;
        }
        out.spans.push(MaskSpan { sentence, start, end });
    }
    out.encoder_input = encoder_input;
    Ok(out)
}

impl MaskedPair {
    /// Puts the decoder targets back into the masked encoder input.
    pub fn reconstruct(&self) -> Vec<usize> {
        let mut out = self.encoder_input.clone();
        for (&p, &t) in self.target_positions.iter().zip(&self.decoder_target) {
            out[p] = t;
        }
        out
    }
}
