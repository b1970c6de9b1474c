//! Strict monotone alignment between source and target tokens extracted
//! from an encoder-decoder attention matrix.
//!
//! An [`Alignment`] tiles both sequences with ordered pairs of spans. Every
//! pair is one-to-many (one target token, several source tokens) or
//! many-to-one (several target tokens, one source token). A pair's score is
//! the summed attention over its cells when it has a single target token,
//! and the attention averaged over its target span otherwise, because
//! attention rows are normalized over sources but columns are not.

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tensor::AttentionMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// 1-based inclusive token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shifted(self, by: usize) -> Self {
        Self::new(self.start + by, self.end + by)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlignedPair {
    pub source: Span,
    pub target: Span,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
}

impl Alignment {
    pub fn new(pairs: Vec<AlignedPair>) -> Self {
        Self { pairs }
    }

    pub fn push(&mut self, source: Span, target: Span) {
        self.pairs.push(AlignedPair { source, target });
    }

    pub fn source_len(&self) -> usize {
        self.pairs.last().map_or(0, |p| p.source.end)
    }

    pub fn target_len(&self) -> usize {
        self.pairs.last().map_or(0, |p| p.target.end)
    }

    /// Checks that the pairs tile `1..=n_source` and `1..=n_target` in order
    /// and that no pair is many-to-many.
    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        let (mut s, mut t) = (0, 0);
        for (i, p) in self.pairs.iter().enumerate() {
            if p.source.start != s + 1 || p.target.start != t + 1 {
                return Err(Error::InvalidAlignment(format!(
                    "pair {i} starts at ({}, {}), expected ({}, {})",
                    p.source.start,
                    p.target.start,
                    s + 1,
                    t + 1
                )));
            }
            if p.source.end < p.source.start || p.target.end < p.target.start {
                return Err(Error::InvalidAlignment(format!("pair {i} has an empty span")));
            }
            if p.source.len() > 1 && p.target.len() > 1 {
                return Err(Error::InvalidAlignment(format!("pair {i} is many-to-many")));
            }
            s = p.source.end;
            t = p.target.end;
        }
        if s != n_source || t != n_target {
            return Err(Error::InvalidAlignment(format!("pairs cover {s}x{t}, expected {n_source}x{n_target}")));
        }
        Ok(())
    }

    /// Number of target tokens aligned to each source token.
    pub fn fan_out(&self) -> Vec<usize> {
        let mut out = vec![0; self.source_len()];
        for p in &self.pairs {
            for s in p.source.start..=p.source.end {
                out[s - 1] += p.target.len();
            }
        }
        out
    }

    /// Total DP score of this tiling under `attn` (rows = targets).
    pub fn score(&self, attn: &AttentionMatrix) -> f64 {
        self.pairs.iter().map(|p| pair_score(attn, p)).sum()
    }

    /// Swaps source and target roles.
    pub fn transposed(&self) -> Alignment {
        Alignment::new(self.pairs.iter().map(|p| AlignedPair { source: p.target, target: p.source }).collect())
    }
}

pub fn pair_score(attn: &AttentionMatrix, p: &AlignedPair) -> f64 {
    if p.target.len() == 1 {
        let row = attn.row(p.target.start - 1);
        row[p.source.start - 1..p.source.end].iter().sum()
    } else {
        let col = p.source.start - 1;
        let sum: f64 = (p.target.start..=p.target.end).map(|t| attn[(t - 1, col)]).sum();
        sum / p.target.len() as f64
    }
}

impl fmt::Display for Alignment {
    /// `s1-s2:t1-t2` per pair, space separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}-{}:{}-{}", p.source.start, p.source.end, p.target.start, p.target.end)?;
        }
        Ok(())
    }
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |item: &str| Error::InvalidAlignment(format!("cannot parse pair '{item}'"));
        let span = |txt: &str, item: &str| -> Result<Span> {
            let (a, b) = txt.split_once('-').ok_or_else(|| bad(item))?;
            Ok(Span::new(a.parse().map_err(|_| bad(item))?, b.parse().map_err(|_| bad(item))?))
        };
        let mut pairs = Vec::new();
        for item in s.split_whitespace() {
            let (src, tgt) = item.split_once(':').ok_or_else(|| bad(item))?;
            pairs.push(AlignedPair { source: span(src, item)?, target: span(tgt, item)? });
        }
        Ok(Alignment::new(pairs))
    }
}

fn check_input(attn: &AttentionMatrix) -> Result<()> {
    if attn.rows == 0 || attn.cols == 0 {
        return Err(Error::Domain(format!("cannot align an empty {}x{} attention matrix", attn.rows, attn.cols)));
    }
    if !attn.is_finite() {
        return Err(Error::Domain("attention matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Dynamic program over monotone one-to-many / many-to-one tilings.
///
/// `F[i][j]` is the best score aligning the first `i` targets with the first
/// `j` sources. Candidates are evaluated with `>=`, so among equal scores
/// the last one evaluated wins: larger `k` within each case, and the
/// many-to-one case over the one-to-many case.
pub fn dp_align(attn: &AttentionMatrix) -> Result<(Alignment, f64)> {
    check_input(attn)?;
    let (m, n) = attn.shape();
    let w = n + 1;
    let mut f = vec![f64::NEG_INFINITY; (m + 1) * w];
    let mut path = vec![(0usize, 0usize); (m + 1) * w];
    f[0] = 0.0;
    let mut sums = vec![0.0; m.max(n)];

    for i in 1..=m {
        let row = attn.row(i - 1);
        for j in 1..=n {
            let cell = i * w + j;
            // y_i aligned to x_{k+1..j}
            let mut acc = 0.0;
            for k in (0..j).rev() {
                acc += row[k];
                sums[k] = acc;
            }
            for k in 0..j {
                let score = f[(i - 1) * w + k] + sums[k];
                if score >= f[cell] {
                    f[cell] = score;
                    path[cell] = (i - 1, k);
                }
            }
            // y_{k+1..i} aligned to x_j
            let mut acc = 0.0;
            for k in (0..i).rev() {
                acc += attn[(k, j - 1)];
                sums[k] = acc / (i - k) as f64;
            }
            for k in 0..i {
                let score = f[k * w + j - 1] + sums[k];
                if score >= f[cell] {
                    f[cell] = score;
                    path[cell] = (k, j - 1);
                }
            }
        }
    }

    let mut pairs = Vec::new();
    let (mut mi, mut ni) = (m, n);
    while mi != 0 && ni != 0 {
        let (i, j) = path[mi * w + ni];
        pairs.push(AlignedPair { source: Span::new(j + 1, ni), target: Span::new(i + 1, mi) });
        mi = i;
        ni = j;
    }
    pairs.reverse();
    Ok((Alignment::new(pairs), f[m * w + n]))
}

/// Single left-to-right pass: at each step either extend the current pair
/// by one source token, extend it by one target token, or open a new pair,
/// whichever adds the larger attention weight (ties open a new pair). The
/// last token of either sequence is only reached by opening a pair; once a
/// sequence is exhausted, all remaining tokens of the other go to its last
/// token.
pub fn greedy_align(attn: &AttentionMatrix) -> Result<(Alignment, f64)> {
    check_input(attn)?;
    let (m, n) = attn.shape();
    // 0-based inclusive spans of the open pair
    let (mut ts, mut te, mut ss, mut se) = (0, 0, 0, 0);
    let mut pairs = Vec::new();
    let close = |pairs: &mut Vec<AlignedPair>, ts: usize, te: usize, ss: usize, se: usize| {
        pairs.push(AlignedPair { source: Span::new(ss + 1, se + 1), target: Span::new(ts + 1, te + 1) })
    };
    loop {
        if te == m - 1 {
            se = n - 1;
            break;
        }
        if se == n - 1 {
            te = m - 1;
            break;
        }
        let mut best = (attn[(te + 1, se + 1)], 0u8);
        if ts == te && se + 1 < n - 1 && attn[(te, se + 1)] > best.0 {
            best = (attn[(te, se + 1)], 1);
        }
        if ss == se && te + 1 < m - 1 && attn[(te + 1, se)] > best.0 {
            best = (attn[(te + 1, se)], 2);
        }
        match best.1 {
            1 => se += 1,
            2 => te += 1,
            _ => {
                close(&mut pairs, ts, te, ss, se);
                te += 1;
                se += 1;
                ts = te;
                ss = se;
            }
        }
    }
    close(&mut pairs, ts, te, ss, se);
    let alignment = Alignment::new(pairs);
    let score = alignment.score(attn);
    Ok((alignment, score))
}

/// Fraction of source tokens whose aligned-target count matches the reference,
/// pooled over all songs.
pub fn alignment_accuracy(predicted: &[Alignment], reference: &[Alignment]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::Input(format!("{} predicted vs {} reference alignments", predicted.len(), reference.len())));
    }
    let mut matches = 0usize;
    let mut total = 0usize;
    for (i, (p, r)) in predicted.iter().zip(reference).enumerate() {
        let (pf, rf) = (p.fan_out(), r.fan_out());
        if pf.len() != rf.len() {
            return Err(Error::Input(format!(
                "song {i}: predicted covers {} source tokens, reference {}",
                pf.len(),
                rf.len()
            )));
        }
        matches += pf.iter().zip(&rf).filter(|(a, b)| a == b).count();
        total += rf.len();
    }
    if total == 0 {
        return Err(Error::Input("no source tokens to score".into()));
    }
    Ok(matches as f64 / total as f64)
}

pub trait Aligner: Send + Sync {
    fn name(&self) -> &'static str;
    /// Returns the tiling and its score.
    fn align(&self, attn: &AttentionMatrix) -> Result<(Alignment, f64)>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DpAligner;

impl Aligner for DpAligner {
    fn name(&self) -> &'static str {
        "dp"
    }
    fn align(&self, attn: &AttentionMatrix) -> Result<(Alignment, f64)> {
        dp_align(attn)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GreedyAligner;

impl Aligner for GreedyAligner {
    fn name(&self) -> &'static str {
        "greedy"
    }
    fn align(&self, attn: &AttentionMatrix) -> Result<(Alignment, f64)> {
        greedy_align(attn)
    }
}

pub fn aligners() -> Registry<dyn Aligner> {
    let mut reg: Registry<dyn Aligner> = Registry::new("aligner");
    reg.register("dp", |_| Box::new(DpAligner)).register("greedy", |_| Box::new(GreedyAligner));
    reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn pair(s: (usize, usize), t: (usize, usize)) -> AlignedPair {
        AlignedPair { source: Span::new(s.0, s.1), target: Span::new(t.0, t.1) }
    }

    #[test]
    fn single_cell() {
        let a = Matrix::from_rows(&[vec![1.0]]);
        let (al, score) = dp_align(&a).unwrap();
        assert_eq!(al.pairs, vec![pair((1, 1), (1, 1))]);
        assert_eq!(score, 1.0);
        assert_eq!(greedy_align(&a).unwrap().0, al);
    }

    #[test]
    fn one_target_two_sources() {
        let a = Matrix::from_rows(&[vec![0.5, 0.5]]);
        let (al, score) = dp_align(&a).unwrap();
        assert_eq!(al.pairs, vec![pair((1, 2), (1, 1))]);
        assert_eq!(score, 1.0);
    }

    #[test]
    fn two_targets_one_source_averages() {
        let a = Matrix::from_rows(&[vec![1.0], vec![0.5]]);
        let (al, score) = dp_align(&a).unwrap();
        assert_eq!(al.pairs, vec![pair((1, 1), (1, 2))]);
        assert_eq!(score, 0.75);
    }

    #[test]
    fn diagonal_identity() {
        let mut a = Matrix::filled(4, 4, 0.02);
        for i in 0..4 {
            a[(i, i)] = 0.94;
        }
        let (dp, _) = dp_align(&a).unwrap();
        assert_eq!(dp.pairs.len(), 4);
        assert!(dp.pairs.iter().all(|p| p.source == p.target));
        assert_eq!(greedy_align(&a).unwrap().0, dp);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(dp_align(&Matrix::zeros(0, 3)).is_err());
        assert!(greedy_align(&Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn greedy_is_valid_on_shapes() {
        for (m, n) in [(1, 5), (5, 1), (2, 7), (7, 2), (3, 3)] {
            let a = Matrix::filled(m, n, 1.0 / n as f64);
            let (al, _) = greedy_align(&a).unwrap();
            al.validate(n, m).unwrap();
        }
    }

    #[test]
    fn accuracy_cases() {
        let r = Alignment::new(vec![
            pair((1, 1), (1, 2)),
            pair((2, 2), (3, 3)),
            pair((3, 3), (4, 4)),
            pair((4, 4), (5, 5)),
        ]);
        assert_eq!(alignment_accuracy(&[r.clone()], &[r.clone()]).unwrap(), 1.0);
        let p = Alignment::new(vec![
            pair((1, 1), (1, 1)),
            pair((2, 2), (2, 3)),
            pair((3, 3), (4, 4)),
            pair((4, 4), (5, 5)),
        ]);
        // token 1 fans out to 1 instead of 2, token 2 to 2 instead of 1
        assert_eq!(alignment_accuracy(&[p], &[r.clone()]).unwrap(), 0.5);
        let p = Alignment::new(vec![
            pair((1, 1), (1, 2)),
            pair((2, 2), (3, 3)),
            pair((3, 3), (4, 5)),
            pair((4, 4), (6, 6)),
        ]);
        assert_eq!(alignment_accuracy(&[p], &[r.clone()]).unwrap(), 0.75);
        let short = Alignment::new(vec![pair((1, 1), (1, 1))]);
        assert!(alignment_accuracy(&[short], &[r.clone()]).is_err());
        assert!(alignment_accuracy(&[], &[r]).is_err());
    }

    #[test]
    fn validate_rejects() {
        let ok = Alignment::new(vec![pair((1, 2), (1, 1)), pair((3, 3), (2, 3))]);
        ok.validate(3, 3).unwrap();
        assert!(Alignment::new(vec![pair((1, 2), (1, 2))]).validate(2, 2).is_err());
        assert!(Alignment::new(vec![pair((2, 2), (1, 1))]).validate(2, 1).is_err());
        assert!(ok.validate(3, 4).is_err());
    }

    #[test]
    fn text_round_trip() {
        let al = Alignment::new(vec![pair((1, 2), (1, 1)), pair((3, 3), (2, 3))]);
        assert_eq!(al.to_string(), "1-2:1-1 3-3:2-3");
        assert_eq!(al.to_string().parse::<Alignment>().unwrap(), al);
        assert!("1-2".parse::<Alignment>().is_err());
        assert_eq!(al.fan_out(), vec![1, 1, 2]);
        assert_eq!(al.transposed().transposed(), al);
    }

    #[test]
    fn registry_names() {
        let reg = aligners();
        assert_eq!(reg.names(), vec!["dp", "greedy"]);
        assert_eq!(reg.create("dp", &()).unwrap().name(), "dp");
        assert!(reg.create("viterbi", &()).is_err());
    }
}
