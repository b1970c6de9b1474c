use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::score::{MelodySong, Pitch};
use rayon::prelude::*;
use std::collections::BTreeMap;

pub use crate::align::alignment_accuracy;
pub use crate::model::perplexity;

/// Normalized frequency histogram over integer bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    bins: BTreeMap<i64, f64>,
}

impl Histogram {
    /// `None` when there is nothing to count.
    pub fn from_values<I: IntoIterator<Item = i64>>(values: I) -> Option<Self> {
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_default() += 1;
        }
        let total: usize = counts.values().sum();
        if total == 0 {
            return None;
        }
        let bins = counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect();
        Some(Self { bins })
    }

    pub fn from_frequencies(freqs: &[(i64, f64)]) -> Result<Self> {
        let total: f64 = freqs.iter().map(|f| f.1).sum();
        if freqs.iter().any(|f| f.1 < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("frequencies must be non-negative and sum to 1".into()));
        }
        Ok(Self { bins: freqs.iter().copied().collect() })
    }

    pub fn get(&self, bin: i64) -> f64 {
        self.bins.get(&bin).copied().unwrap_or(0.0)
    }

    pub fn bins(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.bins.iter().map(|(&k, &v)| (k, v))
    }

    /// Overlapped area: sum over bins of the smaller frequency.
    pub fn overlap(&self, other: &Histogram) -> f64 {
        self.bins.iter().map(|(k, &p)| p.min(other.get(*k))).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    /// MIDI numbers of pitched notes; rests are ignored.
    Pitch,
    /// Note lengths in sixteenths, rests included.
    Duration,
}

pub fn histogram(song: &MelodySong, kind: DistributionKind) -> Option<Histogram> {
    match kind {
        DistributionKind::Pitch => Histogram::from_values(song.pitched().map(i64::from)),
        DistributionKind::Duration => Histogram::from_values(song.notes.iter().map(|n| i64::from(n.duration))),
    }
}

/// Mean overlapped area over song pairs matched by index. Pairs where either
/// side has nothing to count are skipped with a warning.
pub fn distribution_similarity(
    generated: &[MelodySong],
    reference: &[MelodySong],
    kind: DistributionKind,
) -> Result<f64> {
    check_counts(generated, reference)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (i, (g, r)) in generated.iter().zip(reference).enumerate() {
        match (histogram(g, kind), histogram(r, kind)) {
            (Some(p), Some(q)) => {
                total += p.overlap(&q);
                used += 1;
            }
            _ => log::warn!("song {i}: empty {kind:?} histogram, skipped"),
        }
    }
    if used == 0 {
        return Err(Error::Domain("no song pair has notes to compare".into()));
    }
    Ok(total / used as f64)
}

fn check_counts(generated: &[MelodySong], reference: &[MelodySong]) -> Result<()> {
    if generated.len() != reference.len() {
        return Err(Error::Input(format!("{} generated songs vs {} references", generated.len(), reference.len())));
    }
    if generated.is_empty() {
        return Err(Error::Domain("no songs to compare".into()));
    }
    Ok(())
}

/// Pitch per sixteenth note, minus its mean. Rests and gaps repeat the
/// previous pitch; a leading rest takes the first pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchSeries(pub Vec<f64>);

impl PitchSeries {
    pub fn from_song(song: &MelodySong) -> Result<Self> {
        let first = song.pitched().next().ok_or(Error::NoPitch)?;
        let len = song.total_duration() as usize;
        let mut raw = vec![f64::NAN; len];
        for n in &song.notes {
            if let Pitch::Midi(p) = n.pitch {
                for slot in &mut raw[n.onset as usize..n.end() as usize] {
                    *slot = f64::from(p);
                }
            }
        }
        let mut prev = f64::from(first);
        for v in &mut raw {
            if v.is_nan() {
                *v = prev;
            } else {
                prev = *v;
            }
        }
        let mean = raw.iter().sum::<f64>() / len as f64;
        Ok(Self(raw.into_iter().map(|v| v - mean).collect()))
    }
}

/// Dynamic time warping with absolute-difference cost over the full table.
pub fn dtw(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (a[i - 1] - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

pub fn melody_distance(generated: &MelodySong, reference: &MelodySong) -> Result<f64> {
    if generated.notes.is_empty() || reference.notes.is_empty() {
        return Err(Error::Domain("melody distance of an empty song".into()));
    }
    let a = PitchSeries::from_song(generated).map_err(|_| Error::Domain("generated song is all rests".into()))?;
    let b = PitchSeries::from_song(reference).map_err(|_| Error::Domain("reference song is all rests".into()))?;
    Ok(dtw(&a.0, &b.0))
}

pub fn mean_melody_distance(generated: &[MelodySong], reference: &[MelodySong]) -> Result<f64> {
    check_counts(generated, reference)?;
    // pairs run in parallel; the sum stays sequential so the result is bit-stable
    let per_pair: Vec<f64> =
        generated.par_iter().zip(reference).map(|(g, r)| melody_distance(g, r)).collect::<Result<_>>()?;
    Ok(per_pair.iter().sum::<f64>() / generated.len() as f64)
}

/// A score comparing generated songs with references.
pub trait Metric: Send + Sync {
    fn name(&self) -> &'static str;
    fn score(&self, generated: &[MelodySong], reference: &[MelodySong]) -> Result<f64>;
}

struct Overlap(DistributionKind, &'static str);

impl Metric for Overlap {
    fn name(&self) -> &'static str {
        self.1
    }

    fn score(&self, generated: &[MelodySong], reference: &[MelodySong]) -> Result<f64> {
        distribution_similarity(generated, reference, self.0)
    }
}

struct MelodyDistance;

impl Metric for MelodyDistance {
    fn name(&self) -> &'static str {
        "md"
    }

    fn score(&self, generated: &[MelodySong], reference: &[MelodySong]) -> Result<f64> {
        mean_melody_distance(generated, reference)
    }
}

/// Song-comparison metrics by name: `pd`, `dd`, `md`.
pub fn metrics() -> Registry<dyn Metric> {
    let mut reg: Registry<dyn Metric> = Registry::new("metric");
    reg.register("pd", |_| Box::new(Overlap(DistributionKind::Pitch, "pd")))
        .register("dd", |_| Box::new(Overlap(DistributionKind::Duration, "dd")))
        .register("md", |_| Box::new(MelodyDistance));
    reg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn song(events: &[(Option<u8>, u32)]) -> MelodySong {
        let ev: Vec<(Pitch, u32)> = events.iter().map(|&(p, d)| (p.map_or(Pitch::Rest, Pitch::Midi), d)).collect();
        MelodySong::from_sequence(&ev, 120.0).unwrap()
    }

    #[test]
    fn overlap_hand_case() {
        let p = Histogram::from_frequencies(&[(60, 0.5), (62, 0.5)]).unwrap();
        let q = Histogram::from_frequencies(&[(60, 0.5), (64, 0.5)]).unwrap();
        assert_eq!(p.overlap(&q), 0.5);
        assert_eq!(p.overlap(&p), 1.0);
    }

    #[test]
    fn identical_and_disjoint_songs() {
        let a = song(&[(Some(60), 4), (None, 2), (Some(62), 2)]);
        let b = song(&[(Some(70), 3), (Some(71), 1)]);
        for kind in [DistributionKind::Pitch, DistributionKind::Duration] {
            assert_eq!(distribution_similarity(&[a.clone()], &[a.clone()], kind).unwrap(), 1.0);
        }
        assert_eq!(distribution_similarity(&[a.clone()], &[b], DistributionKind::Pitch).unwrap(), 0.0);
        assert!(distribution_similarity(&[a.clone()], &[], DistributionKind::Pitch).is_err());
    }

    #[test]
    fn empty_pairs_are_skipped() {
        let a = song(&[(Some(60), 4)]);
        let rests = song(&[(None, 4)]);
        let s = distribution_similarity(&[a.clone(), rests], &[a.clone(), a], DistributionKind::Pitch).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn pitch_series_carries_rests() {
        let s = PitchSeries::from_song(&song(&[(None, 1), (Some(60), 2), (None, 1), (Some(64), 1)])).unwrap();
        // raw [60, 60, 60, 60, 64], mean 60.8
        let expect = [-0.8, -0.8, -0.8, -0.8, 3.2];
        for (a, b) in s.0.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.0.iter().sum::<f64>().abs() < 1e-9);
        assert!(PitchSeries::from_song(&song(&[(None, 4)])).is_err());
    }

    #[test]
    fn melody_distance_identities() {
        let a = song(&[(Some(60), 4), (None, 2), (Some(67), 2), (Some(65), 4)]);
        let b = song(&[(Some(62), 2), (Some(64), 6), (Some(60), 4)]);
        assert_eq!(melody_distance(&a, &a).unwrap(), 0.0);
        assert!((melody_distance(&a, &a.shifted(5).unwrap()).unwrap()).abs() < 1e-9);
        let ab = melody_distance(&a, &b).unwrap();
        assert!((ab - melody_distance(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ab > 0.0);
        assert!(matches!(melody_distance(&a, &song(&[(None, 3)])), Err(Error::Domain(_))));
    }

    #[test]
    fn registry_lists_metrics() {
        let reg = metrics();
        assert_eq!(reg.names(), vec!["pd", "dd", "md"]);
        let a = song(&[(Some(60), 4)]);
        assert_eq!(reg.create("md", &()).unwrap().score(&[a.clone()], &[a]).unwrap(), 0.0);
    }
}
