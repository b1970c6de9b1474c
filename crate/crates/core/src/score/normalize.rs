use super::{MelodySong, Note, Pitch, MAX_DURATION};
use crate::error::{Error, Result};

/// An unquantized note with times in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawNote {
    pub pitch: Pitch,
    pub start: f64,
    pub duration: f64,
}

/// Snaps onsets and durations to the nearest sixteenth-note grid point.
/// Durations that round to zero are clamped to one sixteenth.
pub fn quantize(raw: &[RawNote], bpm: f64) -> Result<Vec<Note>> {
    if !(bpm > 0.0) || !bpm.is_finite() {
        return Err(Error::Domain(format!("bpm must be positive, got {bpm}")));
    }
    let sixteenth = 60.0 / bpm / 4.0;
    raw.iter()
        .map(|r| {
            if !(r.start >= 0.0) || !(r.duration >= 0.0) {
                return Err(Error::Domain(format!("negative or NaN time: start {} duration {}", r.start, r.duration)));
            }
            let onset = (r.start / sixteenth).round() as u32;
            let duration = ((r.duration / sixteenth).round() as u32).max(1);
            Ok(Note::new(r.pitch, onset, duration))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key {
    /// Pitch class of the tonic, 0 = C.
    pub tonic: u8,
    pub mode: Mode,
}

impl Key {
    /// Semitone shift in [-6, 5] that moves this key to C major / A minor.
    pub fn shift_to_reference(self) -> i32 {
        let target = match self.mode {
            Mode::Major => 0,
            Mode::Minor => 9,
        };
        let k = (target - self.tonic as i32).rem_euclid(12);
        if k >= 6 {
            k - 12
        } else {
            k
        }
    }
}

// Krumhansl-Kessler probe-tone profiles, index 0 = tonic.
const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

fn pearson(x: &[f64; 12], y: &[f64; 12]) -> f64 {
    let mx = x.iter().sum::<f64>() / 12.0;
    let my = y.iter().sum::<f64>() / 12.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..12 {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

const TIE_EPS: f64 = 1e-12;

/// Krumhansl-Schmuckler key estimate over the duration-weighted
/// pitch-class histogram. Ties go to the smallest |shift| to the reference
/// key, then major over minor, then the negative shift.
pub fn estimate_key(song: &MelodySong) -> Result<Key> {
    let mut hist = [0.0; 12];
    let mut any = false;
    for n in &song.notes {
        if let Pitch::Midi(p) = n.pitch {
            hist[(p % 12) as usize] += n.duration as f64;
            any = true;
        }
    }
    if !any {
        return Err(Error::NoPitch);
    }
    let mut best: Option<(f64, Key)> = None;
    for mode in [Mode::Major, Mode::Minor] {
        let profile = match mode {
            Mode::Major => &MAJOR_PROFILE,
            Mode::Minor => &MINOR_PROFILE,
        };
        for tonic in 0..12u8 {
            let mut rotated = [0.0; 12];
            for (pc, r) in rotated.iter_mut().enumerate() {
                *r = profile[(pc + 12 - tonic as usize) % 12];
            }
            let key = Key { tonic, mode };
            let corr = pearson(&hist, &rotated);
            best = match best {
                None => Some((corr, key)),
                Some((bc, bk)) => {
                    if corr > bc + TIE_EPS || ((corr - bc).abs() <= TIE_EPS && prefer(key, bk)) {
                        Some((corr, key))
                    } else {
                        Some((bc, bk))
                    }
                }
            };
        }
    }
    Ok(best.expect("24 candidate keys").1)
}

fn prefer(a: Key, b: Key) -> bool {
    let (sa, sb) = (a.shift_to_reference(), b.shift_to_reference());
    if sa.abs() != sb.abs() {
        return sa.abs() < sb.abs();
    }
    if a.mode != b.mode {
        return a.mode == Mode::Major;
    }
    sa < sb
}

/// Transposes so the estimated key becomes C major (or A minor for minor keys).
/// Returns the shifted song and the semitone offset applied.
pub fn transpose_to_c(song: &MelodySong) -> Result<(MelodySong, i32)> {
    let k = estimate_key(song)?.shift_to_reference();
    Ok((song.shifted(k)?, k))
}

/// Octave shift `m` maximizing the number of pitches in [60, 71];
/// ties go to smaller |m|, then negative m. Shifts that would push a pitch
/// out of the MIDI range are not considered.
pub fn octave_shift(song: &MelodySong) -> Result<i32> {
    let pitches: Vec<i32> = song.pitched().map(i32::from).collect();
    if pitches.is_empty() {
        return Err(Error::NoPitch);
    }
    let lo = *pitches.iter().min().unwrap();
    let hi = *pitches.iter().max().unwrap();
    let mut best: Option<(usize, i32)> = None;
    for m in -11..=11i32 {
        if lo + 12 * m < 0 || hi + 12 * m > 127 {
            continue;
        }
        let count = pitches.iter().filter(|&&p| (60..=71).contains(&(p + 12 * m))).count();
        let better = match best {
            None => true,
            Some((bc, bm)) => count > bc || (count == bc && (m.abs() < bm.abs() || (m.abs() == bm.abs() && m < bm))),
        };
        if better {
            best = Some((count, m));
        }
    }
    Ok(best.map(|(_, m)| m).unwrap_or(0))
}

pub fn octave_center(song: &MelodySong) -> Result<(MelodySong, i32)> {
    let m = octave_shift(song)?;
    Ok((song.shifted(12 * m)?, m))
}

/// Replaces phrase boundaries with one every `mean_phrase_len` notes;
/// a shorter final phrase is kept.
pub fn split_phrases_unpaired(song: &MelodySong, mean_phrase_len: usize) -> Result<MelodySong> {
    if mean_phrase_len == 0 {
        return Err(Error::Domain("mean phrase length must be >= 1".into()));
    }
    let n = song.notes.len();
    let mut boundaries: Vec<usize> = (1..=n / mean_phrase_len).map(|i| i * mean_phrase_len).collect();
    if !n.is_multiple_of(mean_phrase_len) {
        boundaries.push(n);
    }
    MelodySong::new(song.notes.clone(), boundaries, song.bpm)
}

/// Mean number of notes per phrase over a set of songs, rounded to the nearest integer (min 1).
pub fn mean_phrase_length(songs: &[MelodySong]) -> Result<usize> {
    let notes: usize = songs.iter().map(|s| s.notes.len()).sum();
    let phrases: usize = songs.iter().map(|s| s.phrase_boundaries.len()).sum();
    if phrases == 0 {
        return Err(Error::Domain("no phrases to average".into()));
    }
    Ok(((notes as f64 / phrases as f64).round() as usize).max(1))
}

/// Splits notes longer than the duration vocabulary allows into repeated
/// notes of at most [`MAX_DURATION`] sixteenths, preserving phrase boundaries.
pub fn split_long_notes(song: &MelodySong) -> MelodySong {
    let mut notes = Vec::with_capacity(song.notes.len());
    let mut boundaries = Vec::with_capacity(song.phrase_boundaries.len());
    let mut next_boundary = song.phrase_boundaries.iter().peekable();
    for (i, n) in song.notes.iter().enumerate() {
        let mut onset = n.onset;
        let mut left = n.duration;
        while left > 0 {
            let d = left.min(MAX_DURATION);
            notes.push(Note::new(n.pitch, onset, d));
            onset += d;
            left -= d;
        }
        if next_boundary.peek() == Some(&&(i + 1)) {
            next_boundary.next();
            boundaries.push(notes.len());
        }
    }
    MelodySong { notes, phrase_boundaries: boundaries, bpm: song.bpm }
}
