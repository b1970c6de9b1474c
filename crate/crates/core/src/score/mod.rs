//! Monophonic melody representation, MIDI import/export and the
//! normalization steps applied before tokenization.
//!
//! Time is measured in sixteenth notes throughout. A song is a sorted,
//! non-overlapping list of [`Note`]s (rests are explicit notes) with
//! phrase boundaries marking the end index of each phrase.

pub mod midi;
mod normalize;
mod tokens;

pub use midi::{parse_midi_melody, write_midi_melody};
pub use normalize::{
    estimate_key, mean_phrase_length, octave_center, octave_shift, quantize, split_long_notes, split_phrases_unpaired,
    transpose_to_c, Key, Mode, RawNote,
};
pub use tokens::{
    detokenize_melody, duration_from_token, duration_token, pitch_from_token, pitch_token, tokenize_melody,
    MelodyToken, MelodyTokenSequence, MAX_DURATION,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Pitch of a melody event: a MIDI key number or a rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pitch {
    Rest,
    Midi(u8),
}

impl Pitch {
    pub fn midi(self) -> Option<u8> {
        match self {
            Pitch::Rest => None,
            Pitch::Midi(p) => Some(p),
        }
    }

    pub fn is_rest(self) -> bool {
        matches!(self, Pitch::Rest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub pitch: Pitch,
    /// Onset in sixteenth notes.
    pub onset: u32,
    /// Duration in sixteenth notes, at least 1.
    pub duration: u32,
}

impl Note {
    pub fn new(pitch: Pitch, onset: u32, duration: u32) -> Self {
        Self { pitch, onset, duration }
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelodySong {
    pub notes: Vec<Note>,
    /// Exclusive end index of each phrase; strictly increasing, last equals `notes.len()`.
    pub phrase_boundaries: Vec<usize>,
    pub bpm: f64,
}

pub const DEFAULT_BPM: f64 = 120.0;

impl MelodySong {
    /// Builds a song and checks ordering, monophony and phrase-boundary invariants.
    pub fn new(notes: Vec<Note>, phrase_boundaries: Vec<usize>, bpm: f64) -> Result<Self> {
        let song = Self { notes, phrase_boundaries, bpm };
        song.validate()?;
        Ok(song)
    }

    /// A single-phrase song from contiguous notes laid end to end from onset 0.
    pub fn from_sequence(events: &[(Pitch, u32)], bpm: f64) -> Result<Self> {
        let mut onset = 0;
        let mut notes = Vec::with_capacity(events.len());
        for &(pitch, duration) in events {
            notes.push(Note::new(pitch, onset, duration));
            onset += duration;
        }
        let boundaries = if notes.is_empty() { vec![] } else { vec![notes.len()] };
        Self::new(notes, boundaries, bpm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bpm > 0.0) {
            return Err(Error::Domain(format!("bpm must be positive, got {}", self.bpm)));
        }
        for (i, n) in self.notes.iter().enumerate() {
            if n.duration == 0 {
                return Err(Error::Domain(format!("note {i} has zero duration")));
            }
            if let Some(next) = self.notes.get(i + 1) {
                if next.onset < n.end() {
                    return Err(Error::Domain(format!(
                        "note {} (onset {}) overlaps note {i} ending at {}",
                        i + 1,
                        next.onset,
                        n.end()
                    )));
                }
            }
        }
        if self.notes.is_empty() {
            if !self.phrase_boundaries.is_empty() {
                return Err(Error::Domain("empty song with phrase boundaries".into()));
            }
            return Ok(());
        }
        let mut prev = 0;
        for &b in &self.phrase_boundaries {
            if b <= prev {
                return Err(Error::Domain(format!(
                    "phrase boundaries must be strictly increasing: {:?}",
                    self.phrase_boundaries
                )));
            }
            prev = b;
        }
        if prev != self.notes.len() {
            return Err(Error::Domain(format!("last phrase boundary {prev} != note count {}", self.notes.len())));
        }
        Ok(())
    }

    /// Iterates over the phrases as note slices.
    pub fn phrases(&self) -> impl Iterator<Item = &[Note]> {
        let mut start = 0;
        self.phrase_boundaries.iter().map(move |&end| {
            let phrase = &self.notes[start..end];
            start = end;
            phrase
        })
    }

    pub fn pitched(&self) -> impl Iterator<Item = u8> + '_ {
        self.notes.iter().filter_map(|n| n.pitch.midi())
    }

    pub fn total_duration(&self) -> u32 {
        self.notes.last().map(Note::end).unwrap_or(0)
    }

    /// Shifts every pitched note by `semitones`; errors if any pitch leaves 0..=127.
    pub fn shifted(&self, semitones: i32) -> Result<Self> {
        let mut out = self.clone();
        for n in &mut out.notes {
            if let Pitch::Midi(p) = n.pitch {
                let q = p as i32 + semitones;
                if !(0..=127).contains(&q) {
                    return Err(Error::Domain(format!("pitch {p} shifted by {semitones} leaves the MIDI range")));
                }
                n.pitch = Pitch::Midi(q as u8);
            }
        }
        Ok(out)
    }
}
