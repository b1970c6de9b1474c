use super::{split_long_notes, MelodySong, Note, Pitch};
use crate::error::{Error, Result};
use crate::sequence::{TokenSequence, MASK, SEP};
use std::fmt;

/// Longest duration token, in sixteenths.
pub const MAX_DURATION: u32 = 32;

const NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// `60 -> "C4"`, `55 -> "G3"`, rest -> `"R"`.
pub fn pitch_token(p: Pitch) -> String {
    match p {
        Pitch::Rest => "R".to_string(),
        Pitch::Midi(m) => format!("{}{}", NAMES[(m % 12) as usize], m as i32 / 12 - 1),
    }
}

pub fn pitch_from_token(tok: &str) -> Option<Pitch> {
    if tok == "R" {
        return Some(Pitch::Rest);
    }
    let split = tok.find(|c: char| c == '-' || c.is_ascii_digit())?;
    let (name, octave) = tok.split_at(split);
    let pc = NAMES.iter().position(|&n| n == name)? as i32;
    let octave: i32 = octave.parse().ok()?;
    let midi = (octave + 1) * 12 + pc;
    (0..=127).contains(&midi).then_some(Pitch::Midi(midi as u8))
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Sixteenth count as a reduced fraction of a whole note: `2 -> "1/8"`, `16 -> "1/1"`.
pub fn duration_token(sixteenths: u32) -> String {
    let g = gcd(sixteenths, 16);
    format!("{}/{}", sixteenths / g, 16 / g)
}

pub fn duration_from_token(tok: &str) -> Option<u32> {
    let (num, den) = tok.split_once('/')?;
    let num: u32 = num.parse().ok()?;
    let den: u32 = den.parse().ok()?;
    if num == 0 || den == 0 || 16 % den != 0 || gcd(num, den) != 1 {
        return None;
    }
    let d = num * (16 / den);
    (1..=MAX_DURATION).contains(&d).then_some(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MelodyToken {
    Pitch(Pitch),
    Duration(u32),
    Sep,
    Mask,
}

impl MelodyToken {
    pub fn parse(tok: &str) -> Option<Self> {
        match tok {
            SEP => Some(MelodyToken::Sep),
            MASK => Some(MelodyToken::Mask),
            _ => pitch_from_token(tok)
                .map(MelodyToken::Pitch)
                .or_else(|| duration_from_token(tok).map(MelodyToken::Duration)),
        }
    }
}

impl fmt::Display for MelodyToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MelodyToken::Pitch(p) => f.write_str(&pitch_token(*p)),
            MelodyToken::Duration(d) => f.write_str(&duration_token(*d)),
            MelodyToken::Sep => f.write_str(SEP),
            MelodyToken::Mask => f.write_str(MASK),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MelodyTokenSequence {
    pub tokens: Vec<MelodyToken>,
    pub sentence_ids: Vec<usize>,
}

impl MelodyTokenSequence {
    pub fn new(tokens: Vec<MelodyToken>) -> Self {
        let mut id = 0;
        let sentence_ids = tokens
            .iter()
            .map(|t| {
                let cur = id;
                if *t == MelodyToken::Sep {
                    id += 1;
                }
                cur
            })
            .collect();
        Self { tokens, sentence_ids }
    }

    pub fn from_strings<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                MelodyToken::parse(t.as_ref()).ok_or_else(|| Error::TokenFormat {
                    position: i,
                    reason: format!("'{}' is not a melody token", t.as_ref()),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn to_sequence(&self) -> TokenSequence {
        TokenSequence::new(self.tokens.iter().map(ToString::to_string).collect())
    }

    pub fn to_line(&self) -> String {
        self.to_sequence().to_line()
    }
}

impl TryFrom<&TokenSequence> for MelodyTokenSequence {
    type Error = Error;

    fn try_from(seq: &TokenSequence) -> Result<Self> {
        Self::from_strings(&seq.tokens)
    }
}

/// Spreads a song into alternating pitch/duration tokens with `[SEP]` after
/// each phrase. Notes longer than [`MAX_DURATION`] are split first.
pub fn tokenize_melody(song: &MelodySong) -> Result<MelodyTokenSequence> {
    song.validate()?;
    let song = split_long_notes(song);
    let mut tokens = Vec::with_capacity(song.notes.len() * 2 + song.phrase_boundaries.len());
    for phrase in song.phrases() {
        for n in phrase {
            tokens.push(MelodyToken::Pitch(n.pitch));
            tokens.push(MelodyToken::Duration(n.duration));
        }
        tokens.push(MelodyToken::Sep);
    }
    Ok(MelodyTokenSequence::new(tokens))
}

/// Inverse of [`tokenize_melody`]; notes are laid end to end from onset 0.
pub fn detokenize_melody(seq: &MelodyTokenSequence, bpm: f64) -> Result<MelodySong> {
    let err = |position: usize, reason: &str| Error::TokenFormat { position, reason: reason.to_string() };
    if seq.tokens.is_empty() {
        return Err(err(0, "no phrases"));
    }
    let mut notes = Vec::new();
    let mut boundaries = Vec::new();
    let mut pending: Option<Pitch> = None;
    let mut onset = 0;
    for (i, tok) in seq.tokens.iter().enumerate() {
        match (*tok, pending) {
            (MelodyToken::Pitch(p), None) => pending = Some(p),
            (MelodyToken::Pitch(_), Some(_)) => return Err(err(i, "pitch follows pitch")),
            (MelodyToken::Duration(d), Some(p)) => {
                notes.push(Note::new(p, onset, d));
                onset += d;
                pending = None;
            }
            (MelodyToken::Duration(_), None) => return Err(err(i, "duration without pitch")),
            (MelodyToken::Sep, None) => {
                if boundaries.last().copied().unwrap_or(0) == notes.len() {
                    return Err(err(i, "empty phrase"));
                }
                boundaries.push(notes.len());
            }
            (MelodyToken::Sep, Some(_)) => return Err(err(i, "phrase ends after a bare pitch")),
            (MelodyToken::Mask, _) => return Err(err(i, "[MASK] in melody")),
        }
    }
    if pending.is_some() || boundaries.last() != Some(&notes.len()) {
        return Err(err(seq.tokens.len(), "sequence does not end with [SEP]"));
    }
    MelodySong::new(notes, boundaries, bpm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pitch_names() {
        assert_eq!(pitch_token(Pitch::Midi(60)), "C4");
        assert_eq!(pitch_token(Pitch::Midi(55)), "G3");
        assert_eq!(pitch_token(Pitch::Midi(64)), "E4");
        assert_eq!(pitch_token(Pitch::Midi(0)), "C-1");
        assert_eq!(pitch_token(Pitch::Midi(127)), "G9");
        assert_eq!(pitch_token(Pitch::Midi(61)), "C#4");
        for m in 0..=127u8 {
            assert_eq!(pitch_from_token(&pitch_token(Pitch::Midi(m))), Some(Pitch::Midi(m)));
        }
        assert_eq!(pitch_from_token("G#9"), None);
        assert_eq!(pitch_from_token("H4"), None);
    }

    #[test]
    fn duration_names() {
        assert_eq!(duration_token(7), "7/16");
        assert_eq!(duration_token(1), "1/16");
        assert_eq!(duration_token(2), "1/8");
        assert_eq!(duration_token(16), "1/1");
        assert_eq!(duration_token(24), "3/2");
        for d in 1..=MAX_DURATION {
            assert_eq!(duration_from_token(&duration_token(d)), Some(d));
        }
        assert_eq!(duration_from_token("2/16"), None);
        assert_eq!(duration_from_token("3/1"), None);
        assert_eq!(duration_from_token("1/3"), None);
    }

    #[test]
    fn figure_fragment() {
        let song =
            MelodySong::from_sequence(&[(Pitch::Rest, 7), (Pitch::Midi(55), 1), (Pitch::Midi(64), 2)], 120.0).unwrap();
        assert_eq!(tokenize_melody(&song).unwrap().to_line(), "R 7/16 G3 1/16 E4 1/8 [SEP]");
    }

    #[test]
    fn empty_song_does_not_round_trip() {
        let song = MelodySong::new(vec![], vec![], 120.0).unwrap();
        let seq = tokenize_melody(&song).unwrap();
        assert!(seq.tokens.is_empty());
        assert!(matches!(detokenize_melody(&seq, 120.0), Err(Error::TokenFormat { .. })));
    }

    #[test]
    fn malformed_orders() {
        for (line, pos) in [
            ("1/8 C4 [SEP]", 0),
            ("C4 D4 1/8 [SEP]", 1),
            ("C4 [SEP]", 1),
            ("C4 1/8 [SEP] [SEP]", 3),
            ("C4 1/8", 2),
            ("C4 [MASK] [SEP]", 1),
        ] {
            let seq = MelodyTokenSequence::from_strings(&line.split_whitespace().collect::<Vec<_>>()).unwrap();
            match detokenize_melody(&seq, 120.0) {
                Err(Error::TokenFormat { position, .. }) => assert_eq!(position, pos, "{line}"),
                other => panic!("{line}: {other:?}"),
            }
        }
    }

    pub(crate) fn arb_song() -> impl Strategy<Value = MelodySong> {
        let note = (prop_oneof![Just(None), (0u8..=127).prop_map(Some)], 1u32..=MAX_DURATION);
        prop::collection::vec(prop::collection::vec(note, 1..8), 1..5).prop_map(|phrases| {
            let mut notes = Vec::new();
            let mut boundaries = Vec::new();
            let mut onset = 0;
            for ph in phrases {
                for (p, d) in ph {
                    let pitch = p.map(Pitch::Midi).unwrap_or(Pitch::Rest);
                    notes.push(Note::new(pitch, onset, d));
                    onset += d;
                }
                boundaries.push(notes.len());
            }
            MelodySong::new(notes, boundaries, 120.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn round_trip(song in arb_song()) {
            let seq = tokenize_melody(&song).unwrap();
            prop_assert_eq!(detokenize_melody(&seq, song.bpm).unwrap(), song.clone());
            let strings = seq.to_sequence();
            prop_assert_eq!(MelodyTokenSequence::try_from(&strings).unwrap(), seq);
            prop_assert_eq!(strings.sentence_count(), song.phrase_boundaries.len());
        }
    }
}
