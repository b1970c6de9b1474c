//! Lyric-melody pairs with word-level alignment.
//!
//! Text format: songs are separated by blank lines, each line is one
//! sentence, and each whitespace-separated group attaches notes to a word:
//!
//! ```text
//! another=R:7/16,G3:1/16 day=E4:1/8
//! still=C4:1/4 alone=D4:1/8,E4:1/2
//! ```
//!
//! Lines starting with `#` are comments.

use crate::align::{AlignedPair, Alignment, Span};
use crate::error::{Error, Result};
use crate::lyric::normalize_word;
use crate::score::{
    duration_from_token, duration_token, octave_center, pitch_from_token, pitch_token, transpose_to_c, MelodySong,
    Note, Pitch, DEFAULT_BPM,
};
use crate::sequence::SEP;

#[derive(Debug, Clone, PartialEq)]
pub struct WordNotes {
    pub word: String,
    pub notes: Vec<(Pitch, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSong {
    pub sentences: Vec<Vec<WordNotes>>,
    pub bpm: f64,
}

fn parse_group(group: &str, line: usize) -> Result<WordNotes> {
    let bad = |reason: String| Error::TokenFormat { position: line, reason: format!("line {line}: {reason}") };
    let (raw_word, notes) = group.split_once('=').ok_or_else(|| bad(format!("group '{group}' has no '='")))?;
    let word = normalize_word(raw_word).ok_or_else(|| bad(format!("'{raw_word}' is not a word")))?;
    let notes = notes
        .split(',')
        .map(|n| {
            let (p, d) = n.split_once(':').ok_or_else(|| bad(format!("note '{n}' is not PITCH:DURATION")))?;
            let pitch = pitch_from_token(p).ok_or_else(|| bad(format!("bad pitch '{p}'")))?;
            let dur = duration_from_token(d).ok_or_else(|| bad(format!("bad duration '{d}'")))?;
            Ok((pitch, dur))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WordNotes { word, notes })
}

/// Parses every song in a paired file.
pub fn parse_paired(text: &str) -> Result<Vec<PairedSong>> {
    let mut songs = Vec::new();
    let mut current: Vec<Vec<WordNotes>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !current.is_empty() {
                songs.push(PairedSong::new(std::mem::take(&mut current))?);
            }
            continue;
        }
        let sentence = line.split_whitespace().map(|g| parse_group(g, i + 1)).collect::<Result<Vec<_>>>()?;
        current.push(sentence);
    }
    if !current.is_empty() {
        songs.push(PairedSong::new(current)?);
    }
    Ok(songs)
}

pub fn write_paired(songs: &[PairedSong]) -> String {
    songs.iter().map(PairedSong::to_text).collect::<Vec<_>>().join("\n")
}

impl PairedSong {
    pub fn new(sentences: Vec<Vec<WordNotes>>) -> Result<Self> {
        if sentences.is_empty() || sentences.iter().any(Vec::is_empty) {
            return Err(Error::MalformedSequence("paired song with an empty sentence".into()));
        }
        if sentences.iter().flatten().any(|w| w.notes.is_empty()) {
            return Err(Error::MalformedSequence("word without notes".into()));
        }
        Ok(Self { sentences, bpm: DEFAULT_BPM })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for sentence in &self.sentences {
            let groups: Vec<String> = sentence
                .iter()
                .map(|w| {
                    let notes: Vec<String> =
                        w.notes.iter().map(|&(p, d)| format!("{}:{}", pitch_token(p), duration_token(d))).collect();
                    format!("{}={}", w.word, notes.join(","))
                })
                .collect();
            out.push_str(&groups.join(" "));
            out.push('\n');
        }
        out
    }

    fn words(&self) -> impl Iterator<Item = &WordNotes> {
        self.sentences.iter().flatten()
    }

    pub fn word_count(&self) -> usize {
        self.words().count()
    }

    pub fn note_count(&self) -> usize {
        self.words().map(|w| w.notes.len()).sum()
    }

    /// Words with a `[SEP]` closing each sentence.
    pub fn lyric_tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.sentences {
            out.extend(s.iter().map(|w| w.word.clone()));
            out.push(SEP.to_string());
        }
        out
    }

    /// Pitch/duration tokens with a `[SEP]` closing each sentence.
    pub fn melody_tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.sentences {
            for &(p, d) in s.iter().flat_map(|w| &w.notes) {
                out.push(pitch_token(p));
                out.push(duration_token(d));
            }
            out.push(SEP.to_string());
        }
        out
    }

    /// The melody laid end to end, one phrase per sentence.
    pub fn melody_song(&self) -> Result<MelodySong> {
        let mut notes = Vec::new();
        let mut boundaries = Vec::new();
        let mut onset = 0;
        for s in &self.sentences {
            for &(p, d) in s.iter().flat_map(|w| &w.notes) {
                notes.push(Note::new(p, onset, d));
                onset += d;
            }
            boundaries.push(notes.len());
        }
        MelodySong::new(notes, boundaries, self.bpm)
    }

    /// Lyric tokens (source) to melody tokens (target): each word covers the
    /// two tokens of every note it sings, and `[SEP]` maps to `[SEP]`.
    pub fn token_alignment(&self) -> Alignment {
        let mut al = Alignment::default();
        let (mut s, mut t) = (1, 1);
        for sentence in &self.sentences {
            for w in sentence {
                let k = 2 * w.notes.len();
                al.push(Span::new(s, s), Span::new(t, t + k - 1));
                s += 1;
                t += k;
            }
            al.push(Span::new(s, s), Span::new(t, t));
            s += 1;
            t += 1;
        }
        al
    }

    /// Words (source) to notes (target), without sentence separators.
    pub fn note_alignment(&self) -> Alignment {
        let mut al = Alignment::default();
        let mut t = 1;
        for (s, w) in self.words().enumerate() {
            let k = w.notes.len();
            al.pairs.push(AlignedPair { source: Span::new(s + 1, s + 1), target: Span::new(t, t + k - 1) });
            t += k;
        }
        al
    }

    /// Same words and rhythm with new pitches, in note order.
    fn with_pitches(&self, pitches: &[Pitch]) -> PairedSong {
        let mut it = pitches.iter();
        let mut out = self.clone();
        for w in out.sentences.iter_mut().flatten() {
            for n in &mut w.notes {
                n.0 = *it.next().expect("pitch count matches note count");
            }
        }
        out
    }

    /// Transposes to C major / A minor and centers the octave.
    pub fn normalized(&self) -> Result<(PairedSong, i32, i32)> {
        let song = self.melody_song()?;
        let (song, k) = transpose_to_c(&song)?;
        let (song, m) = octave_center(&song)?;
        let pitches: Vec<Pitch> = song.notes.iter().map(|n| n.pitch).collect();
        Ok((self.with_pitches(&pitches), k, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "# two songs\nanother=R:7/16,G3:1/16 day=E4:1/8\nalone=C4:1/4\n\nhey=D4:1/1\n";

    #[test]
    fn parse_and_write_round_trip() {
        let songs = parse_paired(TEXT).unwrap();
        assert_eq!(songs.len(), 2);
        assert_eq!(songs[0].sentences.len(), 2);
        assert_eq!(songs[0].lyric_tokens().join(" "), "another day [SEP] alone [SEP]");
        assert_eq!(songs[0].melody_tokens().join(" "), "R 7/16 G3 1/16 E4 1/8 [SEP] C4 1/4 [SEP]");
        assert_eq!(parse_paired(&write_paired(&songs)).unwrap(), songs);
    }

    #[test]
    fn alignments() {
        let s = &parse_paired(TEXT).unwrap()[0];
        assert_eq!(s.token_alignment().to_string(), "1-1:1-4 2-2:5-6 3-3:7-7 4-4:8-9 5-5:10-10");
        s.token_alignment().validate(5, 10).unwrap();
        assert_eq!(s.note_alignment().fan_out(), vec![2, 1, 1]);
        let song = s.melody_song().unwrap();
        assert_eq!(song.phrase_boundaries, vec![3, 4]);
        assert_eq!(song.total_duration(), 7 + 1 + 2 + 4);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_paired("ok=C4:1/4\nbad=C4-1/4\n").unwrap_err();
        assert!(matches!(e, Error::TokenFormat { position: 2, .. }), "{e}");
        assert!(parse_paired("word=\n").is_err());
        assert!(parse_paired("=C4:1/4\n").is_err());
        assert!(parse_paired("w=X9:1/4\n").is_err());
    }

    #[test]
    fn normalization_transposes_melody_only() {
        let s =
            &parse_paired("a=D5:1/4 b=E5:1/4 c=F#5:1/4 d=G5:1/4 e=A5:1/4 f=B5:1/4 g=C#6:1/4 h=D6:1/2\n").unwrap()[0];
        let (n, k, m) = s.normalized().unwrap();
        assert_eq!(k, -2);
        assert_eq!(m, -1);
        assert_eq!(n.sentences[0][0].notes[0].0, Pitch::Midi(60));
        assert_eq!(n.lyric_tokens(), s.lyric_tokens());
    }
}
