//! On-disk formats shared by the commands.
//!
//! A prepared data directory holds `lyric.vocab`, `melody.vocab`,
//! `lyrics.tok`, `melodies.tok`, `paired.txt`, optionally `heldout.txt`, and
//! `manifest.json`. Token files carry one song per line with `[SEP]` closing
//! each sentence.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tunesmith_core::align::AlignedPair;
use tunesmith_core::model::{Modality, PairedIds, TrainData};
use tunesmith_core::paired::{parse_paired, PairedSong};
use tunesmith_core::score::{detokenize_melody, parse_midi_melody, MelodySong, MelodyTokenSequence, DEFAULT_BPM};
use tunesmith_core::sequence::TokenSequence;
use tunesmith_core::vocab::Vocabulary;
use tunesmith_core::Error;

pub const LYRIC_VOCAB: &str = "lyric.vocab";
pub const MELODY_VOCAB: &str = "melody.vocab";
pub const LYRICS: &str = "lyrics.tok";
pub const MELODIES: &str = "melodies.tok";
pub const PAIRED: &str = "paired.txt";
pub const HELDOUT: &str = "heldout.txt";
pub const MANIFEST: &str = "manifest.json";

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_token_lines(path: &Path) -> Result<Vec<TokenSequence>> {
    Ok(read_text(path)?.lines().filter(|l| !l.trim().is_empty()).map(TokenSequence::parse_line).collect())
}

pub fn write_token_lines(path: &Path, songs: &[TokenSequence]) -> Result<()> {
    let mut text = String::new();
    for s in songs {
        text.push_str(&s.to_line());
        text.push('\n');
    }
    write_text(path, &text)
}

/// A paired file has `word=PITCH:DUR` groups; token files never contain `=`.
fn looks_paired(text: &str) -> bool {
    text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#')).is_some_and(|l| l.contains('='))
}

pub fn read_paired(path: &Path) -> Result<Vec<PairedSong>> {
    parse_paired(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Source sequences of one modality from a paired file or a token file.
pub fn read_sources(path: &Path, modality: Modality) -> Result<Vec<TokenSequence>> {
    let text = read_text(path)?;
    if looks_paired(&text) {
        let songs = parse_paired(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(songs
            .iter()
            .map(|s| {
                TokenSequence::new(match modality {
                    Modality::Lyric => s.lyric_tokens(),
                    Modality::Melody => s.melody_tokens(),
                })
            })
            .collect())
    } else {
        read_token_lines(path)
    }
}

/// Melodies from a MIDI directory, a paired file or a melody token file.
pub fn read_melodies(path: &Path) -> Result<Vec<MelodySong>> {
    if path.is_dir() {
        return midi_files(path)?
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                first_melody_track(&bytes).with_context(|| format!("parsing {}", p.display()))
            })
            .collect();
    }
    let text = read_text(path)?;
    if looks_paired(&text) {
        let songs = parse_paired(&text).with_context(|| format!("parsing {}", path.display()))?;
        return songs.iter().map(|s| Ok(s.melody_song()?)).collect();
    }
    read_token_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let mts = MelodyTokenSequence::from_strings(&seq.tokens)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?;
            Ok(detokenize_melody(&mts, DEFAULT_BPM)?)
        })
        .collect()
}

/// `.mid`/`.midi` files directly inside `dir`, sorted by name.
pub fn midi_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// The first track holding notes; format-1 files often keep only tempo in track 0.
pub fn first_melody_track(bytes: &[u8]) -> tunesmith_core::Result<MelodySong> {
    let mut index = 0;
    loop {
        match parse_midi_melody(bytes, index) {
            Err(Error::EmptyTrack(_)) => index += 1,
            Err(Error::NoSuchTrack { .. }) if index > 0 => return Err(Error::EmptyTrack(0)),
            other => return other,
        }
    }
}

pub struct Vocabs {
    pub lyric: Vocabulary,
    pub melody: Vocabulary,
}

impl Vocabs {
    pub fn load(data: &Path) -> Result<Self> {
        let load = |name: &str| -> Result<Vocabulary> {
            let path = data.join(name);
            Vocabulary::from_text(&read_text(&path)?).with_context(|| format!("parsing {}", path.display()))
        };
        Ok(Self { lyric: load(LYRIC_VOCAB)?, melody: load(MELODY_VOCAB)? })
    }

    pub fn of(&self, m: Modality) -> &Vocabulary {
        match m {
            Modality::Lyric => &self.lyric,
            Modality::Melody => &self.melody,
        }
    }
}

pub fn paired_ids(songs: &[PairedSong], vocabs: &Vocabs) -> Vec<PairedIds> {
    songs
        .iter()
        .map(|s| PairedIds {
            lyric: vocabs.lyric.encode(&s.lyric_tokens()),
            melody: vocabs.melody.encode(&s.melody_tokens()),
            alignment: Some(s.token_alignment()),
        })
        .collect()
}

/// Everything in a prepared directory except held-out songs, as ids.
pub fn load_train_data(data: &Path, vocabs: &Vocabs) -> Result<TrainData> {
    let ids = |name: &str, v: &Vocabulary| -> Result<Vec<Vec<usize>>> {
        let path = data.join(name);
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(read_token_lines(&path)?.iter().map(|s| v.encode(&s.tokens)).collect())
    };
    let paired_path = data.join(PAIRED);
    let paired = if paired_path.exists() { paired_ids(&read_paired(&paired_path)?, vocabs) } else { Vec::new() };
    Ok(TrainData { lyric: ids(LYRICS, &vocabs.lyric)?, melody: ids(MELODIES, &vocabs.melody)?, paired })
}

/// Cross-attention of one generated sentence: rows are generated tokens,
/// columns the tokens of the source sentence, `[SEP]` last on both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceAttention {
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongAttention {
    pub song: usize,
    pub sentences: Vec<SentenceAttention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionFile {
    pub schema: String,
    pub direction: String,
    pub songs: Vec<SongAttention>,
}

/// Word-to-note alignment of one song. Spans are 1-based and inclusive:
/// `source` counts words and `target` counts notes across the whole song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongAlignment {
    pub song: usize,
    pub words: usize,
    pub notes: usize,
    pub pairs: Vec<AlignedPair>,
    pub compact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFile {
    pub schema: String,
    pub direction: String,
    pub method: String,
    pub songs: Vec<SongAlignment>,
    pub accuracy: Option<f64>,
}

pub fn check_schema(found: &str, expected: &str, path: &Path) -> Result<()> {
    if found != expected {
        bail!("{}: schema '{found}', expected '{expected}'", path.display());
    }
    Ok(())
}
