use crate::config::RunConfig;
use crate::files::{
    self, first_melody_track, midi_files, read_paired, read_text, write_json, write_text, write_token_lines,
};
use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};
use tunesmith_core::lyric::parse_lyrics;
use tunesmith_core::paired::{write_paired, PairedSong};
use tunesmith_core::score::{
    mean_phrase_length, octave_center, split_long_notes, split_phrases_unpaired, tokenize_melody, transpose_to_c,
    MelodySong,
};
use tunesmith_core::sequence::TokenSequence;
use tunesmith_core::vocab::build_vocab;

/// Phrase length for unpaired melodies when there is no paired data to measure.
const FALLBACK_PHRASE_LEN: usize = 8;

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Output directory for token, vocabulary and manifest files.
    #[arg(long)]
    pub out: PathBuf,
    /// Lyric-only corpus: one sentence per line, songs split by blank lines.
    #[arg(long)]
    pub lyrics: Option<PathBuf>,
    /// Directory of melody-only MIDI files.
    #[arg(long)]
    pub midi: Option<PathBuf>,
    /// Paired training songs.
    #[arg(long)]
    pub paired: Option<PathBuf>,
    /// Paired held-out songs; normalized but kept out of the vocabularies.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Tokens seen fewer times are mapped to [UNK].
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Skipped {
    file: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    schema: &'static str,
    seed: u64,
    lyric_songs: usize,
    melody_songs: usize,
    paired_songs: usize,
    heldout_songs: usize,
    lyric_vocab: usize,
    melody_vocab: usize,
    phrase_length: usize,
    skipped: Vec<Skipped>,
}

fn normalize_paired(path: &Path) -> Result<Vec<PairedSong>> {
    read_paired(path)?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (song, k, m) = s.normalized().with_context(|| format!("{} song {}", path.display(), i + 1))?;
            log::debug!("{} song {}: shifted {k} semitones, {m} octaves", path.display(), i + 1);
            Ok(song)
        })
        .collect()
}

fn midi_to_tokens(bytes: &[u8], phrase_len: usize) -> tunesmith_core::Result<TokenSequence> {
    let song = first_melody_track(bytes)?;
    let (song, _) = transpose_to_c(&song)?;
    let (song, _) = octave_center(&song)?;
    let song = split_phrases_unpaired(&split_long_notes(&song), phrase_len)?;
    Ok(tokenize_melody(&song)?.to_sequence())
}

pub fn run(args: &PreprocessArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let seed = cfg.seed(args.seed)?;

    let paired = match &args.paired {
        Some(p) => normalize_paired(p)?,
        None => Vec::new(),
    };
    let heldout = match &args.heldout {
        Some(p) => normalize_paired(p)?,
        None => Vec::new(),
    };
    let lyrics = match &args.lyrics {
        Some(p) => parse_lyrics(&read_text(p)?),
        None => Vec::new(),
    };

    let phrase_len = if paired.is_empty() {
        FALLBACK_PHRASE_LEN
    } else {
        let songs = paired.iter().map(PairedSong::melody_song).collect::<tunesmith_core::Result<Vec<MelodySong>>>()?;
        mean_phrase_length(&songs)?
    };

    let mut melodies = Vec::new();
    let mut skipped = Vec::new();
    if let Some(dir) = &args.midi {
        let paths = midi_files(dir)?;
        let parsed: Vec<_> = paths
            .par_iter()
            .map(|p| std::fs::read(p).map_err(tunesmith_core::Error::from).and_then(|b| midi_to_tokens(&b, phrase_len)))
            .collect();
        for (path, result) in paths.iter().zip(parsed) {
            match result {
                Ok(seq) => melodies.push(seq),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped.push(Skipped {
                        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                        error: e.to_string(),
                    });
                }
            }
        }
    }

    let paired_lyrics: Vec<TokenSequence> = paired.iter().map(|s| TokenSequence::new(s.lyric_tokens())).collect();
    let paired_melodies: Vec<TokenSequence> = paired.iter().map(|s| TokenSequence::new(s.melody_tokens())).collect();
    let lyric_vocab = build_vocab(lyrics.iter().chain(&paired_lyrics), args.min_count)?;
    let melody_vocab = build_vocab(melodies.iter().chain(&paired_melodies), args.min_count)?;

    let out = &args.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join(files::LYRIC_VOCAB), &lyric_vocab.to_text())?;
    write_text(&out.join(files::MELODY_VOCAB), &melody_vocab.to_text())?;
    write_token_lines(&out.join(files::LYRICS), &lyrics)?;
    write_token_lines(&out.join(files::MELODIES), &melodies)?;
    write_text(&out.join(files::PAIRED), &write_paired(&paired))?;
    if args.heldout.is_some() {
        write_text(&out.join(files::HELDOUT), &write_paired(&heldout))?;
    }
    let manifest = Manifest {
        schema: "tunesmith-manifest/1",
        seed,
        lyric_songs: lyrics.len(),
        melody_songs: melodies.len(),
        paired_songs: paired.len(),
        heldout_songs: heldout.len(),
        lyric_vocab: lyric_vocab.len(),
        melody_vocab: melody_vocab.len(),
        phrase_length: phrase_len,
        skipped,
    };
    write_json(&out.join(files::MANIFEST), &manifest)?;
    log::info!(
        "prepared {} lyric, {} melody, {} paired and {} held-out songs in {} ({} skipped)",
        manifest.lyric_songs,
        manifest.melody_songs,
        manifest.paired_songs,
        manifest.heldout_songs,
        out.display(),
        manifest.skipped.len()
    );
    Ok(())
}
