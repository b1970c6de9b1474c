use crate::commands::generate::ATTENTION_SCHEMA;
use crate::files::{check_schema, read_json, read_paired, write_json, AlignmentFile, AttentionFile, SongAlignment};
use anyhow::{bail, Context, Result};
use clap::Args;
use std::path::PathBuf;
use std::str::FromStr;
use tunesmith_core::align::{aligners, alignment_accuracy, Alignment};
use tunesmith_core::decode::extract_alignment;
use tunesmith_core::model::Mode;
use tunesmith_core::tensor::Matrix;

pub const ALIGNMENT_SCHEMA: &str = "tunesmith-alignment/1";

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Attention JSON written by `generate --emit-attention`.
    #[arg(long)]
    pub attention: PathBuf,
    /// dp or greedy.
    #[arg(long, default_value = "dp")]
    pub method: String,
    #[arg(long)]
    pub output: PathBuf,
    /// Paired songs whose word-to-note alignment is the ground truth.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

/// Word-to-note alignments from every song of an attention file.
pub fn align_file(file: &AttentionFile, method: &str) -> Result<Vec<SongAlignment>> {
    let mode = Mode::from_str(&file.direction)?;
    if !mode.is_cross() {
        bail!("attention file direction {} is not cross-modal", file.direction);
    }
    let aligner = aligners().create(method, &())?;
    file.songs
        .iter()
        .map(|song| {
            let mats: Vec<Matrix> = song
                .sentences
                .iter()
                .enumerate()
                .map(|(s, a)| {
                    if a.weights.len() != a.target_tokens.len()
                        || a.weights.iter().any(|r| r.len() != a.source_tokens.len())
                    {
                        bail!("song {} sentence {}: weights do not match the token lists", song.song, s + 1);
                    }
                    Ok(Matrix::from_rows(&a.weights))
                })
                .collect::<Result<_>>()?;
            let al = extract_alignment(mode, &mats, aligner.as_ref()).with_context(|| format!("song {}", song.song))?;
            Ok(SongAlignment {
                song: song.song,
                words: al.source_len(),
                notes: al.target_len(),
                compact: al.to_string(),
                pairs: al.pairs,
            })
        })
        .collect()
}

pub fn run(args: &AlignArgs) -> Result<()> {
    let file: AttentionFile = read_json(&args.attention)?;
    check_schema(&file.schema, ATTENTION_SCHEMA, &args.attention)?;
    let songs = align_file(&file, &args.method)?;
    let accuracy = match &args.reference {
        Some(path) => {
            let reference: Vec<Alignment> = read_paired(path)?.iter().map(|s| s.note_alignment()).collect();
            let predicted: Vec<Alignment> = songs.iter().map(|s| Alignment::new(s.pairs.clone())).collect();
            let acc = alignment_accuracy(&predicted, &reference)
                .context("alignment accuracy needs the same words as the reference (generated lyrics rarely match)")?;
            log::info!("alignment accuracy ({}): {acc:.4}", args.method);
            Some(acc)
        }
        None => None,
    };
    write_json(
        &args.output,
        &AlignmentFile {
            schema: ALIGNMENT_SCHEMA.into(),
            direction: file.direction.clone(),
            method: args.method.clone(),
            songs,
            accuracy,
        },
    )
}
