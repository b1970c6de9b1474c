use crate::commands::align::ALIGNMENT_SCHEMA;
use crate::files::{
    check_schema, paired_ids, read_json, read_melodies, read_paired, write_json, AlignmentFile, Vocabs,
};
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::str::FromStr;
use tunesmith_core::align::{alignment_accuracy, Alignment};
use tunesmith_core::metrics::{metrics, perplexity};
use tunesmith_core::model::{load_checkpoint, Mode, TrainData};

pub const EVAL_SCHEMA: &str = "tunesmith-eval/1";

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Generated melodies: token file, paired file or MIDI directory.
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Reference songs, same forms as --generated. Must be a paired file for
    /// perplexity and alignment accuracy.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Alignment JSON from `align`, scored against the reference pairs.
    #[arg(long)]
    pub alignments: Option<PathBuf>,
    /// With --data, adds perplexity of the reference pairs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "l2m")]
    pub direction: String,
}

/// Report schema `tunesmith-eval/1`. Metrics that were not requested or
/// cannot apply are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub direction: String,
    pub songs: usize,
    pub pd: Option<f64>,
    pub dd: Option<f64>,
    pub md: Option<f64>,
    pub ppl: Option<f64>,
    pub alignment_accuracy: Option<f64>,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let mode = Mode::from_str(&args.direction)?;
    let mut report = EvalReport {
        schema: EVAL_SCHEMA.into(),
        direction: mode.name().into(),
        songs: 0,
        pd: None,
        dd: None,
        md: None,
        ppl: None,
        alignment_accuracy: None,
    };

    if let Some(gen_path) = &args.generated {
        let generated = read_melodies(gen_path)?;
        let reference = read_melodies(&args.reference)?;
        report.songs = generated.len();
        let reg = metrics();
        for name in reg.names() {
            let score =
                reg.create(name, &())?.score(&generated, &reference).with_context(|| format!("metric {name}"))?;
            match name {
                "pd" => report.pd = Some(score),
                "dd" => report.dd = Some(score),
                "md" => report.md = Some(score),
                other => log::warn!("metric {other} has no report field"),
            }
        }
    }

    if args.checkpoint.is_some() || args.alignments.is_some() {
        let songs =
            read_paired(&args.reference).context("perplexity and alignment accuracy need a paired reference")?;
        report.songs = report.songs.max(songs.len());
        match (&args.checkpoint, &args.data) {
            (Some(ckpt), Some(data)) => {
                if !mode.is_cross() {
                    bail!("perplexity is reported for l2m or m2l, got {}", args.direction);
                }
                let vocabs = Vocabs::load(data)?;
                let (mc, params) = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
                let held = TrainData { paired: paired_ids(&songs, &vocabs), ..TrainData::default() };
                report.ppl = Some(perplexity(&params, &mc, mode, &held.paired_examples(mode)?)?);
            }
            (Some(_), None) => bail!("--checkpoint needs --data for the vocabularies"),
            _ => {}
        }
        if let Some(path) = &args.alignments {
            let file: AlignmentFile = read_json(path)?;
            check_schema(&file.schema, ALIGNMENT_SCHEMA, path)?;
            let predicted: Vec<Alignment> = file.songs.iter().map(|s| Alignment::new(s.pairs.clone())).collect();
            let reference: Vec<Alignment> = songs.iter().map(|s| s.note_alignment()).collect();
            report.alignment_accuracy =
                Some(alignment_accuracy(&predicted, &reference).context(
                    "alignment accuracy needs the same words as the reference (generated lyrics rarely match)",
                )?);
        }
    }

    if args.generated.is_none() && report.ppl.is_none() && report.alignment_accuracy.is_none() {
        bail!("nothing to evaluate: pass --generated, --alignments or --checkpoint with --data");
    }
    write_json(&args.report, &report)?;
    log::info!("report written to {}", args.report.display());
    Ok(())
}
