use crate::config::RunConfig;
use crate::files::{self, load_train_data, paired_ids, read_paired, write_json, Vocabs};
use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use tunesmith_core::model::{
    forward_loss, load_checkpoint, perplexity, save_checkpoint, train, Mode, ModelConfig, ModelParams, Schedule,
    StepLog, TrainConfig, TrainData,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Pretrain,
    Finetune,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    /// Cross-modal direction for fine-tuning: l2m or m2l.
    #[arg(long)]
    pub direction: Option<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-step losses as JSON lines.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Summary with final and held-out losses.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct HeldoutScore {
    pub direction: Mode,
    pub songs: usize,
    pub nll: f64,
    pub ppl: f64,
    pub l_att: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub schema: &'static str,
    pub steps: usize,
    pub alpha: f64,
    pub final_loss: Option<f64>,
    pub mean_l_att: Option<f64>,
    pub heldout: Vec<HeldoutScore>,
}

fn model_config(args: &TrainArgs, cfg: &RunConfig, vocabs: &Vocabs) -> Result<(ModelConfig, ModelParams)> {
    let m = &cfg.model;
    let (mut mc, params) = match &args.init {
        Some(path) => {
            let (mc, params) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            if mc.lyric_vocab != vocabs.lyric.len() || mc.melody_vocab != vocabs.melody.len() {
                bail!(
                    "checkpoint vocabularies ({}/{}) do not match the data directory ({}/{})",
                    mc.lyric_vocab,
                    mc.melody_vocab,
                    vocabs.lyric.len(),
                    vocabs.melody.len()
                );
            }
            if args.layers.is_some() || args.hidden.is_some() || args.heads.is_some() || args.ff.is_some() {
                log::warn!("architecture flags are ignored when starting from --init");
            }
            (mc, Some(params))
        }
        None => {
            let d = ModelConfig::default();
            let mc = ModelConfig {
                layers: args.layers.or(m.layers).unwrap_or(d.layers),
                hidden: args.hidden.or(m.hidden).unwrap_or(d.hidden),
                heads: args.heads.or(m.heads).unwrap_or(d.heads),
                ff: args.ff.or(m.ff).unwrap_or(d.ff),
                max_len: m.max_len.unwrap_or(d.max_len),
                att_norm: m.att_norm.unwrap_or(d.att_norm),
                lyric_vocab: vocabs.lyric.len(),
                melody_vocab: vocabs.melody.len(),
                ..d
            };
            (mc, None)
        }
    };
    if let Some(a) = args.alpha.or(m.alpha) {
        mc.alpha = a;
    }
    if let Some(p) = args.dropout.or(m.dropout) {
        mc.dropout = p;
    }
    mc.validate()?;
    let params = match params {
        Some(p) => p,
        None => ModelParams::init(&mc, cfg.seed(args.seed)?)?,
    };
    Ok((mc, params))
}

fn schedule(args: &TrainArgs, cfg: &RunConfig) -> Result<Schedule> {
    let kind = match args.schedule {
        Some(s) => s,
        None => match cfg.train.schedule.as_deref() {
            None | Some("pretrain") => ScheduleArg::Pretrain,
            Some("finetune") => ScheduleArg::Finetune,
            Some(other) => bail!("unknown schedule '{other}' (pretrain, finetune)"),
        },
    };
    Ok(match kind {
        ScheduleArg::Pretrain => Schedule::Pretrain,
        ScheduleArg::Finetune => {
            let dir = args.direction.as_deref().or(cfg.train.direction.as_deref()).unwrap_or("l2m");
            let mode = Mode::from_str(dir)?;
            if !mode.is_cross() {
                bail!("fine-tuning needs a cross-modal direction (l2m or m2l), got {dir}");
            }
            Schedule::Finetune(mode)
        }
    })
}

/// Loss, perplexity and regularizer on held-out paired songs.
pub fn heldout_scores(
    params: &ModelParams,
    mc: &ModelConfig,
    data: &TrainData,
    modes: &[Mode],
) -> Result<Vec<HeldoutScore>> {
    let mut out = Vec::new();
    for &mode in modes {
        let examples = data.paired_examples(mode)?;
        let report = forward_loss(params, mc, mode, &examples)?;
        out.push(HeldoutScore {
            direction: mode,
            songs: examples.len(),
            nll: report.nll,
            ppl: perplexity(params, mc, mode, &examples)?,
            l_att: report.l_att,
        });
    }
    Ok(out)
}

fn open_log(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let seed = cfg.seed(args.seed)?;
    let vocabs = Vocabs::load(&args.data)?;
    let data = load_train_data(&args.data, &vocabs)?;
    let (mc, mut params) = model_config(args, &cfg, &vocabs)?;
    let t = &cfg.train;
    let d = TrainConfig::default();
    let tcfg = TrainConfig {
        steps: args.max_steps.or(t.steps).unwrap_or(d.steps),
        batch_size: args.batch_size.or(t.batch_size).unwrap_or(d.batch_size),
        lr: args.lr.or(t.lr).unwrap_or(d.lr),
        warmup: args.warmup.or(t.warmup).unwrap_or(d.warmup),
        mask_ratio: args.mask_ratio.or(t.mask_ratio).unwrap_or(d.mask_ratio),
        seed,
        schedule: schedule(args, &cfg)?,
        divergence_checkpoint: Some(args.checkpoint.with_extension("diverged.json")),
        ..d
    };
    log::info!(
        "training {} parameters for {} steps ({:?}, alpha {})",
        params.count_scalars(),
        tcfg.steps,
        tcfg.schedule,
        mc.alpha
    );

    let mut log_file = args.log.as_deref().map(open_log).transpose()?;
    let mut write_err = None;
    let every = (tcfg.steps / 10).max(1);
    let logs: Vec<StepLog> = train(&mut params, &mc, &data, &tcfg, |s| {
        if s.step % every == 0 || s.step + 1 == tcfg.steps {
            match s.l_att {
                Some(a) => log::info!(
                    "step {:>5} {:<14} loss {:.4} nll {:.4} l_att {:.4}",
                    s.step,
                    s.mode.name(),
                    s.loss,
                    s.nll,
                    a
                ),
                None => log::info!("step {:>5} {:<14} loss {:.4} nll {:.4}", s.step, s.mode.name(), s.loss, s.nll),
            }
        }
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = serde_json::to_writer(&mut *f, s).map_err(std::io::Error::from).and_then(|_| writeln!(f)) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing the step log");
    }
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    save_checkpoint(&args.checkpoint, &mc, &params)?;
    log::info!("checkpoint written to {}", args.checkpoint.display());

    let heldout_path = args.data.join(files::HELDOUT);
    let heldout = if heldout_path.exists() {
        let songs = read_paired(&heldout_path)?;
        let held = TrainData { paired: paired_ids(&songs, &vocabs), ..TrainData::default() };
        let modes = match tcfg.schedule {
            Schedule::Finetune(m) => vec![m],
            Schedule::Pretrain if data.paired.is_empty() => Vec::new(),
            Schedule::Pretrain => vec![Mode::Lyric2Melody, Mode::Melody2Lyric],
        };
        let scores = if songs.is_empty() { Vec::new() } else { heldout_scores(&params, &mc, &held, &modes)? };
        for s in &scores {
            log::info!(
                "held-out {}: ppl {:.4}{}",
                s.direction.name(),
                s.ppl,
                s.l_att.map(|a| format!(" l_att {a:.6}")).unwrap_or_default()
            );
        }
        scores
    } else {
        Vec::new()
    };

    if let Some(path) = &args.report {
        let l_atts: Vec<f64> = logs.iter().filter_map(|l| l.l_att).collect();
        let report = TrainReport {
            schema: "tunesmith-train/1",
            steps: logs.len(),
            alpha: mc.alpha,
            final_loss: logs.last().map(|l| l.loss),
            mean_l_att: (!l_atts.is_empty()).then(|| l_atts.iter().sum::<f64>() / l_atts.len() as f64),
            heldout,
        };
        write_json(path, &report)?;
    }
    Ok(())
}
