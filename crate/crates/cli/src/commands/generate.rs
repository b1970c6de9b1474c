use crate::config::RunConfig;
use crate::files::{
    read_sources, write_json, write_token_lines, AttentionFile, SentenceAttention, SongAttention, Vocabs,
};
use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use std::path::PathBuf;
use std::str::FromStr;
use tunesmith_core::decode::{generate, strategies, GenerateConfig, Generation, StrategyOptions};
use tunesmith_core::model::{load_checkpoint, Mode};
use tunesmith_core::sequence::{sentence_ranges, TokenSequence};

pub const ATTENTION_SCHEMA: &str = "tunesmith-attention/1";

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory with the vocabularies the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// l2m (lyrics to melody) or m2l (melody to lyrics).
    #[arg(long)]
    pub direction: String,
    /// Paired file or token file with one source song per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Token file for the generated songs.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-sentence cross-attention as JSON, input to `align`.
    #[arg(long)]
    pub emit_attention: Option<PathBuf>,
    /// Decoding strategy: greedy or top-k.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_sentence_factor: Option<usize>,
    #[arg(long)]
    pub step_budget: Option<usize>,
    /// Sampling seed; song i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let g = &cfg.generate;
    let mode = Mode::from_str(&args.direction)?;
    if !mode.is_cross() {
        bail!("generate needs l2m or m2l, got {}", args.direction);
    }
    let vocabs = Vocabs::load(&args.data)?;
    let (mc, params) =
        load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let (src_vocab, tgt_vocab) = (vocabs.of(mode.source()), vocabs.of(mode.target()));

    let strategy = args.strategy.clone().or(g.strategy.clone()).unwrap_or_else(|| "greedy".into());
    let registry = strategies();
    if !registry.contains(&strategy) {
        bail!("unknown decoding strategy '{strategy}' (available: {})", registry.names().join(", "));
    }
    let defaults = StrategyOptions::default();
    let base = StrategyOptions {
        top_k: args.top_k.or(g.top_k).unwrap_or(defaults.top_k),
        temperature: args.temperature.or(g.temperature).unwrap_or(defaults.temperature),
        seed: args.seed.or(cfg.seed).unwrap_or(0),
    };
    let gd = GenerateConfig::default();
    let opts = GenerateConfig {
        max_sentence_factor: args.max_sentence_factor.or(g.max_sentence_factor).unwrap_or(gd.max_sentence_factor),
        step_budget: args.step_budget.or(g.step_budget),
        ..gd
    };

    let sources = read_sources(&args.input, mode.source())?;
    let ids: Vec<Vec<usize>> = sources.iter().map(|s| src_vocab.encode(&s.tokens)).collect();
    let results: Vec<Generation> = ids
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let so = StrategyOptions { seed: base.seed.wrapping_add(i as u64), ..base.clone() };
            let mut strat = registry.create(&strategy, &so)?;
            generate(&params, &mc, mode, src, tgt_vocab, strat.as_mut(), &opts)
                .with_context(|| format!("song {}", i + 1))
        })
        .collect::<Result<_>>()?;

    let outputs: Vec<TokenSequence> =
        results.iter().map(|r| Ok(TokenSequence::new(tgt_vocab.decode(&r.tokens)?))).collect::<Result<_>>()?;
    write_token_lines(&args.output, &outputs)?;
    log::info!("wrote {} {} generations to {}", outputs.len(), mode.target().name(), args.output.display());

    if let Some(path) = &args.emit_attention {
        let songs = results
            .iter()
            .zip(&sources)
            .zip(&outputs)
            .enumerate()
            .map(|(i, ((r, src), out))| {
                let sentences = r
                    .attention
                    .iter()
                    .zip(sentence_ranges(&src.tokens))
                    .zip(sentence_ranges(&out.tokens))
                    .map(|((a, s), t)| SentenceAttention {
                        source_tokens: src.tokens[s].to_vec(),
                        target_tokens: out.tokens[t].to_vec(),
                        weights: a.to_rows(),
                    })
                    .collect();
                SongAttention { song: i + 1, sentences }
            })
            .collect();
        let file = AttentionFile { schema: ATTENTION_SCHEMA.into(), direction: mode.name().into(), songs };
        write_json(path, &file)?;
    }
    Ok(())
}
