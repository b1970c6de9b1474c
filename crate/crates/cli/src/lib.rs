//! The `tunesmith` command line: preprocessing, training, generation,
//! alignment and evaluation over the core library.

pub mod commands;
pub mod config;
pub mod files;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "tunesmith", version, about = "Lyric-melody generation with sentence-aligned attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize and tokenize raw corpora, build vocabularies.
    Preprocess(commands::preprocess::PreprocessArgs),
    /// Pre-train on all corpora or fine-tune one direction.
    Train(commands::train::TrainArgs),
    /// Generate melodies from lyrics or lyrics from melodies.
    Generate(commands::generate::GenerateArgs),
    /// Turn generation attention into word-to-note alignments.
    Align(commands::align::AlignArgs),
    /// Score generations against references.
    Eval(commands::eval::EvalArgs),
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Preprocess(a) => commands::preprocess::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Generate(a) => commands::generate::run(a),
        Command::Align(a) => commands::align::run(a),
        Command::Eval(a) => commands::eval::run(a),
    }
}
