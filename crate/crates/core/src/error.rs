use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed MIDI at byte {offset}: {reason}")]
    MidiParse { offset: usize, reason: String },

    #[error("track {0} contains no note events")]
    EmptyTrack(usize),

    #[error("track index {index} out of range ({count} tracks)")]
    NoSuchTrack { index: usize, count: usize },

    #[error("song contains no pitched notes")]
    NoPitch,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("token format error at position {position}: {reason}")]
    TokenFormat { position: usize, reason: String },

    #[error("malformed sequence: {0}")]
    MalformedSequence(String),

    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),

    #[error("attention row {row} is fully masked")]
    DegenerateRow { row: usize },

    #[error("sequence length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("step budget exhausted after {} tokens with {sentences_done} of {sentences_total} sentences closed", partial.len())]
    Truncated { partial: Vec<usize>, sentences_done: usize, sentences_total: usize },

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String, checkpoint: Option<std::path::PathBuf> },

    #[error("input mismatch: {0}")]
    Input(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy { kind: &'static str, name: String, available: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
