//! Lyric and melody encoder-decoder stacks with sentence-restricted
//! cross-attention and an alignment regularizer on that attention.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod loss;
pub(crate) mod network;
pub mod params;
pub mod train;

pub use attention::{attention_regularizer, masked_attention, sentence_mask, target_map, AttentionTarget};
pub use checkpoint::{checkpoint_from_json, checkpoint_to_json, load_checkpoint, save_checkpoint};
pub use config::{AttNorm, Modality, Mode, ModelConfig};
pub use loss::{backward, forward_loss, joint_loss_and_gradients, perplexity, Example, Gradients, LossReport};
pub use network::positional_encoding;
pub use params::ModelParams;
pub use train::{train, Adam, PairedIds, Schedule, StepLog, TrainConfig, TrainData};
