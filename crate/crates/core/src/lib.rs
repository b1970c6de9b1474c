pub mod align;
pub mod autograd;
pub mod decode;
pub mod error;
pub mod lyric;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod paired;
pub mod registry;
pub mod score;
pub mod sequence;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
