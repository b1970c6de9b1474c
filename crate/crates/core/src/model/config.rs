use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Lyric,
    Melody,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Lyric => "lyric",
            Modality::Melody => "melody",
        }
    }
}

/// Which encoder feeds which decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lyric2Lyric,
    Melody2Melody,
    Lyric2Melody,
    Melody2Lyric,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Lyric2Lyric, Mode::Melody2Melody, Mode::Lyric2Melody, Mode::Melody2Lyric];

    pub fn source(self) -> Modality {
        match self {
            Mode::Lyric2Lyric | Mode::Lyric2Melody => Modality::Lyric,
            Mode::Melody2Melody | Mode::Melody2Lyric => Modality::Melody,
        }
    }

    pub fn target(self) -> Modality {
        match self {
            Mode::Lyric2Lyric | Mode::Melody2Lyric => Modality::Lyric,
            Mode::Melody2Melody | Mode::Lyric2Melody => Modality::Melody,
        }
    }

    pub fn is_cross(self) -> bool {
        self.source() != self.target()
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Lyric2Lyric => "lyric2lyric",
            Mode::Melody2Melody => "melody2melody",
            Mode::Lyric2Melody => "lyric2melody",
            Mode::Melody2Lyric => "melody2lyric",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lyric2lyric" | "l2l" => Mode::Lyric2Lyric,
            "melody2melody" | "m2m" => Mode::Melody2Melody,
            "lyric2melody" | "l2m" => Mode::Lyric2Melody,
            "melody2lyric" | "m2l" => Mode::Melody2Lyric,
            other => return Err(Error::Config(format!("unknown direction '{other}'"))),
        })
    }
}

/// Per-entry penalty of the attention regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttNorm {
    #[default]
    Abs,
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    pub lyric_vocab: usize,
    pub melody_vocab: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub att_norm: AttNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            heads: 2,
            ff: 64,
            lyric_vocab: 0,
            melody_vocab: 0,
            max_len: 1024,
            dropout: 0.1,
            alpha: 0.5,
            att_norm: AttNorm::Abs,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab(lyric_vocab: usize, melody_vocab: usize) -> Self {
        Self { lyric_vocab, melody_vocab, ..Self::default() }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn vocab(&self, m: Modality) -> usize {
        match m {
            Modality::Lyric => self.lyric_vocab,
            Modality::Melody => self.melody_vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ff == 0 {
            return bad("layers, hidden, heads and ff must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        // the five specials plus at least one real token
        if self.lyric_vocab < 6 || self.melody_vocab < 6 {
            return bad("vocabulary sizes must be set (at least 6)".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_and_names() {
        assert_eq!(Mode::Lyric2Melody.source(), Modality::Lyric);
        assert_eq!(Mode::Lyric2Melody.target(), Modality::Melody);
        assert_eq!("m2l".parse::<Mode>().unwrap(), Mode::Melody2Lyric);
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }

    #[test]
    fn validation() {
        let mut c = ModelConfig::with_vocab(20, 30);
        c.validate().unwrap();
        c.heads = 3;
        assert!(c.validate().is_err());
        c.heads = 2;
        c.alpha = -0.1;
        assert!(c.validate().is_err());
    }
}
