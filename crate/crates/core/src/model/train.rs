use super::checkpoint::save_checkpoint;
use super::config::{Mode, ModelConfig};
use super::loss::{joint_loss_and_gradients, Example, Gradients};
use super::params::ModelParams;
use crate::align::Alignment;
use crate::error::{Error, Result};
use crate::mask::mask_song;
use crate::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// A paired song in id form; `alignment` runs lyric (source) to melody (target).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedIds {
    pub lyric: Vec<usize>,
    pub melody: Vec<usize>,
    pub alignment: Option<Alignment>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub lyric: Vec<Vec<usize>>,
    pub melody: Vec<Vec<usize>>,
    pub paired: Vec<PairedIds>,
}

impl TrainData {
    /// Teacher-forced examples for a cross-modal mode.
    pub fn paired_examples(&self, mode: Mode) -> Result<Vec<Example>> {
        self.paired
            .iter()
            .map(|p| match mode {
                Mode::Lyric2Melody => Example::paired(&p.lyric, &p.melody, p.alignment.as_ref()),
                Mode::Melody2Lyric => {
                    let t = p.alignment.as_ref().map(Alignment::transposed);
                    Example::paired(&p.melody, &p.lyric, t.as_ref())
                }
                _ => Err(Error::Input(format!("{mode} is not a paired mode"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "mode")]
pub enum Schedule {
    /// Round-robin over every loss term that has data.
    Pretrain,
    /// Only the given cross-modal term.
    Finetune(Mode),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub mask_ratio: f64,
    pub seed: u64,
    pub schedule: Schedule,
    pub divergence_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            lr: 5e-4,
            warmup: 100,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            mask_ratio: crate::mask::DEFAULT_MASK_RATIO,
            seed: 0,
            schedule: Schedule::Pretrain,
            divergence_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mode: Mode,
    pub lr: f64,
    pub loss: f64,
    pub nll: f64,
    pub l_att: Option<f64>,
}

pub struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = Gradients::zeros_like(params).grads;
        Self { m: zeros.clone(), v: zeros, t: 0, beta1, beta2, eps }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.grads[i]);
            for k in 0..p.data.len() {
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * g.data[k];
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * g.data[k] * g.data[k];
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Cycles through a seeded permutation of `0..n`, reshuffling each pass.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, cursor: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = k.min(self.order.len());
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn active_modes(data: &TrainData, schedule: Schedule) -> Result<Vec<Mode>> {
    let has = |m: Mode| match m {
        Mode::Lyric2Lyric => !data.lyric.is_empty(),
        Mode::Melody2Melody => !data.melody.is_empty(),
        _ => !data.paired.is_empty(),
    };
    let modes: Vec<Mode> = match schedule {
        Schedule::Pretrain => Mode::ALL.into_iter().filter(|&m| has(m)).collect(),
        Schedule::Finetune(m) if m.is_cross() => {
            if !has(m) {
                return Err(Error::Input("fine-tuning needs paired data".into()));
            }
            vec![m]
        }
        Schedule::Finetune(m) => return Err(Error::Config(format!("cannot fine-tune on {m}"))),
    };
    if modes.is_empty() {
        return Err(Error::Input("no training data".into()));
    }
    Ok(modes)
}

/// Trains in place. `on_step` sees every step's log as it happens.
///
/// On a non-finite loss or gradient the parameters are left at their last
/// finite state, optionally checkpointed, and a divergence error is returned.
pub fn train(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    data: &TrainData,
    tcfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if tcfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let modes = active_modes(data, tcfg.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut dropout_rng = Some(ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5eed_d20f));

    let l2m = if modes.contains(&Mode::Lyric2Melody) { data.paired_examples(Mode::Lyric2Melody)? } else { Vec::new() };
    let m2l = if modes.contains(&Mode::Melody2Lyric) { data.paired_examples(Mode::Melody2Lyric)? } else { Vec::new() };
    let mut samplers: Vec<Sampler> = modes
        .iter()
        .map(|m| {
            let n = match m {
                Mode::Lyric2Lyric => data.lyric.len(),
                Mode::Melody2Melody => data.melody.len(),
                _ => data.paired.len(),
            };
            Sampler::new(n, &mut rng)
        })
        .collect();

    let mut adam = Adam::new(params, tcfg.beta1, tcfg.beta2, tcfg.eps);
    let mut logs = Vec::with_capacity(tcfg.steps);
    for step in 0..tcfg.steps {
        let slot = step % modes.len();
        let mode = modes[slot];
        let picks = samplers[slot].take(tcfg.batch_size, &mut rng);
        let batch: Vec<Example> = match mode {
            Mode::Lyric2Lyric | Mode::Melody2Melody => {
                let songs = if mode == Mode::Lyric2Lyric { &data.lyric } else { &data.melody };
                picks
                    .iter()
                    .map(|&i| mask_song(&songs[i], tcfg.mask_ratio, rng.gen()).map(|mp| Example::from_masked(&mp)))
                    .collect::<Result<_>>()?
            }
            Mode::Lyric2Melody => picks.iter().map(|&i| l2m[i].clone()).collect(),
            Mode::Melody2Lyric => picks.iter().map(|&i| m2l[i].clone()).collect(),
        };
        let dropout = if cfg.dropout > 0.0 { dropout_rng.take() } else { None };
        let result = joint_loss_and_gradients(params, cfg, &[(mode, &batch)], dropout);
        let (_, reports, grads, rng_back) = match result {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => return Err(diverge(params, cfg, tcfg, step, what)),
            Err(e) => return Err(e),
        };
        if rng_back.is_some() {
            dropout_rng = rng_back;
        }
        let lr = tcfg.learning_rate(step);
        let before = params.clone();
        adam.step(params, &grads, lr);
        if let Some(bad) = params.tensors().iter().position(|t| !t.is_finite()) {
            let name = params.names()[bad].clone();
            *params = before;
            return Err(diverge(params, cfg, tcfg, step, format!("update of {name}")));
        }
        let r = &reports[0];
        let log = StepLog { step, mode, lr, loss: r.loss, nll: r.nll, l_att: r.l_att };
        log::debug!("step {step} {mode} loss {:.6} nll {:.6} l_att {:?}", log.loss, log.nll, log.l_att);
        on_step(&log);
        logs.push(log);
    }
    Ok(logs)
}

fn diverge(params: &ModelParams, cfg: &ModelConfig, tcfg: &TrainConfig, step: usize, reason: String) -> Error {
    let checkpoint = match &tcfg.divergence_checkpoint {
        Some(path) => match save_checkpoint(path, cfg, params) {
            Ok(()) => Some(path.clone()),
            Err(e) => {
                log::error!("could not write divergence checkpoint: {e}");
                None
            }
        },
        None => None,
    };
    Error::Diverged { step, reason, checkpoint }
}
