//! Triplet-margin training: loss, exact reverse-mode gradients, Adam, hard
//! negative mining and the epoch loop.

mod adam;
mod backward;
mod loss;
mod mining;

use std::io::Write;

use crate::error::{Error, Result};
use crate::features::LabeledCorpus;
use crate::model::{embed_video_traced, ModelParams};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{accumulate_embedding_gradient, backward, GradientSet};
pub use loss::{cosine_gradients, triplet_loss, triplet_loss_gradients};
pub use mining::{mine_triplets, Triplet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub triplets_per_pool: usize,
    pub pools: usize,
    /// Maximum clip length in frames (one frame per second).
    pub clip_frames: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            adam: AdamConfig::default(),
            epochs: 120,
            triplets_per_pool: 1000,
            pools: 2,
            clip_frames: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!("margin must be >= 0, got {}", self.margin)));
        }
        if self.clip_frames == 0 {
            return Err(Error::InvalidConfig("clip length must be at least one frame".into()));
        }
        self.adam.validate()
    }
}

/// Loss of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLoss {
    /// 1-based epoch.
    pub epoch: usize,
    /// 1-based iteration within the epoch.
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub iterations: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdamState,
    /// Mean loss per epoch.
    pub history: Vec<EpochSummary>,
    pub iterations: Vec<IterationLoss>,
}

/// Seed of a pool, so that every pool of every epoch re-crops and re-mines
/// independently of how many triplets earlier pools produced.
fn pool_seed(seed: u64, epoch: usize, pool: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (pool as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Runs `epochs x pools` rounds of mining followed by one Adam step per triplet.
///
/// `on_epoch` sees the summary, the parameters and optimiser state after each
/// epoch (for checkpointing or logging); an error from it stops training.
pub fn train(
    corpus: &LabeledCorpus,
    params: ModelParams,
    config: &TrainConfig,
    state: Option<AdamState>,
    mut on_epoch: impl FnMut(&EpochSummary, &ModelParams, &AdamState) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = params;
    let mut state = state.unwrap_or_else(|| AdamState::new(&params));
    let mut history = Vec::with_capacity(config.epochs);
    let mut iterations = Vec::new();
    for epoch in 1..=config.epochs {
        let mut sum = 0.0;
        let mut count = 0;
        for pool in 0..config.pools {
            let triplets = mine_triplets(
                corpus,
                &params,
                config.triplets_per_pool,
                config.clip_frames,
                pool_seed(config.seed, epoch, pool),
            )?;
            for triplet in &triplets {
                let [a, p, n] = triplet.clips(corpus)?;
                let (ta, (tp, tn)) = rayon::join(
                    || embed_video_traced(&params, &a),
                    || {
                        rayon::join(
                            || embed_video_traced(&params, &p),
                            || embed_video_traced(&params, &n),
                        )
                    },
                );
                let (loss, grads) = backward(&params, &ta?, &tp?, &tn?, config.margin)?;
                adam_step(&mut params, &grads, &mut state, &config.adam)?;
                count += 1;
                sum += loss;
                iterations.push(IterationLoss {
                    epoch,
                    iteration: count,
                    loss,
                });
            }
        }
        let summary = EpochSummary {
            epoch,
            iterations: count,
            mean_loss: if count == 0 { 0.0 } else { sum / count as f64 },
        };
        log::info!(
            "epoch {epoch}: mean loss {:.6} over {count} triplets",
            summary.mean_loss
        );
        on_epoch(&summary, &params, &state)?;
        history.push(summary);
    }
    Ok(TrainOutcome {
        params,
        optimizer: state,
        history,
        iterations,
    })
}

/// Writes the per-iteration losses as `epoch,iteration,loss` CSV.
pub fn write_loss_csv(iterations: &[IterationLoss], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,iteration,loss")?;
    for it in iterations {
        writeln!(out, "{},{},{}", it.epoch, it.iteration, it.loss)?;
    }
    Ok(())
}
