//! Trained-model checkpoints: one file carrying the architecture, the noise
//! schedule it was trained under, the sample-row standardizer, and the
//! weights.
//!
//! Weights travel as `f32` payload blocks; everything that must survive
//! exactly (schedule endpoints, standardizer moments) lives in the JSON meta
//! as `f64`. Loading the same file always reconstructs bitwise-identical
//! models, which is what end-to-end determinism rests on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::mlp::{MlpConfig, TinyMlpDenoiser};
use crate::diffusion::{
    build_schedule, NoiseSchedule, Standardizer, DEFAULT_BETA_1, DEFAULT_BETA_T, DEFAULT_STEPS,
};
use crate::error::{Error, Result};
use crate::real::Real;

use super::container::{f32_to_scalars, read_container, scalars_to_f32, write_container};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Denoises anchor-distance contact rows.
    Contact,
    /// Denoises keypoint/direction motion rows.
    Motion,
}

/// Everything needed to rebuild a linear noise schedule exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_1,
            beta_end: DEFAULT_BETA_T,
        }
    }
}

impl ScheduleSpec {
    pub fn build<S: Real>(&self) -> Result<NoiseSchedule<S>> {
        build_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub config: MlpConfig,
    pub schedule: ScheduleSpec,
    /// Sample-row standardizer moments (length `config.sample_dim`).
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Basis points per part the conditioning rows were built with.
    pub anchors: usize,
    /// Keypoints per hand in motion rows (0 for contact models).
    pub keypoints: usize,
}

/// A loaded checkpoint, ready to sample from.
#[derive(Clone, Debug)]
pub struct Checkpoint<S: Real> {
    pub meta: CheckpointMeta,
    pub model: TinyMlpDenoiser<S>,
    pub scaler: Standardizer<S>,
    pub schedule: NoiseSchedule<S>,
}

pub fn save_checkpoint<S: Real>(
    path: &Path,
    meta: &CheckpointMeta,
    model: &TinyMlpDenoiser<S>,
) -> Result<()> {
    if meta.config != *model.config() {
        return Err(Error::invalid("checkpoint meta disagrees with the model"));
    }
    if meta.mean.len() != meta.config.sample_dim || meta.std.len() != meta.config.sample_dim {
        return Err(Error::invalid(format!(
            "standardizer has {} / {} entries for sample_dim {}",
            meta.mean.len(),
            meta.std.len(),
            meta.config.sample_dim
        )));
    }
    let weights = scalars_to_f32(&model.flatten());
    write_container(path, meta, &[("weights", &weights)])
}

pub fn load_checkpoint<S: Real>(path: &Path, expect: ModelKind) -> Result<Checkpoint<S>> {
    let container = read_container::<CheckpointMeta>(path)?;
    let meta = container.meta.clone();
    if meta.kind != expect {
        return Err(Error::invalid(format!(
            "{} holds a {:?} model, expected {:?}",
            path.display(),
            meta.kind,
            expect
        )));
    }
    let weights = container.block("weights")?;
    let expected = TinyMlpDenoiser::<S>::param_count(&meta.config);
    if weights.len() != expected {
        return Err(Error::invalid(format!(
            "{} carries {} weights, the architecture needs {expected}",
            path.display(),
            weights.len()
        )));
    }
    if meta.mean.len() != meta.config.sample_dim || meta.std.len() != meta.config.sample_dim {
        return Err(Error::invalid(format!(
            "{} standardizer does not match sample_dim {}",
            path.display(),
            meta.config.sample_dim
        )));
    }
    let model = TinyMlpDenoiser::from_flat(meta.config, &f32_to_scalars::<S>(weights))?;
    let scaler = Standardizer {
        mean: meta.mean.iter().map(|&m| S::c(m)).collect(),
        std: meta.std.iter().map(|&s| S::c(s)).collect(),
    };
    scaler.validate()?;
    let schedule = meta.schedule.build()?;
    Ok(Checkpoint {
        meta,
        model,
        scaler,
        schedule,
    })
}
