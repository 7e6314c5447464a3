//! DDPM noise schedule and x0-prediction sampling with classifier-free
//! guidance and contact-map guidance.
//!
//! The sampler is representation-agnostic: a sample is `frames` rows of
//! `dim` scalars, and conditioning channels arrive as flat per-frame rows.
//! Only the contact-guidance hook knows that some channels are hand
//! keypoints.

pub mod mlp;
pub mod oracle;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::contact::{contact_discrepancy, derived_contact, ContactMap};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::stage_rng;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_1: f64 = 0.002;
pub const DEFAULT_BETA_T: f64 = 0.4;
pub const DEFAULT_LAMBDA_F: f64 = 0.5;
pub const DEFAULT_P_F: f64 = 0.5;

/// Linear-β DDPM schedule. Arrays are 1-based with sentinel entries at
/// index 0 (`beta[0] = 0`, `alpha[0] = alpha_bar[0] = 1`) so step formulas
/// can reference ᾱ_{t−1} uniformly.
#[derive(Clone, Debug)]
pub struct NoiseSchedule<S> {
    pub steps: usize,
    pub beta: Vec<S>,
    pub alpha: Vec<S>,
    pub alpha_bar: Vec<S>,
}

pub fn build_schedule<S: Real>(steps: usize, beta_1: f64, beta_t: f64) -> Result<NoiseSchedule<S>> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    for b in [beta_1, beta_t] {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::invalid("beta values must lie in (0, 1)"));
        }
    }
    let mut beta = vec![S::ZERO];
    let mut alpha = vec![S::ONE];
    let mut alpha_bar = vec![S::ONE];
    for t in 1..=steps {
        let frac = if steps == 1 {
            0.0
        } else {
            (t - 1) as f64 / (steps - 1) as f64
        };
        let b = S::c(beta_1 + (beta_t - beta_1) * frac);
        let a = S::ONE - b;
        beta.push(b);
        alpha.push(a);
        alpha_bar.push(alpha_bar[t - 1] * a);
    }
    for t in 1..=steps {
        if !(alpha_bar[t] < alpha_bar[t - 1] && alpha_bar[t] > S::ZERO) {
            return Err(Error::invalid("cumulative alpha must strictly decrease"));
        }
    }
    Ok(NoiseSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
    })
}

pub fn default_schedule<S: Real>() -> NoiseSchedule<S> {
    build_schedule(DEFAULT_STEPS, DEFAULT_BETA_1, DEFAULT_BETA_T).expect("default schedule is valid")
}

/// Forward diffusion: x_t = √ᾱ_t x0 + √(1−ᾱ_t) ε; t = 0 returns x0.
pub fn q_sample<S: Real>(
    x0: &[S],
    t: usize,
    noise: &[S],
    schedule: &NoiseSchedule<S>,
) -> Result<Vec<S>> {
    if t > schedule.steps {
        return Err(Error::invalid("timestep exceeds schedule length"));
    }
    if x0.len() != noise.len() {
        return Err(Error::ShapeMismatch("noise length must match sample".into()));
    }
    if t == 0 {
        return Ok(x0.to_vec());
    }
    let ab = schedule.alpha_bar[t];
    let sa = ab.sqrt();
    let sn = (S::ONE - ab).sqrt();
    Ok(x0
        .iter()
        .zip(noise)
        .map(|(x, e)| sa * *x + sn * *e)
        .collect())
}

/// Per-frame conditioning rows; `contact: None` selects the denoiser's
/// learned null token (the unconditional branch of CFG).
#[derive(Clone, Copy, Debug)]
pub struct Conditioning<'a, S> {
    pub object: &'a [S],
    pub contact: Option<&'a [S]>,
}

impl<'a, S> Conditioning<'a, S> {
    pub fn uncond(&self) -> Conditioning<'a, S> {
        Conditioning {
            object: self.object,
            contact: None,
        }
    }
}

/// A callable that predicts the clean sample from a noisy one. Must be
/// deterministic given its inputs.
pub trait Denoiser<S: Real> {
    /// Per-frame sample width.
    fn dim(&self) -> usize;

    fn denoise(
        &self,
        x_t: &[S],
        frames: usize,
        t: usize,
        cond: &Conditioning<S>,
    ) -> Result<Vec<S>>;
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct GuidanceConfig<S> {
    /// Classifier-free guidance scale.
    pub lambda_f: S,
    /// Contact-condition dropout probability used at training time.
    pub p_f: S,
}

impl<S: Real> Default for GuidanceConfig<S> {
    fn default() -> Self {
        GuidanceConfig {
            lambda_f: S::c(DEFAULT_LAMBDA_F),
            p_f: S::c(DEFAULT_P_F),
        }
    }
}

impl<S: Real> GuidanceConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_f >= S::ZERO && self.lambda_f.is_finite()) {
            return Err(Error::invalid("guidance scale must be nonnegative"));
        }
        if !(self.p_f >= S::ZERO && self.p_f <= S::ONE) {
            return Err(Error::invalid("dropout probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// cond + λ·(cond − uncond). Algebraically (1+λ)·cond − λ·uncond, written
/// as a correction on the conditional branch so `cond == uncond` is a fixed
/// point and λ = 0 returns `cond` bit-for-bit.
pub fn cfg_combine<S: Real>(cond: &[S], uncond: &[S], lambda: S) -> Result<Vec<S>> {
    if cond.len() != uncond.len() {
        return Err(Error::ShapeMismatch(
            "guidance branches must have equal length".into(),
        ));
    }
    if lambda == S::ZERO {
        return Ok(cond.to_vec());
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| *c + lambda * (*c - *u))
        .collect())
}

/// Per-channel affine standardization (mean 0, unit variance) used to put
/// motion data in the sampler's working space.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Standardizer<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

impl<S: Real> Standardizer<S> {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![S::ZERO; dim],
            std: vec![S::ONE; dim],
        }
    }

    /// Channel statistics over rows of width `dim`; standard deviations are
    /// floored at 1e-8 so constant channels stay invertible.
    pub fn fit(rows: &[S], dim: usize) -> Result<Self> {
        if dim == 0 || rows.is_empty() || rows.len() % dim != 0 {
            return Err(Error::ShapeMismatch(
                "data length must be a positive multiple of dim".into(),
            ));
        }
        let n = rows.len() / dim;
        let count = S::from_count(n);
        let mut mean = vec![S::ZERO; dim];
        for row in rows.chunks(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += *x;
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        let mut var = vec![S::ZERO; dim];
        for row in rows.chunks(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = *x - *m;
                *v += d * d;
            }
        }
        let floor = S::c(1e-8);
        let std = var
            .into_iter()
            .map(|v| crate::real::rmax((v / count).sqrt(), floor))
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() || self.mean.is_empty() {
            return Err(Error::ShapeMismatch("mean/std lengths differ".into()));
        }
        if !self
            .mean
            .iter()
            .chain(&self.std)
            .all(|x| x.is_finite())
            || self.std.iter().any(|s| !(*s > S::ZERO))
        {
            return Err(Error::invalid("standardizer must be finite with positive std"));
        }
        Ok(())
    }

    pub fn standardize(&self, data: &mut [S]) {
        let dim = self.mean.len();
        for row in data.chunks_mut(dim) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - *m) / *s;
            }
        }
    }

    pub fn destandardize(&self, data: &mut [S]) {
        let dim = self.mean.len();
        for row in data.chunks_mut(dim) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = *x * *s + *m;
            }
        }
    }
}

/// Where the guided hand keypoints live inside a sample row: coordinates of
/// keypoint j occupy `offset + 3j .. offset + 3j + 3`.
#[derive(Clone, Copy, Debug)]
pub struct HandChannels {
    pub offset: usize,
    pub keypoints: usize,
}

/// Everything contact guidance needs: the target map, the anchors it was
/// built over (canonical meters, per frame), the keypoint channel layout,
/// and the standardizer mapping sample space to meters (`None` = identity).
pub struct ContactGuide<'a, S> {
    pub reference: &'a ContactMap<S>,
    pub anchors: &'a [Vec<Vector3<S>>],
    pub channels: HandChannels,
    pub scaler: Option<&'a Standardizer<S>>,
}

/// One guidance correction x̂0 − λ_c ∇(discrepancy) with λ_c = 1/‖∇‖, i.e.
/// a unit-norm step in the sampler's working space; a gradient below 1e-12
/// leaves the sample untouched. Returns the corrected sample and the
/// discrepancy before the step.
pub fn contact_guidance_step<S: Real>(
    x0: &[S],
    frames: usize,
    dim: usize,
    guide: &ContactGuide<S>,
) -> Result<(Vec<S>, S)> {
    if x0.len() != frames * dim {
        return Err(Error::ShapeMismatch("sample length must be frames × dim".into()));
    }
    let ch = guide.channels;
    if ch.keypoints == 0 || ch.offset + 3 * ch.keypoints > dim {
        return Err(Error::invalid("hand channels exceed the sample row"));
    }
    if guide.anchors.len() != frames {
        return Err(Error::ShapeMismatch("one anchor set per frame required".into()));
    }
    if let Some(sc) = guide.scaler {
        sc.validate()?;
        if sc.mean.len() != dim {
            return Err(Error::ShapeMismatch("standardizer width must match dim".into()));
        }
    }
    let channel = |c: usize| {
        guide
            .scaler
            .map(|sc| (sc.mean[c], sc.std[c]))
            .unwrap_or((S::ZERO, S::ONE))
    };

    // keypoints in meters
    let mut kps: Vec<Vec<Vector3<S>>> = Vec::with_capacity(frames);
    for i in 0..frames {
        let row = &x0[i * dim..(i + 1) * dim];
        kps.push(
            (0..ch.keypoints)
                .map(|j| {
                    let mut p = Vector3::zeros();
                    for c in 0..3 {
                        let at = ch.offset + 3 * j + c;
                        let (m, s) = channel(at);
                        p[c] = row[at] * s + m;
                    }
                    p
                })
                .collect(),
        );
    }
    let kp_refs: Vec<&[Vector3<S>]> = kps.iter().map(|k| k.as_slice()).collect();
    let anchor_refs: Vec<&[Vector3<S>]> = guide.anchors.iter().map(|a| a.as_slice()).collect();
    let derived = derived_contact(&kp_refs, &anchor_refs)?;
    let (value, grad) = contact_discrepancy(guide.reference, &derived, ch.keypoints)?;

    // chain through de-standardization, then normalize in sample space
    let mut grad_rows = vec![S::ZERO; frames * 3 * ch.keypoints];
    let mut norm_sq = S::ZERO;
    for i in 0..frames {
        for j in 0..ch.keypoints {
            let g = grad[i * ch.keypoints + j];
            for c in 0..3 {
                let (_, s) = channel(ch.offset + 3 * j + c);
                let gs = g[c] * s;
                grad_rows[(i * ch.keypoints + j) * 3 + c] = gs;
                norm_sq += gs * gs;
            }
        }
    }
    let norm = norm_sq.sqrt();
    let mut out = x0.to_vec();
    if norm < S::c(1e-12) {
        return Ok((out, value));
    }
    for i in 0..frames {
        for j in 0..ch.keypoints {
            for c in 0..3 {
                out[i * dim + ch.offset + 3 * j + c] -=
                    grad_rows[(i * ch.keypoints + j) * 3 + c] / norm;
            }
        }
    }
    Ok((out, value))
}

fn ensure_finite<S: Real>(x: &[S], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteSample { step })
    }
}

/// Reverse diffusion with x0 prediction. Per step: denoise both guidance
/// branches, combine with CFG, apply one contact-guidance correction per
/// guide in order (one per hand for bimanual motion), then step the DDPM
/// posterior q(x_{t−1} | x_t, x̂0) with σ_t² = β_t; the final step (t = 1)
/// is deterministic.
///
/// λ_f = 0 (or absent contact conditioning) short-circuits to the
/// conditional branch alone, so it matches plain conditional sampling
/// bit-for-bit on the same seed.
pub fn sample<S: Real>(
    denoiser: &dyn Denoiser<S>,
    schedule: &NoiseSchedule<S>,
    frames: usize,
    cond: &Conditioning<S>,
    guidance: &GuidanceConfig<S>,
    guides: &[ContactGuide<S>],
    seed: u64,
) -> Result<Vec<S>> {
    guidance.validate()?;
    if frames == 0 {
        return Err(Error::invalid("sample needs at least one frame"));
    }
    let dim = denoiser.dim();
    let n = frames * dim;
    let mut rng = stage_rng(seed, "ddpm-sample");
    let mut x: Vec<S> = (0..n)
        .map(|_| S::c(rng.sample::<f64, _>(StandardNormal)))
        .collect();

    for t in (1..=schedule.steps).rev() {
        let pred_cond = denoiser.denoise(&x, frames, t, cond)?;
        if pred_cond.len() != n {
            return Err(Error::ShapeMismatch("denoiser changed the sample shape".into()));
        }
        ensure_finite(&pred_cond, t)?;
        let mut x0 = if guidance.lambda_f == S::ZERO || cond.contact.is_none() {
            pred_cond
        } else {
            let pred_uncond = denoiser.denoise(&x, frames, t, &cond.uncond())?;
            ensure_finite(&pred_uncond, t)?;
            cfg_combine(&pred_cond, &pred_uncond, guidance.lambda_f)?
        };
        for g in guides {
            x0 = contact_guidance_step(&x0, frames, dim, g)?.0;
            ensure_finite(&x0, t)?;
        }
        if t == 1 {
            x = x0;
        } else {
            let ab_t = schedule.alpha_bar[t];
            let ab_prev = schedule.alpha_bar[t - 1];
            let beta = schedule.beta[t];
            let c1 = ab_prev.sqrt() * beta / (S::ONE - ab_t);
            let c2 = schedule.alpha[t].sqrt() * (S::ONE - ab_prev) / (S::ONE - ab_t);
            let sigma = beta.sqrt();
            for (xi, x0i) in x.iter_mut().zip(&x0) {
                let eps = S::c(rng.sample::<f64, _>(StandardNormal));
                *xi = c1 * *x0i + c2 * *xi + sigma * eps;
            }
        }
    }
    Ok(x)
}
