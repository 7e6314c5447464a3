//! Per-frame MLP denoiser with temporal smoothing, plus its training loop
//! (Adam, cosine learning rate, EMA weights, contact-condition dropout).
//!
//! The input row concatenates the noisy sample, a sinusoidal timestep
//! embedding, the object conditioning row, and either the contact
//! conditioning row or a learned null token; predictions are averaged over
//! a centered temporal window.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{item_rng, stage_rng};

use super::{q_sample, Conditioning, Denoiser, NoiseSchedule};

pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_T_EMBED: usize = 16;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    /// Per-frame sample width (input and output).
    pub sample_dim: usize,
    /// Per-frame object conditioning width.
    pub object_dim: usize,
    /// Per-frame contact conditioning width (the null token has this size).
    pub contact_dim: usize,
    pub hidden: usize,
    pub t_embed: usize,
    /// Centered moving-average window on per-frame predictions.
    pub window: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(sample_dim: usize, object_dim: usize, contact_dim: usize, seed: u64) -> Self {
        MlpConfig {
            sample_dim,
            object_dim,
            contact_dim,
            hidden: DEFAULT_HIDDEN,
            t_embed: DEFAULT_T_EMBED,
            window: DEFAULT_WINDOW,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sample_dim + self.t_embed + self.object_dim + self.contact_dim
    }

    fn validate(&self) -> Result<()> {
        if self.sample_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid("sample and hidden widths must be positive"));
        }
        if self.t_embed == 0 || self.t_embed % 2 != 0 {
            return Err(Error::invalid("timestep embedding width must be even and positive"));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::invalid("smoothing window must be odd"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layer<S> {
    w: DMatrix<S>,
    b: DVector<S>,
}

#[derive(Clone, Debug)]
struct Params<S> {
    layers: Vec<Layer<S>>,
    null: DVector<S>,
}

impl<S: Real> Params<S> {
    fn zeros_like(&self) -> Params<S> {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    b: DVector::zeros(l.b.len()),
                })
                .collect(),
            null: DVector::zeros(self.null.len()),
        }
    }

    fn tensors(&self) -> Vec<&[S]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(l.w.as_slice());
            out.push(l.b.as_slice());
        }
        out.push(self.null.as_slice());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.w.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out.push(self.null.as_mut_slice());
        out
    }
}

#[derive(Clone, Debug)]
pub struct TinyMlpDenoiser<S> {
    config: MlpConfig,
    params: Params<S>,
}

fn silu<S: Real>(x: S) -> S {
    x / (S::ONE + (-x).exp())
}

fn dsilu<S: Real>(x: S) -> S {
    let s = S::ONE / (S::ONE + (-x).exp());
    s * (S::ONE + x * (S::ONE - s))
}

fn t_embedding<S: Real>(t: usize, dim: usize) -> DVector<S> {
    let mut e = DVector::zeros(dim);
    let half = dim / 2;
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half as f64);
        let angle = t as f64 * freq;
        e[2 * i] = S::c(angle.sin());
        e[2 * i + 1] = S::c(angle.cos());
    }
    e
}

/// Centered moving average over frames, window clamped at the ends.
pub(crate) fn smooth_rows<S: Real>(rows: &[DVector<S>], window: usize) -> Vec<DVector<S>> {
    let half = window / 2;
    let frames = rows.len();
    (0..frames)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = usize::min(frames - 1, i + half);
            let mut acc = DVector::zeros(rows[0].len());
            for r in &rows[lo..=hi] {
                acc += r;
            }
            acc / S::from_count(hi - lo + 1)
        })
        .collect()
}

struct RowCache<S> {
    input: DVector<S>,
    z1: DVector<S>,
    a1: DVector<S>,
    z2: DVector<S>,
    a2: DVector<S>,
    out: DVector<S>,
}

impl<S: Real> TinyMlpDenoiser<S> {
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stage_rng(config.seed, "mlp-init");
        let sizes = [
            (config.input_dim(), config.hidden),
            (config.hidden, config.hidden),
            (config.hidden, config.sample_dim),
        ];
        let layers = sizes
            .iter()
            .map(|&(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        S::c(rng.gen_range(-bound..bound))
                    }),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        let null = DVector::from_fn(config.contact_dim, |_, _| {
            S::c(0.01 * rng.sample::<f64, _>(StandardNormal))
        });
        Ok(TinyMlpDenoiser {
            config,
            params: Params { layers, null },
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn param_count(config: &MlpConfig) -> usize {
        let i = config.input_dim();
        let h = config.hidden;
        let o = config.sample_dim;
        (i * h + h) + (h * h + h) + (h * o + o) + config.contact_dim
    }

    /// Parameters in a fixed order (per layer: column-major weights, then
    /// biases; the null token last) for checkpoint serialization.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(Self::param_count(&self.config));
        for t in self.params.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn from_flat(config: MlpConfig, flat: &[S]) -> Result<Self> {
        if flat.len() != Self::param_count(&config) {
            return Err(Error::ShapeMismatch(
                "checkpoint length does not match the architecture".into(),
            ));
        }
        if !flat.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("checkpoint weights must be finite"));
        }
        let mut model = TinyMlpDenoiser::new(config)?;
        let mut at = 0;
        for t in model.params.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(model)
    }

    fn forward_row(
        &self,
        x_row: &[S],
        t: usize,
        obj_row: &[S],
        contact_row: Option<&[S]>,
    ) -> RowCache<S> {
        let c = &self.config;
        let mut input = DVector::zeros(c.input_dim());
        let mut at = 0;
        input.as_mut_slice()[at..at + c.sample_dim].copy_from_slice(x_row);
        at += c.sample_dim;
        input
            .rows_mut(at, c.t_embed)
            .copy_from(&t_embedding(t, c.t_embed));
        at += c.t_embed;
        input.as_mut_slice()[at..at + c.object_dim].copy_from_slice(obj_row);
        at += c.object_dim;
        match contact_row {
            Some(row) => input.as_mut_slice()[at..at + c.contact_dim].copy_from_slice(row),
            None => input.rows_mut(at, c.contact_dim).copy_from(&self.params.null),
        }

        let l = &self.params.layers;
        let z1 = &l[0].w * &input + &l[0].b;
        let a1 = z1.map(silu);
        let z2 = &l[1].w * &a1 + &l[1].b;
        let a2 = z2.map(silu);
        let out = &l[2].w * &a2 + &l[2].b;
        RowCache {
            input,
            z1,
            a1,
            z2,
            a2,
            out,
        }
    }

    fn check_cond(&self, frames: usize, cond: &Conditioning<S>) -> Result<()> {
        let c = &self.config;
        if cond.object.len() != frames * c.object_dim {
            return Err(Error::ShapeMismatch(
                "object conditioning must be frames × object_dim".into(),
            ));
        }
        if let Some(ct) = cond.contact {
            if ct.len() != frames * c.contact_dim {
                return Err(Error::ShapeMismatch(
                    "contact conditioning must be frames × contact_dim".into(),
                ));
            }
        }
        Ok(())
    }
}

impl<S: Real> Denoiser<S> for TinyMlpDenoiser<S> {
    fn dim(&self) -> usize {
        self.config.sample_dim
    }

    fn denoise(
        &self,
        x_t: &[S],
        frames: usize,
        t: usize,
        cond: &Conditioning<S>,
    ) -> Result<Vec<S>> {
        let c = &self.config;
        if frames == 0 || x_t.len() != frames * c.sample_dim {
            return Err(Error::ShapeMismatch("sample length must be frames × dim".into()));
        }
        if t == 0 {
            return Err(Error::invalid("timesteps are 1-based"));
        }
        self.check_cond(frames, cond)?;
        let rows: Vec<DVector<S>> = (0..frames)
            .map(|i| {
                let x_row = &x_t[i * c.sample_dim..(i + 1) * c.sample_dim];
                let obj = &cond.object[i * c.object_dim..(i + 1) * c.object_dim];
                let contact = cond
                    .contact
                    .map(|ct| &ct[i * c.contact_dim..(i + 1) * c.contact_dim]);
                self.forward_row(x_row, t, obj, contact).out
            })
            .collect();
        let smoothed = smooth_rows(&rows, c.window);
        Ok(smoothed.iter().flat_map(|r| r.iter().copied()).collect())
    }
}

/// One training example: a clean sample plus its conditioning rows, all
/// row-major over the same frame count.
#[derive(Clone, Debug)]
pub struct TrainExample<S> {
    pub x0: Vec<S>,
    pub object: Vec<S>,
    pub contact: Vec<S>,
}

impl<S: Real> TrainExample<S> {
    fn frames(&self, config: &MlpConfig) -> Result<usize> {
        let d = config.sample_dim;
        if self.x0.is_empty() || self.x0.len() % d != 0 {
            return Err(Error::ShapeMismatch(
                "clean sample must be a positive multiple of sample_dim".into(),
            ));
        }
        let frames = self.x0.len() / d;
        if self.object.len() != frames * config.object_dim
            || self.contact.len() != frames * config.contact_dim
        {
            return Err(Error::ShapeMismatch(
                "conditioning rows must match the example's frames".into(),
            ));
        }
        if !self
            .x0
            .iter()
            .chain(&self.object)
            .chain(&self.contact)
            .all(|x| x.is_finite())
        {
            return Err(Error::invalid("training example must be finite"));
        }
        Ok(frames)
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig<S> {
    pub steps: usize,
    pub batch: usize,
    /// Peak learning rate; decays to zero on a cosine.
    pub lr: S,
    /// Contact-condition dropout probability.
    pub p_f: S,
    pub ema_decay: S,
    pub seed: u64,
}

impl<S: Real> Default for TrainConfig<S> {
    fn default() -> Self {
        TrainConfig {
            steps: 2_000,
            batch: 16,
            lr: S::c(1e-3),
            p_f: S::c(super::DEFAULT_P_F),
            ema_decay: S::c(0.999),
            seed: 0,
        }
    }
}

pub struct TrainReport<S> {
    /// Mean batch loss per optimization step.
    pub losses: Vec<S>,
    /// Model with exponential-moving-average weights.
    pub ema: TinyMlpDenoiser<S>,
}

fn adam_slice<S: Real>(p: &mut [S], g: &[S], m: &mut [S], v: &mut [S], lr_hat: S, b1: S, b2: S) {
    let eps = S::c(1e-8);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (S::ONE - b1) * g[i];
        v[i] = b2 * v[i] + (S::ONE - b2) * g[i] * g[i];
        p[i] -= lr_hat * m[i] / (v[i].sqrt() + eps);
    }
}

/// Denoising-MSE training with per-example contact dropout: with
/// probability p_f the contact row is replaced by the learned null token
/// before the forward pass, so the gradient trains the token itself.
/// Deterministic per seed; single-threaded.
pub fn train_denoiser<S: Real>(
    model: &mut TinyMlpDenoiser<S>,
    data: &[TrainExample<S>],
    schedule: &NoiseSchedule<S>,
    cfg: &TrainConfig<S>,
) -> Result<TrainReport<S>> {
    if data.is_empty() {
        return Err(Error::invalid("training needs at least one example"));
    }
    if cfg.steps == 0 || cfg.batch == 0 {
        return Err(Error::invalid("steps and batch size must be positive"));
    }
    if !(cfg.lr > S::ZERO) || !(cfg.p_f >= S::ZERO && cfg.p_f <= S::ONE) {
        return Err(Error::invalid("learning rate must be positive and p_f in [0, 1]"));
    }
    if !(cfg.ema_decay >= S::ZERO && cfg.ema_decay < S::ONE) {
        return Err(Error::invalid("EMA decay must lie in [0, 1)"));
    }
    let frame_counts: Vec<usize> = data
        .iter()
        .map(|ex| ex.frames(&model.config))
        .collect::<Result<_>>()?;

    let c = model.config;
    let mut rng = stage_rng(cfg.seed, "train-denoiser");
    let mut grads = model.params.zeros_like();
    let mut m = model.params.zeros_like();
    let mut v = model.params.zeros_like();
    let mut ema = model.params.clone();
    let (b1, b2) = (S::c(0.9), S::c(0.999));
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps as f64;
        let lr_t = cfg.lr * S::c(0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        for t in grads.tensors_mut() {
            t.fill(S::ZERO);
        }
        let mut step_loss = S::ZERO;

        for _ in 0..cfg.batch {
            let idx = rng.gen_range(0..data.len());
            let ex = &data[idx];
            let frames = frame_counts[idx];
            let t = rng.gen_range(1..=schedule.steps);
            let noise: Vec<S> = (0..ex.x0.len())
                .map(|_| S::c(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let x_t = q_sample(&ex.x0, t, &noise, schedule)?;
            let dropped = rng.gen::<f64>() < cfg.p_f.to64();

            let caches: Vec<RowCache<S>> = (0..frames)
                .map(|i| {
                    let x_row = &x_t[i * c.sample_dim..(i + 1) * c.sample_dim];
                    let obj = &ex.object[i * c.object_dim..(i + 1) * c.object_dim];
                    let contact = if dropped {
                        None
                    } else {
                        Some(&ex.contact[i * c.contact_dim..(i + 1) * c.contact_dim])
                    };
                    model.forward_row(x_row, t, obj, contact)
                })
                .collect();
            let outs: Vec<DVector<S>> = caches.iter().map(|r| r.out.clone()).collect();
            let smoothed = smooth_rows(&outs, c.window);

            // example loss and gradient through the smoothing average
            let denom = S::from_count(frames * c.sample_dim);
            let scale = S::TWO / (denom * S::from_count(cfg.batch));
            let half = c.window / 2;
            let mut g_out = vec![DVector::<S>::zeros(c.sample_dim); frames];
            for i in 0..frames {
                let target =
                    DVector::from_row_slice(&ex.x0[i * c.sample_dim..(i + 1) * c.sample_dim]);
                let r = &smoothed[i] - &target;
                step_loss += r.norm_squared() / (denom * S::from_count(cfg.batch));
                let lo = i.saturating_sub(half);
                let hi = usize::min(frames - 1, i + half);
                let g = &r * (scale / S::from_count(hi - lo + 1));
                for gj in g_out[lo..=hi].iter_mut() {
                    *gj += &g;
                }
            }

            for (cache, g_o) in caches.iter().zip(&g_out) {
                let l = &model.params.layers;
                let g_a2 = l[2].w.transpose() * g_o;
                let g_z2 = g_a2.zip_map(&cache.z2, |g, z| g * dsilu(z));
                let g_a1 = l[1].w.transpose() * &g_z2;
                let g_z1 = g_a1.zip_map(&cache.z1, |g, z| g * dsilu(z));

                grads.layers[2].w += g_o * cache.a2.transpose();
                grads.layers[2].b += g_o;
                grads.layers[1].w += &g_z2 * cache.a1.transpose();
                grads.layers[1].b += &g_z2;
                grads.layers[0].w += &g_z1 * cache.input.transpose();
                grads.layers[0].b += &g_z1;
                if dropped && c.contact_dim > 0 {
                    let g_in = l[0].w.transpose() * &g_z1;
                    let at = c.sample_dim + c.t_embed + c.object_dim;
                    grads.null += g_in.rows(at, c.contact_dim);
                }
            }
        }
        losses.push(step_loss);

        let adam_t = (step + 1) as i32;
        let lr_hat = lr_t * (S::ONE - b2.powi(adam_t)).sqrt() / (S::ONE - b1.powi(adam_t));
        {
            let gt = grads.tensors();
            let pt = model.params.tensors_mut();
            let mut mt = m.tensors_mut();
            let mut vt = v.tensors_mut();
            for (i, (p, g)) in pt.into_iter().zip(gt).enumerate() {
                adam_slice(p, g, mt[i], vt[i], lr_hat, b1, b2);
            }
        }
        {
            let pt = model.params.tensors();
            for (e, p) in ema.tensors_mut().into_iter().zip(pt) {
                for (ei, pi) in e.iter_mut().zip(p) {
                    *ei = cfg.ema_decay * *ei + (S::ONE - cfg.ema_decay) * *pi;
                }
            }
        }
    }

    Ok(TrainReport {
        losses,
        ema: TinyMlpDenoiser {
            config: model.config,
            params: ema,
        },
    })
}

/// Deterministic held-out denoising MSE: `probes` (t, ε) draws per example
/// from an indexed stream, evaluated along the conditional path.
pub fn denoising_mse<S: Real>(
    model: &TinyMlpDenoiser<S>,
    data: &[TrainExample<S>],
    schedule: &NoiseSchedule<S>,
    probes: usize,
    seed: u64,
) -> Result<S> {
    if data.is_empty() || probes == 0 {
        return Err(Error::invalid("evaluation needs examples and probes"));
    }
    let mut total = S::ZERO;
    let mut count = 0usize;
    for (i, ex) in data.iter().enumerate() {
        let frames = ex.frames(model.config())?;
        for p in 0..probes {
            let mut r = item_rng(seed, "denoise-eval", (i * probes + p) as u64);
            let t = r.gen_range(1..=schedule.steps);
            let noise: Vec<S> = (0..ex.x0.len())
                .map(|_| S::c(r.sample::<f64, _>(StandardNormal)))
                .collect();
            let x_t = q_sample(&ex.x0, t, &noise, schedule)?;
            let cond = Conditioning {
                object: &ex.object,
                contact: Some(&ex.contact),
            };
            let pred = model.denoise(&x_t, frames, t, &cond)?;
            total += pred
                .iter()
                .zip(&ex.x0)
                .map(|(a, b)| (*a - *b) * (*a - *b))
                .sum::<S>()
                / S::from_count(ex.x0.len());
            count += 1;
        }
    }
    Ok(total / S::from_count(count))
}
