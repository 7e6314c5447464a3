//! Least-squares hand parameter estimation from keypoint targets: rigid
//! per-frame initialization, then adaptive gradient descent on all frame
//! poses plus the shared shape vector.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::axis_angle_from_rotation;
use crate::real::{rmax, Real};

use super::{
    lbs_forward_subset, lbs_vjp, HandModel, HandParams, SHAPE_COUNT, THETA_DIM,
};

#[derive(Clone, Copy, Debug)]
pub struct FitOptions<S> {
    pub max_iters: usize,
    /// Early stop when the relative objective decrease drops below this.
    pub rel_tol: S,
    pub initial_step: S,
}

impl<S: Real> Default for FitOptions<S> {
    fn default() -> Self {
        FitOptions {
            max_iters: 300,
            rel_tol: S::c(1e-8),
            initial_step: S::c(0.02),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitReport<S> {
    /// Mean squared keypoint error after every accepted step (index 0 is the
    /// initialization); non-increasing by construction.
    pub objective: Vec<S>,
    /// √(mean ‖fitted − target‖²) over all frames and keypoints, meters.
    pub final_rmse: S,
    pub iterations: usize,
}

/// Rigid alignment (rotation + translation) of `src` onto `dst` by SVD of
/// the cross-covariance, reflection-corrected.
fn kabsch<S: Real>(src: &[Vector3<S>], dst: &[Vector3<S>]) -> (Matrix3<S>, Vector3<S>) {
    let n = S::from_count(src.len());
    let cs = src.iter().sum::<Vector3<S>>() / n;
    let cd = dst.iter().sum::<Vector3<S>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (b - cd) * (a - cs).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < S::ZERO {
        d[(2, 2)] = -S::ONE;
    }
    let r = u * d * vt;
    (r, cd - r * cs)
}

struct Flat<S> {
    x: Vec<S>,
    frames: usize,
}

impl<S: Real> Flat<S> {
    fn from_params(p: &HandParams<S>) -> Self {
        let frames = p.theta.len();
        let mut x = Vec::with_capacity(frames * THETA_DIM + SHAPE_COUNT);
        for row in &p.theta {
            x.extend_from_slice(row);
        }
        x.extend_from_slice(&p.beta);
        Flat { x, frames }
    }

    fn to_params(&self) -> HandParams<S> {
        let mut theta = Vec::with_capacity(self.frames);
        for f in 0..self.frames {
            let mut row = [S::ZERO; THETA_DIM];
            row.copy_from_slice(&self.x[f * THETA_DIM..(f + 1) * THETA_DIM]);
            theta.push(row);
        }
        let mut beta = [S::ZERO; SHAPE_COUNT];
        beta.copy_from_slice(&self.x[self.frames * THETA_DIM..]);
        HandParams { theta, beta }
    }
}

fn objective<S: Real>(
    model: &HandModel<S>,
    flat: &Flat<S>,
    target: &[Vector3<S>],
) -> Result<S> {
    let params = flat.to_params();
    let j = model.keypoint_count();
    let norm = S::from_count(flat.frames * j);
    let mut total = S::ZERO;
    for (f, theta) in params.theta.iter().enumerate() {
        let k = lbs_forward_subset(model, theta, &params.beta, &model.keypoints)?;
        for (got, want) in k.iter().zip(&target[f * j..(f + 1) * j]) {
            total += (got - want).norm_squared();
        }
    }
    Ok(total / norm)
}

fn gradient<S: Real>(
    model: &HandModel<S>,
    flat: &Flat<S>,
    target: &[Vector3<S>],
) -> Result<Vec<S>> {
    let params = flat.to_params();
    let j = model.keypoint_count();
    let norm = S::from_count(flat.frames * j);
    let mut grad = vec![S::ZERO; flat.x.len()];
    let beta_at = flat.frames * THETA_DIM;
    for (f, theta) in params.theta.iter().enumerate() {
        let k = lbs_forward_subset(model, theta, &params.beta, &model.keypoints)?;
        let cots: Vec<(usize, Vector3<S>)> = model
            .keypoints
            .iter()
            .zip(k.iter().zip(&target[f * j..(f + 1) * j]))
            .map(|(&v, (got, want))| (v, (got - want) * (S::TWO / norm)))
            .collect();
        let (gt, gb) = lbs_vjp(model, theta, &params.beta, &cots)?;
        for (d, s) in grad[f * THETA_DIM..(f + 1) * THETA_DIM].iter_mut().zip(&gt) {
            *d += *s;
        }
        for (d, s) in grad[beta_at..].iter_mut().zip(&gb) {
            *d += *s;
        }
    }
    Ok(grad)
}

/// Fit per-frame pose and shared shape to keypoint targets (frames × J,
/// row-major). The objective is mean squared keypoint error; every recorded
/// step is accepted only if it does not increase it.
pub fn fit_params<S: Real>(
    model: &HandModel<S>,
    target: &[Vector3<S>],
    frames: usize,
    options: &FitOptions<S>,
) -> Result<(HandParams<S>, FitReport<S>)> {
    let j = model.keypoint_count();
    if frames == 0 || target.len() != frames * j {
        return Err(Error::ShapeMismatch("fit target length must be frames × keypoints".into()));
    }
    if !target.iter().all(|p| p.iter().all(|c| c.is_finite())) {
        return Err(Error::invalid("fit targets must be finite"));
    }

    // rigid initialization per frame from the template keypoints
    let template_k: Vec<Vector3<S>> = model.keypoints.iter().map(|&i| model.template[i]).collect();
    let mut init = HandParams::rest(frames);
    for f in 0..frames {
        let (r, t) = kabsch(&template_k, &target[f * j..(f + 1) * j]);
        let aa = axis_angle_from_rotation(&r);
        // the root maps x ↦ R(x − p₀) + p₀ + t_root, so absorb the pivot
        let p0 = model.joints[0];
        let t_root = t + r * p0 - p0;
        init.theta[f][..3].copy_from_slice(&[t_root.x, t_root.y, t_root.z]);
        init.theta[f][3..6].copy_from_slice(&[aa.x, aa.y, aa.z]);
    }

    let mut flat = Flat::from_params(&init);
    let mut f_cur = objective(model, &flat, target)?;
    let mut history = vec![f_cur];
    let n = flat.x.len();
    // sign-based per-parameter step adaptation: steps grow while the
    // gradient sign persists and shrink when it flips, so every parameter
    // finds its own scale; a candidate is kept only if it does not increase
    // the objective, which makes the recorded history monotone.
    let mut steps = vec![options.initial_step; n];
    let mut prev_sign = vec![0i8; n];
    let mut iterations = 0;

    let signum = |g: S| -> i8 {
        if g > S::ZERO {
            1
        } else if g < S::ZERO {
            -1
        } else {
            0
        }
    };

    for _ in 0..options.max_iters {
        iterations += 1;
        let grad = gradient(model, &flat, target)?;
        let mut moved = vec![0i8; n];
        for i in 0..n {
            let mut s = signum(grad[i]);
            match s * prev_sign[i] {
                x if x > 0 => steps[i] = crate::real::rmin(steps[i] * S::c(1.2), S::c(0.2)),
                x if x < 0 => {
                    steps[i] = rmax(steps[i] * S::HALF, S::c(1e-14));
                    // skip one move after a sign flip to damp oscillation
                    s = 0;
                }
                _ => {}
            }
            prev_sign[i] = if s == 0 { 0 } else { signum(grad[i]) };
            moved[i] = s;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let cand_x: Vec<S> = flat
                .x
                .iter()
                .enumerate()
                .map(|(i, &x)| match moved[i] {
                    1 => x - steps[i],
                    -1 => x + steps[i],
                    _ => x,
                })
                .collect();
            let cand = Flat {
                x: cand_x,
                frames: flat.frames,
            };
            let f_cand = objective(model, &cand, target)?;
            if f_cand <= f_cur {
                flat = cand;
                let prev = f_cur;
                f_cur = f_cand;
                history.push(f_cur);
                accepted = true;
                if prev - f_cur < options.rel_tol * rmax(prev, S::c(1e-30)) {
                    return Ok(finish(flat, history, iterations));
                }
                break;
            }
            for (st, &m) in steps.iter_mut().zip(&moved) {
                if m != 0 {
                    *st = rmax(*st * S::HALF, S::c(1e-14));
                }
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(finish(flat, history, iterations))
}

fn finish<S: Real>(flat: Flat<S>, history: Vec<S>, iterations: usize) -> (HandParams<S>, FitReport<S>) {
    let final_rmse = history.last().copied().unwrap_or(S::ZERO).sqrt();
    (
        flat.to_params(),
        FitReport {
            objective: history,
            final_rmse,
            iterations,
        },
    )
}
