//! Post-sampling refinement of fitted hand poses against the object.
//!
//! The sampler's keypoints are only as physical as the denoiser makes them;
//! after [`fit_params`](crate::hand::fit_params) recovers pose parameters,
//! [`refine`] polishes them against three objectives:
//!
//! * projection: keypoints displaced by the generated direction vectors
//!   should land on the object surface,
//! * penetration: dense hand vertices inside the object are pushed back out,
//! * acceleration: dense vertices should move smoothly across frames.
//!
//! Everything runs in the canonical object frame, one
//! [`ArticulatedShape`] per frame. Shape coefficients stay frozen;
//! only the pose track is optimized.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ArticulatedShape;
use crate::hand::{lbs_forward, lbs_forward_subset, lbs_vjp, HandModel, HandParams, THETA_DIM};
use crate::real::Real;

/// Weights and optimizer budget for [`refine`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct RefineConfig<S> {
    pub w_proj: S,
    pub w_pen: S,
    /// Sequences captured with noisier motion benefit from 1e4 here.
    pub w_acc: S,
    pub iterations: usize,
    /// Initial gradient step; backtracking adapts it from there.
    pub step: S,
}

impl<S: Real> Default for RefineConfig<S> {
    fn default() -> Self {
        RefineConfig {
            w_proj: S::c(100.0),
            w_pen: S::c(10.0),
            w_acc: S::c(1000.0),
            iterations: 100,
            step: S::c(1e-2),
        }
    }
}

impl<S: Real> RefineConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_proj, self.w_pen, self.w_acc];
        if !weights.iter().all(|w| w.is_finite() && *w >= S::ZERO) {
            return Err(Error::invalid("refine weights must be finite and >= 0"));
        }
        if !(self.step.is_finite() && self.step > S::ZERO) {
            return Err(Error::invalid("refine step must be finite and > 0"));
        }
        Ok(())
    }
}

/// Loss-term values at one iterate, plus the interior-vertex census behind
/// the penetration term.
#[derive(Debug, Clone, Serialize)]
pub struct RefineReport<S> {
    /// Projection term per accepted iterate, starting with the initial pose.
    pub proj: Vec<S>,
    pub pen: Vec<S>,
    pub acc: Vec<S>,
    /// Weighted total; non-increasing by construction.
    pub total: Vec<S>,
    /// Interior dense-vertex count summed over frames, per iterate.
    pub interior: Vec<usize>,
    pub accepted: usize,
    /// Wall-clock telemetry; skipped on serialization so written artifacts
    /// stay a pure function of their inputs.
    #[serde(skip_serializing)]
    pub seconds: f64,
}

/// Residual directions shorter than this contribute value but no gradient;
/// below it the unit vector is rounding noise, not a descent direction.
fn gradient_cutoff<S: Real>() -> S {
    S::default_epsilon().sqrt()
}

fn check_frames<S: Real>(
    model: &HandModel<S>,
    params: &HandParams<S>,
    d_hat: &[&[Vector3<S>]],
    scene: &[ArticulatedShape<S>],
) -> Result<()> {
    let frames = params.frames();
    if d_hat.len() != frames || scene.len() != frames {
        return Err(Error::ShapeMismatch(format!(
            "refine inputs disagree on frame count: params {frames}, directions {}, scene {}",
            d_hat.len(),
            scene.len()
        )));
    }
    if let Some(bad) = d_hat.iter().find(|d| d.len() != model.keypoint_count()) {
        return Err(Error::ShapeMismatch(format!(
            "direction frame has {} entries, model has {} keypoints",
            bad.len(),
            model.keypoint_count()
        )));
    }
    Ok(())
}

/// Sum over frames and keypoints of the distance from each projection point
/// (posed keypoint plus its direction vector) to the nearest object vertex,
/// with the pose gradient per frame.
pub fn projection_loss<S: Real>(
    model: &HandModel<S>,
    params: &HandParams<S>,
    d_hat: &[&[Vector3<S>]],
    scene: &[ArticulatedShape<S>],
) -> Result<(S, Vec<[S; THETA_DIM]>)> {
    check_frames(model, params, d_hat, scene)?;
    let cutoff = gradient_cutoff::<S>();
    let mut value = S::ZERO;
    let mut grads = Vec::with_capacity(params.frames());
    for (i, theta) in params.theta.iter().enumerate() {
        let keypoints = lbs_forward_subset(model, theta, &params.beta, &model.keypoints)?;
        let mut cots = Vec::new();
        for (j, kp) in keypoints.iter().enumerate() {
            let p = kp + d_hat[i][j];
            let hit = scene[i].nearest(&p);
            value += hit.distance;
            if hit.distance > cutoff {
                // d‖p − v*‖/dp with the assignment v* frozen
                cots.push((model.keypoints[j], -hit.vector / hit.distance));
            }
        }
        let (g, _) = lbs_vjp(model, theta, &params.beta, &cots)?;
        grads.push(g);
    }
    Ok((value, grads))
}

/// Dense hand vertices inside the object, per frame (global vertex indices).
pub fn interior_sets<S: Real>(
    model: &HandModel<S>,
    params: &HandParams<S>,
    scene: &[ArticulatedShape<S>],
) -> Result<Vec<Vec<usize>>> {
    if scene.len() != params.frames() {
        return Err(Error::ShapeMismatch(format!(
            "scene has {} frames, params {}",
            scene.len(),
            params.frames()
        )));
    }
    params
        .theta
        .iter()
        .zip(scene)
        .map(|(theta, shape)| {
            let verts = lbs_forward(model, theta, &params.beta)?;
            Ok(verts
                .iter()
                .enumerate()
                .filter(|(_, v)| shape.contains(v))
                .map(|(i, _)| i)
                .collect())
        })
        .collect()
}

/// Sum over the given interior vertices of the distance to the nearest
/// object vertex. The membership is taken as given (and held fixed by the
/// optimizer while it differentiates); only the distances move.
pub fn penetration_loss<S: Real>(
    model: &HandModel<S>,
    params: &HandParams<S>,
    scene: &[ArticulatedShape<S>],
    interior: &[Vec<usize>],
) -> Result<(S, Vec<[S; THETA_DIM]>)> {
    if scene.len() != params.frames() || interior.len() != params.frames() {
        return Err(Error::ShapeMismatch(format!(
            "penetration inputs disagree on frame count: params {}, scene {}, interior {}",
            params.frames(),
            scene.len(),
            interior.len()
        )));
    }
    let cutoff = gradient_cutoff::<S>();
    let mut value = S::ZERO;
    let mut grads = Vec::with_capacity(params.frames());
    for ((theta, shape), inside) in params.theta.iter().zip(scene).zip(interior) {
        let verts = lbs_forward(model, theta, &params.beta)?;
        let mut cots = Vec::new();
        for &v in inside {
            let h = verts
                .get(v)
                .ok_or_else(|| Error::invalid("interior vertex index out of range"))?;
            let hit = shape.nearest(h);
            value += hit.distance;
            if hit.distance > cutoff {
                cots.push((v, -hit.vector / hit.distance));
            }
        }
        let (g, _) = lbs_vjp(model, theta, &params.beta, &cots)?;
        grads.push(g);
    }
    Ok((value, grads))
}

/// Sum of second-difference magnitudes of every dense vertex across frames,
/// with the pose gradient per frame. Fewer than three frames cost nothing.
pub fn acceleration_loss<S: Real>(
    model: &HandModel<S>,
    params: &HandParams<S>,
) -> Result<(S, Vec<[S; THETA_DIM]>)> {
    let frames = params.frames();
    let cutoff = gradient_cutoff::<S>();
    let verts: Vec<Vec<Vector3<S>>> = params
        .theta
        .iter()
        .map(|theta| lbs_forward(model, theta, &params.beta))
        .collect::<Result<_>>()?;
    let mut value = S::ZERO;
    let mut cots: Vec<Vec<(usize, Vector3<S>)>> = vec![Vec::new(); frames];
    for i in 2..frames {
        for v in 0..model.vertex_count() {
            let r = verts[i][v] - verts[i - 1][v] * S::TWO + verts[i - 2][v];
            let n = r.norm();
            value += n;
            if n > cutoff {
                let unit = r / n;
                cots[i].push((v, unit));
                cots[i - 1].push((v, -unit * S::TWO));
                cots[i - 2].push((v, unit));
            }
        }
    }
    let mut grads = Vec::with_capacity(frames);
    for (theta, cot) in params.theta.iter().zip(&cots) {
        let (g, _) = lbs_vjp(model, theta, &params.beta, cot)?;
        grads.push(g);
    }
    Ok((value, grads))
}

struct Iterate<S> {
    proj: S,
    pen: S,
    acc: S,
    total: S,
    interior: usize,
    grad: Vec<[S; THETA_DIM]>,
}

fn evaluate<S: Real>(
    model: &HandModel<S>,
    params: &HandParams<S>,
    d_hat: &[&[Vector3<S>]],
    scene: &[ArticulatedShape<S>],
    cfg: &RefineConfig<S>,
) -> Result<Iterate<S>> {
    let interior = interior_sets(model, params, scene)?;
    let (proj, gp) = projection_loss(model, params, d_hat, scene)?;
    let (pen, gn) = penetration_loss(model, params, scene, &interior)?;
    let (acc, ga) = acceleration_loss(model, params)?;
    let total = cfg.w_proj * proj + cfg.w_pen * pen + cfg.w_acc * acc;
    let grad = gp
        .iter()
        .zip(&gn)
        .zip(&ga)
        .map(|((p, n), a)| {
            let mut g = [S::ZERO; THETA_DIM];
            for c in 0..THETA_DIM {
                g[c] = cfg.w_proj * p[c] + cfg.w_pen * n[c] + cfg.w_acc * a[c];
            }
            g
        })
        .collect();
    Ok(Iterate {
        proj,
        pen,
        acc,
        total,
        interior: interior.iter().map(Vec::len).sum(),
        grad,
    })
}

/// Gradient descent on the pose track with a backtracking line search.
///
/// Each iteration recomputes the interior sets, differentiates with them
/// held fixed, then searches along the negative gradient until the freshly
/// evaluated objective (membership and all) stops exceeding the current one.
/// Acceptance therefore guarantees the reported totals never increase. The
/// step grows 1.5x after every accepted move and halves on rejection; a
/// line search that exhausts its budget ends the optimization early.
pub fn refine<S: Real>(
    model: &HandModel<S>,
    init: &HandParams<S>,
    d_hat: &[&[Vector3<S>]],
    scene: &[ArticulatedShape<S>],
    cfg: &RefineConfig<S>,
) -> Result<(HandParams<S>, RefineReport<S>)> {
    cfg.validate()?;
    model.validate()?;
    init.validate()?;
    check_frames(model, init, d_hat, scene)?;

    let start = std::time::Instant::now();
    let mut params = init.clone();
    let mut cur = evaluate(model, &params, d_hat, scene, cfg)?;
    if !cur.total.is_finite() {
        return Err(Error::invalid("refine objective is not finite at the start"));
    }
    let initial_total = cur.total;
    let mut report = RefineReport {
        proj: vec![cur.proj],
        pen: vec![cur.pen],
        acc: vec![cur.acc],
        total: vec![cur.total],
        interior: vec![cur.interior],
        accepted: 0,
        seconds: 0.0,
    };

    let mut step = cfg.step;
    for _ in 0..cfg.iterations {
        if cur.total > initial_total * S::c(10.0) {
            return Err(Error::Diverged(format!(
                "refine objective {} exceeds 10x the initial {} after {} accepted steps",
                cur.total, initial_total, report.accepted
            )));
        }
        let gnorm2: S = cur
            .grad
            .iter()
            .flat_map(|g| g.iter())
            .map(|&c| c * c)
            .sum();
        if !(gnorm2.is_finite() && gnorm2 > S::ZERO) {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = params.clone();
            for (theta, g) in cand.theta.iter_mut().zip(&cur.grad) {
                for c in 0..THETA_DIM {
                    theta[c] -= g[c] * step;
                }
            }
            // an overshoot can make the pose non-finite; treat that like any
            // other rejected trial and shrink
            match evaluate(model, &cand, d_hat, scene, cfg) {
                Ok(next) if next.total.is_finite() && next.total <= cur.total => {
                    params = cand;
                    cur = next;
                    step *= S::c(1.5);
                    accepted = true;
                    break;
                }
                _ => step *= S::HALF,
            }
        }
        if !accepted {
            break;
        }
        report.proj.push(cur.proj);
        report.pen.push(cur.pen);
        report.acc.push(cur.acc);
        report.total.push(cur.total);
        report.interior.push(cur.interior);
        report.accepted += 1;
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ArticulatedObject, Mesh, ObjectQueries, PartId};
    use crate::hand::{default_hand_model, Side};

    fn cube_object(half: f64, center: Vector3<f64>) -> ArticulatedObject<f64> {
        let corners = [
            [-1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0],
            [1.0, 1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, 1.0],
        ];
        let mut verts: Vec<Vector3<f64>> = corners
            .iter()
            .map(|c| center + Vector3::new(c[0], c[1], c[2]) * half)
            .collect();
        let mut faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [3, 0, 4],
            [3, 4, 7],
        ];
        let mut parts = vec![PartId::Bottom; 8];
        // a far-away top part so both parts exist
        let away = Vector3::new(10.0, 0.0, 0.0);
        let n = verts.len();
        verts.extend(corners.iter().map(|c| away + Vector3::new(c[0], c[1], c[2]) * 0.05));
        let top_faces: Vec<[usize; 3]> = faces.iter().map(|f| f.map(|i| i + n)).collect();
        faces.extend(top_faces);
        parts.extend(vec![PartId::Top; 8]);
        ArticulatedObject::new(Mesh::new(verts, faces, parts).unwrap(), 0.0).unwrap()
    }

    fn shapes_for(obj: &ArticulatedObject<f64>, frames: usize) -> Vec<ArticulatedShape<f64>> {
        let q = ObjectQueries::new(obj).unwrap();
        (0..frames).map(|_| q.shape_at(0.0)).collect()
    }

    /// Direction whose rounded sum with `from` lands on `to` bitwise.
    fn exact_step(from: &Vector3<f64>, to: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|k, _| {
            let mut d = to[k] - from[k];
            loop {
                let s = from[k] + d;
                if s == to[k] {
                    break d;
                }
                d = if s > to[k] { d.next_down() } else { d.next_up() };
            }
        })
    }

    #[test]
    fn projection_is_zero_on_vertices_and_d_on_offsets() {
        let model = default_hand_model(Side::Right, 8);
        let params = HandParams::rest(1);
        let keypoints =
            lbs_forward_subset(&model, &params.theta[0], &params.beta, &model.keypoints).unwrap();

        // every projection point placed bitwise on a cube corner: loss 0
        let obj = cube_object(0.2, Vector3::new(0.0, 0.0, 0.0));
        let shapes = shapes_for(&obj, 1);
        let d_exact: Vec<Vector3<f64>> = keypoints
            .iter()
            .map(|kp| {
                let corner = shapes[0].vertices[shapes[0].nearest(kp).index];
                exact_step(kp, &corner)
            })
            .collect();
        let (zero, _) = projection_loss(&model, &params, &[&d_exact], &shapes).unwrap();
        assert_eq!(zero, 0.0);

        // shifting one projection point by d adds exactly d
        let mut d_off = d_exact.clone();
        let corner = keypoints[0] + d_exact[0];
        // push along the outward diagonal so the corner stays nearest
        let dir = corner.normalize();
        let d = 0.05;
        d_off[0] += dir * d;
        let (one, _) = projection_loss(&model, &params, &[&d_off], &shapes).unwrap();
        assert!((one - d).abs() < 1e-12, "distance {one} expected {d}");
    }

    #[test]
    fn acceleration_is_zero_for_static_and_linear_motion() {
        let model = default_hand_model(Side::Right, 8);
        let frames = 5;

        let stat = HandParams::rest(frames);
        let (v, g) = acceleration_loss(&model, &stat).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().flat_map(|f| f.iter()).all(|&c| c == 0.0));

        let mut lin = HandParams::rest(frames);
        for (i, theta) in lin.theta.iter_mut().enumerate() {
            theta[0] = 0.01 * i as f64;
            theta[1] = -0.02 * i as f64;
        }
        let (v, _) = acceleration_loss(&model, &lin).unwrap();
        assert!(v < 1e-9, "linear motion should cost ~0, got {v}");
    }

    #[test]
    fn acceleration_counts_two_per_vertex_for_quadratic_motion() {
        let model = default_hand_model(Side::Right, 8);
        let frames = 6;
        let mut quad = HandParams::rest(frames);
        for (i, theta) in quad.theta.iter_mut().enumerate() {
            theta[0] = (i * i) as f64;
        }
        let (v, _) = acceleration_loss(&model, &quad).unwrap();
        let expected = (2 * model.vertex_count() * (frames - 2)) as f64;
        assert!(
            (v - expected).abs() < 1e-9 * expected,
            "got {v}, expected {expected}"
        );
    }

    #[test]
    fn penetration_is_zero_outside() {
        let model = default_hand_model(Side::Right, 8);
        let params = HandParams::rest(2);
        // hand sits near the origin; object is far away
        let obj = cube_object(0.2, Vector3::new(5.0, 0.0, 0.0));
        let shapes = shapes_for(&obj, 2);
        let interior = interior_sets(&model, &params, &shapes).unwrap();
        assert!(interior.iter().all(Vec::is_empty));
        let (v, g) = penetration_loss(&model, &params, &shapes, &interior).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().flat_map(|f| f.iter()).all(|&c| c == 0.0));
    }

    #[test]
    fn zero_weights_leave_the_pose_unchanged() {
        let model = default_hand_model(Side::Right, 8);
        let mut params = HandParams::rest(3);
        for (i, theta) in params.theta.iter_mut().enumerate() {
            theta[0] = 0.05 * i as f64;
            theta[7] = 0.3;
        }
        let obj = cube_object(0.2, Vector3::new(0.1, 0.0, 0.0));
        let shapes = shapes_for(&obj, 3);
        let d_hat = vec![vec![Vector3::new(0.01, 0.0, 0.0); 8]; 3];
        let d_refs: Vec<&[Vector3<f64>]> = d_hat.iter().map(|d| d.as_slice()).collect();
        let cfg = RefineConfig {
            w_proj: 0.0,
            w_pen: 0.0,
            w_acc: 0.0,
            ..RefineConfig::default()
        };
        let (out, report) = refine(&model, &params, &d_refs, &shapes, &cfg).unwrap();
        assert_eq!(out.theta, params.theta);
        assert_eq!(report.accepted, 0);
        assert_eq!(report.total, vec![0.0]);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = RefineConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.w_pen = -1.0;
        assert!(cfg.validate().is_err());
        cfg.w_pen = 10.0;
        cfg.step = 0.0;
        assert!(cfg.validate().is_err());
    }
}
