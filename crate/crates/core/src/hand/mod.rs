//! Parametric hand: linear blend skinning over a 16-joint tree, keypoint
//! sampling, direction vectors to the object, and parameter fitting.
//!
//! The surface is a point cloud; no hand faces exist anywhere downstream
//! (contact and penetration run on vertices), so the model stores none.

mod fit;
mod procedural;

pub use fit::{fit_params, FitOptions, FitReport};
pub use procedural::default_hand_model;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{nearest_vertex, rotation_from_axis_angle, KdTree};
use crate::real::Real;

pub const JOINT_COUNT: usize = 16;
pub const SHAPE_COUNT: usize = 10;
/// Per-frame parameter layout: root translation, root rotation, then one
/// axis-angle per non-root joint.
pub const THETA_DIM: usize = 6 + 3 * (JOINT_COUNT - 1);
pub const DEFAULT_KEYPOINTS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Skinned hand model. `weights` rows sum to 1; `parents[0]` is `None` and
/// every other joint's parent precedes it, so the tree is rooted at the
/// wrist. `shape_basis` is vertex-major: entry `v * SHAPE_COUNT + s`.
#[derive(Clone, Debug)]
pub struct HandModel<S> {
    pub side: Side,
    pub template: Vec<Vector3<S>>,
    pub weights: Vec<[S; JOINT_COUNT]>,
    pub parents: [Option<usize>; JOINT_COUNT],
    pub joints: [Vector3<S>; JOINT_COUNT],
    pub shape_basis: Vec<Vector3<S>>,
    pub keypoints: Vec<usize>,
}

impl<S: Real> HandModel<S> {
    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.template.len();
        if v == 0 {
            return Err(Error::invalid("hand template is empty"));
        }
        if self.weights.len() != v {
            return Err(Error::invalid("weight rows must match vertex count"));
        }
        if self.shape_basis.len() != v * SHAPE_COUNT {
            return Err(Error::invalid("shape basis must be V×10 offsets"));
        }
        if !self.template.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("hand template must be finite"));
        }
        if !self.joints.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("joint positions must be finite"));
        }
        let tol = S::c(1e-6);
        for row in &self.weights {
            let mut sum = S::ZERO;
            for &w in row {
                if !(w >= S::ZERO) {
                    return Err(Error::invalid("skinning weights must be nonnegative"));
                }
                sum += w;
            }
            if (sum - S::ONE).abs() > tol {
                return Err(Error::invalid("skinning weight rows must sum to 1"));
            }
        }
        if self.parents[0].is_some() {
            return Err(Error::invalid("joint 0 must be the root"));
        }
        for (j, parent) in self.parents.iter().enumerate().skip(1) {
            match parent {
                Some(p) if *p < j => {}
                _ => return Err(Error::invalid("joint parents must precede their children")),
            }
        }
        if self.keypoints.is_empty() {
            return Err(Error::invalid("keypoint index set is empty"));
        }
        if self.keypoints.iter().any(|&k| k >= v) {
            return Err(Error::invalid("keypoint index out of range"));
        }
        Ok(())
    }
}

/// Per-frame pose parameters for one hand plus a sequence-constant shape.
#[derive(Clone, Debug, PartialEq)]
pub struct HandParams<S> {
    /// frames × THETA_DIM
    pub theta: Vec<[S; THETA_DIM]>,
    pub beta: [S; SHAPE_COUNT],
}

impl<S: Real> HandParams<S> {
    pub fn rest(frames: usize) -> Self {
        HandParams {
            theta: vec![[S::ZERO; THETA_DIM]; frames],
            beta: [S::ZERO; SHAPE_COUNT],
        }
    }

    pub fn frames(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.is_empty() {
            return Err(Error::invalid("hand parameters need at least one frame"));
        }
        let finite = self
            .theta
            .iter()
            .all(|row| row.iter().all(|c| c.is_finite()))
            && self.beta.iter().all(|c| c.is_finite());
        if !finite {
            return Err(Error::invalid("hand parameters must be finite"));
        }
        Ok(())
    }
}

/// Keypoint and direction channels for one hand over a sequence, both in the
/// canonical object frame (meters).
#[derive(Clone, Debug, PartialEq)]
pub struct HandMotion<S> {
    pub frames: usize,
    pub keypoints: usize,
    /// frames × keypoints, row-major.
    pub h: Vec<Vector3<S>>,
    /// Same layout; vectors from each keypoint to the nearest object point.
    pub d: Vec<Vector3<S>>,
}

impl<S: Real> HandMotion<S> {
    pub fn zeros(frames: usize, keypoints: usize) -> Self {
        HandMotion {
            frames,
            keypoints,
            h: vec![Vector3::zeros(); frames * keypoints],
            d: vec![Vector3::zeros(); frames * keypoints],
        }
    }

    pub fn h_frame(&self, i: usize) -> &[Vector3<S>] {
        &self.h[i * self.keypoints..(i + 1) * self.keypoints]
    }

    pub fn d_frame(&self, i: usize) -> &[Vector3<S>] {
        &self.d[i * self.keypoints..(i + 1) * self.keypoints]
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.keypoints == 0 {
            return Err(Error::invalid("hand motion must have frames and keypoints"));
        }
        if self.h.len() != self.frames * self.keypoints || self.d.len() != self.h.len() {
            return Err(Error::ShapeMismatch(
                "hand motion channels must be frames × keypoints".into(),
            ));
        }
        let finite = |v: &[Vector3<S>]| v.iter().all(|p| p.iter().all(|c| c.is_finite()));
        if !finite(&self.h) || !finite(&self.d) {
            return Err(Error::invalid("hand motion must be finite"));
        }
        Ok(())
    }
}

/// Forward-kinematics result. Joint positions are carried as displacements
/// from rest (`posed = rest + disp`), and skinning adds weighted rigid
/// displacements to the shaped vertex; both choices make the rest pose a
/// structural no-op, so zero parameters reproduce the template bit-for-bit.
struct Fk<S> {
    global_rot: [Matrix3<S>; JOINT_COUNT],
    global_disp: [Vector3<S>; JOINT_COUNT],
    local_rot: [Matrix3<S>; JOINT_COUNT],
}

fn theta_rotation<S: Real>(theta: &[S; THETA_DIM], joint: usize) -> Vector3<S> {
    let at = if joint == 0 { 3 } else { 6 + 3 * (joint - 1) };
    Vector3::new(theta[at], theta[at + 1], theta[at + 2])
}

fn forward_kinematics<S: Real>(model: &HandModel<S>, theta: &[S; THETA_DIM]) -> Fk<S> {
    let root_t = Vector3::new(theta[0], theta[1], theta[2]);
    let mut fk = Fk {
        global_rot: [Matrix3::identity(); JOINT_COUNT],
        global_disp: [Vector3::zeros(); JOINT_COUNT],
        local_rot: [Matrix3::identity(); JOINT_COUNT],
    };
    let eye = Matrix3::identity();
    for j in 0..JOINT_COUNT {
        let r = rotation_from_axis_angle(&theta_rotation(theta, j));
        fk.local_rot[j] = r;
        match model.parents[j] {
            None => {
                fk.global_rot[j] = r;
                fk.global_disp[j] = root_t;
            }
            Some(p) => {
                fk.global_rot[j] = fk.global_rot[p] * r;
                fk.global_disp[j] = fk.global_disp[p]
                    + (fk.global_rot[p] - eye) * (model.joints[j] - model.joints[p]);
            }
        }
    }
    fk
}

fn shaped_vertex<S: Real>(model: &HandModel<S>, beta: &[S; SHAPE_COUNT], v: usize) -> Vector3<S> {
    let mut p = model.template[v];
    for (s, &b) in beta.iter().enumerate() {
        if b != S::ZERO {
            p += model.shape_basis[v * SHAPE_COUNT + s] * b;
        }
    }
    p
}

fn skin_vertex<S: Real>(model: &HandModel<S>, fk: &Fk<S>, shaped: &Vector3<S>, v: usize) -> Vector3<S> {
    let eye = Matrix3::identity();
    let mut out = *shaped;
    for (j, &w) in model.weights[v].iter().enumerate() {
        if w != S::ZERO {
            out += ((fk.global_rot[j] - eye) * (shaped - model.joints[j]) + fk.global_disp[j]) * w;
        }
    }
    out
}

/// Pose the full template: shape offsets, forward kinematics, weighted bone
/// transforms. Zero pose and shape reproduce the template bit-for-bit.
pub fn lbs_forward<S: Real>(
    model: &HandModel<S>,
    theta: &[S; THETA_DIM],
    beta: &[S; SHAPE_COUNT],
) -> Result<Vec<Vector3<S>>> {
    if !theta.iter().all(|c| c.is_finite()) || !beta.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid("hand parameters must be finite"));
    }
    let fk = forward_kinematics(model, theta);
    Ok((0..model.vertex_count())
        .map(|v| skin_vertex(model, &fk, &shaped_vertex(model, beta, v), v))
        .collect())
}

/// Pose only the listed vertices (used for keypoint-only objectives).
pub fn lbs_forward_subset<S: Real>(
    model: &HandModel<S>,
    theta: &[S; THETA_DIM],
    beta: &[S; SHAPE_COUNT],
    subset: &[usize],
) -> Result<Vec<Vector3<S>>> {
    if !theta.iter().all(|c| c.is_finite()) || !beta.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid("hand parameters must be finite"));
    }
    if subset.iter().any(|&v| v >= model.vertex_count()) {
        return Err(Error::invalid("vertex index out of range"));
    }
    let fk = forward_kinematics(model, theta);
    Ok(subset
        .iter()
        .map(|&v| skin_vertex(model, &fk, &shaped_vertex(model, beta, v), v))
        .collect())
}

/// Gather the model's fixed keypoint indices out of a posed vertex set.
pub fn sample_keypoints<S: Real>(
    model: &HandModel<S>,
    vertices: &[Vector3<S>],
) -> Result<Vec<Vector3<S>>> {
    model
        .keypoints
        .iter()
        .map(|&k| {
            vertices
                .get(k)
                .copied()
                .ok_or_else(|| Error::invalid("keypoint index out of range"))
        })
        .collect()
}

/// Partial derivatives of the Rodrigues rotation with respect to each
/// axis-angle component: (θ_c[θ]× + [θ×((I−R)e_c)]×)/‖θ‖²·R, with a
/// second-order series below ‖θ‖ ≈ 1e-4 where that quotient loses accuracy.
fn rotation_partials<S: Real>(aa: &Vector3<S>, r: &Matrix3<S>) -> [Matrix3<S>; 3] {
    let n2 = aa.norm_squared();
    let mut out = [Matrix3::zeros(); 3];
    if n2 < S::c(1e-8) {
        let kx = crate::geometry::skew(aa);
        for c in 0..3 {
            let e = crate::geometry::skew(&Vector3::ith_axis(c).into_inner());
            out[c] = e + (e * kx + kx * e) * S::HALF;
        }
    } else {
        let kx = crate::geometry::skew(aa);
        let eye = Matrix3::identity();
        for c in 0..3 {
            let ec = Vector3::ith_axis(c).into_inner();
            let u = aa.cross(&((eye - r) * ec));
            out[c] = (kx * aa[c] + crate::geometry::skew(&u)) * (S::ONE / n2) * r;
        }
    }
    out
}

/// Reverse-mode gradients of `lbs_forward` for one frame: accumulates the
/// given per-vertex cotangents into (θ, β) gradients. Cost is one forward
/// pass plus O(cotangents + joints).
pub fn lbs_vjp<S: Real>(
    model: &HandModel<S>,
    theta: &[S; THETA_DIM],
    beta: &[S; SHAPE_COUNT],
    cotangents: &[(usize, Vector3<S>)],
) -> Result<([S; THETA_DIM], [S; SHAPE_COUNT])> {
    if cotangents.iter().any(|&(v, _)| v >= model.vertex_count()) {
        return Err(Error::invalid("cotangent vertex index out of range"));
    }
    let fk = forward_kinematics(model, theta);
    let mut rot_bar = [Matrix3::<S>::zeros(); JOINT_COUNT];
    let mut pos_bar = [Vector3::<S>::zeros(); JOINT_COUNT];
    let mut beta_bar = [S::ZERO; SHAPE_COUNT];

    for &(v, ref cot) in cotangents {
        let shaped = shaped_vertex(model, beta, v);
        let mut shaped_bar = *cot;
        for (j, &w) in model.weights[v].iter().enumerate() {
            if w != S::ZERO {
                let u = shaped - model.joints[j];
                let wc = cot * w;
                rot_bar[j] += wc * u.transpose();
                pos_bar[j] += wc;
                // through (Q_j − I)(v' − p_j)
                shaped_bar += fk.global_rot[j].transpose() * wc - wc;
            }
        }
        for s in 0..SHAPE_COUNT {
            beta_bar[s] += model.shape_basis[v * SHAPE_COUNT + s].dot(&shaped_bar);
        }
    }

    // Walk the tree bottom-up: children were created after parents, so a
    // reverse index scan visits every child before its parent.
    let mut grad = [S::ZERO; THETA_DIM];
    for j in (0..JOINT_COUNT).rev() {
        let local_bar;
        match model.parents[j] {
            Some(p) => {
                let d = model.joints[j] - model.joints[p];
                // global_disp[j] = global_disp[p] + (global_rot[p] − I) d
                pos_bar[p] += pos_bar[j];
                rot_bar[p] += pos_bar[j] * d.transpose();
                // global_rot[j] = global_rot[p] local_rot[j]
                rot_bar[p] += rot_bar[j] * fk.local_rot[j].transpose();
                local_bar = fk.global_rot[p].transpose() * rot_bar[j];
            }
            None => {
                // global_disp[0] = root translation
                grad[0] += pos_bar[0].x;
                grad[1] += pos_bar[0].y;
                grad[2] += pos_bar[0].z;
                local_bar = rot_bar[0];
            }
        }
        let aa = theta_rotation(theta, j);
        let partials = rotation_partials(&aa, &fk.local_rot[j]);
        let at = if j == 0 { 3 } else { 6 + 3 * (j - 1) };
        for c in 0..3 {
            grad[at + c] += partials[c].component_mul(&local_bar).sum();
        }
    }
    Ok((grad, beta_bar))
}

/// D channel for one frame: vector from each keypoint to the nearest object
/// point, computed against a prebuilt tree over the object's vertex set.
pub fn direction_vectors_with<S: Real>(
    keypoints: &[Vector3<S>],
    object_tree: &KdTree<S>,
) -> Vec<Vector3<S>> {
    keypoints
        .iter()
        .map(|h| object_tree.nearest(h).vector)
        .collect()
}

pub fn direction_vectors<S: Real>(
    keypoints: &[Vector3<S>],
    object_vertices: &[Vector3<S>],
) -> Result<Vec<Vector3<S>>> {
    Ok(nearest_vertex(keypoints, object_vertices)?
        .into_iter()
        .map(|n| n.vector)
        .collect())
}
