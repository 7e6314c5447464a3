//! Meshes, rigid transforms, articulated-object forward kinematics, and
//! canonical-frame conversion.
//!
//! Convention: the object lives in a canonical frame whose hinge axis is the
//! z-axis; the articulation angle `a` rotates the top part right-handed about
//! the -z direction (equivalently by -a about +z).

mod containment;
mod kdtree;
mod obj_io;
mod queries;

pub use containment::{check_watertight, point_inside_mesh};
pub use kdtree::{nearest_vertex, KdTree, Nearest};
pub use obj_io::{read_obj, write_obj};
pub use queries::{ArticulatedShape, ObjectQueries};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartId {
    Top,
    Bottom,
}

impl PartId {
    pub const BOTH: [PartId; 2] = [PartId::Top, PartId::Bottom];
}

/// Triangle mesh with a per-vertex part label.
///
/// Faces may not straddle parts: each part must move rigidly.
#[derive(Clone, Debug)]
pub struct Mesh<S: Real> {
    pub vertices: Vec<Vector3<S>>,
    pub faces: Vec<[usize; 3]>,
    pub part_ids: Vec<PartId>,
}

impl<S: Real> Mesh<S> {
    pub fn new(
        vertices: Vec<Vector3<S>>,
        faces: Vec<[usize; 3]>,
        part_ids: Vec<PartId>,
    ) -> Result<Self> {
        if vertices.len() != part_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} vertices vs {} part labels",
                vertices.len(),
                part_ids.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid("non-finite vertex coordinate"));
        }
        for f in &faces {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::invalid(format!("face index out of range: {f:?}")));
            }
            if part_ids[f[0]] != part_ids[f[1]] || part_ids[f[0]] != part_ids[f[2]] {
                return Err(Error::invalid(format!("face spans both parts: {f:?}")));
            }
        }
        let mesh = Mesh {
            vertices,
            faces,
            part_ids,
        };
        for part in PartId::BOTH {
            let n = mesh.part_indices(part).len();
            if n > 0 && n < 4 {
                return Err(Error::invalid(format!(
                    "part {part:?} has {n} vertices; a present part needs at least 4"
                )));
            }
        }
        Ok(mesh)
    }

    pub fn part_indices(&self, part: PartId) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&i| self.part_ids[i] == part)
            .collect()
    }

    pub fn part_vertices(&self, part: PartId) -> Vec<Vector3<S>> {
        self.part_indices(part)
            .into_iter()
            .map(|i| self.vertices[i])
            .collect()
    }

    /// Faces of one part, re-indexed against that part's vertex list.
    /// Returns (vertices, faces, map from local to original vertex index).
    pub fn part_submesh(&self, part: PartId) -> (Vec<Vector3<S>>, Vec<[usize; 3]>, Vec<usize>) {
        let idx = self.part_indices(part);
        let mut local = vec![usize::MAX; self.vertices.len()];
        for (li, &gi) in idx.iter().enumerate() {
            local[gi] = li;
        }
        let verts = idx.iter().map(|&i| self.vertices[i]).collect();
        let faces = self
            .faces
            .iter()
            .filter(|f| self.part_ids[f[0]] == part)
            .map(|f| [local[f[0]], local[f[1]], local[f[2]]])
            .collect();
        (verts, faces, idx)
    }
}

/// Rotation + translation, validated orthonormal on construction.
#[derive(Clone, Copy, Debug)]
pub struct RigidTransform<S: Real> {
    pub rotation: Matrix3<S>,
    pub translation: Vector3<S>,
}

impl<S: Real> RigidTransform<S> {
    pub fn new(rotation: Matrix3<S>, translation: Vector3<S>) -> Result<Self> {
        let tol = crate::real::rmax(S::c(1e-9), S::default_epsilon() * S::c(64.0));
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.norm() > tol {
            return Err(Error::invalid("rotation is not orthonormal"));
        }
        if (rotation.determinant() - S::ONE).abs() > tol {
            return Err(Error::invalid("rotation determinant is not +1"));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(axis_angle: Vector3<S>, translation: Vector3<S>) -> Self {
        RigidTransform {
            rotation: rotation_from_axis_angle(&axis_angle),
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<S>) -> Vector3<S> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` after `other`: (self ∘ other)(p) = self(other(p)).
    pub fn compose(&self, other: &Self) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// One trajectory entry: 6-DoF global pose as axis-angle rotation and
/// translation, plus the hinge articulation angle (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePose<S> {
    pub rotation: Vector3<S>,
    pub translation: Vector3<S>,
    pub articulation: S,
}

impl<S: Real> FramePose<S> {
    pub fn identity() -> Self {
        FramePose {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
            articulation: S::ZERO,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite())
            && self.articulation.is_finite()
    }

    pub fn global(&self) -> RigidTransform<S> {
        RigidTransform::from_axis_angle(self.rotation, self.translation)
    }
}

#[derive(Clone, Debug)]
pub struct ObjectTrajectory<S> {
    pub frames: Vec<FramePose<S>>,
}

impl<S: Real> ObjectTrajectory<S> {
    pub fn new(frames: Vec<FramePose<S>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("trajectory needs at least one frame"));
        }
        if let Some(i) = frames.iter().position(|f| !f.is_finite()) {
            return Err(Error::invalid(format!("non-finite trajectory frame {i}")));
        }
        Ok(ObjectTrajectory { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Two-part mesh hinged about the canonical z-axis through the origin.
///
/// `opening_angle` is the category's scale-normalization articulation (the
/// angle at which the object is considered fully opened for Eq.-1-style
/// scaling; one of 0, pi/2, pi for the built-in families).
#[derive(Clone, Debug)]
pub struct ArticulatedObject<S: Real> {
    pub canonical_mesh: Mesh<S>,
    pub opening_angle: S,
}

impl<S: Real> ArticulatedObject<S> {
    pub fn new(canonical_mesh: Mesh<S>, opening_angle: S) -> Result<Self> {
        for part in PartId::BOTH {
            if canonical_mesh.part_indices(part).is_empty() {
                return Err(Error::invalid(format!("missing part {part:?}")));
            }
        }
        if !opening_angle.is_finite() {
            return Err(Error::invalid("non-finite opening angle"));
        }
        Ok(ArticulatedObject {
            canonical_mesh,
            opening_angle,
        })
    }
}

/// Rodrigues' formula with a series fallback near zero angle.
pub fn rotation_from_axis_angle<S: Real>(axis_angle: &Vector3<S>) -> Matrix3<S> {
    let (a, b) = rodrigues_coefficients(axis_angle.norm());
    let k = skew(axis_angle);
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle of a rotation matrix (inverse of `rotation_from_axis_angle`);
/// handles the near-0 and near-π branches.
pub fn axis_angle_from_rotation<S: Real>(r: &Matrix3<S>) -> Vector3<S> {
    let cos = ((r.trace() - S::ONE) * S::HALF).clamp(-S::ONE, S::ONE);
    let angle = cos.acos();
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if angle < S::c(1e-6) {
        return skew * S::HALF;
    }
    if angle > S::c(std::f64::consts::PI - 1e-4) {
        // axis from the dominant diagonal of (R + I)/2
        let m = (r + Matrix3::identity()) * S::HALF;
        let mut axis = Vector3::new(m[(0, 0)].sqrt(), m[(1, 1)].sqrt(), m[(2, 2)].sqrt());
        let k = if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            0
        } else if m[(1, 1)] >= m[(2, 2)] {
            1
        } else {
            2
        };
        let sign = |x: S| if x < S::ZERO { -S::ONE } else { S::ONE };
        let sk = sign(axis[k]);
        axis[(k + 1) % 3] *= sign(m[(k, (k + 1) % 3)]) * sk;
        axis[(k + 2) % 3] *= sign(m[(k, (k + 2) % 3)]) * sk;
        axis[k] *= sk;
        return axis.normalize() * angle;
    }
    skew * (angle / (S::TWO * angle.sin()))
}

/// (sin θ / θ, (1 − cos θ)/θ²) with Taylor guards.
#[inline]
pub(crate) fn rodrigues_coefficients<S: Real>(theta: S) -> (S, S) {
    if theta < S::c(1e-4) {
        let t2 = theta * theta;
        (
            S::ONE - t2 / S::c(6.0),
            S::HALF - t2 / S::c(24.0),
        )
    } else {
        let t2 = theta * theta;
        (theta.sin() / theta, (S::ONE - theta.cos()) / t2)
    }
}

#[inline]
pub(crate) fn skew<S: Real>(v: &Vector3<S>) -> Matrix3<S> {
    Matrix3::new(
        S::ZERO, -v.z, v.y, //
        v.z, S::ZERO, -v.x, //
        -v.y, v.x, S::ZERO,
    )
}

/// Rotation of the top part at articulation angle `a`: right-handed about -z.
pub fn articulation_rotation<S: Real>(a: S) -> Matrix3<S> {
    rotation_from_axis_angle(&Vector3::new(S::ZERO, S::ZERO, -a))
}

/// Canonical vertices with the top part articulated by `a` (no global pose).
pub fn articulate<S: Real>(obj: &ArticulatedObject<S>, a: S) -> Vec<Vector3<S>> {
    let rot = articulation_rotation(a);
    obj.canonical_mesh
        .vertices
        .iter()
        .zip(&obj.canonical_mesh.part_ids)
        .map(|(v, &part)| match part {
            PartId::Top => rot * v,
            PartId::Bottom => *v,
        })
        .collect()
}

/// Forward kinematics: articulate the top part about the hinge, then apply
/// the global pose to everything.
pub fn pose_object<S: Real>(
    obj: &ArticulatedObject<S>,
    frame: &FramePose<S>,
) -> Result<Vec<Vector3<S>>> {
    if !frame.is_finite() {
        return Err(Error::invalid("non-finite frame"));
    }
    let g = frame.global();
    Ok(articulate(obj, frame.articulation)
        .iter()
        .map(|v| g.apply(v))
        .collect())
}

/// World points into the canonical object frame (inverse of the global pose;
/// articulation is internal to the object and not undone here).
pub fn to_canonical<S: Real>(points: &[Vector3<S>], frame: &FramePose<S>) -> Result<Vec<Vector3<S>>> {
    if !frame.is_finite() {
        return Err(Error::invalid("non-finite frame"));
    }
    if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::invalid("non-finite point"));
    }
    let inv = frame.global().inverse();
    Ok(points.iter().map(|p| inv.apply(p)).collect())
}
