//! Object features: scale normalization, basis point sets, the three BPS
//! variants, and relative global states.
//!
//! All features are computed in the canonical object frame, so they are
//! independent of the global trajectory by construction; only the
//! articulation angle enters per frame.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{articulate, ArticulatedObject, KdTree, ObjectTrajectory, PartId};
use crate::real::Real;
use crate::rng::stage_rng;

/// Fixed basis points; `radius` is 1 for the normalized variants and 0.5 m
/// for the unnormalized one.
#[derive(Clone, Debug)]
pub struct BasisPointSet<S> {
    pub points: Vec<Vector3<S>>,
    pub seed: u64,
    pub radius: f64,
}

/// Round to the nearest multiple of the coordinate grid quantum.
///
/// Every coordinate that enters a basis-to-surface offset (basis points and
/// encoded vertices alike) passes through this, so offsets are exact
/// differences of grid multiples and `o + b` reproduces the chosen vertex
/// bit-for-bit. A raw `v - b` offset cannot promise that: when the offset
/// lands in a coarser binade than the vertex, no representable value adds
/// back to it. The quantum (2⁻⁵⁰ for `f64`) is far below every tolerance
/// used downstream.
#[inline]
pub fn snap_to_grid<S: Real>(x: S) -> S {
    (x * S::GRID_SCALE).round() / S::GRID_SCALE
}

#[inline]
pub fn snap_point<S: Real>(p: &Vector3<S>) -> Vector3<S> {
    Vector3::new(snap_to_grid(p.x), snap_to_grid(p.y), snap_to_grid(p.z))
}

/// Uniform samples in the unit ball (Gaussian direction, cube-root radius).
pub fn sample_basis_points<S: Real>(k: usize, seed: u64) -> Result<BasisPointSet<S>> {
    sample_basis_points_with_radius(k, 1.0, seed)
}

pub fn sample_basis_points_with_radius<S: Real>(
    k: usize,
    radius: f64,
    seed: u64,
) -> Result<BasisPointSet<S>> {
    if k == 0 {
        return Err(Error::invalid("basis point count must be positive"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("basis radius must be positive"));
    }
    let mut rng = stage_rng(seed, "basis-points");
    let mut points = Vec::with_capacity(k);
    while points.len() < k {
        let dir = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let norm = dir.norm();
        if norm < 1e-12 {
            continue;
        }
        let r = rng.gen_range(0.0..1.0_f64).cbrt() * radius;
        let p = dir * (r / norm);
        points.push(snap_point(&Vector3::new(S::c(p.x), S::c(p.y), S::c(p.z))));
    }
    Ok(BasisPointSet {
        points,
        seed,
        radius,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectScale<S> {
    pub s_o: S,
    pub d_margin: S,
}

/// s_o = (1 − d_margin) / max‖v‖ with the object articulated to its
/// category's opening angle; multiplying vertices by s_o puts the farthest
/// one at norm 1 − d_margin.
pub fn compute_scale<S: Real>(obj: &ArticulatedObject<S>, d_margin: S) -> Result<ObjectScale<S>> {
    if !(d_margin > S::ZERO && d_margin < S::ONE) {
        return Err(Error::invalid("d_margin must lie in (0, 1)"));
    }
    let mut max_norm = S::ZERO;
    for v in articulate(obj, obj.opening_angle) {
        max_norm = crate::real::rmax(max_norm, v.norm());
    }
    if max_norm == S::ZERO {
        return Err(Error::invalid("object has zero extent"));
    }
    Ok(ObjectScale {
        s_o: (S::ONE - d_margin) / max_norm,
        d_margin,
    })
}

pub const DEFAULT_D_MARGIN: f64 = 0.15;
pub const DEFAULT_K: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BpsVariant {
    /// Normalized, per-part nearest vertex (the reference encoding).
    NpBps,
    /// Normalized, nearest vertex over the whole object.
    NpaBps,
    /// Unnormalized meters, nearest over the whole object, 0.5 m basis ball.
    UBps,
}

/// Per-frame basis-to-surface vectors, anchor layout `[top K | bottom K]`
/// for the part-based variant and a flat `2K` block otherwise.
#[derive(Clone, Debug)]
pub struct PartBpsFeatures<S> {
    pub variant: BpsVariant,
    pub frames: usize,
    /// Anchor count per frame (2K for every variant).
    pub anchors: usize,
    /// frames × anchors, row-major.
    pub o: Vec<Vector3<S>>,
    /// Scale the object was multiplied by before encoding (1 for U-BPS).
    pub s_o: S,
}

impl<S: Real> PartBpsFeatures<S> {
    pub fn frame(&self, i: usize) -> &[Vector3<S>] {
        &self.o[i * self.anchors..(i + 1) * self.anchors]
    }

    /// Contact anchors Ṽ in canonical meters: (O + b) / s_o.
    pub fn anchors_meters(&self, basis: &[Vector3<S>], frame: usize) -> Vec<Vector3<S>> {
        assert_eq!(basis.len(), self.anchors, "basis/anchor layout mismatch");
        self.frame(frame)
            .iter()
            .zip(basis)
            .map(|(o, b)| (o + b) / self.s_o)
            .collect()
    }

    /// The basis point behind each anchor slot: the part-based layout reuses
    /// the same K points for the top and bottom blocks.
    pub fn anchor_basis(&self, basis: &BasisPointSet<S>) -> Vec<Vector3<S>> {
        match self.variant {
            BpsVariant::NpBps => {
                assert_eq!(2 * basis.points.len(), self.anchors);
                let mut out = basis.points.clone();
                out.extend_from_slice(&basis.points);
                out
            }
            BpsVariant::NpaBps | BpsVariant::UBps => {
                assert_eq!(basis.points.len(), self.anchors);
                basis.points.clone()
            }
        }
    }
}

/// The vertex set every encoder measures offsets against: articulated,
/// multiplied by `s_o`, snapped to the coordinate grid (pass `s_o = 1` for
/// the unnormalized variant). Anchor reconstructions land exactly on this
/// set, so consumers that need the surface points must use it rather than
/// rescaling the mesh themselves.
pub fn encoded_vertices<S: Real>(obj: &ArticulatedObject<S>, a: S, s_o: S) -> Vec<Vector3<S>> {
    articulate(obj, a)
        .iter()
        .map(|v| snap_point(&(v * s_o)))
        .collect()
}

fn articulated_scaled<S: Real>(
    obj: &ArticulatedObject<S>,
    a: S,
    s_o: S,
) -> (Vec<Vector3<S>>, Vec<usize>, Vec<usize>) {
    let verts = encoded_vertices(obj, a, s_o);
    let top = obj.canonical_mesh.part_indices(PartId::Top);
    let bottom = obj.canonical_mesh.part_indices(PartId::Bottom);
    (verts, top, bottom)
}

/// Part-based BPS (Eq.-2 style): for each basis point, the vector to the
/// nearest scaled vertex of the designated part, top block then bottom block.
pub fn part_bps<S: Real>(
    traj: &ObjectTrajectory<S>,
    obj: &ArticulatedObject<S>,
    basis: &BasisPointSet<S>,
    scale: &ObjectScale<S>,
) -> Result<PartBpsFeatures<S>> {
    let k = basis.points.len();
    let mut o = Vec::with_capacity(traj.len() * 2 * k);
    for frame in &traj.frames {
        let (verts, top, bottom) = articulated_scaled(obj, frame.articulation, scale.s_o);
        for part_idx in [&top, &bottom] {
            if part_idx.is_empty() {
                return Err(Error::invalid("empty part in part_bps"));
            }
            let part_verts: Vec<Vector3<S>> = part_idx.iter().map(|&i| verts[i]).collect();
            let tree = KdTree::build(&part_verts)?;
            for b in &basis.points {
                let hit = tree.nearest(b);
                o.push(part_verts[hit.index] - b);
            }
        }
    }
    Ok(PartBpsFeatures {
        variant: BpsVariant::NpBps,
        frames: traj.len(),
        anchors: 2 * k,
        o,
        s_o: scale.s_o,
    })
}

/// Part-agnostic normalized variant: 2K basis points against the whole
/// scaled object.
pub fn part_agnostic_bps<S: Real>(
    traj: &ObjectTrajectory<S>,
    obj: &ArticulatedObject<S>,
    basis_2k: &BasisPointSet<S>,
    scale: &ObjectScale<S>,
) -> Result<PartBpsFeatures<S>> {
    for part in PartId::BOTH {
        if obj.canonical_mesh.part_indices(part).is_empty() {
            return Err(Error::invalid("object must have both parts"));
        }
    }
    let mut o = Vec::with_capacity(traj.len() * basis_2k.points.len());
    for frame in &traj.frames {
        let (verts, _, _) = articulated_scaled(obj, frame.articulation, scale.s_o);
        let tree = KdTree::build(&verts)?;
        for b in &basis_2k.points {
            let hit = tree.nearest(b);
            o.push(verts[hit.index] - b);
        }
    }
    Ok(PartBpsFeatures {
        variant: BpsVariant::NpaBps,
        frames: traj.len(),
        anchors: basis_2k.points.len(),
        o,
        s_o: scale.s_o,
    })
}

/// Unnormalized variant: 2K basis points in a 0.5 m ball against the object
/// in raw meters.
pub fn unnormalized_bps<S: Real>(
    traj: &ObjectTrajectory<S>,
    obj: &ArticulatedObject<S>,
    basis_halfmeter: &BasisPointSet<S>,
) -> Result<PartBpsFeatures<S>> {
    let mut o = Vec::with_capacity(traj.len() * basis_halfmeter.points.len());
    for frame in &traj.frames {
        let verts = encoded_vertices(obj, frame.articulation, S::ONE);
        let tree = KdTree::build(&verts)?;
        for b in &basis_halfmeter.points {
            let hit = tree.nearest(b);
            o.push(verts[hit.index] - b);
        }
    }
    Ok(PartBpsFeatures {
        variant: BpsVariant::UBps,
        frames: traj.len(),
        anchors: basis_halfmeter.points.len(),
        o,
        s_o: S::ONE,
    })
}

/// Per-frame global state: translation relative to the first frame, rotation
/// copied through.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalStates<S> {
    /// frames × [relative translation (3) | axis-angle rotation (3)]
    pub g: Vec<[S; 6]>,
}

pub fn global_states<S: Real>(traj: &ObjectTrajectory<S>) -> GlobalStates<S> {
    let t0 = traj.frames[0].translation;
    let g = traj
        .frames
        .iter()
        .map(|f| {
            let rel = f.translation - t0;
            [rel.x, rel.y, rel.z, f.rotation.x, f.rotation.y, f.rotation.z]
        })
        .collect();
    GlobalStates { g }
}
