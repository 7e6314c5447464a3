//! Contact maps between object anchor points and hand geometry, the
//! guidance discrepancy with its subgradient, and anchor-to-mesh
//! densification.
//!
//! Anchors Ṽ live in canonical meters and come from the feature encoding
//! (`PartBpsFeatures::anchors_meters`), so maps stay aligned with the
//! features that conditioned the sampler.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::KdTree;
use crate::real::Real;

/// Per-hand contact channel: for every frame and anchor, the vector from the
/// anchor to the nearest hand point. No correspondence to a specific hand
/// vertex is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactMap<S> {
    pub frames: usize,
    pub anchors: usize,
    /// frames × anchors, row-major.
    pub c: Vec<Vector3<S>>,
}

impl<S: Real> ContactMap<S> {
    pub fn frame(&self, i: usize) -> &[Vector3<S>] {
        &self.c[i * self.anchors..(i + 1) * self.anchors]
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.anchors == 0 {
            return Err(Error::invalid("contact map must have frames and anchors"));
        }
        if self.c.len() != self.frames * self.anchors {
            return Err(Error::ShapeMismatch(
                "contact map length must be frames × anchors".into(),
            ));
        }
        if !self.c.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid("contact map must be finite"));
        }
        Ok(())
    }
}

/// Contact map plus the nearest-point assignment (index into the hand set
/// used to derive it), kept so a later gradient can flow through exactly
/// this evaluation's matching.
#[derive(Clone, Debug)]
pub struct DerivedContact<S> {
    pub map: ContactMap<S>,
    /// frames × anchors: index of the chosen hand point within its frame.
    pub assignment: Vec<usize>,
}

fn contact_from_hand_sets<S: Real>(
    hand_frames: &[&[Vector3<S>]],
    anchor_frames: &[&[Vector3<S>]],
) -> Result<DerivedContact<S>> {
    if hand_frames.len() != anchor_frames.len() {
        return Err(Error::ShapeMismatch(
            "hand and anchor frame counts differ".into(),
        ));
    }
    if hand_frames.is_empty() {
        return Err(Error::invalid("contact needs at least one frame"));
    }
    let anchors = anchor_frames[0].len();
    if anchors == 0 {
        return Err(Error::invalid("contact needs at least one anchor"));
    }
    let mut c = Vec::with_capacity(hand_frames.len() * anchors);
    let mut assignment = Vec::with_capacity(hand_frames.len() * anchors);
    for (hand, anchor) in hand_frames.iter().zip(anchor_frames) {
        if hand.is_empty() {
            return Err(Error::EmptyReference);
        }
        if anchor.len() != anchors {
            return Err(Error::ShapeMismatch(
                "anchor count varies across frames".into(),
            ));
        }
        let tree = KdTree::build(hand)?;
        for v in anchor.iter() {
            let hit = tree.nearest(v);
            c.push(hit.vector);
            assignment.push(hit.index);
        }
    }
    Ok(DerivedContact {
        map: ContactMap {
            frames: hand_frames.len(),
            anchors,
            c,
        },
        assignment,
    })
}

/// Ground-truth contact: nearest dense hand vertex per anchor, per frame.
pub fn gt_contact<S: Real>(
    hand_vertices: &[&[Vector3<S>]],
    anchors: &[&[Vector3<S>]],
) -> Result<ContactMap<S>> {
    Ok(contact_from_hand_sets(hand_vertices, anchors)?.map)
}

/// Contact derived from sparse generated keypoints; keeps the assignment so
/// the discrepancy can differentiate through it.
pub fn derived_contact<S: Real>(
    keypoints: &[&[Vector3<S>]],
    anchors: &[&[Vector3<S>]],
) -> Result<DerivedContact<S>> {
    contact_from_hand_sets(keypoints, anchors)
}

/// Sum of per-anchor Euclidean norms ‖Ĉ − C̃‖ and its gradient with respect
/// to the keypoints that produced C̃, holding this evaluation's
/// nearest-neighbor assignment fixed (a subgradient of the true objective).
/// Anchors whose residual is exactly zero contribute a zero subgradient.
pub fn contact_discrepancy<S: Real>(
    reference: &ContactMap<S>,
    derived: &DerivedContact<S>,
    keypoints_per_frame: usize,
) -> Result<(S, Vec<Vector3<S>>)> {
    let got = &derived.map;
    if reference.frames != got.frames || reference.anchors != got.anchors {
        return Err(Error::ShapeMismatch("contact map shapes differ".into()));
    }
    if keypoints_per_frame == 0 {
        return Err(Error::invalid("keypoint count must be positive"));
    }
    if derived.assignment.iter().any(|&a| a >= keypoints_per_frame) {
        return Err(Error::invalid("assignment index out of keypoint range"));
    }
    let mut value = S::ZERO;
    let mut grad = vec![Vector3::zeros(); reference.frames * keypoints_per_frame];
    for i in 0..reference.frames {
        for k in 0..reference.anchors {
            let at = i * reference.anchors + k;
            let r = reference.c[at] - got.c[at];
            let n = r.norm();
            value += n;
            if n > S::ZERO {
                // d‖r‖/dC̃ = −r/‖r‖ and dC̃/dh_assigned = I
                grad[i * keypoints_per_frame + derived.assignment[at]] -= r / n;
            }
        }
    }
    Ok((value, grad))
}

/// Spread anchor contact norms onto a full vertex set: each vertex takes the
/// scalar ‖C‖ of its nearest anchor.
pub fn densify_contact<S: Real>(
    contact_frame: &[Vector3<S>],
    anchor_points: &[Vector3<S>],
    vertices: &[Vector3<S>],
) -> Result<Vec<S>> {
    if contact_frame.len() != anchor_points.len() {
        return Err(Error::ShapeMismatch(
            "one contact vector per anchor required".into(),
        ));
    }
    let tree = KdTree::build(anchor_points)?;
    Ok(vertices
        .iter()
        .map(|v| contact_frame[tree.nearest(v).index].norm())
        .collect())
}
