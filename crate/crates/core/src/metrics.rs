//! Evaluation metrics for generated hand-object motion.
//!
//! Everything internal runs in meters; reported values use the customary
//! units (cm, cm/s², percentages). Hands enter as already-posed point sets
//! per frame, in the same canonical object frame the scene shapes live in,
//! with both hands concatenated when a metric is per-frame "any hand".

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::contact::ContactMap;
use crate::error::{Error, Result};
use crate::geometry::{ArticulatedShape, PartId};
use crate::real::Real;

/// Contact threshold for the contact and articulation percentages: 5 mm,
/// configurable at the call sites.
pub const DEFAULT_CONTACT_EPS: f64 = 5e-3;

/// Penetration thresholds reported side by side: 1 cm and 5 mm.
pub const PEN_THRESHOLDS: [f64; 2] = [1e-2, 5e-3];

/// Articulation-change detector: consecutive frames whose opening angle
/// moves by more than this count as articulating.
pub const ART_CHANGE_EPS: f64 = 1e-3;

/// How many motions the multimodality metric averages over.
pub const DEFAULT_MUL_SAMPLES: usize = 10;

fn meters_to_cm<S: Real>(v: S) -> S {
    v * S::c(100.0)
}

fn percent<S: Real>(hits: usize, total: usize) -> S {
    S::c(100.0) * S::from_count(hits) / S::from_count(total)
}

/// Mean average pairwise distance between motion samples, in cm.
///
/// Each sample is one motion flattened to a point list (any layout, as long
/// as it is the same for every sample). Pair distances are accumulated in
/// sorted order, which makes the result bitwise invariant to sample order.
pub fn multimodality<S: Real>(samples: &[&[Vector3<S>]]) -> Result<S> {
    if samples.len() < 2 {
        return Err(Error::invalid("multimodality needs at least two samples"));
    }
    let len = samples[0].len();
    if len == 0 || samples.iter().any(|s| s.len() != len) {
        return Err(Error::ShapeMismatch(
            "samples must share one nonempty layout".into(),
        ));
    }
    let mut pair_means = Vec::with_capacity(samples.len() * (samples.len() - 1) / 2);
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            let sum: S = a.iter().zip(*b).map(|(p, q)| (p - q).norm()).sum();
            pair_means.push(sum / S::from_count(len));
        }
    }
    pair_means.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let total: S = pair_means.iter().copied().sum();
    Ok(meters_to_cm(total / S::from_count(pair_means.len())))
}

/// Mean second-difference magnitude of the tracked points scaled by fps²,
/// in cm/s². Fewer than three frames move nothing.
pub fn accel<S: Real>(traj: &[&[Vector3<S>]], fps: S) -> Result<S> {
    if !(fps.is_finite() && fps > S::ZERO) {
        return Err(Error::invalid("fps must be finite and > 0"));
    }
    let frames = traj.len();
    if frames < 3 {
        return Ok(S::ZERO);
    }
    let points = traj[0].len();
    if points == 0 || traj.iter().any(|f| f.len() != points) {
        return Err(Error::ShapeMismatch(
            "every frame must carry the same nonempty point set".into(),
        ));
    }
    let mut sum = S::ZERO;
    for i in 2..frames {
        for p in 0..points {
            sum += (traj[i][p] - traj[i - 1][p] * S::TWO + traj[i - 2][p]).norm();
        }
    }
    let mean = sum / S::from_count((frames - 2) * points);
    Ok(meters_to_cm(mean * fps * fps))
}

fn check_scene<S: Real>(hands: &[&[Vector3<S>]], scene: &[ArticulatedShape<S>]) -> Result<()> {
    if hands.is_empty() || hands.len() != scene.len() {
        return Err(Error::ShapeMismatch(format!(
            "hand frames {} and scene frames {} must match and be nonempty",
            hands.len(),
            scene.len()
        )));
    }
    Ok(())
}

/// Percentage of frames where some hand point sits inside the object at
/// depth (distance to the nearest surface vertex) at or above `threshold`.
pub fn pen_pct<S: Real>(
    hands: &[&[Vector3<S>]],
    scene: &[ArticulatedShape<S>],
    threshold: S,
) -> Result<S> {
    check_scene(hands, scene)?;
    let hits = hands
        .iter()
        .zip(scene)
        .filter(|(points, shape)| {
            points
                .iter()
                .any(|p| shape.depth(p).is_some_and(|d| d >= threshold))
        })
        .count();
    Ok(percent(hits, hands.len()))
}

/// Percentage of frames where some hand point touches the object: inside it,
/// or within `contact_eps` of a surface vertex.
pub fn con_pct<S: Real>(
    hands: &[&[Vector3<S>]],
    scene: &[ArticulatedShape<S>],
    contact_eps: S,
) -> Result<S> {
    check_scene(hands, scene)?;
    let hits = hands
        .iter()
        .zip(scene)
        .filter(|(points, shape)| {
            points
                .iter()
                .any(|p| shape.touches_part(p, contact_eps).is_some())
        })
        .count();
    Ok(percent(hits, hands.len()))
}

/// Among frames whose opening angle changes, the percentage where some hand
/// point touches the moving part. A sequence that never articulates has no
/// denominator; it reports 100 with the flag lowered.
pub fn art_pct<S: Real>(
    hands: &[&[Vector3<S>]],
    scene: &[ArticulatedShape<S>],
    angles: &[S],
    contact_eps: S,
) -> Result<(S, bool)> {
    check_scene(hands, scene)?;
    if angles.len() != hands.len() {
        return Err(Error::ShapeMismatch(format!(
            "angles cover {} frames, hands {}",
            angles.len(),
            hands.len()
        )));
    }
    let eps = S::c(ART_CHANGE_EPS);
    let mut articulating = 0;
    let mut touching = 0;
    for i in 1..angles.len() {
        if (angles[i] - angles[i - 1]).abs() <= eps {
            continue;
        }
        articulating += 1;
        if hands[i]
            .iter()
            .any(|p| scene[i].touches_part(p, contact_eps) == Some(PartId::Top))
        {
            touching += 1;
        }
    }
    if articulating == 0 {
        return Ok((S::c(100.0), false));
    }
    Ok((percent(touching, articulating), true))
}

/// Mean L1 distance between the per-anchor norms of two contact maps, in cm.
pub fn cm_l1<S: Real>(derived: &ContactMap<S>, predicted: &ContactMap<S>) -> Result<S> {
    derived.validate()?;
    predicted.validate()?;
    if derived.frames != predicted.frames || derived.anchors != predicted.anchors {
        return Err(Error::ShapeMismatch(format!(
            "contact maps disagree: {}x{} vs {}x{}",
            derived.frames, derived.anchors, predicted.frames, predicted.anchors
        )));
    }
    let sum: S = derived
        .c
        .iter()
        .zip(&predicted.c)
        .map(|(d, p)| (d.norm() - p.norm()).abs())
        .sum();
    Ok(meters_to_cm(sum / S::from_count(derived.c.len())))
}

/// One evaluated sequence, in reporting units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<S> {
    pub mul_cm: S,
    pub accel_cm_s2: S,
    pub pen_1cm_pct: S,
    pub pen_5mm_pct: S,
    pub con_pct: S,
    pub art_pct: S,
    /// False when the sequence never articulates and `art_pct` is the
    /// conventional 100.
    pub art_defined: bool,
    pub cm_cm: S,
    pub fps: S,
}

impl<S: Real> MetricsReport<S> {
    pub fn validate(&self) -> Result<()> {
        let values = [
            self.mul_cm,
            self.accel_cm_s2,
            self.pen_1cm_pct,
            self.pen_5mm_pct,
            self.con_pct,
            self.art_pct,
            self.cm_cm,
            self.fps,
        ];
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("metrics must be finite"));
        }
        let pcts = [
            self.pen_1cm_pct,
            self.pen_5mm_pct,
            self.con_pct,
            self.art_pct,
        ];
        if !pcts
            .iter()
            .all(|p| *p >= S::ZERO && *p <= S::c(100.0))
        {
            return Err(Error::invalid("percentages must lie in [0, 100]"));
        }
        Ok(())
    }

    pub fn csv_header() -> &'static str {
        "Mul (cm),Accel (cm/s2),Pen 1cm (%),Pen 5mm (%),Con (%),Art (%),CM (cm)"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mul_cm,
            self.accel_cm_s2,
            self.pen_1cm_pct,
            self.pen_5mm_pct,
            self.con_pct,
            self.art_pct,
            self.cm_cm
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ArticulatedObject, Mesh, ObjectQueries};

    fn cube(half: f64, center: Vector3<f64>, part: PartId) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>, Vec<PartId>) {
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
        let verts = corners
            .iter()
            .map(|c| center + Vector3::new(c[0], c[1], c[2]) * half)
            .collect();
        let faces = vec![
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
        (verts, faces, vec![part; 8])
    }

    fn two_cube_object() -> ArticulatedObject<f64> {
        let (mut v, mut f, mut p) = cube(0.1, Vector3::new(0.3, 0.0, 0.0), PartId::Top);
        let (v2, f2, p2) = cube(0.1, Vector3::new(-0.3, 0.0, 0.0), PartId::Bottom);
        let n = v.len();
        v.extend(v2);
        f.extend(f2.iter().map(|t| t.map(|i| i + n)));
        p.extend(p2);
        ArticulatedObject::new(Mesh::new(v, f, p).unwrap(), 1.0).unwrap()
    }

    fn shapes(frames: usize) -> Vec<ArticulatedShape<f64>> {
        let obj = two_cube_object();
        let q = ObjectQueries::new(&obj).unwrap();
        (0..frames).map(|_| q.shape_at(0.0)).collect()
    }

    #[test]
    fn multimodality_trivial_cases() {
        let a: Vec<Vector3<f64>> = (0..6).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let same = vec![a.as_slice(); 10];
        assert_eq!(multimodality(&same).unwrap(), 0.0);

        let b: Vec<Vector3<f64>> = a.iter().map(|p| p + Vector3::new(0.01, 0.0, 0.0)).collect();
        let two = vec![a.as_slice(), b.as_slice()];
        let mul = multimodality(&two).unwrap();
        assert!((mul - 1.0).abs() < 1e-12, "1 cm offset gives {mul} cm");

        assert!(multimodality(&[a.as_slice()]).is_err());
    }

    #[test]
    fn accel_trivial_cases() {
        let still: Vec<Vec<Vector3<f64>>> =
            vec![vec![Vector3::new(0.1, 0.2, 0.3); 4]; 5];
        let frames: Vec<&[Vector3<f64>]> = still.iter().map(|f| f.as_slice()).collect();
        assert_eq!(accel(&frames, 30.0).unwrap(), 0.0);

        let linear: Vec<Vec<Vector3<f64>>> = (0..5)
            .map(|i| vec![Vector3::new(0.01 * i as f64, 0.0, 0.0); 4])
            .collect();
        let frames: Vec<&[Vector3<f64>]> = linear.iter().map(|f| f.as_slice()).collect();
        assert!(accel(&frames, 30.0).unwrap() < 1e-9);

        // x = i^2 has unit second difference of 2 everywhere
        let quad: Vec<Vec<Vector3<f64>>> = (0..5)
            .map(|i| vec![Vector3::new((i * i) as f64, 0.0, 0.0); 3])
            .collect();
        let frames: Vec<&[Vector3<f64>]> = quad.iter().map(|f| f.as_slice()).collect();
        let got = accel(&frames, 1.0).unwrap();
        assert!((got - 200.0).abs() < 1e-9, "2 m * fps^2 is 200 cm/s^2, got {got}");

        assert_eq!(accel(&frames[..2], 30.0).unwrap(), 0.0);
    }

    #[test]
    fn penetration_and_contact_trivial_cases() {
        let scene = shapes(4);
        let far = vec![vec![Vector3::new(0.0, 5.0, 0.0)]; 4];
        let far_refs: Vec<&[Vector3<f64>]> = far.iter().map(|f| f.as_slice()).collect();
        assert_eq!(pen_pct(&far_refs, &scene, 0.01).unwrap(), 0.0);
        assert_eq!(con_pct(&far_refs, &scene, 5e-3).unwrap(), 0.0);

        // cube center: 10 cm from every corner vertex, well past both thresholds
        let deep = vec![vec![Vector3::new(-0.3, 0.0, 0.0)]; 4];
        let deep_refs: Vec<&[Vector3<f64>]> = deep.iter().map(|f| f.as_slice()).collect();
        assert_eq!(pen_pct(&deep_refs, &scene, 0.01).unwrap(), 100.0);
        assert_eq!(con_pct(&deep_refs, &scene, 5e-3).unwrap(), 100.0);
    }

    #[test]
    fn articulation_contact_conventions() {
        let scene = shapes(4);
        let corner = Vector3::new(0.2, -0.1, -0.1); // a top-cube vertex
        let hands = vec![vec![corner]; 4];
        let refs: Vec<&[Vector3<f64>]> = hands.iter().map(|f| f.as_slice()).collect();

        // never articulates: conventional 100 with the flag lowered
        let (pct, defined) = art_pct(&refs, &scene, &[0.0; 4], 5e-3).unwrap();
        assert_eq!((pct, defined), (100.0, false));

        // articulates every frame while touching the moving part
        // (shapes stay at angle 0 here; the angles drive only the detector)
        let angles = [0.0, 0.01, 0.02, 0.03];
        let (pct, defined) = art_pct(&refs, &scene, &angles, 5e-3).unwrap();
        assert_eq!((pct, defined), (100.0, true));

        // touching the static part does not count
        let bottom = Vector3::new(-0.2, -0.1, -0.1);
        let hands = vec![vec![bottom]; 4];
        let refs: Vec<&[Vector3<f64>]> = hands.iter().map(|f| f.as_slice()).collect();
        let (pct, defined) = art_pct(&refs, &scene, &angles, 5e-3).unwrap();
        assert_eq!((pct, defined), (0.0, true));
    }

    #[test]
    fn contact_map_l1_trivial_cases() {
        let frames = 3;
        let anchors = 4;
        let c: Vec<Vector3<f64>> = (0..frames * anchors)
            .map(|i| Vector3::new(0.02 + 0.001 * i as f64, 0.0, 0.0))
            .collect();
        let derived = ContactMap { frames, anchors, c: c.clone() };
        assert_eq!(cm_l1(&derived, &derived).unwrap(), 0.0);

        // same directions, norms uniformly 1 cm longer
        let longer: Vec<Vector3<f64>> = c
            .iter()
            .map(|v| v + Vector3::new(0.01, 0.0, 0.0))
            .collect();
        let predicted = ContactMap { frames, anchors, c: longer };
        let got = cm_l1(&derived, &predicted).unwrap();
        assert!((got - 1.0).abs() < 1e-12, "uniform 1 cm offset gives {got}");
    }

    #[test]
    fn report_validation_and_csv_shape() {
        let report = MetricsReport {
            mul_cm: 1.5,
            accel_cm_s2: 0.2,
            pen_1cm_pct: 10.0,
            pen_5mm_pct: 20.0,
            con_pct: 90.0,
            art_pct: 100.0,
            art_defined: true,
            cm_cm: 0.8,
            fps: 30.0,
        };
        report.validate().unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0].split(',').count(),
            lines[1].split(',').count(),
        );

        let mut bad = report.clone();
        bad.con_pct = 120.0;
        assert!(bad.validate().is_err());
        bad.con_pct = f64::NAN;
        assert!(bad.validate().is_err());
    }
}
