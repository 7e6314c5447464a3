//! Procedural two-part objects, trajectory programs, and grasping keypoint
//! tracks: everything needed to manufacture toy training and evaluation
//! scenes from a seed.
//!
//! All parts are convex and the two parts of every family stay at least
//! 2 × `PART_CLEARANCE` apart at every legal articulation, so a keypoint
//! placed a few millimeters outside its own part can never sit inside the
//! other one. That is what makes the generated hands contact-perfect and
//! penetration-free by construction.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    articulation_rotation, axis_angle_from_rotation, rotation_from_axis_angle, write_obj,
    ArticulatedObject, FramePose, Mesh, ObjectTrajectory, PartId,
};
use crate::real::{rmin, Real};
use crate::rng::stage_rng;

use super::scene::{SceneFile, SceneHands, SceneObjectRef, TrajectoryFrame, SCENE_VERSION};

/// Half the minimum gap between the two parts.
const PART_CLEARANCE: f64 = 5e-3;
/// Keeps box- and bar-shaped parts off the hinge axis so articulation never
/// sweeps them through themselves.
const HINGE_MARGIN: f64 = 5e-3;
/// Grasp keypoints sit this far outside their part's surface.
const GRASP_OFFSET: (f64, f64) = (2e-3, 4e-3);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectFamily {
    /// Two thin covers hinged like a book.
    HingedBox,
    /// A can with a narrower twist lid; both parts are prisms on the hinge
    /// axis.
    Cylinder,
    /// Two crossed bars in separate planes, free to scissor.
    Scissors,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// Translate, mostly upward.
    Lift,
    /// Rotate the whole object about a seeded axis.
    Rotate,
    /// Open the hinge.
    Articulate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment<S> {
    pub kind: SegmentKind,
    pub frames: usize,
    /// Meters for lifts, radians otherwise; each scene jitters this ±25%.
    pub amount: S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec<S> {
    pub family: ObjectFamily,
    /// Overall object size range (meters); one value is drawn per scene.
    pub size: (S, S),
    pub program: Vec<Segment<S>>,
    /// Grasp keypoints per hand.
    pub keypoints: usize,
    pub fps: S,
    pub seed: u64,
}

impl<S: Real> SyntheticSpec<S> {
    /// Desk-scale defaults: a 16-frame lift → rotate → open program on a
    /// 10–16 cm object with 8 keypoints per hand.
    pub fn toy(family: ObjectFamily, seed: u64) -> Self {
        SyntheticSpec {
            family,
            size: (S::c(0.10), S::c(0.16)),
            program: vec![
                Segment {
                    kind: SegmentKind::Lift,
                    frames: 5,
                    amount: S::c(0.12),
                },
                Segment {
                    kind: SegmentKind::Rotate,
                    frames: 5,
                    amount: S::c(0.7),
                },
                Segment {
                    kind: SegmentKind::Articulate,
                    frames: 5,
                    amount: S::c(1.2),
                },
            ],
            keypoints: 8,
            fps: S::c(30.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size;
        if !(lo.is_finite() && hi.is_finite() && lo > S::ZERO && hi >= lo) {
            return Err(Error::invalid("size range must satisfy 0 < lo <= hi"));
        }
        if self.program.is_empty() {
            return Err(Error::invalid("trajectory program must not be empty"));
        }
        for seg in &self.program {
            if seg.frames == 0 {
                return Err(Error::invalid("program segments need at least one frame"));
            }
            if !seg.amount.is_finite() {
                return Err(Error::invalid("segment amounts must be finite"));
            }
        }
        if self.keypoints == 0 {
            return Err(Error::invalid("grasps need at least one keypoint"));
        }
        if !(self.fps.is_finite() && self.fps > S::ZERO) {
            return Err(Error::invalid("fps must be finite and > 0"));
        }
        Ok(())
    }
}

/// A generated scene held in memory: the object, its motion, and the
/// ground-truth bimanual keypoint tracks (canonical frame, frames ×
/// keypoints).
#[derive(Clone, Debug)]
pub struct SceneData<S: Real> {
    pub object: ArticulatedObject<S>,
    pub trajectory: ObjectTrajectory<S>,
    pub fps: S,
    pub keypoints: usize,
    pub left: Vec<Vector3<S>>,
    pub right: Vec<Vector3<S>>,
}

impl<S: Real> SceneData<S> {
    pub fn frames(&self) -> usize {
        self.trajectory.len()
    }

    pub fn scene_file(&self, mesh_ref: &str) -> SceneFile<S> {
        let tracks = |t: &[Vector3<S>]| t.iter().map(|p| [p.x, p.y, p.z]).collect();
        SceneFile {
            version: SCENE_VERSION,
            fps: self.fps,
            object: SceneObjectRef {
                mesh: mesh_ref.to_owned(),
                opening_angle: self.object.opening_angle,
            },
            trajectory: self
                .trajectory
                .frames
                .iter()
                .map(|f| TrajectoryFrame {
                    translation: [f.translation.x, f.translation.y, f.translation.z],
                    rotation: [f.rotation.x, f.rotation.y, f.rotation.z],
                    articulation: f.articulation,
                })
                .collect(),
            hands: Some(SceneHands {
                keypoints: self.keypoints,
                left: tracks(&self.left),
                right: tracks(&self.right),
            }),
        }
    }

    /// Write `{stem}.json` and `{stem}.obj` under `dir`; returns the scene
    /// file path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf>
    where
        S: Serialize,
    {
        let mesh_name = format!("{stem}.obj");
        write_obj(&self.object.canonical_mesh, &dir.join(&mesh_name))?;
        let path = dir.join(format!("{stem}.json"));
        self.scene_file(&mesh_name).save(&path)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self>
    where
        S: serde::de::DeserializeOwned,
    {
        let file = SceneFile::<S>::load(path)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let object = file.load_object(dir)?;
        let trajectory = file.trajectory()?;
        let (keypoints, left, right) = match file.hand_tracks() {
            Some((l, r)) => (file.hands.as_ref().unwrap().keypoints, l, r),
            None => (0, Vec::new(), Vec::new()),
        };
        Ok(SceneData {
            object,
            trajectory,
            fps: file.fps,
            keypoints,
            left,
            right,
        })
    }

    pub fn left_frame(&self, i: usize) -> &[Vector3<S>] {
        &self.left[i * self.keypoints..(i + 1) * self.keypoints]
    }

    pub fn right_frame(&self, i: usize) -> &[Vector3<S>] {
        &self.right[i * self.keypoints..(i + 1) * self.keypoints]
    }
}

/// Axis-aligned box subdivided into an n×n grid per face, welded watertight.
fn grid_box<S: Real>(min: Vector3<S>, max: Vector3<S>, n: usize) -> (Vec<Vector3<S>>, Vec<[usize; 3]>) {
    let mut index: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut verts: Vec<Vector3<S>> = Vec::new();
    let mut faces = Vec::new();
    let nf = S::from_count(n);
    for axis in 0..3usize {
        let u = (axis + 1) % 3;
        let v = (axis + 2) % 3;
        for side in [0, n] {
            for a in 0..n {
                for b in 0..n {
                    let corners = [(a, b), (a + 1, b), (a + 1, b + 1), (a, b + 1)];
                    let mut ids = [0usize; 4];
                    for (slot, &(ua, vb)) in ids.iter_mut().zip(&corners) {
                        let mut lat = [0usize; 3];
                        lat[axis] = side;
                        lat[u] = ua;
                        lat[v] = vb;
                        let key = (lat[0], lat[1], lat[2]);
                        *slot = *index.entry(key).or_insert_with(|| {
                            let frac = |i: usize| S::from_count(i) / nf;
                            verts.push(Vector3::new(
                                min.x + (max.x - min.x) * frac(lat[0]),
                                min.y + (max.y - min.y) * frac(lat[1]),
                                min.z + (max.z - min.z) * frac(lat[2]),
                            ));
                            verts.len() - 1
                        });
                    }
                    let [p00, p10, p11, p01] = ids;
                    if side == n {
                        faces.push([p00, p10, p11]);
                        faces.push([p00, p11, p01]);
                    } else {
                        faces.push([p00, p11, p10]);
                        faces.push([p00, p01, p11]);
                    }
                }
            }
        }
    }
    (verts, faces)
}

/// n-gon prism on the z-axis with `rings` wall segments and fan caps.
fn ngon_prism<S: Real>(
    radius: S,
    sides: usize,
    z0: S,
    z1: S,
    rings: usize,
) -> (Vec<Vector3<S>>, Vec<[usize; 3]>) {
    let mut verts = Vec::with_capacity(sides * (rings + 1) + 2);
    for r in 0..=rings {
        let z = z0 + (z1 - z0) * S::from_count(r) / S::from_count(rings);
        for i in 0..sides {
            let phi = S::c(2.0 * std::f64::consts::PI * i as f64 / sides as f64);
            verts.push(Vector3::new(radius * phi.cos(), radius * phi.sin(), z));
        }
    }
    let bottom_center = verts.len();
    verts.push(Vector3::new(S::ZERO, S::ZERO, z0));
    let top_center = verts.len();
    verts.push(Vector3::new(S::ZERO, S::ZERO, z1));

    let at = |r: usize, i: usize| r * sides + i % sides;
    let mut faces = Vec::with_capacity(2 * sides * (rings + 1));
    for r in 0..rings {
        for i in 0..sides {
            let (a, b, c, d) = (at(r, i), at(r, i + 1), at(r + 1, i + 1), at(r + 1, i));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for i in 0..sides {
        faces.push([bottom_center, at(0, i + 1), at(0, i)]);
        faces.push([top_center, at(rings, i), at(rings, i + 1)]);
    }
    (verts, faces)
}

/// Assemble a two-part mesh from per-part geometry.
fn two_part_mesh<S: Real>(
    top: (Vec<Vector3<S>>, Vec<[usize; 3]>),
    bottom: (Vec<Vector3<S>>, Vec<[usize; 3]>),
) -> Result<Mesh<S>> {
    let (tv, tf) = top;
    let (bv, bf) = bottom;
    let offset = tv.len();
    let mut vertices = tv;
    vertices.extend(bv);
    let mut faces = tf;
    faces.extend(bf.into_iter().map(|f| f.map(|i| i + offset)));
    let mut part_ids = vec![PartId::Top; offset];
    part_ids.resize(vertices.len(), PartId::Bottom);
    Mesh::new(vertices, faces, part_ids)
}

/// Build a family at overall size `s`; returns the mesh and opening angle.
fn build_family<S: Real>(family: ObjectFamily, s: S) -> Result<(Mesh<S>, S)> {
    let c = S::c(PART_CLEARANCE);
    let m = S::c(HINGE_MARGIN);
    let half = |x: S| x * S::HALF;
    let opening = S::c(std::f64::consts::FRAC_PI_2);
    let mesh = match family {
        ObjectFamily::HingedBox => {
            // covers flank the xz-plane; the hinge (z-axis) runs along their
            // common edge
            let (l, w, t) = (s, s * S::c(0.6), s * S::c(0.12));
            two_part_mesh(
                grid_box(
                    Vector3::new(m, -c - t, -half(w)),
                    Vector3::new(m + l, -c, half(w)),
                    3,
                ),
                grid_box(
                    Vector3::new(m, c, -half(w)),
                    Vector3::new(m + l, c + t, half(w)),
                    3,
                ),
            )?
        }
        ObjectFamily::Cylinder => {
            // jar: lid radius/height chosen so its area is well under a
            // quarter of the can's
            let r = half(s);
            two_part_mesh(
                ngon_prism(half(r), 12, c, c + s * S::c(0.2), 2),
                ngon_prism(r, 12, -c - s * S::c(0.8), -c, 3),
            )?
        }
        ObjectFamily::Scissors => {
            // crossed bars in separate z-slabs; both cross the hinge axis
            let (w, t) = (s * S::c(0.12), s * S::c(0.1));
            let (x0, x1) = (-s * S::c(0.35), s * S::c(0.65));
            two_part_mesh(
                grid_box(
                    Vector3::new(x0, -half(w), c),
                    Vector3::new(x1, half(w), c + t),
                    3,
                ),
                grid_box(
                    Vector3::new(x0, -half(w), -c - t),
                    Vector3::new(x1, half(w), -c),
                    3,
                ),
            )?
        }
    };
    Ok((mesh, opening))
}

fn ease<S: Real>(f: S) -> S {
    (S::ONE - (S::c(std::f64::consts::PI) * f).cos()) * S::HALF
}

fn random_unit<S: Real>(rng: &mut ChaCha8Rng) -> Vector3<S> {
    loop {
        let v = Vector3::new(
            S::c(rng.sample::<f64, _>(rand_distr::StandardNormal)),
            S::c(rng.sample::<f64, _>(rand_distr::StandardNormal)),
            S::c(rng.sample::<f64, _>(rand_distr::StandardNormal)),
        );
        let n = v.norm();
        if n > S::c(1e-3) {
            return v / n;
        }
    }
}

fn expand_program<S: Real>(
    spec: &SyntheticSpec<S>,
    opening: S,
    rng: &mut ChaCha8Rng,
) -> Result<ObjectTrajectory<S>> {
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| S::c(rng.gen_range(lo..=hi));
    let translation0 = Vector3::new(
        uniform(rng, -0.15, 0.15),
        uniform(rng, -0.15, 0.15),
        uniform(rng, 0.6, 0.9),
    );
    let rotation0 = random_unit::<S>(rng) * uniform(rng, 0.0, 0.4);

    let mut translation = translation0;
    let mut rotation = rotation_from_axis_angle(&rotation0);
    let mut articulation = S::ZERO;
    let mut frames = vec![FramePose {
        rotation: rotation0,
        translation,
        articulation,
    }];

    for seg in &spec.program {
        let amount = seg.amount * uniform(rng, 0.75, 1.25);
        let base_translation = translation;
        let base_rotation = rotation;
        let base_articulation = articulation;
        let lift_dir = (Vector3::new(S::ZERO, S::ZERO, S::ONE)
            + random_unit::<S>(rng) * S::c(0.3))
        .normalize();
        let spin_axis = random_unit::<S>(rng);
        for f in 1..=seg.frames {
            let w = ease(S::from_count(f) / S::from_count(seg.frames));
            match seg.kind {
                SegmentKind::Lift => translation = base_translation + lift_dir * (amount * w),
                SegmentKind::Rotate => {
                    rotation = rotation_from_axis_angle(&(spin_axis * (amount * w))) * base_rotation
                }
                SegmentKind::Articulate => {
                    articulation = (base_articulation + amount * w).clamp(S::ZERO, opening)
                }
            }
            frames.push(FramePose {
                rotation: axis_angle_from_rotation(&rotation),
                translation,
                articulation,
            });
        }
    }
    ObjectTrajectory::new(frames)
}

/// Greedy farthest-point subset of `verts`, seeded by one random pick.
fn farthest_points<S: Real>(
    verts: &[Vector3<S>],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let first = rng.gen_range(0..verts.len());
    let mut chosen = vec![first];
    let mut dist: Vec<S> = verts
        .iter()
        .map(|v| (v - verts[first]).norm_squared())
        .collect();
    while chosen.len() < count {
        let mut best = 0;
        for i in 1..dist.len() {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        chosen.push(best);
        for (d, v) in dist.iter_mut().zip(verts) {
            *d = rmin(*d, (v - verts[best]).norm_squared());
        }
    }
    chosen
}

/// Keypoints offset a few millimeters outside a part's surface vertices.
/// Parts are convex, so stepping away from the centroid exits the part; the
/// inter-part clearance exceeds the largest offset, so the other part is
/// never entered either.
fn grasp_base<S: Real>(
    verts: &[Vector3<S>],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vector3<S>>> {
    if verts.len() < count {
        return Err(Error::invalid(format!(
            "part has {} vertices, fewer than the {count} grasp keypoints",
            verts.len()
        )));
    }
    let centroid = verts.iter().sum::<Vector3<S>>() / S::from_count(verts.len());
    Ok(farthest_points(verts, count, rng)
        .into_iter()
        .map(|i| {
            let dir = (verts[i] - centroid).normalize();
            verts[i] + dir * S::c(rng.gen_range(GRASP_OFFSET.0..=GRASP_OFFSET.1))
        })
        .collect())
}

/// Deterministic scene synthesis: object, trajectory, and a bimanual grasp
/// whose left hand holds the bottom part and right hand tracks the top.
pub fn gen_synthetic<S: Real>(spec: &SyntheticSpec<S>) -> Result<SceneData<S>> {
    spec.validate()?;
    let mut rng = stage_rng(spec.seed, "synthetic-scene");
    let size = S::c(rng.gen_range(0.0..=1.0)) * (spec.size.1 - spec.size.0) + spec.size.0;
    let (mesh, opening) = build_family(spec.family, size)?;
    let object = ArticulatedObject::new(mesh, opening)?;
    let trajectory = expand_program(spec, opening, &mut rng)?;

    let bottom_base = grasp_base(
        &object.canonical_mesh.part_vertices(PartId::Bottom),
        spec.keypoints,
        &mut rng,
    )?;
    let top_base = grasp_base(
        &object.canonical_mesh.part_vertices(PartId::Top),
        spec.keypoints,
        &mut rng,
    )?;

    let frames = trajectory.len();
    let mut left = Vec::with_capacity(frames * spec.keypoints);
    let mut right = Vec::with_capacity(frames * spec.keypoints);
    for frame in &trajectory.frames {
        let rot = articulation_rotation(frame.articulation);
        left.extend_from_slice(&bottom_base);
        right.extend(top_base.iter().map(|p| rot * p));
    }

    Ok(SceneData {
        object,
        trajectory,
        fps: spec.fps,
        keypoints: spec.keypoints,
        left,
        right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{point_inside_mesh, ObjectQueries};

    const FAMILIES: [ObjectFamily; 3] = [
        ObjectFamily::HingedBox,
        ObjectFamily::Cylinder,
        ObjectFamily::Scissors,
    ];

    #[test]
    fn same_seed_reproduces_the_scene_bitwise() {
        let spec = SyntheticSpec::<f64>::toy(ObjectFamily::HingedBox, 11);
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a.object.canonical_mesh.vertices, b.object.canonical_mesh.vertices);
        assert_eq!(a.object.canonical_mesh.faces, b.object.canonical_mesh.faces);
        assert_eq!(a.trajectory.frames, b.trajectory.frames);
        assert_eq!(a.left, b.left);
        assert_eq!(a.right, b.right);

        let other = gen_synthetic(&SyntheticSpec::toy(ObjectFamily::HingedBox, 12)).unwrap();
        assert_ne!(a.trajectory.frames, other.trajectory.frames);
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut spec = SyntheticSpec::<f64>::toy(ObjectFamily::Cylinder, 0);
        spec.size = (0.0, 0.0);
        assert!(gen_synthetic(&spec).is_err());

        let mut spec = SyntheticSpec::<f64>::toy(ObjectFamily::Cylinder, 0);
        spec.program.clear();
        assert!(gen_synthetic(&spec).is_err());

        let mut spec = SyntheticSpec::<f64>::toy(ObjectFamily::Cylinder, 0);
        spec.keypoints = 0;
        assert!(gen_synthetic(&spec).is_err());
    }

    #[test]
    fn families_build_watertight_disjoint_parts() {
        for (i, family) in FAMILIES.into_iter().enumerate() {
            let scene = gen_synthetic(&SyntheticSpec::<f64>::toy(family, 100 + i as u64)).unwrap();
            let obj = &scene.object;
            // watertightness of both parts is checked on construction
            ObjectQueries::new(obj).unwrap();

            let submesh = |part| {
                let (v, f, _) = obj.canonical_mesh.part_submesh(part);
                let n = v.len();
                Mesh::new(v, f, vec![part; n]).unwrap()
            };
            let top = submesh(PartId::Top);
            let bottom = submesh(PartId::Bottom);
            for step in 0..=2 {
                let a = obj.opening_angle * step as f64 / 2.0;
                let rot = articulation_rotation(a);
                for v in &top.vertices {
                    assert!(!point_inside_mesh(&bottom, &(rot * v)).unwrap());
                }
                for v in &bottom.vertices {
                    let back = rot.transpose() * v;
                    assert!(!point_inside_mesh(&top, &back).unwrap());
                }
            }
        }
    }

    #[test]
    fn program_shapes_the_trajectory() {
        let spec = SyntheticSpec::<f64>::toy(ObjectFamily::Scissors, 3);
        let scene = gen_synthetic(&spec).unwrap();
        let frames = &scene.trajectory.frames;
        assert_eq!(frames.len(), 16);
        // lift raises z, later segments leave translation alone
        assert!(frames[5].translation.z > frames[0].translation.z + 0.05);
        assert_eq!(frames[15].translation, frames[5].translation);
        // articulation only moves during the final segment and stays legal
        assert_eq!(frames[10].articulation, 0.0);
        assert!(frames[15].articulation > 0.5);
        assert!(frames[15].articulation <= scene.object.opening_angle);
        // keypoint layout matches the frame count
        assert_eq!(scene.left.len(), 16 * spec.keypoints);
        assert_eq!(scene.right.len(), 16 * spec.keypoints);
    }

    #[test]
    fn scene_save_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let scene = gen_synthetic(&SyntheticSpec::<f64>::toy(ObjectFamily::Cylinder, 9)).unwrap();
        let path = scene.save(dir.path(), "scene").unwrap();
        let back = SceneData::<f64>::load(&path).unwrap();
        assert_eq!(back.object.canonical_mesh.vertices, scene.object.canonical_mesh.vertices);
        assert_eq!(back.object.canonical_mesh.part_ids, scene.object.canonical_mesh.part_ids);
        assert_eq!(back.trajectory.frames, scene.trajectory.frames);
        assert_eq!(back.left, scene.left);
        assert_eq!(back.right, scene.right);
        assert_eq!(back.fps, scene.fps);
    }
}
