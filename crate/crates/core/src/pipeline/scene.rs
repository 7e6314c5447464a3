//! Scene descriptor: a JSON file carrying the object reference, the object
//! trajectory, and (for training data) ground-truth hand keypoint tracks.
//!
//! Numbers are serialized as native f64, which round-trips bit-exactly
//! through JSON; the mesh itself lives in a sibling OBJ file referenced by
//! relative path.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{read_obj, ArticulatedObject, FramePose, ObjectTrajectory};
use crate::real::Real;

use super::atomic_write;

pub const SCENE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile<S> {
    pub version: u32,
    pub fps: S,
    pub object: SceneObjectRef<S>,
    /// One entry per frame.
    pub trajectory: Vec<TrajectoryFrame<S>>,
    /// Ground-truth bimanual keypoint tracks (present in training scenes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hands: Option<SceneHands<S>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObjectRef<S> {
    /// OBJ path relative to the scene file's directory; part labels ride on
    /// the OBJ face groups.
    pub mesh: String,
    pub opening_angle: S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFrame<S> {
    pub translation: [S; 3],
    /// Axis-angle global rotation.
    pub rotation: [S; 3],
    /// Hinge angle, radians.
    pub articulation: S,
}

/// frames × keypoints tracks in the canonical object frame, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneHands<S> {
    pub keypoints: usize,
    pub left: Vec<[S; 3]>,
    pub right: Vec<[S; 3]>,
}

impl<S: Real> SceneFile<S> {
    pub fn frames(&self) -> usize {
        self.trajectory.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENE_VERSION {
            return Err(Error::invalid(format!(
                "scene version {} unsupported (expected {SCENE_VERSION})",
                self.version
            )));
        }
        if !(self.fps.is_finite() && self.fps > S::ZERO) {
            return Err(Error::invalid("fps must be finite and > 0"));
        }
        if !self.object.opening_angle.is_finite() {
            return Err(Error::invalid("opening angle must be finite"));
        }
        if self.trajectory.is_empty() {
            return Err(Error::invalid("scene needs at least one frame"));
        }
        let finite3 = |v: &[S; 3]| v.iter().all(|x| x.is_finite());
        for (i, f) in self.trajectory.iter().enumerate() {
            if !(finite3(&f.translation) && finite3(&f.rotation) && f.articulation.is_finite()) {
                return Err(Error::invalid(format!("non-finite trajectory frame {i}")));
            }
        }
        if let Some(hands) = &self.hands {
            let want = self.frames() * hands.keypoints;
            if hands.keypoints == 0 {
                return Err(Error::invalid("hand tracks need at least one keypoint"));
            }
            if hands.left.len() != want || hands.right.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "hand tracks must be frames × keypoints = {want}, got left {} right {}",
                    hands.left.len(),
                    hands.right.len()
                )));
            }
            if !hands.left.iter().chain(&hands.right).all(finite3) {
                return Err(Error::invalid("hand tracks must be finite"));
            }
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Result<ObjectTrajectory<S>> {
        ObjectTrajectory::new(
            self.trajectory
                .iter()
                .map(|f| FramePose {
                    rotation: Vector3::new(f.rotation[0], f.rotation[1], f.rotation[2]),
                    translation: Vector3::new(
                        f.translation[0],
                        f.translation[1],
                        f.translation[2],
                    ),
                    articulation: f.articulation,
                })
                .collect(),
        )
    }

    /// Keypoint tracks as (left, right) point lists, frames × keypoints.
    pub fn hand_tracks(&self) -> Option<(Vec<Vector3<S>>, Vec<Vector3<S>>)> {
        self.hands.as_ref().map(|h| {
            let lift = |t: &[[S; 3]]| {
                t.iter()
                    .map(|p| Vector3::new(p[0], p[1], p[2]))
                    .collect::<Vec<_>>()
            };
            (lift(&h.left), lift(&h.right))
        })
    }

    /// Read the referenced OBJ (relative to `scene_dir`) into an articulated
    /// object.
    pub fn load_object(&self, scene_dir: &Path) -> Result<ArticulatedObject<S>> {
        let mesh = read_obj(&scene_dir.join(&self.object.mesh))?;
        ArticulatedObject::new(mesh, self.object.opening_angle)
    }

    pub fn save(&self, path: &Path) -> Result<()>
    where
        S: Serialize,
    {
        self.validate()?;
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self>
    where
        S: DeserializeOwned,
    {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let scene: SceneFile<S> = serde_json::from_slice(&bytes)?;
        scene.validate()?;
        Ok(scene)
    }
}
