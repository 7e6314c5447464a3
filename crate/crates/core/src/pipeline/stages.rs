//! Row encodings shared by training and sampling, plus the two-stage
//! train/sample wrappers.
//!
//! Per-frame row layouts (scalars):
//!
//! | row     | layout                          | width            |
//! |---------|---------------------------------|------------------|
//! | contact | `[C_left \| C_right]`           | `6 * anchors`    |
//! | motion  | `[H_L \| D_L \| H_R \| D_R]`    | `12 * keypoints` |
//! | object  | `[o \| g]`                      | `3 * anchors + 6`|
//!
//! Sample rows (contact, motion) are standardized per model; conditioning
//! rows (object, and contact when it conditions motion) stay raw.

use nalgebra::Vector3;

use crate::contact::{gt_contact, ContactMap};
use crate::diffusion::mlp::{
    train_denoiser, MlpConfig, TinyMlpDenoiser, TrainConfig, TrainExample, TrainReport,
};
use crate::diffusion::{sample, Conditioning, ContactGuide, GuidanceConfig, HandChannels, Standardizer};
use crate::error::{Error, Result};
use crate::features::{
    global_states, part_agnostic_bps, part_bps, sample_basis_points,
    sample_basis_points_with_radius, unnormalized_bps, BasisPointSet, BpsVariant, GlobalStates,
    ObjectScale, PartBpsFeatures,
};
use crate::geometry::articulate;
use crate::hand::{direction_vectors, HandMotion};
use crate::real::Real;

use super::checkpoint::{Checkpoint, CheckpointMeta, ModelKind, ScheduleSpec};
use super::synthetic::SceneData;

pub fn contact_row_dim(anchors: usize) -> usize {
    6 * anchors
}

pub fn motion_row_dim(keypoints: usize) -> usize {
    12 * keypoints
}

pub fn object_row_dim(anchors: usize) -> usize {
    3 * anchors + 6
}

/// Keypoint channels of the left hand inside a motion row.
pub fn left_channels(keypoints: usize) -> HandChannels {
    HandChannels {
        offset: 0,
        keypoints,
    }
}

/// Keypoint channels of the right hand inside a motion row.
pub fn right_channels(keypoints: usize) -> HandChannels {
    HandChannels {
        offset: 6 * keypoints,
        keypoints,
    }
}

fn push_points<S: Real>(row: &mut Vec<S>, points: &[Vector3<S>]) {
    for p in points {
        row.extend_from_slice(&[p.x, p.y, p.z]);
    }
}

fn read_points<S: Real>(flat: &[S]) -> Vec<Vector3<S>> {
    flat.chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

pub fn encode_contact_rows<S: Real>(
    left: &ContactMap<S>,
    right: &ContactMap<S>,
) -> Result<Vec<S>> {
    if left.frames != right.frames || left.anchors != right.anchors {
        return Err(Error::ShapeMismatch(
            "left/right contact maps must share their shape".into(),
        ));
    }
    let mut rows = Vec::with_capacity(left.frames * contact_row_dim(left.anchors));
    for f in 0..left.frames {
        push_points(&mut rows, left.frame(f));
        push_points(&mut rows, right.frame(f));
    }
    Ok(rows)
}

pub fn decode_contact_rows<S: Real>(
    rows: &[S],
    frames: usize,
    anchors: usize,
) -> Result<(ContactMap<S>, ContactMap<S>)> {
    let dim = contact_row_dim(anchors);
    if frames == 0 || anchors == 0 || rows.len() != frames * dim {
        return Err(Error::ShapeMismatch(format!(
            "expected {frames} contact rows of width {dim}, got {} scalars",
            rows.len()
        )));
    }
    let mut left = Vec::with_capacity(frames * anchors);
    let mut right = Vec::with_capacity(frames * anchors);
    for row in rows.chunks_exact(dim) {
        left.extend(read_points(&row[..dim / 2]));
        right.extend(read_points(&row[dim / 2..]));
    }
    let map = |c| ContactMap {
        frames,
        anchors,
        c,
    };
    Ok((map(left), map(right)))
}

pub fn encode_motion_rows<S: Real>(
    left: &HandMotion<S>,
    right: &HandMotion<S>,
) -> Result<Vec<S>> {
    if left.frames != right.frames || left.keypoints != right.keypoints {
        return Err(Error::ShapeMismatch(
            "left/right hand motion must share their shape".into(),
        ));
    }
    left.validate()?;
    right.validate()?;
    let mut rows = Vec::with_capacity(left.frames * motion_row_dim(left.keypoints));
    for f in 0..left.frames {
        push_points(&mut rows, left.h_frame(f));
        push_points(&mut rows, left.d_frame(f));
        push_points(&mut rows, right.h_frame(f));
        push_points(&mut rows, right.d_frame(f));
    }
    Ok(rows)
}

pub fn decode_motion_rows<S: Real>(
    rows: &[S],
    frames: usize,
    keypoints: usize,
) -> Result<(HandMotion<S>, HandMotion<S>)> {
    let dim = motion_row_dim(keypoints);
    if frames == 0 || keypoints == 0 || rows.len() != frames * dim {
        return Err(Error::ShapeMismatch(format!(
            "expected {frames} motion rows of width {dim}, got {} scalars",
            rows.len()
        )));
    }
    let mut left = HandMotion::zeros(frames, keypoints);
    let mut right = HandMotion::zeros(frames, keypoints);
    let span = 3 * keypoints;
    for (f, row) in rows.chunks_exact(dim).enumerate() {
        let at = f * keypoints;
        left.h[at..at + keypoints].copy_from_slice(&read_points(&row[..span]));
        left.d[at..at + keypoints].copy_from_slice(&read_points(&row[span..2 * span]));
        right.h[at..at + keypoints].copy_from_slice(&read_points(&row[2 * span..3 * span]));
        right.d[at..at + keypoints].copy_from_slice(&read_points(&row[3 * span..]));
    }
    Ok((left, right))
}

/// Object conditioning rows: the per-frame feature block followed by the
/// global state.
pub fn object_rows<S: Real>(
    features: &PartBpsFeatures<S>,
    states: &GlobalStates<S>,
) -> Result<Vec<S>> {
    if features.frames != states.g.len() {
        return Err(Error::ShapeMismatch(
            "feature and global-state frame counts differ".into(),
        ));
    }
    let mut rows = Vec::with_capacity(features.frames * object_row_dim(features.anchors));
    for f in 0..features.frames {
        push_points(&mut rows, features.frame(f));
        rows.extend_from_slice(&states.g[f]);
    }
    Ok(rows)
}

/// Basis sized for a variant's anchor budget: the part-split encoding reuses
/// one basis per part, the others spend twice the points.
pub fn variant_basis<S: Real>(variant: BpsVariant, k: usize, seed: u64) -> Result<BasisPointSet<S>> {
    match variant {
        BpsVariant::NpBps => sample_basis_points(k, seed),
        BpsVariant::NpaBps => sample_basis_points(2 * k, seed),
        BpsVariant::UBps => sample_basis_points_with_radius(2 * k, 0.5, seed),
    }
}

pub fn scene_features<S: Real>(
    scene: &SceneData<S>,
    variant: BpsVariant,
    basis: &BasisPointSet<S>,
    scale: &ObjectScale<S>,
) -> Result<PartBpsFeatures<S>> {
    match variant {
        BpsVariant::NpBps => part_bps(&scene.trajectory, &scene.object, basis, scale),
        BpsVariant::NpaBps => part_agnostic_bps(&scene.trajectory, &scene.object, basis, scale),
        BpsVariant::UBps => unnormalized_bps(&scene.trajectory, &scene.object, basis),
    }
}

/// Per-frame anchor positions in canonical meters, one list per frame.
pub fn anchor_positions<S: Real>(
    features: &PartBpsFeatures<S>,
    basis: &BasisPointSet<S>,
) -> Vec<Vec<Vector3<S>>> {
    let anchor_base = features.anchor_basis(basis);
    (0..features.frames)
        .map(|f| features.anchors_meters(&anchor_base, f))
        .collect()
}

/// Ground-truth per-hand contact maps over the feature anchors.
pub fn gt_contact_maps<S: Real>(
    scene: &SceneData<S>,
    anchors: &[Vec<Vector3<S>>],
) -> Result<(ContactMap<S>, ContactMap<S>)> {
    let frames = scene.frames();
    if anchors.len() != frames {
        return Err(Error::ShapeMismatch(
            "anchor frames do not match the scene".into(),
        ));
    }
    let anchor_refs: Vec<&[Vector3<S>]> = anchors.iter().map(|a| a.as_slice()).collect();
    let left_refs: Vec<&[Vector3<S>]> = (0..frames).map(|f| scene.left_frame(f)).collect();
    let right_refs: Vec<&[Vector3<S>]> = (0..frames).map(|f| scene.right_frame(f)).collect();
    Ok((
        gt_contact(&left_refs, &anchor_refs)?,
        gt_contact(&right_refs, &anchor_refs)?,
    ))
}

/// Ground-truth keypoint/direction channels from a scene's tracked hands.
pub fn gt_hand_motion<S: Real>(scene: &SceneData<S>) -> Result<(HandMotion<S>, HandMotion<S>)> {
    let frames = scene.frames();
    let j = scene.keypoints;
    if j == 0 {
        return Err(Error::invalid("scene carries no hand tracks"));
    }
    let mut left = HandMotion::zeros(frames, j);
    let mut right = HandMotion::zeros(frames, j);
    for f in 0..frames {
        let verts = articulate(&scene.object, scene.trajectory.frames[f].articulation);
        for (motion, track) in [(&mut left, scene.left_frame(f)), (&mut right, scene.right_frame(f))] {
            let at = f * j;
            motion.h[at..at + j].copy_from_slice(track);
            motion.d[at..at + j].copy_from_slice(&direction_vectors(track, &verts)?);
        }
    }
    Ok((left, right))
}

/// One scene turned into aligned per-frame rows, ready for either stage.
#[derive(Clone, Debug)]
pub struct EncodedScene<S> {
    pub frames: usize,
    pub object_rows: Vec<S>,
    pub contact_rows: Vec<S>,
    pub motion_rows: Vec<S>,
}

pub fn encode_scene<S: Real>(
    scene: &SceneData<S>,
    variant: BpsVariant,
    basis: &BasisPointSet<S>,
    scale: &ObjectScale<S>,
) -> Result<EncodedScene<S>> {
    let features = scene_features(scene, variant, basis, scale)?;
    let states = global_states(&scene.trajectory);
    let anchors = anchor_positions(&features, basis);
    let (contact_left, contact_right) = gt_contact_maps(scene, &anchors)?;
    let (motion_left, motion_right) = gt_hand_motion(scene)?;
    Ok(EncodedScene {
        frames: scene.frames(),
        object_rows: object_rows(&features, &states)?,
        contact_rows: encode_contact_rows(&contact_left, &contact_right)?,
        motion_rows: encode_motion_rows(&motion_left, &motion_right)?,
    })
}

/// Anchor count (both parts) and keypoints per hand the rows were built with.
#[derive(Clone, Copy, Debug)]
pub struct StageDims {
    pub anchors: usize,
    pub keypoints: usize,
}

/// Train one stage on encoded scenes; returns checkpoint meta (standardizer
/// included) alongside the report whose `ema` weights the meta describes.
pub fn train_stage<S: Real>(
    kind: ModelKind,
    scenes: &[EncodedScene<S>],
    dims: StageDims,
    hidden: usize,
    schedule: ScheduleSpec,
    train: &TrainConfig<S>,
) -> Result<(CheckpointMeta, TrainReport<S>)> {
    if scenes.is_empty() {
        return Err(Error::invalid("training needs at least one scene"));
    }
    fn stage_rows<S>(kind: ModelKind, s: &EncodedScene<S>) -> &[S] {
        match kind {
            ModelKind::Contact => &s.contact_rows,
            ModelKind::Motion => &s.motion_rows,
        }
    }
    let (sample_dim, contact_dim) = match kind {
        ModelKind::Contact => (contact_row_dim(dims.anchors), 0),
        ModelKind::Motion => (motion_row_dim(dims.keypoints), contact_row_dim(dims.anchors)),
    };
    let object_dim = object_row_dim(dims.anchors);

    let mut all_rows = Vec::new();
    for s in scenes {
        all_rows.extend_from_slice(stage_rows(kind, s));
    }
    let scaler = Standardizer::fit(&all_rows, sample_dim)?;

    let data: Vec<TrainExample<S>> = scenes
        .iter()
        .map(|s| {
            let mut x0 = stage_rows(kind, s).to_vec();
            scaler.standardize(&mut x0);
            TrainExample {
                x0,
                object: s.object_rows.clone(),
                contact: match kind {
                    ModelKind::Contact => Vec::new(),
                    ModelKind::Motion => s.contact_rows.clone(),
                },
            }
        })
        .collect();

    let config = MlpConfig {
        hidden,
        ..MlpConfig::new(sample_dim, object_dim, contact_dim, train.seed)
    };
    let mut model = TinyMlpDenoiser::new(config)?;
    let built = schedule.build()?;
    let report = train_denoiser(&mut model, &data, &built, train)?;

    let meta = CheckpointMeta {
        kind,
        config,
        schedule,
        mean: scaler.mean.iter().map(|m| m.to64()).collect(),
        std: scaler.std.iter().map(|s| s.to64()).collect(),
        anchors: dims.anchors,
        keypoints: match kind {
            ModelKind::Contact => 0,
            ModelKind::Motion => dims.keypoints,
        },
    };
    Ok((meta, report))
}

fn expect_rows<S: Real>(
    ckpt: &Checkpoint<S>,
    kind: ModelKind,
    object_rows: &[S],
    frames: usize,
) -> Result<()> {
    if ckpt.meta.kind != kind {
        return Err(Error::invalid(format!(
            "checkpoint holds a {:?} model, this stage needs {kind:?}",
            ckpt.meta.kind
        )));
    }
    let object_dim = object_row_dim(ckpt.meta.anchors);
    if frames == 0 || object_rows.len() != frames * object_dim {
        return Err(Error::ShapeMismatch(format!(
            "expected {frames} object rows of width {object_dim}, got {} scalars",
            object_rows.len()
        )));
    }
    Ok(())
}

/// Denoise one per-hand contact map pair conditioned on the object rows.
pub fn sample_contact_stage<S: Real>(
    ckpt: &Checkpoint<S>,
    object_rows: &[S],
    frames: usize,
    seed: u64,
) -> Result<(ContactMap<S>, ContactMap<S>)> {
    expect_rows(ckpt, ModelKind::Contact, object_rows, frames)?;
    let cond = Conditioning {
        object: object_rows,
        contact: None,
    };
    let guidance = GuidanceConfig {
        lambda_f: S::ZERO,
        p_f: S::ZERO,
    };
    let mut rows = sample(
        &ckpt.model,
        &ckpt.schedule,
        frames,
        &cond,
        &guidance,
        &[],
        seed,
    )?;
    ckpt.scaler.destandardize(&mut rows);
    decode_contact_rows(&rows, frames, ckpt.meta.anchors)
}

/// Denoise bimanual hand motion, optionally conditioned on contact maps and
/// steered by one guidance correction per hand.
pub fn sample_motion_stage<S: Real>(
    ckpt: &Checkpoint<S>,
    object_rows: &[S],
    contact: Option<(&ContactMap<S>, &ContactMap<S>)>,
    anchors: &[Vec<Vector3<S>>],
    frames: usize,
    guidance: &GuidanceConfig<S>,
    guide: bool,
    seed: u64,
) -> Result<(HandMotion<S>, HandMotion<S>)> {
    expect_rows(ckpt, ModelKind::Motion, object_rows, frames)?;
    let j = ckpt.meta.keypoints;
    let contact_rows = match contact {
        Some((left, right)) => Some(encode_contact_rows(left, right)?),
        None => None,
    };
    if let Some(rows) = &contact_rows {
        if rows.len() != frames * ckpt.meta.config.contact_dim {
            return Err(Error::ShapeMismatch(
                "contact maps do not match the model's conditioning width".into(),
            ));
        }
    }
    let cond = Conditioning {
        object: object_rows,
        contact: contact_rows.as_deref(),
    };
    let mut guides = Vec::new();
    if guide {
        if let Some((left, right)) = contact {
            if anchors.len() != frames {
                return Err(Error::ShapeMismatch(
                    "guidance anchors must cover every frame".into(),
                ));
            }
            for (reference, channels) in [(left, left_channels(j)), (right, right_channels(j))] {
                guides.push(ContactGuide {
                    reference,
                    anchors,
                    channels,
                    scaler: Some(&ckpt.scaler),
                });
            }
        }
    }
    let mut rows = sample(
        &ckpt.model,
        &ckpt.schedule,
        frames,
        &cond,
        guidance,
        &guides,
        seed,
    )?;
    ckpt.scaler.destandardize(&mut rows);
    decode_motion_rows(&rows, frames, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_scale;
    use crate::pipeline::synthetic::{gen_synthetic, ObjectFamily, SyntheticSpec};

    fn toy_scene() -> SceneData<f64> {
        gen_synthetic(&SyntheticSpec::toy(ObjectFamily::HingedBox, 5)).unwrap()
    }

    #[test]
    fn row_codecs_round_trip() {
        let scene = toy_scene();
        let anchors = vec![vec![Vector3::new(0.0, 0.0, 0.5); 6]; scene.frames()];
        let (cl, cr) = gt_contact_maps(&scene, &anchors).unwrap();
        let rows = encode_contact_rows(&cl, &cr).unwrap();
        assert_eq!(rows.len(), scene.frames() * contact_row_dim(6));
        let (bl, br) = decode_contact_rows(&rows, scene.frames(), 6).unwrap();
        assert_eq!(bl.c, cl.c);
        assert_eq!(br.c, cr.c);

        let (ml, mr) = gt_hand_motion(&scene).unwrap();
        let rows = encode_motion_rows(&ml, &mr).unwrap();
        assert_eq!(rows.len(), scene.frames() * motion_row_dim(scene.keypoints));
        let (bl, br) = decode_motion_rows(&rows, scene.frames(), scene.keypoints).unwrap();
        assert_eq!(bl.h, ml.h);
        assert_eq!(bl.d, ml.d);
        assert_eq!(br.h, mr.h);
        assert_eq!(br.d, mr.d);

        assert!(decode_motion_rows(&rows[1..], scene.frames(), scene.keypoints).is_err());
    }

    #[test]
    fn encoded_scene_dimensions_are_consistent() {
        let scene = toy_scene();
        for variant in [BpsVariant::NpBps, BpsVariant::NpaBps, BpsVariant::UBps] {
            let basis = variant_basis::<f64>(variant, 4, 7).unwrap();
            let scale = compute_scale(&scene.object, 0.15).unwrap();
            let enc = encode_scene(&scene, variant, &basis, &scale).unwrap();
            let anchors = 8; // both parts, every variant
            assert_eq!(enc.frames, scene.frames());
            assert_eq!(enc.object_rows.len(), enc.frames * object_row_dim(anchors));
            assert_eq!(enc.contact_rows.len(), enc.frames * contact_row_dim(anchors));
            assert_eq!(enc.motion_rows.len(), enc.frames * motion_row_dim(scene.keypoints));
            assert!(enc.object_rows.iter().all(|v| v.is_finite()));
            assert!(enc.contact_rows.iter().all(|v| v.is_finite()));
            assert!(enc.motion_rows.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn direction_channels_point_at_the_object() {
        let scene = toy_scene();
        let (left, right) = gt_hand_motion(&scene).unwrap();
        // grasps hover a few millimeters off the surface, so directions are
        // short but nonzero
        for d in left.d.iter().chain(&right.d) {
            let n = d.norm();
            assert!(n > 0.0 && n < 0.05, "direction norm {n}");
        }
    }

    #[test]
    fn stages_train_and_sample_with_consistent_shapes() {
        let scene = toy_scene();
        let variant = BpsVariant::NpBps;
        let basis = variant_basis::<f64>(variant, 2, 3).unwrap();
        let scale = compute_scale(&scene.object, 0.15).unwrap();
        let enc = encode_scene(&scene, variant, &basis, &scale).unwrap();
        let dims = StageDims {
            anchors: 4,
            keypoints: scene.keypoints,
        };
        let train = TrainConfig {
            steps: 20,
            batch: 4,
            lr: 1e-3,
            p_f: 0.5,
            ema_decay: 0.9,
            seed: 11,
        };
        let schedule = ScheduleSpec {
            steps: 6,
            ..ScheduleSpec::default()
        };

        let scenes = vec![enc.clone()];
        let (meta_c, report_c) =
            train_stage(ModelKind::Contact, &scenes, dims, 16, schedule, &train).unwrap();
        assert_eq!(report_c.losses.len(), train.steps);
        let ckpt_c = Checkpoint {
            schedule: meta_c.schedule.build().unwrap(),
            scaler: Standardizer {
                mean: meta_c.mean.clone(),
                std: meta_c.std.clone(),
            },
            model: report_c.ema,
            meta: meta_c,
        };
        let (cl, cr) =
            sample_contact_stage(&ckpt_c, &enc.object_rows, enc.frames, 99).unwrap();
        assert_eq!(cl.frames, enc.frames);
        assert_eq!(cr.anchors, dims.anchors);

        let (meta_m, report_m) =
            train_stage(ModelKind::Motion, &scenes, dims, 16, schedule, &train).unwrap();
        let ckpt_m = Checkpoint {
            schedule: meta_m.schedule.build().unwrap(),
            scaler: Standardizer {
                mean: meta_m.mean.clone(),
                std: meta_m.std.clone(),
            },
            model: report_m.ema,
            meta: meta_m,
        };
        let features = scene_features(&scene, variant, &basis, &scale).unwrap();
        let anchors = anchor_positions(&features, &basis);
        let guidance = GuidanceConfig { lambda_f: 0.5, p_f: 0.5 };
        let (ml, mr) = sample_motion_stage(
            &ckpt_m,
            &enc.object_rows,
            Some((&cl, &cr)),
            &anchors,
            enc.frames,
            &guidance,
            true,
            123,
        )
        .unwrap();
        assert_eq!(ml.frames, enc.frames);
        assert_eq!(mr.keypoints, scene.keypoints);
        assert!(ml.h.iter().all(|p| p.iter().all(|c| c.is_finite())));

        // same seed reproduces the draw bitwise; the unconditioned path works
        let (ml2, _) = sample_motion_stage(
            &ckpt_m,
            &enc.object_rows,
            Some((&cl, &cr)),
            &anchors,
            enc.frames,
            &guidance,
            true,
            123,
        )
        .unwrap();
        assert_eq!(ml.h, ml2.h);
        let (ml3, _) = sample_motion_stage(
            &ckpt_m,
            &enc.object_rows,
            None,
            &[],
            enc.frames,
            &guidance,
            false,
            123,
        )
        .unwrap();
        assert_ne!(ml.h, ml3.h);

        // kind mixups are caught
        assert!(sample_contact_stage(&ckpt_m, &enc.object_rows, enc.frames, 1).is_err());
    }
}
