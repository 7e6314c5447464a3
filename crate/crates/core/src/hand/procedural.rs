//! Procedurally generated default hand: 16 joints (wrist + 3 per finger),
//! tube-and-slab point-cloud surface, smooth distance-based skinning,
//! 10 shape offsets, farthest-point keypoints. Everything is built from
//! fixed geometry, so two calls are bit-identical; no RNG is involved.

use nalgebra::Vector3;

use crate::real::Real;

use super::{HandModel, Side, JOINT_COUNT, SHAPE_COUNT};

/// joint index, segment start, segment end, surface radius (meters)
struct Bone {
    joint: usize,
    start: Vector3<f64>,
    end: Vector3<f64>,
    radius: f64,
    last_in_finger: bool,
}

struct Finger {
    /// MCP, PIP, DIP joint positions plus the fingertip endpoint.
    points: [Vector3<f64>; 4],
    radius: f64,
}

fn v3(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z)
}

/// Right-hand rest geometry: wrist at the origin, palm in the z≈0 plane,
/// fingers along +y, thumb toward −x.
fn fingers() -> [Finger; 5] {
    let chain = |base: Vector3<f64>, dir: Vector3<f64>, lengths: [f64; 3]| {
        let dir = dir.normalize();
        let p0 = base;
        let p1 = p0 + dir * lengths[0];
        let p2 = p1 + dir * lengths[1];
        let p3 = p2 + dir * lengths[2];
        [p0, p1, p2, p3]
    };
    [
        Finger {
            points: chain(v3(-0.034, 0.022, -0.006), v3(-0.55, 0.80, -0.10), [0.036, 0.030, 0.027]),
            radius: 0.0105,
        },
        Finger {
            points: chain(v3(-0.032, 0.092, 0.0), v3(-0.06, 1.0, 0.0), [0.042, 0.026, 0.023]),
            radius: 0.0085,
        },
        Finger {
            points: chain(v3(-0.010, 0.098, 0.0), v3(0.0, 1.0, 0.0), [0.046, 0.029, 0.024]),
            radius: 0.0088,
        },
        Finger {
            points: chain(v3(0.012, 0.094, 0.0), v3(0.05, 1.0, 0.0), [0.042, 0.027, 0.022]),
            radius: 0.0082,
        },
        Finger {
            points: chain(v3(0.033, 0.084, 0.0), v3(0.12, 1.0, 0.0), [0.032, 0.021, 0.018]),
            radius: 0.0072,
        },
    ]
}

fn bones() -> Vec<Bone> {
    let mut out = Vec::with_capacity(JOINT_COUNT);
    // palm "bone" drives everything skinned to the wrist
    out.push(Bone {
        joint: 0,
        start: v3(0.0, -0.025, 0.0),
        end: v3(0.0, 0.075, 0.0),
        radius: 0.018,
        last_in_finger: false,
    });
    for (f, finger) in fingers().iter().enumerate() {
        for seg in 0..3 {
            out.push(Bone {
                joint: 1 + 3 * f + seg,
                start: finger.points[seg],
                end: finger.points[seg + 1],
                radius: finger.radius,
                last_in_finger: seg == 2,
            });
        }
    }
    out
}

fn joint_rest_positions() -> [Vector3<f64>; JOINT_COUNT] {
    let mut joints = [Vector3::zeros(); JOINT_COUNT];
    for (f, finger) in fingers().iter().enumerate() {
        for seg in 0..3 {
            joints[1 + 3 * f + seg] = finger.points[seg];
        }
    }
    joints
}

fn parents() -> [Option<usize>; JOINT_COUNT] {
    let mut p = [None; JOINT_COUNT];
    for f in 0..5 {
        p[1 + 3 * f] = Some(0);
        p[2 + 3 * f] = Some(1 + 3 * f);
        p[3 + 3 * f] = Some(2 + 3 * f);
    }
    p
}

/// Orthonormal frame perpendicular to `dir`.
fn ring_axes(dir: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let up = if dir.z.abs() < 0.9 {
        v3(0.0, 0.0, 1.0)
    } else {
        v3(1.0, 0.0, 0.0)
    };
    let n1 = dir.cross(&up).normalize();
    let n2 = dir.cross(&n1).normalize();
    (n1, n2)
}

fn surface_points() -> Vec<Vector3<f64>> {
    let mut pts = Vec::new();
    const RING: usize = 10;
    for bone in bones().iter().skip(1) {
        let dir = (bone.end - bone.start).normalize();
        let (n1, n2) = ring_axes(&dir);
        for (ri, t) in [0.12, 0.42, 0.72, 1.0].into_iter().enumerate() {
            let taper = if bone.last_in_finger {
                1.0 - 0.35 * t
            } else {
                1.0 - 0.05 * ri as f64
            };
            let center = bone.start + (bone.end - bone.start) * t;
            for s in 0..RING {
                let ang = std::f64::consts::TAU * s as f64 / RING as f64;
                pts.push(center + (n1 * ang.cos() + n2 * ang.sin()) * (bone.radius * taper));
            }
        }
        if bone.last_in_finger {
            pts.push(bone.end + dir * bone.radius * 0.7);
        }
    }
    // palm slab: two layers with a rounded thickness profile
    for yi in 0..8 {
        let y = -0.03 + 0.115 * yi as f64 / 7.0;
        for xi in 0..7 {
            let x = -0.042 + 0.086 * xi as f64 / 6.0;
            let ex = (x + 0.0) / 0.046;
            let ey = (y - 0.04) / 0.075;
            let bulge = (1.0 - 0.55 * ex * ex - 0.35 * ey * ey).max(0.2);
            let half = 0.011 * bulge;
            pts.push(v3(x, y, half));
            pts.push(v3(x, y, -half));
        }
    }
    // palm rim to keep the cloud from being two bare sheets
    for yi in 0..6 {
        let y = -0.025 + 0.105 * yi as f64 / 5.0;
        pts.push(v3(-0.045, y, 0.0));
        pts.push(v3(0.045, y, 0.0));
    }
    for xi in 0..5 {
        let x = -0.035 + 0.07 * xi as f64 / 4.0;
        pts.push(v3(x, -0.033, 0.0));
    }
    pts
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Soft skinning: Gaussian falloff of the distance to each bone surface,
/// truncated to the four strongest joints and renormalized.
fn skin_weights(points: &[Vector3<f64>]) -> Vec<[f64; JOINT_COUNT]> {
    let bones = bones();
    let tau = 0.009;
    points
        .iter()
        .map(|p| {
            let mut w = [0.0_f64; JOINT_COUNT];
            for bone in &bones {
                let d = (point_segment_distance(p, &bone.start, &bone.end) - bone.radius).max(0.0);
                w[bone.joint] += (-(d / tau) * (d / tau)).exp();
            }
            let mut order: Vec<usize> = (0..JOINT_COUNT).collect();
            order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
            let mut kept = [0.0_f64; JOINT_COUNT];
            for &j in &order[..4] {
                kept[j] = w[j];
            }
            let sum: f64 = kept.iter().sum();
            if sum <= 0.0 {
                kept[0] = 1.0;
            } else {
                for x in kept.iter_mut() {
                    *x /= sum;
                }
            }
            kept
        })
        .collect()
}

/// Ten shape offsets per vertex: overall size, palm width, finger length,
/// thickness, one length channel per finger, and splay.
fn shape_offsets(points: &[Vector3<f64>], weights: &[[f64; JOINT_COUNT]]) -> Vec<Vector3<f64>> {
    let fingers = fingers();
    let mut basis = Vec::with_capacity(points.len() * SHAPE_COUNT);
    for (p, w) in points.iter().zip(weights) {
        // dominant finger (if any) and progress along it, for length channels
        let mut finger_of = [0.0_f64; 5];
        for f in 0..5 {
            finger_of[f] = w[1 + 3 * f] + w[2 + 3 * f] + w[3 + 3 * f];
        }
        let mut offsets = [Vector3::zeros(); SHAPE_COUNT];
        offsets[0] = p * 0.05;
        offsets[1] = v3(p.x * 0.06, 0.0, 0.0);
        offsets[2] = v3(0.0, 0.05 * (p.y - 0.08).max(0.0), 0.0);
        offsets[3] = v3(0.0, 0.0, p.z * 0.30);
        for f in 0..5 {
            let dir = (fingers[f].points[3] - fingers[f].points[0]).normalize();
            let along = (p - fingers[f].points[0]).dot(&dir).max(0.0);
            offsets[4 + f] = dir * (0.06 * along * finger_of[f]);
        }
        offsets[9] = v3(0.5 * p.x * (p.y - 0.05).max(0.0), 0.0, 0.0);
        basis.extend(offsets);
    }
    basis
}

/// Farthest-point sampling, seeded at the vertex farthest from the wrist so
/// the index set is a pure function of the geometry.
fn farthest_point_indices(points: &[Vector3<f64>], count: usize) -> Vec<usize> {
    let n = points.len();
    let count = count.min(n);
    let start = (0..n)
        .max_by(|&a, &b| {
            points[a]
                .norm_squared()
                .partial_cmp(&points[b].norm_squared())
                .unwrap()
                .then(b.cmp(&a))
        })
        .unwrap();
    let mut chosen = Vec::with_capacity(count);
    let mut dist = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..count {
        chosen.push(current);
        let mut next = 0;
        let mut best = -1.0;
        for i in 0..n {
            let d = (points[i] - points[current]).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best {
                best = dist[i];
                next = i;
            }
        }
        current = next;
    }
    chosen
}

/// Build the default procedural hand. The left hand mirrors the right across
/// the x = 0 plane (independent parameters; no pose mirroring is implied).
pub fn default_hand_model<S: Real>(side: Side, keypoint_count: usize) -> HandModel<S> {
    let keypoint_count = keypoint_count.max(1);
    let mut points = surface_points();
    let weights = skin_weights(&points);
    let mut basis = shape_offsets(&points, &weights);
    let mut joints = joint_rest_positions();
    if side == Side::Left {
        for p in points.iter_mut() {
            p.x = -p.x;
        }
        for o in basis.iter_mut() {
            o.x = -o.x;
        }
        for j in joints.iter_mut() {
            j.x = -j.x;
        }
    }
    let keypoints = farthest_point_indices(&points, keypoint_count);

    let conv = |p: &Vector3<f64>| Vector3::new(S::c(p.x), S::c(p.y), S::c(p.z));
    let mut joints_s = [Vector3::zeros(); JOINT_COUNT];
    for (dst, src) in joints_s.iter_mut().zip(&joints) {
        *dst = conv(src);
    }
    HandModel {
        side,
        template: points.iter().map(&conv).collect(),
        weights: weights
            .iter()
            .map(|row| {
                let mut out = [S::ZERO; JOINT_COUNT];
                for (d, &s) in out.iter_mut().zip(row) {
                    *d = S::c(s);
                }
                out
            })
            .collect(),
        parents: parents(),
        joints: joints_s,
        shape_basis: basis.iter().map(&conv).collect(),
        keypoints,
    }
}
