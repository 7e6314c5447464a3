//! Shared test oracles: exhaustive nearest-neighbor scan, generalized
//! winding number, finite differences, and deterministic mesh generators.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hoi_core::geometry::{Mesh, PartId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
    )
}

/// Exhaustive scan twin of `nearest_vertex`: first index wins ties because
/// the comparison is strict.
pub fn brute_nearest(query: &Vector3<f64>, reference: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, r) in reference.iter().enumerate() {
        let d2 = (r - query).norm_squared();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

/// Generalized winding number via the van Oosterom-Strackee solid angle.
pub fn winding_number(tris: &[[Vector3<f64>; 3]], p: &Vector3<f64>) -> f64 {
    let mut total = 0.0;
    for t in tris {
        let a = t[0] - p;
        let b = t[1] - p;
        let c = t[2] - p;
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

pub fn winding_inside(tris: &[[Vector3<f64>; 3]], p: &Vector3<f64>) -> bool {
    winding_number(tris, p).abs() > 0.5
}

pub fn triangles(verts: &[Vector3<f64>], faces: &[[usize; 3]]) -> Vec<[Vector3<f64>; 3]> {
    faces
        .iter()
        .map(|f| [verts[f[0]], verts[f[1]], verts[f[2]]])
        .collect()
}

/// Central finite differences of a scalar function.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want
        .iter()
        .fold(1e-9_f64, |acc, w| acc.max(w.abs()));
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / scale)
        .fold(0.0, f64::max)
}

/// Icosphere: subdivided icosahedron projected to `radius` around `center`.
pub fn icosphere(
    radius: f64,
    subdivisions: usize,
    center: Vector3<f64>,
) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let t = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|a| Vector3::new(a[0], a[1], a[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let m = ((verts[a] + verts[b]) / 2.0).normalize();
                verts.push(m);
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }

    let verts = verts.into_iter().map(|v| v * radius + center).collect();
    (verts, faces)
}

pub fn icosphere_mesh(radius: f64, subdivisions: usize, center: Vector3<f64>) -> Mesh<f64> {
    let (v, f) = icosphere(radius, subdivisions, center);
    let n = v.len();
    Mesh::new(v, f, vec![PartId::Bottom; n]).unwrap()
}

/// Axis-aligned box with every face subdivided into an n-by-n quad grid,
/// welded along shared edges so the result is watertight.
pub fn grid_box(
    half: Vector3<f64>,
    center: Vector3<f64>,
    n: usize,
) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut verts: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut vertex = |c: [usize; 3], verts: &mut Vec<Vector3<f64>>| -> usize {
        *index.entry(c).or_insert_with(|| {
            let p = Vector3::from_fn(|k, _| {
                center[k] - half[k] + 2.0 * half[k] * c[k] as f64 / n as f64
            });
            verts.push(p);
            verts.len() - 1
        })
    };
    for axis in 0..3 {
        let u = (axis + 1) % 3;
        let v = (axis + 2) % 3;
        for (fixed, positive) in [(n, true), (0, false)] {
            for iu in 0..n {
                for iv in 0..n {
                    let mut corner = |du: usize, dv: usize, verts: &mut Vec<Vector3<f64>>| {
                        let mut c = [0usize; 3];
                        c[axis] = fixed;
                        c[u] = iu + du;
                        c[v] = iv + dv;
                        vertex(c, verts)
                    };
                    let p00 = corner(0, 0, &mut verts);
                    let p10 = corner(1, 0, &mut verts);
                    let p11 = corner(1, 1, &mut verts);
                    let p01 = corner(0, 1, &mut verts);
                    // e_u x e_v = e_axis, so this winding faces outward on
                    // the positive side
                    if positive {
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

/// Two icospheres: top centered at +z offset, bottom at origin.
pub fn two_sphere_object(radius: f64, subdivisions: usize, gap: f64) -> hoi_core::ArticulatedObject {
    let (vt, ft) = icosphere(radius, subdivisions, Vector3::new(gap, 0.0, 0.0));
    let (vb, fb) = icosphere(radius, subdivisions, Vector3::new(-gap, 0.0, 0.0));
    let mut verts = vt;
    let mut faces = ft;
    let mut parts = vec![PartId::Top; verts.len()];
    let base = verts.len();
    verts.extend(vb);
    faces.extend(fb.iter().map(|t| t.map(|i| i + base)));
    parts.extend(vec![PartId::Bottom; base]);
    let mesh = Mesh::new(verts, faces, parts).unwrap();
    hoi_core::ArticulatedObject::new(mesh, std::f64::consts::FRAC_PI_2).unwrap()
}
