//! Cached acceleration structures for repeated nearest/containment queries.
//!
//! Hand motion, losses, and metrics all live in the canonical object frame,
//! so the only per-frame variation is the articulation angle: [`ObjectQueries`]
//! validates the object once and stamps out an [`ArticulatedShape`] per frame.

use nalgebra::Vector3;

use crate::error::Result;
use crate::real::{rmax, rmin, Real};

use super::containment::{check_watertight, ray_parity_inside, triangles_of};
use super::{articulation_rotation, ArticulatedObject, KdTree, Mesh, Nearest, PartId};

pub struct ObjectQueries<S: Real> {
    mesh: Mesh<S>,
    top_local: (Vec<Vector3<S>>, Vec<[usize; 3]>, Vec<usize>),
    bottom_local: (Vec<Vector3<S>>, Vec<[usize; 3]>, Vec<usize>),
}

impl<S: Real> ObjectQueries<S> {
    /// Validates per-part watertightness once; articulation moves parts
    /// rigidly so the validation holds at every angle.
    pub fn new(obj: &ArticulatedObject<S>) -> Result<Self> {
        let top_local = obj.canonical_mesh.part_submesh(PartId::Top);
        let bottom_local = obj.canonical_mesh.part_submesh(PartId::Bottom);
        check_watertight(&top_local.0, &top_local.1)?;
        check_watertight(&bottom_local.0, &bottom_local.1)?;
        Ok(ObjectQueries {
            mesh: obj.canonical_mesh.clone(),
            top_local,
            bottom_local,
        })
    }

    /// Canonical-frame snapshot with the top part rotated by `a`.
    pub fn shape_at(&self, a: S) -> ArticulatedShape<S> {
        let rot = articulation_rotation(a);
        let vertices: Vec<Vector3<S>> = self
            .mesh
            .vertices
            .iter()
            .zip(&self.mesh.part_ids)
            .map(|(v, &p)| match p {
                PartId::Top => rot * v,
                PartId::Bottom => *v,
            })
            .collect();
        let tree = KdTree::build(&vertices).expect("validated mesh");

        let top_verts: Vec<Vector3<S>> = self.top_local.0.iter().map(|v| rot * v).collect();
        let top_tris = triangles_of(&top_verts, &self.top_local.1);
        let bottom_tris = triangles_of(&self.bottom_local.0, &self.bottom_local.1);

        let part_trees = [
            KdTree::build(&top_verts).expect("validated part"),
            KdTree::build(&self.bottom_local.0).expect("validated part"),
        ];

        ArticulatedShape {
            vertices,
            tree,
            parts: [
                PartShape {
                    aabb: aabb_of(&top_verts),
                    tris: top_tris,
                    global_index: self.top_local.2.clone(),
                },
                PartShape {
                    aabb: aabb_of(&self.bottom_local.0),
                    tris: bottom_tris,
                    global_index: self.bottom_local.2.clone(),
                },
            ],
            part_trees,
        }
    }
}

fn aabb_of<S: Real>(verts: &[Vector3<S>]) -> (Vector3<S>, Vector3<S>) {
    let mut lo = verts[0];
    let mut hi = verts[0];
    for v in verts {
        for k in 0..3 {
            lo[k] = rmin(lo[k], v[k]);
            hi[k] = rmax(hi[k], v[k]);
        }
    }
    (lo, hi)
}

struct PartShape<S: Real> {
    aabb: (Vector3<S>, Vector3<S>),
    tris: Vec<[Vector3<S>; 3]>,
    global_index: Vec<usize>,
}

/// One frame's object geometry in canonical space, indexed for queries.
pub struct ArticulatedShape<S: Real> {
    /// All mesh vertices at this articulation, original vertex order.
    pub vertices: Vec<Vector3<S>>,
    tree: KdTree<S>,
    parts: [PartShape<S>; 2], // [top, bottom]
    part_trees: [KdTree<S>; 2],
}

impl<S: Real> ArticulatedShape<S> {
    /// Nearest object vertex over both parts (global vertex index).
    pub fn nearest(&self, q: &Vector3<S>) -> Nearest<S> {
        self.tree.nearest(q)
    }

    /// Nearest vertex of one part; index is still the global mesh index.
    pub fn nearest_in_part(&self, part: PartId, q: &Vector3<S>) -> Nearest<S> {
        let slot = match part {
            PartId::Top => 0,
            PartId::Bottom => 1,
        };
        let hit = self.part_trees[slot].nearest(q);
        Nearest {
            index: self.parts[slot].global_index[hit.index],
            ..hit
        }
    }

    /// Is `q` inside the union of the closed parts?
    pub fn contains(&self, q: &Vector3<S>) -> bool {
        self.parts.iter().any(|part| {
            let (lo, hi) = part.aabb;
            let in_box = (0..3).all(|k| q[k] >= lo[k] && q[k] <= hi[k]);
            in_box && ray_parity_inside(&part.tris, q)
        })
    }

    /// Penetration depth as distance to the nearest surface vertex, `None`
    /// when outside.
    pub fn depth(&self, q: &Vector3<S>) -> Option<S> {
        if self.contains(q) {
            Some(self.nearest(q).distance)
        } else {
            None
        }
    }

    /// Which part the hand is touching when within `eps`, preferring the
    /// closer part; containment counts as touching.
    pub fn touches_part(&self, q: &Vector3<S>, eps: S) -> Option<PartId> {
        let top = self.nearest_in_part(PartId::Top, q);
        let bottom = self.nearest_in_part(PartId::Bottom, q);
        if self.contains(q) {
            return Some(if top.distance <= bottom.distance {
                PartId::Top
            } else {
                PartId::Bottom
            });
        }
        let best = rmin(top.distance, bottom.distance);
        if best > eps {
            None
        } else if top.distance <= bottom.distance {
            Some(PartId::Top)
        } else {
            Some(PartId::Bottom)
        }
    }
}
