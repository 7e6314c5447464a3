//! Static exact 3D kd-tree.
//!
//! Matches exhaustive search bit-for-bit: squared distances are computed with
//! the same expression a linear scan would use, ties broken toward the lowest
//! point index, and traversal visits any subtree whose slab could hold an
//! equal-distance candidate.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::real::Real;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest<S> {
    pub index: usize,
    pub distance: S,
    /// reference[index] − query
    pub vector: Vector3<S>,
}

#[derive(Clone, Debug)]
enum Node<S> {
    Leaf {
        start: u32,
        end: u32,
    },
    Inner {
        axis: u8,
        split: S,
        left: u32,
        right: u32,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree<S: Real> {
    points: Vec<Vector3<S>>,
    order: Vec<u32>,
    nodes: Vec<Node<S>>,
    root: u32,
}

impl<S: Real> KdTree<S> {
    pub fn build(points: &[Vector3<S>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyReference);
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid("non-finite reference point"));
        }
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        tree.root = tree.split_range(0, points.len());
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<S>] {
        &self.points
    }

    fn split_range(&mut self, start: usize, end: usize) -> u32 {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return (self.nodes.len() - 1) as u32;
        }

        let first = self.points[self.order[start] as usize];
        let mut lo = first;
        let mut hi = first;
        for &i in &self.order[start..end] {
            let p = self.points[i as usize];
            for k in 0..3 {
                lo[k] = crate::real::rmin(lo[k], p[k]);
                hi[k] = crate::real::rmax(hi[k], p[k]);
            }
        }
        let extent = hi - lo;
        let mut axis = 0usize;
        if extent[1] > extent[axis] {
            axis = 1;
        }
        if extent[2] > extent[axis] {
            axis = 2;
        }

        let mid = (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            let ca = points[a as usize][axis];
            let cb = points[b as usize][axis];
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let split = points[self.order[start + mid] as usize][axis];

        let left = self.split_range(start, start + mid);
        let right = self.split_range(start + mid, end);
        self.nodes.push(Node::Inner {
            axis: axis as u8,
            split,
            left,
            right,
        });
        (self.nodes.len() - 1) as u32
    }

    pub fn nearest(&self, query: &Vector3<S>) -> Nearest<S> {
        let mut best_d2 = S::c(f64::INFINITY);
        let mut best_idx = usize::MAX;
        self.search(self.root, query, &mut best_d2, &mut best_idx);
        let v = self.points[best_idx] - query;
        Nearest {
            index: best_idx,
            distance: best_d2.sqrt(),
            vector: v,
        }
    }

    fn search(&self, node: u32, q: &Vector3<S>, best_d2: &mut S, best_idx: &mut usize) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start as usize..*end as usize] {
                    let i = i as usize;
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < *best_d2 || (d2 == *best_d2 && i < *best_idx) {
                        *best_d2 = d2;
                        *best_idx = i;
                    }
                }
            }
            Node::Inner {
                axis,
                split,
                left,
                right,
            } => {
                let diff = q[*axis as usize] - *split;
                let (near, far) = if diff < S::ZERO {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, q, best_d2, best_idx);
                // an equal-distance, lower-index candidate may sit exactly on
                // the slab boundary, so prune only on strict inequality
                if diff * diff <= *best_d2 {
                    self.search(far, q, best_d2, best_idx);
                }
            }
        }
    }
}

/// Nearest reference vertex for each query point (exact, lowest index wins
/// among ties).
pub fn nearest_vertex<S: Real>(
    queries: &[Vector3<S>],
    reference: &[Vector3<S>],
) -> Result<Vec<Nearest<S>>> {
    let tree = KdTree::build(reference)?;
    if queries.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::invalid("non-finite query point"));
    }
    Ok(queries.iter().map(|q| tree.nearest(q)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_hit_has_zero_distance_and_vector() {
        let reference = vec![
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(-1.0, 0.5, 0.0),
            Vector3::new(4.0, 4.0, 4.0),
        ];
        let out = nearest_vertex(&[reference[1]], &reference).unwrap();
        assert_eq!(out[0].index, 1);
        assert_eq!(out[0].distance, 0.0);
        assert_eq!(out[0].vector, Vector3::zeros());
    }

    #[test]
    fn equidistant_references_pick_lower_index() {
        let reference = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        let out = nearest_vertex(&[Vector3::zeros()], &reference).unwrap();
        assert_eq!(out[0].index, 0);

        // same coordinates duplicated: still the lower index
        let dup = vec![Vector3::new(2.0, 2.0, 2.0); 5];
        let out = nearest_vertex(&[Vector3::zeros()], &dup).unwrap();
        assert_eq!(out[0].index, 0);
    }

    #[test]
    fn empty_reference_is_an_error() {
        let empty: Vec<Vector3<f64>> = Vec::new();
        assert!(matches!(
            nearest_vertex(&[Vector3::zeros()], &empty),
            Err(Error::EmptyReference)
        ));
    }
}
