//! Exact nearest-neighbor search over an immutable point snapshot.
//!
//! A bucketed kd-tree split at the median of the widest axis. Queries return
//! the true Euclidean nearest neighbor; ties resolve to the smallest original
//! point index so results never depend on tree layout.

use std::mem::MaybeUninit;

use thiserror::Error;

use crate::geometry::{Point3, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("empty query")]
    EmptyQuery,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Result of a nearest-neighbor query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index into the cloud the index was built from.
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct NnIndex {
    source: PointCloud,
    coords: Vec<[f64; 3]>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

impl NnIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self, IndexError> {
        if cloud.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let mut ids: Vec<u32> = (0..cloud.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * cloud.len() / LEAF_SIZE + 1);
        build_node(&cloud.points, &mut ids, 0, &mut nodes);
        let coords = ids
            .iter()
            .map(|&i| {
                let p = cloud.points[i as usize];
                [p.x, p.y, p.z]
            })
            .collect();
        Ok(Self {
            source: cloud.clone(),
            coords,
            ids,
            nodes,
        })
    }

    pub fn source(&self) -> &PointCloud {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn nearest(&self, q: &Point3) -> Neighbor {
        self.search(q, None, None)
    }

    /// Same result as [`nearest`](Self::nearest); `hint`, an index likely
    /// close to the answer, only speeds up pruning.
    pub fn nearest_with_hint(&self, q: &Point3, hint: usize) -> Neighbor {
        self.search(q, None, Some(hint as u32))
    }

    pub fn nearest_distance(&self, q: &Point3) -> f64 {
        self.search(q, None, None).distance
    }

    /// Nearest neighbor of the indexed point `i` among the other points.
    /// Returns `None` for a one-point index.
    pub fn nearest_other(&self, i: usize) -> Option<Neighbor> {
        if self.len() < 2 {
            return None;
        }
        Some(self.search(&self.source.points[i], Some(i as u32), None))
    }

    fn search(&self, q: &Point3, skip: Option<u32>, hint: Option<u32>) -> Neighbor {
        let mut best_d2 = f64::INFINITY;
        let mut best_id = u32::MAX;
        if let Some(h) = hint.filter(|&h| (h as usize) < self.len() && Some(h) != skip) {
            best_d2 = (self.source.points[h as usize] - q).norm_squared();
            best_id = h;
        }
        let q = [q.x, q.y, q.z];
        // Each entry carries a lower bound on the squared distance to the
        // node's cell, built up incrementally from per-axis offsets.
        // Depth is at most log2(n) + 1 and each level leaves one entry
        // behind, so 128 slots cover any u32-indexed tree.
        type Entry = (u32, f64, [f64; 3]);
        let mut stack = [MaybeUninit::<Entry>::uninit(); 128];
        stack[0].write((0, 0.0, [0.0; 3]));
        let mut top = 1;
        while top > 0 {
            top -= 1;
            // SAFETY: slots below `top` were written before `top` was raised.
            let (node, bound, off) = unsafe { stack[top].assume_init() };
            if bound > best_d2 {
                continue;
            }
            match self.nodes[node as usize] {
                Node::Leaf { start, end } => {
                    for k in start as usize..end as usize {
                        let id = self.ids[k];
                        if Some(id) == skip {
                            continue;
                        }
                        let c = &self.coords[k];
                        let dx = c[0] - q[0];
                        let dy = c[1] - q[1];
                        let dz = c[2] - q[2];
                        let d2 = dx * dx + dy * dy + dz * dz;
                        if d2 < best_d2 || (d2 == best_d2 && id < best_id) {
                            best_d2 = d2;
                            best_id = id;
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let a = axis as usize;
                    let diff = q[a] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    let mut far_off = off;
                    far_off[a] = diff;
                    let far_bound = bound - off[a] * off[a] + diff * diff;
                    // Far side first so the near side is popped next.
                    stack[top].write((far, far_bound, far_off));
                    stack[top + 1].write((near, bound, off));
                    top += 2;
                }
            }
        }
        Neighbor {
            index: best_id as usize,
            distance: best_d2.sqrt(),
        }
    }
}

fn build_node(points: &[Point3], ids: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let me = nodes.len() as u32;
    if ids.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + ids.len()) as u32,
        });
        return me;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in ids.iter() {
        let p = points[i as usize];
        for (a, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    if hi[axis] == lo[axis] {
        // All points coincide; nothing to split.
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + ids.len()) as u32,
        });
        return me;
    }
    let coord = |i: u32| points[i as usize][axis];
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| coord(a).total_cmp(&coord(b)).then(a.cmp(&b)));
    let value = coord(ids[mid]);
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = ids.split_at_mut(mid);
    let left = build_node(points, l, offset, nodes);
    let right = build_node(points, r, offset + mid, nodes);
    nodes[me as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    me
}
