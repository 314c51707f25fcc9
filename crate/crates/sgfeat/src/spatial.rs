//! Balanced kd-tree over a point set.
//!
//! Queries are contractually identical to brute-force scans: radius search
//! returns every index with distance <= r, k-nearest returns the k smallest
//! under the total order (squared distance, index). Results are sorted by
//! distance, ties by lower index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::Point3;

/// Query mode for [`SpatialIndex::neighbors`].
#[derive(Debug, Clone, Copy)]
pub enum QueryMode {
    /// All points within the given radius (inclusive).
    Radius(f64),
    /// The k nearest points, ties broken by lower index.
    Knn(usize),
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        indices: Vec<usize>,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Immutable spatial accelerator; safe for concurrent reads.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    root: Option<Node>,
}

const LEAF_SIZE: usize = 16;

impl SpatialIndex {
    pub fn build(points: &[Point3]) -> Self {
        let points = points.to_vec();
        let root = if points.is_empty() {
            None
        } else {
            let mut indices: Vec<usize> = (0..points.len()).collect();
            Some(build_node(&points, &mut indices))
        };
        Self { points, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn neighbors(&self, center: &Point3, mode: QueryMode) -> Vec<usize> {
        match mode {
            QueryMode::Radius(r) => self.radius(center, r),
            QueryMode::Knn(k) => self.knn(center, k),
        }
    }

    /// All indices with `|p - center| <= r`, sorted by (distance, index).
    pub fn radius(&self, center: &Point3, r: f64) -> Vec<usize> {
        assert!(r > 0.0, "radius must be positive");
        let mut hits: Vec<(f64, usize)> = Vec::new();
        if let Some(root) = &self.root {
            let r2 = r * r;
            self.collect_radius(root, center, r2, &mut hits);
        }
        hits.sort_by(cmp_dist_idx);
        hits.into_iter().map(|(_, i)| i).collect()
    }

    /// The k nearest indices under (squared distance, index) order.
    pub fn knn(&self, center: &Point3, k: usize) -> Vec<usize> {
        assert!(k >= 1, "k must be at least 1");
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
        if let Some(root) = &self.root {
            self.collect_knn(root, center, k, &mut heap);
        }
        let mut hits: Vec<(f64, usize)> = heap.into_iter().map(|e| (e.dist2, e.index)).collect();
        hits.sort_by(cmp_dist_idx);
        hits.into_iter().map(|(_, i)| i).collect()
    }

    fn collect_radius(&self, node: &Node, center: &Point3, r2: f64, out: &mut Vec<(f64, usize)>) {
        match node {
            Node::Leaf { indices } => {
                for &i in indices {
                    let d2 = (self.points[i] - center).norm_squared();
                    if d2 <= r2 {
                        out.push((d2, i));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = center[*axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.collect_radius(near, center, r2, out);
                // Points at exactly radius distance on the far side must be kept.
                if delta * delta <= r2 {
                    self.collect_radius(far, center, r2, out);
                }
            }
        }
    }

    fn collect_knn(&self, node: &Node, center: &Point3, k: usize, heap: &mut BinaryHeap<HeapEntry>) {
        match node {
            Node::Leaf { indices } => {
                for &i in indices {
                    let entry = HeapEntry {
                        dist2: (self.points[i] - center).norm_squared(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(entry);
                    } else if entry < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(entry);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = center[*axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.collect_knn(near, center, k, heap);
                // Visit the far side unless every point there is strictly
                // worse than the current k-th candidate.
                let prune = heap.len() == k && delta * delta > heap.peek().unwrap().dist2;
                if !prune {
                    self.collect_knn(far, center, k, heap);
                }
            }
        }
    }
}

fn build_node(points: &[Point3], indices: &mut [usize]) -> Node {
    if indices.len() <= LEAF_SIZE {
        return Node::Leaf {
            indices: indices.to_vec(),
        };
    }
    // Split along the axis of largest extent at the median.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in indices.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
        .unwrap();
    indices.sort_unstable_by(|&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mid = indices.len() / 2;
    let value = points[indices[mid]][axis];
    if points[indices[0]][axis] == points[indices[indices.len() - 1]][axis] {
        // All coordinates identical on every axis with extent; give up splitting.
        return Node::Leaf {
            indices: indices.to_vec(),
        };
    }
    let (left_idx, right_idx) = indices.split_at_mut(mid);
    Node::Split {
        axis,
        value,
        left: Box::new(build_node(points, left_idx)),
        right: Box::new(build_node(points, right_idx)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    dist2: f64,
    index: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .partial_cmp(&other.dist2)
            .unwrap()
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn cmp_dist_idx(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
}

/// Brute-force reference scans, used by tests and kept by callers that need
/// contractual equality checks.
pub mod brute {
    use super::cmp_dist_idx;
    use crate::Point3;

    pub fn radius(points: &[Point3], center: &Point3, r: f64) -> Vec<usize> {
        let r2 = r * r;
        let mut hits: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let d2 = (p - center).norm_squared();
                (d2 <= r2).then_some((d2, i))
            })
            .collect();
        hits.sort_by(cmp_dist_idx);
        hits.into_iter().map(|(_, i)| i).collect()
    }

    pub fn knn(points: &[Point3], center: &Point3, k: usize) -> Vec<usize> {
        let mut hits: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - center).norm_squared(), i))
            .collect();
        hits.sort_by(cmp_dist_idx);
        hits.into_iter().take(k).map(|(_, i)| i).collect()
    }
}
