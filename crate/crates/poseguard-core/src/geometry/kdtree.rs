//! kd-tree for nearest-neighbor queries. Tie rule everywhere: ascending
//! squared distance, then lowest original index — exactly matching the
//! linear-scan oracle.

use super::Point3;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct KdNode {
    point_index: u32,
    axis: u8,
    left: u32,
    right: u32,
}

/// Read-only spatial index over a point set. Original indices are preserved
/// in query results.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<KdNode>,
    root: u32,
}

fn coord(p: Point3, axis: u8) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Self {
        let mut indices: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut indices, 0, &mut nodes);
        Self { points: points.to_vec(), nodes, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(
        points: &[Point3],
        indices: &mut [u32],
        depth: u8,
        nodes: &mut Vec<KdNode>,
    ) -> u32 {
        if indices.is_empty() {
            return NONE;
        }
        let axis = depth % 3;
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            let ca = coord(points[a as usize], axis);
            let cb = coord(points[b as usize], axis);
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let node_slot = nodes.len() as u32;
        nodes.push(KdNode { point_index: indices[mid], axis, left: NONE, right: NONE });
        let (lo, rest) = indices.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, hi, depth + 1, nodes);
        nodes[node_slot as usize].left = left;
        nodes[node_slot as usize].right = right;
        node_slot
    }

    /// Nearest point to `query`: (original index, distance).
    pub fn nearest(&self, query: Point3) -> (usize, f64) {
        debug_assert!(!self.points.is_empty());
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_rec(self.root, query, &mut best);
        (best.1, best.0.sqrt())
    }

    fn nearest_rec(&self, node: u32, query: Point3, best: &mut (f64, usize)) {
        if node == NONE {
            return;
        }
        let n = self.nodes[node as usize];
        let p = self.points[n.point_index as usize];
        let d2 = p.distance_squared(query);
        let idx = n.point_index as usize;
        if d2 < best.0 || (d2 == best.0 && idx < best.1) {
            *best = (d2, idx);
        }
        let diff = coord(query, n.axis) - coord(p, n.axis);
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.nearest_rec(near, query, best);
        if diff * diff <= best.0 {
            self.nearest_rec(far, query, best);
        }
    }

    /// k nearest points, sorted ascending by distance with index tie-break.
    /// Panics in debug builds if k exceeds the point count.
    pub fn k_nearest(&self, query: Point3, k: usize) -> Vec<(usize, f64)> {
        debug_assert!(k >= 1 && k <= self.points.len());
        // Bounded worst-first list; k stays small in every caller.
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(self.root, query, k, &mut heap);
        heap.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        heap.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    fn k_nearest_rec(&self, node: u32, query: Point3, k: usize, heap: &mut Vec<(f64, usize)>) {
        if node == NONE {
            return;
        }
        let n = self.nodes[node as usize];
        let p = self.points[n.point_index as usize];
        let d2 = p.distance_squared(query);
        let idx = n.point_index as usize;
        let candidate = (d2, idx);
        if heap.len() < k {
            heap.push(candidate);
            if heap.len() == k {
                heap.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
        } else if candidate < heap[k - 1] {
            let pos = heap.partition_point(|e| *e < candidate);
            heap.insert(pos, candidate);
            heap.pop();
        }
        let diff = coord(query, n.axis) - coord(p, n.axis);
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.k_nearest_rec(near, query, k, heap);
        if heap.len() < k || diff * diff <= heap[k - 1].0 {
            self.k_nearest_rec(far, query, k, heap);
        }
    }

    /// Nearest point strictly within `max_dist`, or None.
    pub fn nearest_within(&self, query: Point3, max_dist: f64) -> Option<(usize, f64)> {
        let (idx, d) = self.nearest(query);
        if d < max_dist {
            Some((idx, d))
        } else {
            None
        }
    }
}
