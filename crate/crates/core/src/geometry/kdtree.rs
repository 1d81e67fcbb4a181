//! Static k-d tree over fixed-dimension points.
//!
//! Results are exact and ordered by `(distance, id)`, so they match a
//! brute-force scan including tie-breaking.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// A neighbor hit: point id and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            let n = tree.points.len();
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> &[f64; D] {
        &self.points[id]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.widest_dim(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim])
        });
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    fn widest_dim(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for &i in &self.order[start..end] {
            for d in 0..D {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        (0..D)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0)
    }

    #[inline]
    fn dist2(a: &[f64; D], b: &[f64; D]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// The `k` nearest points, ascending by distance, ties by lower id.
    /// Returns every point when `k` exceeds the tree size.
    pub fn nearest(&self, query: &[f64; D], k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_visit(0, query, k, &mut best);
        best.into_iter()
            .map(|(d2, id)| Neighbor { id, distance: d2.sqrt() })
            .collect()
    }

    /// Single nearest neighbor as `(id, squared distance)`.
    pub fn nearest_one(&self, query: &[f64; D]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.nn_visit(0, query, &mut best);
        Some((best.1, best.0))
    }

    fn nn_visit(&self, node: usize, q: &[f64; D], best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = Self::dist2(&self.points[i], q);
                    if d2 < best.0 || (d2 == best.0 && i < best.1) {
                        *best = (d2, i);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nn_visit(near, q, best);
                if diff * diff <= best.0 {
                    self.nn_visit(far, q, best);
                }
            }
        }
    }

    fn knn_visit(&self, node: usize, q: &[f64; D], k: usize, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = (Self::dist2(&self.points[i], q), i);
                    if best.len() == k {
                        let worst = best[k - 1];
                        if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                            continue;
                        }
                    }
                    let pos = best.partition_point(|b| b.0 < cand.0 || (b.0 == cand.0 && b.1 < cand.1));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_visit(near, q, k, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.knn_visit(far, q, k, best);
                }
            }
        }
    }

    /// Every point within `radius` (inclusive), ascending by distance,
    /// ties by lower id.
    pub fn within_radius(&self, query: &[f64; D], radius: f64) -> Vec<Neighbor> {
        let mut hits = Vec::new();
        if !self.points.is_empty() {
            self.radius_visit(0, query, radius * radius, &mut hits);
        }
        hits.sort_unstable_by(|a: &(f64, usize), b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        hits.into_iter()
            .map(|(d2, id)| Neighbor { id, distance: d2.sqrt() })
            .collect()
    }

    fn radius_visit(&self, node: usize, q: &[f64; D], r2: f64, hits: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = Self::dist2(&self.points[i], q);
                    if d2 <= r2 {
                        hits.push((d2, i));
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_visit(near, q, r2, hits);
                if diff * diff <= r2 {
                    self.radius_visit(far, q, r2, hits);
                }
            }
        }
    }
}

/// Immutable 3-D index over a cloud's positions.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    tree: KdTree<3>,
}

impl SpatialIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        SpatialIndex {
            tree: KdTree::new(points.iter().map(|p| [p.x, p.y, p.z]).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        self.tree.nearest(&[query.x, query.y, query.z], k)
    }

    pub fn nearest_one(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        self.tree.nearest_one(&[query.x, query.y, query.z])
    }

    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<Neighbor> {
        self.tree.within_radius(&[query.x, query.y, query.z], radius)
    }
}

pub fn nearest_neighbors(index: &SpatialIndex, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
    index.nearest(query, k)
}
