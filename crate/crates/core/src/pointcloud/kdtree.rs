//! Static k-d tree over 3D points.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact nearest-neighbor index. Results carry the point index and the
/// squared distance; ties are broken by the smaller index.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vector3<f64> {
        &self.points[i]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Closest point to `q`.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points sorted by (distance, index).
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.points.is_empty() {
            self.knn_rec(0, q, k, &mut heap);
        }
        heap
    }

    fn knn_rec(&self, node: usize, q: &Vector3<f64>, k: usize, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if out.len() == k {
                        let (li, ld) = out[k - 1];
                        if d > ld || (d == ld && i > li) {
                            continue;
                        }
                    }
                    let pos = out
                        .iter()
                        .position(|&(j, dj)| d < dj || (d == dj && i < j))
                        .unwrap_or(out.len());
                    out.insert(pos, (i, d));
                    out.truncate(k);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, out);
                if out.len() < k || diff * diff <= out[out.len() - 1].1 {
                    self.knn_rec(far, q, k, out);
                }
            }
        }
    }

    /// All points within `radius` (inclusive), sorted by (distance, index).
    pub fn radius(&self, q: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.radius_into(q, radius, &mut out);
        out
    }

    /// Radius query reusing `out`; results sorted by (distance, index).
    pub fn radius_into(&self, q: &Vector3<f64>, radius: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        if !self.points.is_empty() && radius >= 0.0 {
            self.radius_rec(0, q, radius * radius, out);
        }
        out.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    }

    fn radius_rec(&self, node: usize, q: &Vector3<f64>, r2: f64, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d <= r2 {
                        out.push((i, d));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_rec(far, q, r2, out);
                }
            }
        }
    }

    /// Radius query capped at the `max_nn` closest hits.
    pub fn hybrid(&self, q: &Vector3<f64>, radius: f64, max_nn: usize, out: &mut Vec<(usize, f64)>) {
        self.radius_into(q, radius, out);
        out.truncate(max_nn);
    }
}
