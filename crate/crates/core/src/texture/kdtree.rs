use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Maximum number of points stored in a leaf.
pub const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced 2-d tree over a fixed point set.
///
/// Splits at the median along alternating axes; points are ordered by
/// `(coordinate, index)` so equal coordinates split deterministically.
/// Query results are sorted by `(squared distance, index)`, which makes
/// them identical to a stable linear scan.
#[derive(Clone, Debug, PartialEq)]
pub struct KdTree {
    points: Vec<[f64; 2]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    /// Points must be finite.
    pub fn build(points: Vec<[f64; 2]>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build_node(0, tree.points.len(), 0);
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = depth % 2;
        let pts = &self.points;
        self.order[start..end]
            .sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let mid = start + (end - start) / 2;
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid, depth + 1);
        let right = self.build_node(mid, end, depth + 1);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> [f64; 2] {
        self.points[index]
    }

    /// The `k` nearest points as `(index, distance)`, ascending by distance
    /// then index; fewer when the tree holds fewer than `k` points.
    pub fn nearest(&self, query: [f64; 2], k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| (c.index, c.d2.sqrt())).collect()
    }

    fn search(&self, node: usize, q: [f64; 2], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let p = self.points[i];
                    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                    let c = Candidate {
                        d2: dx * dx + dy * dy,
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, heap);
                // `<=` keeps equidistant points with smaller indices reachable
                if heap.len() < k || diff * diff <= heap.peek().expect("heap is non-empty").d2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Exhaustive reference with the same ordering as [`KdTree::nearest`].
pub fn linear_scan(points: &[[f64; 2]], query: [f64; 2], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<Candidate> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (dx, dy) = (p[0] - query[0], p[1] - query[1]);
            Candidate {
                d2: dx * dx + dy * dy,
                index: i,
            }
        })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter().map(|c| (c.index, c.d2.sqrt())).collect()
}
