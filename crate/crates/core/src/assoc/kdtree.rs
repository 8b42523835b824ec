//! Static 3-d tree for nearest-neighbor queries with deterministic tie-breaking.

use std::cmp::Ordering;

use crate::types::Vec3;

const LEAF_SIZE: usize = 8;

/// Below this many points a linear scan is used instead of a tree.
pub const BRUTE_FORCE_BELOW: usize = 256;

/// Balanced k-d tree over a fixed point set. Nodes are implicit: the subtree
/// over `order[lo..hi]` splits at `mid = (lo + hi) / 2` on `axes[mid]`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            axes: vec![0; points.len()],
            points,
        };
        let n = tree.points.len();
        tree.build(0, n);
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let axis = self.widest_axis(lo, hi);
        let mid = (lo + hi) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    fn widest_axis(&self, lo: usize, hi: usize) -> usize {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        (max - min).imax()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point; among equidistant points
    /// the lowest index wins.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        let mut best = None;
        self.search(query, 0, self.points.len(), &mut best);
        best
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut Option<(usize, f64)>) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                consider(best, i, (self.points[i] - q).norm_squared());
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid];
        consider(best, pivot, (self.points[pivot] - q).norm_squared());
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        // Equal distance still has to be explored: a lower index may sit across the plane.
        if best.is_none_or(|(_, d)| diff * diff <= d) {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn consider(best: &mut Option<(usize, f64)>, index: usize, dist2: f64) {
    let better = match best {
        None => true,
        Some((bi, bd)) => match dist2.total_cmp(bd) {
            Ordering::Less => true,
            Ordering::Equal => index < *bi,
            Ordering::Greater => false,
        },
    };
    if better {
        *best = Some((index, dist2));
    }
}

/// Exhaustive nearest neighbor with the same tie-breaking as [`KdTree::nearest`].
pub fn nearest_brute_force(points: &[Vec3], query: &Vec3) -> Option<(usize, f64)> {
    let mut best = None;
    for (i, p) in points.iter().enumerate() {
        consider(&mut best, i, (p - query).norm_squared());
    }
    best
}

/// Nearest-neighbor index choosing between a linear scan and a [`KdTree`] by size.
#[derive(Debug, Clone)]
pub enum NearestIndex {
    Scan(Vec<Vec3>),
    Tree(KdTree),
}

impl NearestIndex {
    pub fn new(points: Vec<Vec3>) -> Self {
        if points.len() < BRUTE_FORCE_BELOW {
            NearestIndex::Scan(points)
        } else {
            NearestIndex::Tree(KdTree::new(points))
        }
    }

    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        match self {
            NearestIndex::Scan(points) => nearest_brute_force(points, query),
            NearestIndex::Tree(tree) => tree.nearest(query),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(prop::array::uniform3(-10.0f64..10.0).prop_map(Vec3::from), 1..400)
    }

    #[test]
    fn empty_tree_has_no_neighbor() {
        assert_eq!(KdTree::new(Vec::new()).nearest(&Vec3::zeros()), None);
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let points = vec![Vec3::new(1.0, 1.0, 1.0); 100];
        let tree = KdTree::new(points);
        assert_eq!(tree.nearest(&Vec3::zeros()).unwrap().0, 0);
    }

    #[test]
    fn lattice_ties_match_brute_force() {
        let mut points = Vec::new();
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..8 {
                    points.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        points.reverse();
        let tree = KdTree::new(points.clone());
        for q in [Vec3::new(0.5, 0.5, 0.5), Vec3::new(3.5, 2.0, 7.5), Vec3::new(-1.0, 4.5, 4.5)] {
            assert_eq!(tree.nearest(&q), nearest_brute_force(&points, &q));
        }
    }

    proptest! {
        #[test]
        fn tree_matches_scan(points in pts(), queries in prop::collection::vec(prop::array::uniform3(-12.0f64..12.0), 20)) {
            let tree = KdTree::new(points.clone());
            for q in queries {
                let q = Vec3::from(q);
                prop_assert_eq!(tree.nearest(&q), nearest_brute_force(&points, &q));
            }
        }
    }
}
