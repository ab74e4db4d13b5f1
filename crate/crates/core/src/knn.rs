//! Exact nearest-neighbour queries over a static point set.

use std::num::NonZeroUsize;

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use crate::error::{Error, Result};
use crate::types::Vec3;

/// One neighbour: index into the indexed slice and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Immutable exact k-d tree over 3D points.
pub struct KnnIndex {
    tree: Option<ImmutableKdTree<f64, 3>>,
    len: usize,
}

impl KnnIndex {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Ok(Self { tree: None, len: 0 });
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::Parameter("too many points for the k-d tree".into()));
        }
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&raw)
            .map_err(|e| Error::Parameter(format!("k-d tree construction failed: {e:?}")))?;
        Ok(Self {
            tree: Some(tree),
            len: points.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The `k` nearest points sorted by distance. `exclude` drops one index
    /// (the query point itself) from the result.
    pub fn knn(&self, query: &Vec3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let Some(tree) = &self.tree else {
            return Vec::new();
        };
        let want = (k + usize::from(exclude.is_some())).min(self.len);
        let Some(want) = NonZeroUsize::new(want) else {
            return Vec::new();
        };
        let mut found: Vec<Neighbor> = tree
            .query(&[query.x, query.y, query.z])
            .nearest_n::<SquaredEuclidean<f64>>(want)
            .execute()
            .into_iter()
            .map(|r| Neighbor {
                index: r.item as usize,
                distance: r.distance.sqrt(),
            })
            .collect();
        found.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        if let Some(ex) = exclude {
            if let Some(pos) = found.iter().position(|n| n.index == ex) {
                found.remove(pos);
            }
        }
        found.truncate(k);
        found
    }

    pub fn nearest(&self, query: &Vec3) -> Option<Neighbor> {
        self.knn(query, 1, None).into_iter().next()
    }

    /// Whether any indexed point lies within `radius` (inclusive).
    pub fn any_within(&self, query: &Vec3, radius: f64) -> bool {
        self.nearest(query).is_some_and(|n| n.distance <= radius)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn brute(points: &[Vec3], q: &Vec3, k: usize, exclude: Option<usize>) -> Vec<f64> {
        let mut d: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(_, p)| (p - q).norm())
            .collect();
        d.sort_by(f64::total_cmp);
        d.truncate(k);
        d
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..800)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let index = KnnIndex::new(&pts).unwrap();
        for (i, p) in pts.iter().enumerate().step_by(7) {
            let got: Vec<f64> = index.knn(p, 5, Some(i)).iter().map(|n| n.distance).collect();
            let want = brute(&pts, p, 5, Some(i));
            assert_eq!(got.len(), 5);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * w.max(1.0));
            }
        }
    }

    #[test]
    fn duplicates_and_small_sets() {
        let pts = vec![Vec3::zeros(); 40];
        let index = KnnIndex::new(&pts).unwrap();
        let n = index.knn(&Vec3::zeros(), 3, Some(0));
        assert_eq!(n.len(), 3);
        assert!(n.iter().all(|n| n.distance == 0.0 && n.index != 0));

        let empty = KnnIndex::new(&[]).unwrap();
        assert!(empty.knn(&Vec3::zeros(), 3, None).is_empty());
        assert!(empty.nearest(&Vec3::zeros()).is_none());

        let two = KnnIndex::new(&[Vec3::zeros(), Vec3::x()]).unwrap();
        assert_eq!(two.knn(&Vec3::zeros(), 5, Some(0)).len(), 1);
    }
}
