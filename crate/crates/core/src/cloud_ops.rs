//! Point cloud containers and the sampling/grouping primitives: farthest
//! point sampling, k-nearest-neighbor grouping and relative coordinates.

use std::sync::Arc;

use crate::diffcore::{Real, Tensor};
use crate::group_algebra::{dist2, motion_act, sub, FiniteRotationGroup, RigidMotion, RotationElement, Vec3};
use crate::{Error, Result};

/// Positions with per-point scalar features and optional per-point labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    /// Row-major `N × feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<Vec3>,
        features: Vec<f64>,
        feature_dim: usize,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::ShapeError("a point cloud needs at least one point".into()));
        }
        if features.len() != n * feature_dim {
            return Err(Error::ShapeError(format!(
                "{} feature values for {n} points of dimension {feature_dim}",
                features.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::ShapeError(format!("{} labels for {n} points", l.len())));
            }
        }
        if !positions.iter().flatten().chain(&features).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue("point cloud"));
        }
        Ok(PointCloud {
            positions,
            features,
            feature_dim,
            labels,
        })
    }

    /// A cloud whose only feature is the constant 1.
    pub fn with_unit_features(positions: Vec<Vec3>, labels: Option<Vec<usize>>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![1.0; n], 1, labels)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

/// Features on `P × G`: one vector per (point, group element) pair, stored
/// as a `[N, |G|, d]` tensor.
#[derive(Clone, Debug)]
pub struct LiftedCloud<T> {
    pub positions: Vec<Vec3>,
    pub group: Arc<FiniteRotationGroup>,
    pub features: Tensor<T>,
}

impl<T: Real> LiftedCloud<T> {
    pub fn new(positions: Vec<Vec3>, group: Arc<FiniteRotationGroup>, features: Tensor<T>) -> Result<Self> {
        let expect = [positions.len(), group.order()];
        if features.rank() != 3 || features.shape()[..2] != expect {
            return Err(Error::ShapeError(format!(
                "lifted features {:?} do not match {} points × {} group elements",
                features.shape(),
                expect[0],
                expect[1]
            )));
        }
        if !features.all_finite() {
            return Err(Error::NonFiniteValue("lifted features"));
        }
        Ok(LiftedCloud {
            positions,
            group,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[2]
    }

    /// Feature vector at point `p`, group slot `h`.
    pub fn at(&self, p: usize, h: usize) -> &[T] {
        let (g, d) = (self.group.order(), self.channels());
        let start = (p * g + h) * d;
        &self.features.data()[start..start + d]
    }
}

/// Centroids chosen by sampling, and the neighbors grouped around each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    pub centroid_indices: Vec<usize>,
    /// Row-major `K × neighbors_per_centroid`.
    pub neighbor_indices: Vec<usize>,
    pub neighbors_per_centroid: usize,
}

impl NeighborIndex {
    pub fn num_centroids(&self) -> usize {
        self.centroid_indices.len()
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        let c = self.neighbors_per_centroid;
        &self.neighbor_indices[k * c..(k + 1) * c]
    }
}

/// Greedy farthest point sampling. The first pick is `start`; each further
/// pick maximizes the distance to the picked set, ties going to the smallest
/// index.
pub fn farthest_point_sample(positions: &[Vec3], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if k > n {
        return Err(Error::SampleTooLarge {
            requested: k,
            available: n,
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(Error::IndexError { index: start, len: n });
    }
    let mut picked = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..k {
        picked.push(current);
        let c = positions[current];
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in positions.iter().enumerate() {
            let d = dist2(*p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(picked)
}

/// The `c` nearest points to each centroid, nearest first, ties by index.
/// A centroid is always its own first neighbor.
pub fn knn_group(positions: &[Vec3], centroid_indices: &[usize], c: usize) -> Result<NeighborIndex> {
    let n = positions.len();
    if c > n {
        return Err(Error::NeighborhoodTooLarge {
            requested: c,
            available: n,
        });
    }
    let mut neighbor_indices = Vec::with_capacity(centroid_indices.len() * c);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &q in centroid_indices {
        if q >= n {
            return Err(Error::IndexError { index: q, len: n });
        }
        let center = positions[q];
        order.clear();
        order.extend(positions.iter().enumerate().map(|(i, p)| (dist2(*p, center), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if c > 0 && c < n {
            order.select_nth_unstable_by(c - 1, cmp);
        }
        let nearest = &mut order[..c];
        nearest.sort_unstable_by(cmp);
        neighbor_indices.extend(nearest.iter().map(|&(_, i)| i));
    }
    Ok(NeighborIndex {
        centroid_indices: centroid_indices.to_vec(),
        neighbor_indices,
        neighbors_per_centroid: c,
    })
}

/// Farthest point sampling followed by kNN grouping, starting from index 0.
pub fn sample_and_group(positions: &[Vec3], k: usize, c: usize) -> Result<NeighborIndex> {
    let centroids = farthest_point_sample(positions, k, 0)?;
    knn_group(positions, &centroids, c)
}

/// `h⁻¹ · (p − q)`: the offset of `p` from `q` in the frame of `h`.
pub fn relative_coords(q: Vec3, p: Vec3, h: &RotationElement) -> Vec3 {
    h.apply_inverse(sub(p, q))
}

/// Moves every position by `m`. Features and labels are scalars and are
/// copied unchanged.
pub fn transform_cloud(m: &RigidMotion, x: &PointCloud) -> Result<PointCloud> {
    let positions = x
        .positions
        .iter()
        .map(|p| motion_act(m, *p))
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud {
        positions,
        ..x.clone()
    })
}

/// Reorders rows so that output row `i` is input row `perm[i]`.
pub fn permute_cloud(perm: &[usize], x: &PointCloud) -> Result<PointCloud> {
    let n = x.len();
    check_permutation(perm, n)?;
    let d = x.feature_dim;
    Ok(PointCloud {
        positions: perm.iter().map(|&i| x.positions[i]).collect(),
        features: perm.iter().flat_map(|&i| x.feature(i).iter().copied()).collect(),
        feature_dim: d,
        labels: x.labels.as_ref().map(|l| perm.iter().map(|&i| l[i]).collect()),
    })
}

pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::PermutationError(format!("length {} for {n} points", perm.len())));
    }
    let mut seen = vec![false; n];
    for &i in perm {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::PermutationError(format!("entry {i} is out of range or repeated")));
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_algebra::{make_group, GroupName};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_positions(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect()
    }

    /// Brute-force greedy: recompute every min distance from scratch.
    fn fps_oracle(positions: &[Vec3], k: usize, start: usize) -> Vec<usize> {
        let mut picked = vec![start];
        while picked.len() < k {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for i in 0..positions.len() {
                let d = picked
                    .iter()
                    .map(|&j| dist2(positions[i], positions[j]))
                    .fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, i);
                }
            }
            picked.push(best.1);
        }
        picked
    }

    #[test]
    fn fps_examples() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.1, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&pts, 2, 0).unwrap(), vec![0, 3]);
        assert_eq!(fps_oracle(&pts, 2, 0), vec![0, 3]);
        let all = farthest_point_sample(&pts, 4, 2).unwrap();
        assert_eq!(all[0], 2);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert!(matches!(
            farthest_point_sample(&pts, 5, 0),
            Err(Error::SampleTooLarge { requested: 5, available: 4 })
        ));
    }

    #[test]
    fn fps_matches_oracle_and_is_motion_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pts = random_positions(&mut rng, 40);
            let picks = farthest_point_sample(&pts, 12, 0).unwrap();
            assert_eq!(picks, fps_oracle(&pts, 12, 0));
            let mut uniq = picks.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), picks.len());

            let m = RigidMotion::free(
                crate::group_algebra::sample_rotation(&mut rng, crate::group_algebra::RotationMode::So3),
                [rng.random_range(-5.0..5.0), 1.0, -2.0],
            );
            let moved: Vec<Vec3> = pts.iter().map(|p| motion_act(&m, *p).unwrap()).collect();
            assert_eq!(farthest_point_sample(&moved, 12, 0).unwrap(), picks);
        }
    }

    #[test]
    fn knn_examples() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let nb = knn_group(&pts, &[0, 2], 1).unwrap();
        assert_eq!(nb.neighbor_indices, vec![0, 2]);
        let nb = knn_group(&pts, &[0], 2).unwrap();
        assert_eq!(nb.neighbors(0), &[0, 1]);
        assert!(matches!(
            knn_group(&pts, &[0], 4),
            Err(Error::NeighborhoodTooLarge { .. })
        ));
        // tie between 1 and 2 at distance 1 from point 0 goes to index 1
        let tie = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(knn_group(&tie, &[0], 2).unwrap().neighbors(0), &[0, 1]);
    }

    #[test]
    fn knn_sorted_and_motion_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g24 = Arc::new(make_group(GroupName::G24).unwrap());
        for _ in 0..50 {
            let pts = random_positions(&mut rng, 30);
            let nb = sample_and_group(&pts, 8, 6).unwrap();
            for k in 0..8 {
                let q = pts[nb.centroid_indices[k]];
                let row = nb.neighbors(k);
                assert_eq!(row[0], nb.centroid_indices[k]);
                for w in row.windows(2) {
                    assert!(dist2(pts[w[0]], q) <= dist2(pts[w[1]], q));
                }
                // exhaustive distance sort oracle
                let mut all: Vec<usize> = (0..30).collect();
                all.sort_by(|&a, &b| dist2(pts[a], q).total_cmp(&dist2(pts[b], q)).then(a.cmp(&b)));
                assert_eq!(row, &all[..6]);
            }
            let m = RigidMotion::in_group(g24.clone(), rng.random_range(0..24), [0.5, -3.0, 2.0]).unwrap();
            let moved: Vec<Vec3> = pts.iter().map(|p| motion_act(&m, *p).unwrap()).collect();
            assert_eq!(sample_and_group(&moved, 8, 6).unwrap(), nb);
        }
    }

    #[test]
    fn relative_coords_examples() {
        let q = [0.3, -0.2, 1.0];
        let p = [1.0, 2.0, 3.0];
        assert_eq!(relative_coords(q, p, &RotationElement::IDENTITY), sub(p, q));
        let r = relative_coords([0.0; 3], [1.0, 0.0, 0.0], &RotationElement::rot_z(PI / 2.0));
        assert!((r[0]).abs() < 1e-15 && (r[1] + 1.0).abs() < 1e-15 && r[2].abs() < 1e-15);
    }

    #[test]
    fn relative_coords_conjugation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g24 = make_group(GroupName::G24).unwrap();
        for _ in 0..200 {
            let q: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let p: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let t: Vec3 = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
            let g = &g24.elements[rng.random_range(0..24)];
            let h = &g24.elements[rng.random_range(0..24)];
            let gh = g.mul(h);
            let gp = crate::group_algebra::add(g.apply(p), t);
            let gq = crate::group_algebra::add(g.apply(q), t);
            let lhs = relative_coords(gq, gp, &gh);
            let rhs = relative_coords(q, p, h);
            for i in 0..3 {
                assert!((lhs[i] - rhs[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn transform_and_permute() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloud = PointCloud::new(
            random_positions(&mut rng, 10),
            (0..20).map(|v| v as f64).collect(),
            2,
            Some((0..10).map(|v| v % 3).collect()),
        )
        .unwrap();
        let g4 = Arc::new(make_group(GroupName::G4).unwrap());
        assert_eq!(transform_cloud(&RigidMotion::identity(g4.clone()), &cloud).unwrap(), cloud);

        let shift = RigidMotion::free(RotationElement::IDENTITY, [1.0, 2.0, 3.0]);
        let moved = transform_cloud(&shift, &cloud).unwrap();
        assert_eq!(moved.features, cloud.features);
        assert_eq!(moved.positions[3], crate::group_algebra::add(cloud.positions[3], [1.0, 2.0, 3.0]));

        let m = RigidMotion::free(
            crate::group_algebra::sample_rotation(&mut rng, crate::group_algebra::RotationMode::So3),
            [0.4, 0.1, -0.9],
        );
        let back = transform_cloud(
            &crate::group_algebra::motion_inverse(&m),
            &transform_cloud(&m, &cloud).unwrap(),
        )
        .unwrap();
        for (a, b) in back.positions.iter().zip(&cloud.positions) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() <= 1e-12);
            }
        }

        let ident: Vec<usize> = (0..10).collect();
        assert_eq!(permute_cloud(&ident, &cloud).unwrap(), cloud);
        let perm = vec![3, 1, 4, 0, 9, 2, 6, 5, 8, 7];
        let p = permute_cloud(&perm, &cloud).unwrap();
        assert_eq!(p.feature(0), cloud.feature(3));
        assert_eq!(permute_cloud(&invert_permutation(&perm), &p).unwrap(), cloud);
        assert!(matches!(
            permute_cloud(&[0, 0, 1, 2, 3, 4, 5, 6, 7, 8], &cloud),
            Err(Error::PermutationError(_))
        ));
    }

    #[test]
    fn cloud_validation() {
        assert!(PointCloud::new(vec![], vec![], 1, None).is_err());
        assert!(matches!(
            PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], vec![1.0], 1, None),
            Err(Error::NonFiniteValue(_))
        ));
    }
}
