use crate::error::{Error, Result};
use crate::features::{common_dim, FeatureVector};

use super::meb::distance;

/// Added to mean reachability distances so duplicated points have a large
/// finite density; equal degenerate densities then give LOF = 1.
const DENSITY_EPS: f64 = 1e-10;

/// Local outlier factor over a fixed reference set (exhaustive k-NN).
#[derive(Debug, Clone)]
pub struct LofModel {
    points: Vec<Vec<f64>>,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

impl LofModel {
    pub fn fit(features: &[FeatureVector], k: usize) -> Result<Self> {
        let _ = common_dim(features)?;
        if k == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be at least 1".into()));
        }
        if features.len() <= k {
            return Err(Error::NotEnoughSamples {
                needed: k + 1,
                got: features.len(),
            });
        }
        let points: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
        let neighbors: Vec<Vec<(usize, f64)>> = (0..points.len())
            .map(|i| knn(&points, &points[i], k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighbors.iter().map(|n| n[k - 1].1).collect();
        let lrd = neighbors
            .iter()
            .map(|n| local_density(n, &k_distance))
            .collect();
        Ok(LofModel {
            points,
            k,
            k_distance,
            lrd,
        })
    }

    fn factor(&self, neighbors: &[(usize, f64)]) -> f64 {
        let own = local_density(neighbors, &self.k_distance);
        neighbors.iter().map(|&(j, _)| self.lrd[j]).sum::<f64>() / (self.k as f64 * own)
    }

    /// LOF of a new query against the reference set.
    pub fn score(&self, f: &FeatureVector) -> Result<f64> {
        let dim = self.points[0].len();
        if f.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.dim(),
            });
        }
        Ok(self.factor(&knn(&self.points, &f.values, self.k, None)))
    }

    /// LOF of reference point `i`, excluding the point itself from its
    /// neighborhood.
    pub fn score_training(&self, i: usize) -> f64 {
        self.factor(&knn(&self.points, &self.points[i], self.k, Some(i)))
    }
}

/// `k` nearest points to `q`, distance ties broken by index.
fn knn(points: &[Vec<f64>], q: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != skip)
        .map(|(i, p)| (i, distance(p, q)))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

fn local_density(neighbors: &[(usize, f64)], k_distance: &[f64]) -> f64 {
    let reach: f64 = neighbors
        .iter()
        .map(|&(j, d)| d.max(k_distance[j]))
        .sum::<f64>()
        / neighbors.len() as f64;
    1.0 / (reach + DENSITY_EPS)
}

/// Convenience wrapper: LOF of `f` against `features`.
pub fn lof_score(features: &[FeatureVector], f: &FeatureVector, k_neighbors: usize) -> Result<f64> {
    LofModel::fit(features, k_neighbors)?.score(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SegmentId;
    use crate::rng::SeededRng;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector::new(SegmentId(0), values)
    }

    #[test]
    fn duplicates_have_unit_lof() {
        let data = vec![fv(vec![1.0, 1.0]); 30];
        assert_eq!(lof_score(&data, &fv(vec![1.0, 1.0]), 20).unwrap(), 1.0);
    }

    #[test]
    fn grid_interior_is_inlier() {
        let data: Vec<_> = (0..15)
            .flat_map(|i| (0..15).map(move |j| fv(vec![i as f64, j as f64])))
            .collect();
        let model = LofModel::fit(&data, 20).unwrap();
        let centre = 7 * 15 + 7;
        let lof = model.score_training(centre);
        assert!((0.9..=1.1).contains(&lof), "lof = {lof}");
    }

    #[test]
    fn far_point_is_outlier() {
        let mut rng = SeededRng::new(3);
        let data: Vec<_> = (0..100)
            .map(|_| {
                let a = rng.uniform(0.0, std::f64::consts::TAU);
                let r = rng.uniform(0.0, 1.0);
                fv(vec![r * a.cos(), r * a.sin()])
            })
            .collect();
        let lof = lof_score(&data, &fv(vec![10.0, 0.0]), 20).unwrap();
        assert!(lof > 1.5, "lof = {lof}");
    }

    #[test]
    fn too_small_dataset() {
        let data = vec![fv(vec![0.0]); 5];
        assert!(matches!(LofModel::fit(&data, 5), Err(Error::NotEnoughSamples { .. })));
    }
}
