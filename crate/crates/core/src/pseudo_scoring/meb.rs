//! Minimum enclosing ball by Badoiu-Clarkson iteration: start at a data
//! point, then for `t = 1..=ceil(1/eps^2)` step the center a fraction
//! `1/(t+1)` of the way toward the current farthest point.
//!
//! The center is kept as a convex combination of the data points, so each
//! round costs O(n) using a precomputed Gram matrix instead of O(n*d).

use crate::error::{Error, Result};
use crate::features::{common_dim, FeatureVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypersphere {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Hypersphere {
    pub fn fit(features: &[FeatureVector], epsilon: f64) -> Result<Self> {
        let d = common_dim(features)?;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::OutOfRange {
                what: "meb epsilon",
                value: epsilon,
            });
        }
        let n = features.len();
        let rounds = (1.0 / (epsilon * epsilon)).ceil() as usize;

        // Work relative to the data mean to limit cancellation in the Gram
        // expansion of squared distances.
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, x) in mean.iter_mut().zip(&f.values) {
                *m += x / n as f64;
            }
        }
        let pts: Vec<Vec<f64>> = features
            .iter()
            .map(|f| f.values.iter().zip(&mean).map(|(x, m)| x - m).collect())
            .collect();
        let gram: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| pts.iter().map(|q| dot(p, q)).collect())
            .collect();

        // center = sum_i w_i p_i; proj_i = <p_i, center>; cc = |center|^2.
        let mut weights = vec![0.0; n];
        weights[0] = 1.0;
        let mut proj: Vec<f64> = gram[0].clone();
        let mut cc = gram[0][0];

        for t in 1..=rounds {
            let far = (0..n)
                .map(|i| (i, gram[i][i] - 2.0 * proj[i] + cc))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            let a = 1.0 / (t as f64 + 1.0);
            let b = 1.0 - a;
            cc = b * b * cc + 2.0 * a * b * proj[far] + a * a * gram[far][far];
            for i in 0..n {
                proj[i] = b * proj[i] + a * gram[i][far];
                weights[i] *= b;
            }
            weights[far] += a;
        }

        let mut center = mean;
        for (w, p) in weights.iter().zip(&pts) {
            for (c, x) in center.iter_mut().zip(p) {
                *c += w * x;
            }
        }
        let radius = features
            .iter()
            .map(|f| distance(&center, &f.values))
            .fold(0.0, f64::max);
        Ok(Hypersphere { center, radius })
    }

    pub fn distance(&self, f: &FeatureVector) -> Result<f64> {
        if f.dim() != self.center.len() {
            return Err(Error::DimensionMismatch {
                expected: self.center.len(),
                got: f.dim(),
            });
        }
        Ok(distance(&self.center, &f.values))
    }

    /// Distance from the center scaled by the radius (the farthest training
    /// distance), clipped to 1.
    pub fn score(&self, f: &FeatureVector) -> Result<f64> {
        let d = self.distance(f)?;
        if self.radius == 0.0 {
            return Ok(if d == 0.0 { 0.0 } else { 1.0 });
        }
        ocsvm_score(self, f, self.radius)
    }
}

/// `min(1, |F - c| / calibration)`.
pub fn ocsvm_score(sphere: &Hypersphere, f: &FeatureVector, calibration: f64) -> Result<f64> {
    if calibration.is_nan() || calibration <= 0.0 {
        return Err(Error::OutOfRange {
            what: "hypersphere calibration",
            value: calibration,
        });
    }
    Ok((sphere.distance(f)? / calibration).min(1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SegmentId;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector::new(SegmentId(0), values)
    }

    #[test]
    fn single_point() {
        let s = Hypersphere::fit(&[fv(vec![3.0, -1.0])], 1e-2).unwrap();
        assert_eq!(s.center, vec![3.0, -1.0]);
        assert_eq!(s.radius, 0.0);
    }

    #[test]
    fn symmetric_pair() {
        let eps = 1e-3;
        let s = Hypersphere::fit(&[fv(vec![-1.0]), fv(vec![1.0])], eps).unwrap();
        assert!(s.center[0].abs() <= eps);
        assert!((s.radius - 1.0).abs() <= eps);
    }

    #[test]
    fn empty_input() {
        assert!(Hypersphere::fit(&[], 1e-3).is_err());
    }

    #[test]
    fn score_normalization() {
        let data = vec![fv(vec![-2.0, 0.0]), fv(vec![2.0, 0.0]), fv(vec![0.0, 1.0])];
        let s = Hypersphere::fit(&data, 1e-2).unwrap();
        assert_eq!(s.score(&fv(s.center.clone())).unwrap(), 0.0);
        let far = data
            .iter()
            .max_by(|a, b| s.distance(a).unwrap().total_cmp(&s.distance(b).unwrap()))
            .unwrap();
        assert_eq!(s.score(far).unwrap(), 1.0);
        let half: Vec<f64> = s.center.iter().zip(&far.values).map(|(c, x)| c + (x - c) / 2.0).collect();
        assert!((s.score(&fv(half)).unwrap() - 0.5).abs() < 1e-12);
        assert!(ocsvm_score(&s, &data[0], 0.0).is_err());
        assert!(s.score(&fv(vec![1.0])).is_err());
    }

    #[test]
    fn radius_at_least_half_diameter() {
        let mut rng = crate::rng::SeededRng::new(77);
        let data: Vec<_> = (0..40).map(|_| fv((0..4).map(|_| rng.normal()).collect())).collect();
        let s = Hypersphere::fit(&data, 1e-2).unwrap();
        let mut diam: f64 = 0.0;
        for a in &data {
            for b in &data {
                diam = diam.max(distance(&a.values, &b.values));
            }
        }
        assert!(s.radius >= diam / 2.0 - 1e-12);
    }
}
