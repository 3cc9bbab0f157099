//! Appearance features: a handcrafted intensity/difference histogram
//! extractor and PCA reduction backed by a cyclic Jacobi eigensolver.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{push_f32s, push_u32, Reader, SegmentId};

pub const HIST_BINS: usize = 32;
pub const HANDCRAFTED_DIM: usize = 2 * HIST_BINS;

const PCA_MAGIC: &[u8; 4] = b"PCA1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub segment_id: SegmentId,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(segment_id: SegmentId, values: Vec<f64>) -> Self {
        FeatureVector { segment_id, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}

/// Checks that every vector has the same dimension and returns it.
pub(crate) fn common_dim(features: &[FeatureVector]) -> Result<usize> {
    let dim = features.first().ok_or(Error::Empty("feature set"))?.dim();
    for f in features {
        if f.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.dim(),
            });
        }
    }
    Ok(dim)
}

#[inline]
fn bin(value: u8) -> usize {
    value as usize * HIST_BINS / 256
}

/// 64-dim descriptor of a segment: the mean over frames of each frame's
/// normalized 32-bin intensity histogram, followed by the normalized 32-bin
/// histogram of absolute differences between consecutive frames.
pub fn extract_handcrafted(segment_id: SegmentId, frames: &[Vec<u8>]) -> Result<FeatureVector> {
    if frames.is_empty() {
        return Err(Error::Empty("segment has no frames"));
    }
    if frames.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            got: frames.len(),
        });
    }
    let size = frames[0].len();
    if size == 0 {
        return Err(Error::Empty("zero-sized frame"));
    }
    if let Some(f) = frames.iter().find(|f| f.len() != size) {
        return Err(Error::DimensionMismatch {
            expected: size,
            got: f.len(),
        });
    }

    let mut values = vec![0.0; HANDCRAFTED_DIM];
    let (intensity, diff) = values.split_at_mut(HIST_BINS);

    let mut counts = [0usize; HIST_BINS];
    for f in frames {
        for &p in f {
            counts[bin(p)] += 1;
        }
    }
    // Each frame has `size` pixels, so the mean of per-frame normalized
    // histograms equals the pooled histogram over all frames.
    let total = (size * frames.len()) as f64;
    for (h, c) in intensity.iter_mut().zip(counts) {
        *h = c as f64 / total;
    }

    let mut counts = [0usize; HIST_BINS];
    for pair in frames.windows(2) {
        for (&a, &b) in pair[0].iter().zip(&pair[1]) {
            counts[bin(a.abs_diff(b))] += 1;
        }
    }
    let total = (size * (frames.len() - 1)) as f64;
    for (h, c) in diff.iter_mut().zip(counts) {
        *h = c as f64 / total;
    }

    Ok(FeatureVector::new(segment_id, values))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvector `j` stored as row
/// `j`. Iterates until the off-diagonal norm drops below
/// `1e-10 * ||A||_F`.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let frob = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-10 * frob;
    let off = |a: &[Vec<f64>]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };

    for _sweep in 0..100 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let values: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    let vectors: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d`, by nonincreasing eigenvalue.
    pub components: Vec<Vec<f64>>,
}

/// Sample covariance (n - 1 denominator) and mean of a feature set.
pub fn covariance(features: &[FeatureVector]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = common_dim(features)?;
    let n = features.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples { needed: 2, got: n });
    }
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, x) in mean.iter_mut().zip(&f.values) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; d]; d];
    for f in features {
        let c: Vec<f64> = f.values.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            if c[i] == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    Ok((mean, cov))
}

impl PcaModel {
    pub fn fit(features: &[FeatureVector], k: usize) -> Result<Self> {
        let d = common_dim(features)?;
        if k > d {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {k} components of {d}-dimensional data"
            )));
        }
        for f in features {
            f.check_finite()?;
        }
        let (mean, cov) = covariance(features)?;
        let (values, vectors) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..d).collect();
        // Stable sort keeps index order among equal eigenvalues.
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let components = order
            .into_iter()
            .take(k)
            .map(|j| {
                let mut c = vectors[j].clone();
                if let Some(first) = c.iter().find(|x| x.abs() > 1e-12) {
                    if *first < 0.0 {
                        c.iter_mut().for_each(|x| *x = -*x);
                    }
                }
                c
            })
            .collect();
        Ok(PcaModel { mean, components })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    fn centered(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        if f.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: f.dim(),
            });
        }
        Ok(f.values.iter().zip(&self.mean).map(|(x, m)| x - m).collect())
    }

    pub fn transform(&self, f: &FeatureVector) -> Result<FeatureVector> {
        let c = self.centered(f)?;
        let values = self.components.iter().map(|comp| dot(comp, &c)).collect();
        Ok(FeatureVector::new(f.segment_id, values))
    }

    /// Squared norm of the part of `f - mean` outside the retained subspace.
    pub fn reconstruction_error(&self, f: &FeatureVector) -> Result<f64> {
        let c = self.centered(f)?;
        let total: f64 = c.iter().map(|x| x * x).sum();
        let kept: f64 = self.components.iter().map(|comp| dot(comp, &c).powi(2)).sum();
        Ok((total - kept).max(0.0))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(PCA_MAGIC);
        push_u32(&mut out, self.dim())?;
        push_u32(&mut out, self.k())?;
        push_f32s(&mut out, &self.mean)?;
        for c in &self.components {
            push_f32s(&mut out, c)?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PCA_MAGIC)?;
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        if k > d {
            return Err(Error::MalformedHeader(format!("k={k} exceeds d={d}")));
        }
        r.require((d + k * d) * 4)?;
        let mean = r.f32s(d, 0)?;
        let components = (0..k)
            .map(|j| r.f32s(d, d + j * d))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(PcaModel { mean, components })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
