//! Frame-level evaluation: spline upsampling of segment scores, ROC/AUC and
//! false-alarm rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SegmentView;

/// Natural cubic spline through `(xs[i], ys[i])` with strictly increasing
/// `xs`. Outside `[xs[0], xs[n-1]]` it holds the end values.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                left: xs.len(),
                right: ys.len(),
            });
        }
        if xs.is_empty() {
            return Err(Error::Empty("spline knots"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("knots must be strictly increasing".into()));
        }
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations.
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let j = i + 1;
                diag[i] = 2.0 * (h[j - 1] + h[j]);
                upper[i] = h[j];
                rhs[i] = 6.0 * ((ys[j + 1] - ys[j]) / h[j] - (ys[j] - ys[j - 1]) / h[j - 1]);
            }
            for i in 1..k {
                let lower = h[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(NaturalSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 || x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&k| k <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Upsamples one score per segment to one score per frame through a natural
/// cubic spline with knots at segment centers, clamped to [0, 1].
pub fn interpolate_to_frames(segment_scores: &[f64], views: &[SegmentView]) -> Result<Vec<f64>> {
    if segment_scores.len() != views.len() {
        return Err(Error::LengthMismatch {
            left: segment_scores.len(),
            right: views.len(),
        });
    }
    if views.is_empty() {
        return Err(Error::Empty("segment views"));
    }
    let frames = views.iter().map(|v| v.end).max().unwrap_or(0);
    let xs: Vec<f64> = views.iter().map(SegmentView::center).collect();
    let spline = NaturalSpline::new(&xs, segment_scores)?;
    Ok((0..frames).map(|f| spline.eval(f as f64).clamp(0.0, 1.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC by descending-threshold sweep; equal scores move as one step and the
/// area is integrated with the trapezoid rule.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (px, py) = *points.last().unwrap();
        let (x, y) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (x - px) * (y + py) / 2.0;
        points.push((x, y));
    }
    Ok(RocCurve { points, auc })
}

/// Fraction of ground-truth normal frames scored above `tau`.
pub fn false_alarm_rate(scores: &[f64], labels: &[u8], tau: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let (alarms, normals) = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .fold((0usize, 0usize), |(a, n), (&s, _)| (a + usize::from(s > tau), n + 1));
    if normals == 0 {
        return Err(Error::Empty("no normal frames"));
    }
    Ok(alarms as f64 / normals as f64)
}
