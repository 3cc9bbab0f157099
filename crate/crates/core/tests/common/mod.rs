//! Independent reference implementations used by the integration and
//! acceptance tests. None of these call into the code under test.

#![allow(dead_code)]

/// Expected path length normalizer from the exact harmonic number.
pub fn harmonic_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = n - 1;
    let h: f64 = (1..=m).rev().map(|i| 1.0 / i as f64).sum();
    2.0 * h - 2.0 * m as f64 / n as f64
}

/// Asymptotic gap between the exact normalizer and its `ln + gamma` form.
pub fn harmonic_gap(n: usize) -> f64 {
    let m = (n - 1) as f64;
    2.0 * (1.0 / (2.0 * m) - 1.0 / (12.0 * m * m) + 1.0 / (120.0 * m.powi(4)))
}

/// Gaussian elimination with partial pivoting. Returns None when singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    dot(&sub(a, b), &sub(a, b)).sqrt()
}

/// Smallest sphere whose boundary passes through every point of `support`.
fn circumsphere(support: &[&Vec<f64>]) -> Option<(Vec<f64>, f64)> {
    let p0 = support[0];
    let dirs: Vec<Vec<f64>> = support[1..].iter().map(|p| sub(p, p0)).collect();
    let k = dirs.len();
    let a: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| 2.0 * dot(&dirs[i], &dirs[j])).collect()).collect();
    let b: Vec<f64> = dirs.iter().map(|d| dot(d, d)).collect();
    let lambda = solve_dense(a, b)?;
    let mut c = p0.clone();
    for (l, d) in lambda.iter().zip(&dirs) {
        for (ci, di) in c.iter_mut().zip(d) {
            *ci += l * di;
        }
    }
    let r = dist(&c, p0);
    Some((c, r))
}

/// Minimum enclosing ball radius by enumerating every support set of two to
/// `dim + 1` points.
pub fn brute_force_meb_radius(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    let mut idx = Vec::new();
    fn recurse(
        points: &[Vec<f64>],
        start: usize,
        max: usize,
        idx: &mut Vec<usize>,
        best: &mut f64,
    ) {
        if idx.len() >= 2 {
            let support: Vec<&Vec<f64>> = idx.iter().map(|&i| &points[i]).collect();
            if let Some((c, r)) = circumsphere(&support) {
                if r < *best && points.iter().all(|p| dist(&c, p) <= r * (1.0 + 1e-9) + 1e-12) {
                    *best = r;
                }
            }
        }
        if idx.len() == max {
            return;
        }
        for i in start..points.len() {
            idx.push(i);
            recurse(points, i + 1, max, idx, best);
            idx.pop();
        }
    }
    if n == 1 {
        return 0.0;
    }
    recurse(points, 0, dim + 1, &mut idx, &mut best);
    best
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Natural cubic spline through `(xs, ys)` by solving the full
/// `4(n-1)` coefficient system. Returns per-interval `[a, b, c, d]` in
/// powers of `x - xs[i]`.
pub fn dense_spline(xs: &[f64], ys: &[f64]) -> Vec<[f64; 4]> {
    let segs = xs.len() - 1;
    let n = 4 * segs;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    let mut row = 0;
    let poly = |h: f64| [1.0, h, h * h, h * h * h];
    let d1 = |h: f64| [0.0, 1.0, 2.0 * h, 3.0 * h * h];
    let d2 = |h: f64| [0.0, 0.0, 2.0, 6.0 * h];
    for i in 0..segs {
        let h = xs[i + 1] - xs[i];
        for (k, v) in poly(0.0).iter().enumerate() {
            a[row][4 * i + k] = *v;
        }
        b[row] = ys[i];
        row += 1;
        for (k, v) in poly(h).iter().enumerate() {
            a[row][4 * i + k] = *v;
        }
        b[row] = ys[i + 1];
        row += 1;
    }
    for i in 0..segs - 1 {
        let h = xs[i + 1] - xs[i];
        for (k, v) in d1(h).iter().enumerate() {
            a[row][4 * i + k] = *v;
        }
        for (k, v) in d1(0.0).iter().enumerate() {
            a[row][4 * (i + 1) + k] -= *v;
        }
        row += 1;
        for (k, v) in d2(h).iter().enumerate() {
            a[row][4 * i + k] = *v;
        }
        for (k, v) in d2(0.0).iter().enumerate() {
            a[row][4 * (i + 1) + k] -= *v;
        }
        row += 1;
    }
    for (k, v) in d2(0.0).iter().enumerate() {
        a[row][k] = *v;
    }
    row += 1;
    let h = xs[segs] - xs[segs - 1];
    for (k, v) in d2(h).iter().enumerate() {
        a[row][4 * (segs - 1) + k] = *v;
    }
    let coef = solve_dense(a, b).expect("spline system is nonsingular");
    (0..segs).map(|i| [coef[4 * i], coef[4 * i + 1], coef[4 * i + 2], coef[4 * i + 3]]).collect()
}

pub fn eval_dense_spline(xs: &[f64], ys: &[f64], coef: &[[f64; 4]], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let i = (0..last).rfind(|&i| xs[i] <= x).unwrap();
    let h = x - xs[i];
    let c = coef[i];
    c[0] + c[1] * h + c[2] * h * h + c[3] * h * h * h
}

/// Exhaustive SAD block matching with the tie order
/// `(|dx| + |dy|, dy, dx)`. Returns `(dx, dy)` per block in raster order.
pub fn exhaustive_sad(
    a: &[u8],
    b: &[u8],
    width: usize,
    height: usize,
    block: usize,
    search: isize,
) -> Vec<(isize, isize)> {
    let mut out = Vec::new();
    let mut by = 0;
    while by < height {
        let mut bx = 0;
        while bx < width {
            let bw = block.min(width - bx);
            let bh = block.min(height - by);
            let mut all = Vec::new();
            for dy in -search..=search {
                for dx in -search..=search {
                    let x0 = bx as isize + dx;
                    let y0 = by as isize + dy;
                    if x0 < 0 || y0 < 0 || x0 + bw as isize > width as isize || y0 + bh as isize > height as isize {
                        continue;
                    }
                    let mut sad = 0i64;
                    for r in 0..bh {
                        for c in 0..bw {
                            let va = a[(by + r) * width + bx + c] as i64;
                            let vb = b[(y0 as usize + r) * width + x0 as usize + c] as i64;
                            sad += (va - vb).abs();
                        }
                    }
                    all.push((sad, dx.abs() + dy.abs(), dy, dx));
                }
            }
            let best = all.into_iter().min().unwrap();
            out.push((best.3, best.2));
            bx += block;
        }
        by += block;
    }
    out
}

/// Rectified-linear MLP with logistic output, evaluated directly from
/// row-major layer weights.
pub struct RefNet {
    /// `(rows, cols, weights, bias)` per layer.
    pub layers: Vec<(usize, usize, Vec<f64>, Vec<f64>)>,
}

impl RefNet {
    /// Pre-activations of every layer.
    pub fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut input = x.to_vec();
        let mut out = Vec::new();
        for (li, (rows, cols, w, b)) in self.layers.iter().enumerate() {
            let z: Vec<f64> = (0..*rows)
                .map(|r| b[r] + (0..*cols).map(|c| w[r * cols + c] * input[c]).sum::<f64>())
                .collect();
            input = if li + 1 < self.layers.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            out.push(z);
        }
        out
    }

    pub fn loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| {
                let z = self.pre_activations(x).last().unwrap()[0];
                let p = 1.0 / (1.0 + (-z).exp());
                (p - y).powi(2)
            })
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Smallest |pre-activation| of any hidden unit over the batch.
    pub fn kink_margin(&self, xs: &[Vec<f64>]) -> f64 {
        let hidden = self.layers.len() - 1;
        xs.iter()
            .flat_map(|x| self.pre_activations(x).into_iter().take(hidden).flatten())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }

    fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for (_, _, w, b) in &mut self.layers {
            if k < w.len() {
                return &mut w[k];
            }
            k -= w.len();
            if k < b.len() {
                return &mut b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(_, _, w, b)| w.len() + b.len()).sum()
    }

    /// Central-difference gradient in layer order (weights, then bias).
    pub fn numeric_gradient(&mut self, xs: &[Vec<f64>], ys: &[f64], step: f64) -> Vec<f64> {
        (0..self.param_count())
            .map(|k| {
                let orig = *self.param_mut(k);
                *self.param_mut(k) = orig + step;
                let up = self.loss(xs, ys);
                *self.param_mut(k) = orig - step;
                let down = self.loss(xs, ys);
                *self.param_mut(k) = orig;
                (up - down) / (2.0 * step)
            })
            .collect()
    }
}

/// Textbook local outlier factor of `query` against `points`, skipping the
/// point at `skip`. Assumes distinct pairwise distances.
pub fn reference_lof(points: &[Vec<f64>], query: &[f64], k: usize, skip: Option<usize>) -> f64 {
    let neighbors = |q: &[f64], skip: Option<usize>| -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> =
            (0..points.len()).filter(|&i| Some(i) != skip).map(|i| (i, dist(&points[i], q))).collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        all.truncate(k);
        all
    };
    let k_dist = |i: usize| neighbors(&points[i], Some(i))[k - 1].1;
    let lrd = |nb: &[(usize, f64)]| {
        let reach: f64 = nb.iter().map(|&(j, d)| d.max(k_dist(j))).sum();
        nb.len() as f64 / reach
    };
    let nb = neighbors(query, skip);
    let own = lrd(&nb);
    nb.iter().map(|&(j, _)| lrd(&neighbors(&points[j], Some(j))) / own).sum::<f64>() / k as f64
}
