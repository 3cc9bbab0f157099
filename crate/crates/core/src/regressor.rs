//! Fully connected score regressor (rectifier hidden layers, logistic
//! output) trained on mean squared error with AdaGrad.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::ingest::{push_f32s, push_u32, Reader};
use crate::rng::SeededRng;

const MLP_MAGIC: &[u8; 4] = b"MLP1";

pub const DEFAULT_LEARNING_RATE: f64 = 0.005;
pub const DEFAULT_ADAGRAD_EPS: f64 = 1e-8;

/// Affine layer; `weights` is `rows x cols` row-major (rows = outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(r, b)| {
            b + self.weights[r * self.cols..(r + 1) * self.cols]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
        }));
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpRegressor {
    pub layers: Vec<Dense>,
}

/// Parameter-shaped container used for gradients and AdaGrad accumulators.
pub type Gradients = MlpRegressor;

impl MlpRegressor {
    /// Zero-initialized network with the given layer widths (input first,
    /// final width must be 1).
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidArgument(format!(
                "layer sizes {layer_sizes:?} must have >= 2 entries and end in 1"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(MlpRegressor {
            layers: layer_sizes.windows(2).map(|w| Dense::zeros(w[1], w[0])).collect(),
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(layer_sizes)?;
        let mut rng = SeededRng::new(seed);
        for l in &mut m.layers {
            let a = (6.0 / (l.rows + l.cols) as f64).sqrt();
            l.weights.iter_mut().for_each(|w| *w = rng.uniform(-a, a));
        }
        Ok(m)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.rows)).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    fn zeros_like(&self) -> Self {
        MlpRegressor {
            layers: self.layers.iter().map(|l| Dense::zeros(l.rows, l.cols)).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat parameter view in layer order, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::params_mut)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    /// Pre-activations of every layer for one input.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            l.apply(&input, &mut z);
            if i < last {
                input = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn forward_values(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(logistic(self.activations(x).last().unwrap()[0]))
    }

    pub fn forward(&self, x: &FeatureVector) -> Result<f64> {
        self.forward_values(&x.values)
    }

    /// Mean squared error over the batch and its exact gradient.
    pub fn backward(&self, xs: &[&[f64]], targets: &[f64]) -> Result<(f64, Gradients)> {
        if xs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: xs.len(),
                right: targets.len(),
            });
        }
        if xs.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let n = xs.len() as f64;
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for (x, &y) in xs.iter().zip(targets) {
            self.check_input(x)?;
            let pre = self.activations(x);
            let p = logistic(pre[last][0]);
            loss += (p - y).powi(2);
            // dL/dz at the output for the batch-mean loss.
            let mut delta = vec![2.0 * (p - y) * p * (1.0 - p) / n];
            for li in (0..=last).rev() {
                let layer = &self.layers[li];
                let input: Vec<f64> = if li == 0 {
                    x.to_vec()
                } else {
                    pre[li - 1].iter().map(|v| v.max(0.0)).collect()
                };
                let g = &mut grad.layers[li];
                for r in 0..layer.rows {
                    g.bias[r] += delta[r];
                    let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (gw, a) in row.iter_mut().zip(&input) {
                        *gw += delta[r] * a;
                    }
                }
                if li > 0 {
                    let prev = &pre[li - 1];
                    delta = (0..layer.cols)
                        .map(|c| {
                            if prev[c] <= 0.0 {
                                return 0.0;
                            }
                            (0..layer.rows).map(|r| layer.weights[r * layer.cols + c] * delta[r]).sum()
                        })
                        .collect();
                }
            }
        }
        Ok((loss / n, grad))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = MLP_MAGIC.to_vec();
        push_u32(&mut out, self.layers.len())?;
        for l in &self.layers {
            push_u32(&mut out, l.rows)?;
            push_u32(&mut out, l.cols)?;
            push_f32s(&mut out, &l.weights)?;
            push_f32s(&mut out, &l.bias)?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MLP_MAGIC)?;
        let count = r.u32()? as usize;
        if count == 0 {
            return Err(Error::MalformedHeader("no layers".into()));
        }
        let mut layers: Vec<Dense> = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if let Some(prev) = layers.last() {
                if prev.rows != cols {
                    return Err(Error::MalformedHeader(format!(
                        "layer expects {cols} inputs after a {}-wide layer",
                        prev.rows
                    )));
                }
            }
            r.require((rows * cols + rows) * 4)?;
            let weights = r.f32s(rows * cols, 0)?;
            let bias = r.f32s(rows, 0)?;
            layers.push(Dense {
                rows,
                cols,
                weights,
                bias,
            });
        }
        r.finish()?;
        if layers.last().unwrap().rows != 1 {
            return Err(Error::MalformedHeader("output layer must have one unit".into()));
        }
        Ok(MlpRegressor { layers })
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

pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("loss inputs"));
    }
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    pub accumulators: Gradients,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl AdaGradState {
    pub fn new(model: &MlpRegressor, learning_rate: f64) -> Self {
        AdaGradState {
            accumulators: model.zeros_like(),
            learning_rate,
            epsilon: DEFAULT_ADAGRAD_EPS,
        }
    }
}

/// `acc += g^2; theta -= lr * g / (sqrt(acc) + eps)`, element-wise.
pub fn adagrad_step(model: &mut MlpRegressor, state: &mut AdaGradState, grad: &Gradients) -> Result<()> {
    if model.layer_sizes() != grad.layer_sizes() || model.layer_sizes() != state.accumulators.layer_sizes() {
        return Err(Error::InvalidArgument("gradient shape does not match model".into()));
    }
    let (lr, eps) = (state.learning_rate, state.epsilon);
    for ((p, a), g) in model.params_mut().zip(state.accumulators.params_mut()).zip(grad.params()) {
        *a += g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
    Ok(())
}

/// How mini-batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Sequential walk over a seeded permutation, reshuffled when exhausted.
    Shuffled,
    /// Half the batch from targets >= 0.5, half from the rest. A class with
    /// fewer than half a batch is drawn with replacement; an empty class
    /// hands its share to the other.
    Balanced,
}

struct Queue {
    items: Vec<usize>,
    pos: usize,
}

impl Queue {
    fn new(items: Vec<usize>) -> Self {
        let pos = items.len();
        Queue { items, pos }
    }

    fn next(&mut self, rng: &mut SeededRng) -> usize {
        if self.pos == self.items.len() {
            rng.shuffle(&mut self.items);
            self.pos = 0;
        }
        self.pos += 1;
        self.items[self.pos - 1]
    }
}

struct BatchSampler {
    mode: Sampling,
    all: Queue,
    pos: Vec<usize>,
    neg: Vec<usize>,
    pos_q: Queue,
    neg_q: Queue,
}

impl BatchSampler {
    fn new(mode: Sampling, targets: &[f64]) -> Self {
        let pos: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] >= 0.5).collect();
        let neg: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] < 0.5).collect();
        BatchSampler {
            mode,
            all: Queue::new((0..targets.len()).collect()),
            pos_q: Queue::new(pos.clone()),
            neg_q: Queue::new(neg.clone()),
            pos,
            neg,
        }
    }

    fn draw(&mut self, size: usize, rng: &mut SeededRng) -> Vec<usize> {
        match self.mode {
            Sampling::Shuffled => (0..size).map(|_| self.all.next(rng)).collect(),
            Sampling::Balanced => {
                let (n_pos, n_neg) = match (self.pos.is_empty(), self.neg.is_empty()) {
                    (true, _) => (0, size),
                    (_, true) => (size, 0),
                    _ => (size / 2, size - size / 2),
                };
                let mut batch = Vec::with_capacity(size);
                for (n, class, queue) in [(n_pos, &self.pos, &mut self.pos_q), (n_neg, &self.neg, &mut self.neg_q)] {
                    for _ in 0..n {
                        batch.push(if class.len() < n {
                            class[rng.below(class.len())]
                        } else {
                            queue.next(rng)
                        });
                    }
                }
                batch
            }
        }
    }
}

/// Runs `iterations` AdaGrad steps on mini-batches; returns the loss of
/// each step's batch before its update.
#[allow(clippy::too_many_arguments)]
pub fn train_iterations(
    model: &mut MlpRegressor,
    state: &mut AdaGradState,
    samples: &[&[f64]],
    targets: &[f64],
    iterations: usize,
    batch_size: usize,
    sampling: Sampling,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    if samples.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: samples.len(),
            right: targets.len(),
        });
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut sampler = BatchSampler::new(sampling, targets);
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let idx = sampler.draw(batch_size, &mut rng);
        let xs: Vec<&[f64]> = idx.iter().map(|&i| samples[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        let (loss, grad) = model.backward(&xs, &ys)?;
        adagrad_step(model, state, &grad)?;
        losses.push(loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MlpRegressor {
        MlpRegressor {
            layers: vec![
                Dense { rows: 2, cols: 2, weights: vec![0.5, -1.0, 2.0, 0.25], bias: vec![0.1, -0.2] },
                Dense { rows: 2, cols: 2, weights: vec![1.5, -0.5, -1.0, 0.75], bias: vec![0.0, 0.3] },
                Dense { rows: 1, cols: 2, weights: vec![0.8, -1.2], bias: vec![0.05] },
            ],
        }
    }

    #[test]
    fn zero_network_outputs_half() {
        let m = MlpRegressor::zeros(&[3, 4, 2, 1]).unwrap();
        assert_eq!(m.forward_values(&[1.0, -7.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn saturated_output_bias() {
        let mut m = MlpRegressor::zeros(&[2, 2, 2, 1]).unwrap();
        m.layers[2].bias[0] = 1e3;
        assert_eq!(m.forward_values(&[0.3, 0.3]).unwrap(), 1.0);
        m.layers[2].bias[0] = 40.0;
        assert!(1.0 - m.forward_values(&[0.3, 0.3]).unwrap() < 1e-15);
    }

    #[test]
    fn hand_forward_pass() {
        // x = (1, 2)
        // h1 = relu(0.5 - 2 + 0.1, 2 + 0.5 - 0.2) = relu(-1.4, 2.3) = (0, 2.3)
        // h2 = relu(1.5*0 - 0.5*2.3, -1*0 + 0.75*2.3 + 0.3) = relu(-1.15, 2.025) = (0, 2.025)
        // z = 0.8*0 - 1.2*2.025 + 0.05 = -2.38
        let expect = 1.0 / (1.0 + 2.38f64.exp());
        let got = tiny().forward_values(&[1.0, 2.0]).unwrap();
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn forward_errors() {
        let m = tiny();
        assert!(matches!(m.forward_values(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.forward_values(&[1.0, f64::NAN]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.5], &[1.0]).unwrap(), 0.25);
        // (0.1^2 + 0.3^2 + 0.5^2) / 3
        let got = mse_loss(&[0.1, 0.4, 1.0], &[0.0, 0.7, 0.5]).unwrap();
        assert!((got - 0.35 / 3.0).abs() < 1e-15);
        assert!(mse_loss(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let m = tiny();
        let x = [1.0, 2.0];
        let y = m.forward_values(&x).unwrap();
        let (loss, g) = m.backward(&[&x], &[y]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.params().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let m = MlpRegressor::new(&[3, 5, 4, 1], 9).unwrap();
        let xs: [&[f64]; 3] = [&[0.1, -0.4, 1.0], &[0.9, 0.2, -0.3], &[-1.0, 0.5, 0.5]];
        let ys = [1.0, 0.0, 1.0];
        let (_, batch) = m.backward(&xs, &ys).unwrap();
        let singles: Vec<Gradients> = xs.iter().zip(ys).map(|(x, y)| m.backward(&[x], &[y]).unwrap().1).collect();
        for (i, g) in batch.params().enumerate() {
            let mean: f64 = singles.iter().map(|s| *s.params().nth(i).unwrap()).sum::<f64>() / 3.0;
            assert!((g - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn adagrad_zero_gradient_is_noop() {
        let mut m = tiny();
        let before = m.clone();
        let mut st = AdaGradState::new(&m, DEFAULT_LEARNING_RATE);
        let zero = m.zeros_like();
        adagrad_step(&mut m, &mut st, &zero).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn adagrad_unit_gradient_recurrence() {
        let mut m = MlpRegressor::zeros(&[1, 1, 1]).unwrap();
        let mut st = AdaGradState::new(&m, DEFAULT_LEARNING_RATE);
        let mut g = m.zeros_like();
        g.params_mut().for_each(|v| *v = 1.0);
        adagrad_step(&mut m, &mut st, &g).unwrap();
        let first = -0.005 / (1.0 + 1e-8);
        assert!(m.params().all(|&p| p == first));
        adagrad_step(&mut m, &mut st, &g).unwrap();
        let second = -0.005 / (2f64.sqrt() + 1e-8);
        assert!(m.params().all(|&p| (p - (first + second)).abs() < 1e-18));
    }

    #[test]
    fn adagrad_shape_mismatch() {
        let mut m = tiny();
        let mut st = AdaGradState::new(&m, 0.005);
        let other = MlpRegressor::zeros(&[3, 1]).unwrap();
        assert!(adagrad_step(&mut m, &mut st, &other).is_err());
    }

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = SeededRng::new(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let label = (i % 2) as f64;
            let c = if label == 1.0 { 1.5 } else { -1.5 };
            xs.push(vec![c + 0.3 * rng.normal(), c + 0.3 * rng.normal()]);
            ys.push(label);
        }
        (xs, ys)
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let (xs, ys) = separable(20, 1);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut m = MlpRegressor::new(&[2, 8, 4, 1], 1).unwrap();
        let before = m.clone();
        let mut st = AdaGradState::new(&m, 0.005);
        train_iterations(&mut m, &mut st, &refs, &ys, 0, 32, Sampling::Shuffled, 3).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        let (xs, ys) = separable(200, 2);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut m = MlpRegressor::new(&[2, 32, 8, 1], 4).unwrap();
        let preds = |m: &MlpRegressor| refs.iter().map(|x| m.forward_values(x).unwrap()).collect::<Vec<_>>();
        let before = mse_loss(&preds(&m), &ys).unwrap();
        let mut st = AdaGradState::new(&m, DEFAULT_LEARNING_RATE);
        train_iterations(&mut m, &mut st, &refs, &ys, 30, 32, Sampling::Balanced, 5).unwrap();
        let after = mse_loss(&preds(&m), &ys).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = separable(50, 3);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let run = || {
            let mut m = MlpRegressor::new(&[2, 8, 4, 1], 4).unwrap();
            let mut st = AdaGradState::new(&m, 0.005);
            train_iterations(&mut m, &mut st, &refs, &ys, 30, 32, Sampling::Balanced, 5).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn balanced_sampler_splits_classes() {
        let targets = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut s = BatchSampler::new(Sampling::Balanced, &targets);
        let mut rng = SeededRng::new(1);
        let b = s.draw(8, &mut rng);
        assert_eq!(b.iter().filter(|&&i| i == 0).count(), 4);
        let only_neg = [0.0; 5];
        let mut s = BatchSampler::new(Sampling::Balanced, &only_neg);
        assert_eq!(s.draw(6, &mut rng).len(), 6);
    }

    #[test]
    fn mlp1_round_trip() {
        let m = MlpRegressor::new(&[4, 3, 2, 1], 2).unwrap();
        let bytes = m.encode().unwrap();
        let back = MlpRegressor::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.layer_sizes(), vec![4, 3, 2, 1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn output_in_open_unit_interval(seed in any::<u64>(), x in proptest::collection::vec(-10.0f64..10.0, 3)) {
                let m = MlpRegressor::new(&[3, 6, 4, 1], seed).unwrap();
                let y = m.forward_values(&x).unwrap();
                prop_assert!(y > 0.0 && y < 1.0);
            }

            #[test]
            fn adagrad_steps_shrink_for_constant_sign(g in 0.01f64..10.0, steps in 2usize..10) {
                let mut m = MlpRegressor::zeros(&[1, 1]).unwrap();
                let mut st = AdaGradState::new(&m, 0.005);
                let mut grad = m.zeros_like();
                grad.params_mut().for_each(|v| *v = g);
                let mut prev_step = f64::INFINITY;
                let mut prev = 0.0;
                for _ in 0..steps {
                    adagrad_step(&mut m, &mut st, &grad).unwrap();
                    let p = *m.params().next().unwrap();
                    let step = (prev - p).abs();
                    prop_assert!(step <= prev_step);
                    prev_step = step;
                    prev = p;
                }
            }
        }
    }
}
