//! Dense rectifier networks over a flat parameter vector, with an exact
//! reverse pass and a first-order adaptive-moment trainer.
//!
//! Parameter layout, layer by layer: the weight matrix (`out × in`,
//! row-major) followed by the bias (`out`).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    fn end(&self) -> usize {
        self.offset + self.weight_len() + self.fan_out
    }

    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.fan_out, self.fan_in),
            &params[self.offset..self.offset + self.weight_len()],
        )
        .expect("layer slice matches shape")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[self.offset + self.weight_len()..self.end()])
    }
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>, output_dim: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_sizes,
            output_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Domain(format!(
                "all layer sizes must be ≥ 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<Layer> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(self.output_dim);
        let mut offset = 0;
        sizes
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset = layer.end();
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, Layer::end)
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if weights.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: weights.len(),
            });
        }
        Ok(())
    }

    /// He-uniform weights, zero biases.
    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        for layer in self.layers() {
            let bound = (6.0 / layer.fan_in as f64).sqrt();
            for w in &mut params[layer.offset..layer.offset + layer.weight_len()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        params
    }
}

/// Single-input forward pass.
pub fn forward(arch: &MlpArchitecture, weights: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != arch.input_dim {
        return Err(Error::Dimension {
            expected: arch.input_dim,
            got: input.len(),
        });
    }
    let x = ArrayView2::from_shape((1, arch.input_dim), input).expect("row vector");
    Ok(forward_batch(arch, weights, x)?.into_raw_vec_and_offset().0)
}

/// Forward pass over the rows of `x`.
pub fn forward_batch(
    arch: &MlpArchitecture,
    weights: &[f64],
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    Ok(forward_cached(arch, weights, x)?.output())
}

/// Layer activations kept for the reverse pass.
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(mut self) -> Array2<f64> {
        self.activations.pop().expect("at least one layer")
    }

    pub fn output_view(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("at least one layer").view()
    }
}

pub fn forward_cached(
    arch: &MlpArchitecture,
    weights: &[f64],
    x: ArrayView2<f64>,
) -> Result<ForwardCache> {
    arch.check_weights(weights)?;
    if x.ncols() != arch.input_dim {
        return Err(Error::Dimension {
            expected: arch.input_dim,
            got: x.ncols(),
        });
    }
    let layers = arch.layers();
    let mut activations = Vec::with_capacity(layers.len() + 1);
    activations.push(x.to_owned());
    for (i, layer) in layers.iter().enumerate() {
        let prev = activations.last().expect("input pushed");
        let mut z = prev.dot(&layer.weights(weights).t());
        z += &layer.bias(weights);
        if i + 1 < layers.len() {
            z.mapv_inplace(|v| v.max(0.0));
        }
        activations.push(z);
    }
    Ok(ForwardCache { activations })
}

/// Pulls `d_output` (same shape as the network output) back to a gradient
/// over the flat parameter vector.
pub fn backward(
    arch: &MlpArchitecture,
    weights: &[f64],
    cache: &ForwardCache,
    d_output: ArrayView2<f64>,
) -> Vec<f64> {
    let layers = arch.layers();
    let mut grad = vec![0.0; arch.param_count()];
    let mut delta = d_output.to_owned();
    for (i, layer) in layers.iter().enumerate().rev() {
        if i + 1 < layers.len() {
            // ReLU gate: post-activation is zero exactly where the unit was off.
            let act = &cache.activations[i + 1];
            ndarray::Zip::from(&mut delta)
                .and(act)
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
        }
        let input = &cache.activations[i];
        let dw = delta.t().dot(input);
        let db = delta.sum_axis(Axis(0));
        let (w_slot, rest) = grad[layer.offset..layer.end()].split_at_mut(layer.weight_len());
        w_slot.copy_from_slice(dw.as_standard_layout().as_slice().expect("contiguous"));
        rest.copy_from_slice(db.as_slice().expect("contiguous"));
        if i > 0 {
            delta = delta.dot(&layer.weights(weights));
        }
    }
    grad
}

/// Z-score statistics for inputs and outputs, stored with every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

fn column_stats(data: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = data.nrows().max(1) as f64;
    let mean = data.sum_axis(Axis(0)) / n;
    let std = data
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(col, m)| {
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            // Constant columns keep unit scale so they pass through unchanged.
            if s > 1e-12 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean.to_vec(), std)
}

impl NormalizationStats {
    pub fn fit(inputs: ArrayView2<f64>, outputs: ArrayView2<f64>) -> Self {
        let (input_mean, input_std) = column_stats(inputs);
        let (output_mean, output_std) = column_stats(outputs);
        Self {
            input_mean,
            input_std,
            output_mean,
            output_std,
        }
    }

    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; input_dim],
            input_std: vec![1.0; input_dim],
            output_mean: vec![0.0; output_dim],
            output_std: vec![1.0; output_dim],
        }
    }

    pub fn validate(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        let ok = self.input_mean.len() == input_dim
            && self.input_std.len() == input_dim
            && self.output_mean.len() == output_dim
            && self.output_std.len() == output_dim
            && self
                .input_std
                .iter()
                .chain(&self.output_std)
                .all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::format("normalization stats", "wrong lengths or non-positive std"))
        }
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn normalize_inputs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &Array1::from(self.input_mean.clone())) / &Array1::from(self.input_std.clone())
    }

    pub fn normalize_outputs(&self, y: ArrayView2<f64>) -> Array2<f64> {
        (&y - &Array1::from(self.output_mean.clone())) / &Array1::from(self.output_std.clone())
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.output_mean.iter().zip(&self.output_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Adam with the variance-rectified warmup term.
    Radam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Radam,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("{prefix}.learning_rate"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{prefix}.batch_size"), "must be ≥ 1"));
        }
        Ok(())
    }
}

struct AdaptiveMoments {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdaptiveMoments {
    fn new(kind: OptimizerKind, lr: f64, dim: usize) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2 = 1.0 - b2.powi(self.step);
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
        }
        let rect = match self.kind {
            OptimizerKind::Adam => Some(1.0),
            OptimizerKind::Radam => {
                let rho_inf = 2.0 / (1.0 - b2) - 1.0;
                let t = self.step as f64;
                let rho = rho_inf - 2.0 * t * b2.powi(self.step) / bc2;
                (rho > 5.0).then(|| {
                    ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
                        .sqrt()
                })
            }
        };
        for ((p, m), v) in params.iter_mut().zip(&self.m).zip(&self.v) {
            let m_hat = m / bc1;
            *p -= match rect {
                Some(r) => self.lr * r * m_hat / ((v / bc2).sqrt() + self.eps),
                // Early RAdam steps fall back to momentum SGD.
                None => self.lr * m_hat,
            };
        }
    }
}

/// Mean squared error over all rows and output columns.
pub fn mse(arch: &MlpArchitecture, weights: &[f64], x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    let pred = forward_batch(arch, weights, x)?;
    let n = (pred.len()).max(1) as f64;
    Ok((&pred - &y).mapv(|v| v * v).sum() / n)
}

fn mse_grad(
    arch: &MlpArchitecture,
    weights: &[f64],
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    let cache = forward_cached(arch, weights, x)?;
    let n = y.len().max(1) as f64;
    let d_out = (&cache.output_view() - &y) * (2.0 / n);
    Ok(backward(arch, weights, &cache, d_out.view()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: Vec<f64>,
    pub final_loss: f64,
}

/// Mini-batch MSE regression from `init`; batches are reshuffled each
/// epoch from `rng`.
pub fn train_mse<R: Rng + ?Sized>(
    arch: &MlpArchitecture,
    init: Vec<f64>,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate("train")?;
    if x.nrows() == 0 {
        return Err(Error::Empty("training set".into()));
    }
    if x.nrows() != y.nrows() || y.ncols() != arch.output_dim {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    arch.check_weights(&init)?;
    let mut weights = init;
    let mut opt = AdaptiveMoments::new(config.optimizer, config.learning_rate, weights.len());
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by = y.select(Axis(0), batch);
            let grad = mse_grad(arch, &weights, bx.view(), by.view())?;
            opt.apply(&mut weights, &grad);
        }
    }
    let final_loss = mse(arch, &weights, x, y)?;
    if !final_loss.is_finite() {
        return Err(Error::Numerical(format!("training diverged (loss {final_loss})")));
    }
    Ok(TrainOutcome {
        weights,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn small_arch() -> MlpArchitecture {
        MlpArchitecture::new(3, vec![4, 5], 2).unwrap()
    }

    #[test]
    fn param_count() {
        // 3*4+4 + 4*5+5 + 5*2+2
        assert_eq!(small_arch().param_count(), 53);
        let desk = MlpArchitecture::new(8, vec![32, 16], 3).unwrap();
        assert_eq!(desk.param_count(), 867);
        assert!(MlpArchitecture::new(8, vec![0], 3).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = small_arch();
        let w = vec![0.0; arch.param_count()];
        assert_eq!(forward(&arch, &w, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_hidden_unit_by_hand() {
        // y = 3 * relu(0.5*x0 - 1.0*x1 + 0.25) - 2
        let arch = MlpArchitecture::new(2, vec![1], 1).unwrap();
        let w = vec![0.5, -1.0, 0.25, 3.0, -2.0];
        let y = forward(&arch, &w, &[2.0, 0.5]).unwrap();
        assert_eq!(y, vec![3.0 * 0.75 - 2.0]);
        let y = forward(&arch, &w, &[0.0, 1.0]).unwrap();
        assert_eq!(y, vec![-2.0]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_dims() {
        let arch = small_arch();
        let w = arch.init_weights(&mut rng::stream(0, &[]));
        let a = forward(&arch, &w, &[0.1, 0.2, 0.3]).unwrap();
        let b = forward(&arch, &w, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(forward(&arch, &w, &[0.1]), Err(Error::Dimension { .. })));
        assert!(matches!(forward(&arch, &w[1..], &[0.1, 0.2, 0.3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let arch = small_arch();
        let mut rng = rng::stream(3, &[]);
        let w = arch.init_weights(&mut rng);
        let x = array![[0.3, -0.2, 0.9], [1.1, 0.4, -0.5], [-0.7, 0.8, 0.1]];
        let y = array![[0.5, -1.0], [0.2, 0.3], [-0.4, 0.9]];
        let g = mse_grad(&arch, &w, x.view(), y.view()).unwrap();
        let h = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (mse(&arch, &wp, x.view(), y.view()).unwrap()
                - mse(&arch, &wm, x.view(), y.view()).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn learns_linear_map() {
        let arch = MlpArchitecture::new(3, vec![16], 2).unwrap();
        let mut rng = rng::stream(8, &[]);
        let n = 256;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let a = array![[0.5, -0.3], [0.2, 0.8], [-0.6, 0.1]];
        let y = x.dot(&a);
        let config = TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let init = arch.init_weights(&mut rng);
        let out = train_mse(&arch, init, x.view(), y.view(), &config, &mut rng).unwrap();
        assert!(out.final_loss < 1e-3, "loss {}", out.final_loss);
    }

    #[test]
    fn constant_target_collapses_to_bias() {
        let arch = MlpArchitecture::new(2, vec![4], 1).unwrap();
        let mut rng = rng::stream(9, &[]);
        let x = Array2::from_shape_fn((64, 2), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_elem((64, 1), 0.7);
        let config = TrainConfig {
            epochs: 3000,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let init = arch.init_weights(&mut rng);
        let out = train_mse(&arch, init, x.view(), y.view(), &config, &mut rng).unwrap();
        assert!(out.final_loss < 1e-4, "loss {}", out.final_loss);
    }

    #[test]
    fn training_is_reproducible() {
        let arch = small_arch();
        let run = || {
            let mut rng = rng::stream(21, &[]);
            let x = Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((40, 2), |_| rng.random_range(-1.0..1.0));
            let init = arch.init_weights(&mut rng);
            train_mse(&arch, init, x.view(), y.view(), &TrainConfig { epochs: 5, ..Default::default() }, &mut rng)
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let arch = small_arch();
        let x = Array2::<f64>::zeros((0, 3));
        let y = Array2::<f64>::zeros((0, 2));
        let init = vec![0.0; arch.param_count()];
        let err = train_mse(&arch, init, x.view(), y.view(), &TrainConfig::default(), &mut rng::stream(0, &[]));
        assert!(matches!(err, Err(Error::Empty(_))));
    }

    #[test]
    fn normalization_roundtrip_and_constant_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let y = array![[2.0], [4.0]];
        let stats = NormalizationStats::fit(x.view(), y.view());
        assert_eq!(stats.input_mean, vec![2.0, 5.0]);
        assert_eq!(stats.input_std, vec![1.0, 1.0]);
        let ny = stats.normalize_outputs(y.view());
        assert_eq!(stats.denormalize_output(&[ny[[0, 0]]]), vec![2.0]);
        stats.validate(2, 1).unwrap();
    }
}
