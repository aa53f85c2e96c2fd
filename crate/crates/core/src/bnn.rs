//! Bayesian regressor from (wrench, orientation) to CoM offset.
//!
//! The network is pretrained to a MAP point by plain MSE, then the joint
//! posterior over weights and a per-axis observation std is sampled with
//! NUTS. Everything inside the posterior works in z-scored units; the
//! normalization travels with the samples.
//!
//! Sampler coordinates are `θ = [weights…, ln σx, ln σy, ln σz]`.

use std::f64::consts::LN_2;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytical::ComEstimate;
use crate::error::{Error, Result};
use crate::mlp::{self, MlpArchitecture, NormalizationStats, TrainConfig};
use crate::nuts::{self, LogDensity, NutsDiagnostics, NutsSettings};
use crate::persist;
use crate::rng::{self, ns};
use crate::sim::{DatasetRecord, WristOrientation, Wrench};

pub const INPUT_DIM: usize = 8;
pub const OUTPUT_DIM: usize = 3;
pub const BNN_FORMAT: &str = "comest-bnn/v1";
/// Smallest reported predictive std, m.
pub const STD_FLOOR: f64 = 1e-6;

/// Rows per parallel gradient work item.
const GRAD_CHUNK_ROWS: usize = 256;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Network input: `[fx, fy, fz, tx, ty, tz, theta1, theta2]`.
pub fn features(wrench: &Wrench, o: WristOrientation) -> [f64; INPUT_DIM] {
    let w = wrench.as_array();
    [w[0], w[1], w[2], w[3], w[4], w[5], o.theta1, o.theta2]
}

/// Gaussian prior on weights around the MAP point, half-normal on the
/// observation std.
#[derive(Debug, Clone, PartialEq)]
pub struct BnnPrior {
    pub center: Vec<f64>,
    pub weight_std: f64,
    pub sigma_scale: f64,
}

/// A z-scored regression set borrowed by the posterior.
#[derive(Debug, Clone, Copy)]
pub struct RegressionData<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub targets: ArrayView2<'a, f64>,
}

fn residuals(
    arch: &MlpArchitecture,
    weights: &[f64],
    data: &RegressionData,
) -> Result<(mlp::ForwardCache, Array2<f64>)> {
    let cache = mlp::forward_cached(arch, weights, data.inputs)?;
    let resid = &data.targets - &cache.output_view();
    Ok((cache, resid))
}

/// Gaussian log-likelihood of the targets with per-axis std `obs_sigma`.
pub fn log_likelihood(
    arch: &MlpArchitecture,
    data: &RegressionData,
    weights: &[f64],
    obs_sigma: [f64; OUTPUT_DIM],
) -> Result<f64> {
    if data.inputs.nrows() == 0 {
        return Ok(0.0);
    }
    let (_, resid) = residuals(arch, weights, data)?;
    let mut ll = 0.0;
    for (k, col) in resid.axis_iter(Axis(1)).enumerate() {
        let s = obs_sigma[k];
        let sq: f64 = col.iter().map(|r| r * r).sum();
        ll -= col.len() as f64 * (HALF_LN_2PI + s.ln()) + 0.5 * sq / (s * s);
    }
    Ok(ll)
}

fn log_prior(prior: &BnnPrior, weights: &[f64], obs_sigma: [f64; OUTPUT_DIM]) -> f64 {
    let ws = prior.weight_std;
    let weight_term: f64 = weights
        .iter()
        .zip(&prior.center)
        .map(|(w, c)| {
            let z = (w - c) / ws;
            -HALF_LN_2PI - ws.ln() - 0.5 * z * z
        })
        .sum();
    let sc = prior.sigma_scale;
    let sigma_term: f64 = obs_sigma
        .iter()
        .map(|s| LN_2 - HALF_LN_2PI - sc.ln() - 0.5 * (s / sc).powi(2))
        .sum();
    weight_term + sigma_term
}

/// Joint log density over `(weights, obs_sigma)`.
pub fn log_posterior(
    arch: &MlpArchitecture,
    prior: &BnnPrior,
    data: &RegressionData,
    weights: &[f64],
    obs_sigma: [f64; OUTPUT_DIM],
) -> Result<f64> {
    if obs_sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain(format!("obs_sigma must be positive, got {obs_sigma:?}")));
    }
    if prior.center.len() != weights.len() {
        return Err(Error::Dimension {
            expected: prior.center.len(),
            got: weights.len(),
        });
    }
    let lp = log_likelihood(arch, data, weights, obs_sigma)? + log_prior(prior, weights, obs_sigma);
    if !lp.is_finite() {
        return Err(Error::Numerical(format!("log posterior is {lp}")));
    }
    Ok(lp)
}

fn split_theta(theta: &[f64]) -> (&[f64], [f64; OUTPUT_DIM]) {
    let p = theta.len() - OUTPUT_DIM;
    let s = &theta[p..];
    (&theta[..p], [s[0].exp(), s[1].exp(), s[2].exp()])
}

/// The sampler's target: `log_posterior` in log-σ coordinates, including
/// the change-of-variables term `Σ ln σ`.
pub fn log_posterior_unconstrained(
    arch: &MlpArchitecture,
    prior: &BnnPrior,
    data: &RegressionData,
    theta: &[f64],
) -> Result<f64> {
    check_theta(arch, theta)?;
    let (w, sigma) = split_theta(theta);
    let log_jac: f64 = theta[theta.len() - OUTPUT_DIM..].iter().sum();
    Ok(log_posterior(arch, prior, data, w, sigma)? + log_jac)
}

fn check_theta(arch: &MlpArchitecture, theta: &[f64]) -> Result<()> {
    let expected = arch.param_count() + OUTPUT_DIM;
    if theta.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: theta.len(),
        });
    }
    Ok(())
}

/// Exact gradient of [`log_posterior_unconstrained`]; length = params + 3.
pub fn grad_log_posterior(
    arch: &MlpArchitecture,
    prior: &BnnPrior,
    data: &RegressionData,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; theta.len()];
    value_and_grad(arch, prior, data, theta, &mut grad)?;
    Ok(grad)
}

fn value_and_grad(
    arch: &MlpArchitecture,
    prior: &BnnPrior,
    data: &RegressionData,
    theta: &[f64],
    grad: &mut [f64],
) -> Result<f64> {
    check_theta(arch, theta)?;
    let (w, sigma) = split_theta(theta);
    let p = w.len();
    let mut value = log_prior(prior, w, sigma);
    let ws2 = prior.weight_std * prior.weight_std;
    for i in 0..p {
        grad[i] = -(w[i] - prior.center[i]) / ws2;
    }
    for k in 0..OUTPUT_DIM {
        // Half-normal prior and Jacobian, in ln σ.
        grad[p + k] = 1.0 - (sigma[k] / prior.sigma_scale).powi(2);
        value += theta[p + k];
    }
    let n = data.inputs.nrows();
    if n > 0 {
        let inv_var = sigma.map(|s| 1.0 / (s * s));
        // Fixed chunk boundaries and an in-order reduction keep the result
        // independent of the thread count.
        let starts: Vec<usize> = (0..n).step_by(GRAD_CHUNK_ROWS).collect();
        let parts = starts
            .into_par_iter()
            .map(|lo| {
                let rows = ndarray::s![lo..(lo + GRAD_CHUNK_ROWS).min(n), ..];
                let chunk = RegressionData {
                    inputs: data.inputs.slice(rows),
                    targets: data.targets.slice(rows),
                };
                let (cache, mut resid) = residuals(arch, w, &chunk)?;
                let mut sq = [0.0; OUTPUT_DIM];
                for (k, mut col) in resid.axis_iter_mut(Axis(1)).enumerate() {
                    sq[k] = col.iter().map(|r| r * r).sum();
                    col.mapv_inplace(|r| r * inv_var[k]);
                }
                Ok((sq, mlp::backward(arch, w, &cache, resid.view())))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sq = [0.0; OUTPUT_DIM];
        for (part_sq, gw) in parts {
            for k in 0..OUTPUT_DIM {
                sq[k] += part_sq[k];
            }
            for (g, d) in grad[..p].iter_mut().zip(gw) {
                *g += d;
            }
        }
        let n = n as f64;
        for k in 0..OUTPUT_DIM {
            value -= n * (HALF_LN_2PI + sigma[k].ln()) + 0.5 * sq[k] * inv_var[k];
            grad[p + k] += -n + sq[k] * inv_var[k];
        }
    }
    if !value.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numerical(format!("log posterior is {value}")));
    }
    Ok(value)
}

/// Adapter handing the posterior to the sampler.
pub struct PosteriorDensity<'a> {
    pub arch: &'a MlpArchitecture,
    pub prior: &'a BnnPrior,
    pub data: RegressionData<'a>,
}

impl LogDensity for PosteriorDensity<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count() + OUTPUT_DIM
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64> {
        value_and_grad(self.arch, self.prior, &self.data, position, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnnConfig {
    pub hidden_sizes: Vec<usize>,
    pub pretrain: TrainConfig,
    pub nuts: NutsSettings,
    /// Std of the Gaussian prior around the MAP weights (z-scored units).
    pub prior_std: f64,
    /// Scale of the half-normal prior on the observation std.
    pub obs_sigma_prior_scale: f64,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![32, 16],
            pretrain: TrainConfig {
                learning_rate: 1e-3,
                epochs: 200,
                ..TrainConfig::default()
            },
            nuts: NutsSettings {
                n_samples: 200,
                n_warmup: 50,
                ..NutsSettings::default()
            },
            prior_std: 0.5,
            obs_sigma_prior_scale: 1.0,
        }
    }
}

impl BnnConfig {
    pub fn full_scale() -> Self {
        Self {
            hidden_sizes: vec![256, 128, 64],
            pretrain: TrainConfig {
                learning_rate: 1e-3,
                epochs: 500,
                ..TrainConfig::default()
            },
            nuts: NutsSettings {
                n_samples: 1000,
                n_warmup: 200,
                ..NutsSettings::default()
            },
            ..Self::default()
        }
    }

    pub fn architecture(&self) -> Result<MlpArchitecture> {
        MlpArchitecture::new(INPUT_DIM, self.hidden_sizes.clone(), OUTPUT_DIM)
            .map_err(|e| Error::config("bnn.hidden_sizes", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture()?;
        self.pretrain.validate("bnn.pretrain")?;
        self.nuts.validate()?;
        if !(self.prior_std > 0.0 && self.prior_std.is_finite()) {
            return Err(Error::config("bnn.prior_std", "must be positive"));
        }
        if !(self.obs_sigma_prior_scale > 0.0 && self.obs_sigma_prior_scale.is_finite()) {
            return Err(Error::config("bnn.obs_sigma_prior_scale", "must be positive"));
        }
        Ok(())
    }
}

/// Posterior predictive in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: Vector3<f64>,
    pub std: Vector3<f64>,
}

impl PredictiveDistribution {
    pub fn to_estimate(&self) -> ComEstimate {
        ComEstimate {
            mean: self.mean,
            std: Some(self.std),
        }
    }
}

/// Where a model came from: the seed and the full producing config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub architecture: MlpArchitecture,
    pub normalization: NormalizationStats,
    pub samples: Vec<Vec<f64>>,
    /// Observation std per sample, z-scored output units.
    pub obs_sigma_samples: Vec<[f64; OUTPUT_DIM]>,
    pub diagnostics: NutsDiagnostics,
    pub pretrain_loss: f64,
    pub provenance: Provenance,
}

impl PosteriorSamples {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Empty("posterior sample set".into()));
        }
        let p = self.architecture.param_count();
        if let Some(bad) = self.samples.iter().find(|s| s.len() != p) {
            return Err(Error::Dimension {
                expected: p,
                got: bad.len(),
            });
        }
        if self.obs_sigma_samples.len() != self.samples.len() {
            return Err(Error::Dimension {
                expected: self.samples.len(),
                got: self.obs_sigma_samples.len(),
            });
        }
        self.normalization.validate(INPUT_DIM, OUTPUT_DIM)
    }

    pub fn predict(&self, wrench: &Wrench, o: WristOrientation) -> Result<PredictiveDistribution> {
        Ok(self.predict_batch(&[(*wrench, o)])?.remove(0))
    }

    /// Predictive mean and std for many inputs; one batched forward pass per
    /// posterior sample.
    pub fn predict_batch(
        &self,
        queries: &[(Wrench, WristOrientation)],
    ) -> Result<Vec<PredictiveDistribution>> {
        if self.samples.is_empty() {
            return Err(Error::Empty("posterior sample set".into()));
        }
        let n = queries.len();
        let mut raw = Array2::zeros((n, INPUT_DIM));
        for (mut row, (w, o)) in raw.axis_iter_mut(Axis(0)).zip(queries) {
            row.assign(&ndarray::ArrayView1::from(&features(w, *o)));
        }
        let x = self.normalization.normalize_inputs(raw.view());
        let out_mean = &self.normalization.output_mean;
        let out_std = &self.normalization.output_std;
        let s_count = self.samples.len() as f64;
        let mut sum = Array2::<f64>::zeros((n, OUTPUT_DIM));
        let mut sum_sq = Array2::<f64>::zeros((n, OUTPUT_DIM));
        let mut noise_var = [0.0; OUTPUT_DIM];
        for (weights, sigma) in self.samples.iter().zip(&self.obs_sigma_samples) {
            let mut y = mlp::forward_batch(&self.architecture, weights, x.view())?;
            for (k, mut col) in y.axis_iter_mut(Axis(1)).enumerate() {
                col.mapv_inplace(|v| v * out_std[k] + out_mean[k]);
                noise_var[k] += (sigma[k] * out_std[k]).powi(2) / s_count;
            }
            sum += &y;
            sum_sq += &y.mapv(|v| v * v);
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut mean = Vector3::zeros();
            let mut std = Vector3::zeros();
            for k in 0..OUTPUT_DIM {
                let m = sum[[i, k]] / s_count;
                let between = (sum_sq[[i, k]] / s_count - m * m).max(0.0);
                mean[k] = m;
                std[k] = (between + noise_var[k]).sqrt().max(STD_FLOOR);
            }
            out.push(PredictiveDistribution { mean, std });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_json_atomic(path, &BnnModelFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: BnnModelFile = persist::read_json(path)?;
        file.into_samples()
    }
}

/// On-disk container: samples flattened row-major into one array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BnnModelFile {
    pub format: String,
    pub provenance: Provenance,
    pub architecture: MlpArchitecture,
    pub normalization: NormalizationStats,
    pub n_samples: usize,
    pub n_params: usize,
    pub samples: Vec<f64>,
    pub obs_sigma_samples: Vec<[f64; OUTPUT_DIM]>,
    pub diagnostics: NutsDiagnostics,
    pub pretrain_loss: f64,
}

impl From<&PosteriorSamples> for BnnModelFile {
    fn from(ps: &PosteriorSamples) -> Self {
        Self {
            format: BNN_FORMAT.into(),
            provenance: ps.provenance.clone(),
            architecture: ps.architecture.clone(),
            normalization: ps.normalization.clone(),
            n_samples: ps.samples.len(),
            n_params: ps.architecture.param_count(),
            samples: ps.samples.concat(),
            obs_sigma_samples: ps.obs_sigma_samples.clone(),
            diagnostics: ps.diagnostics.clone(),
            pretrain_loss: ps.pretrain_loss,
        }
    }
}

impl BnnModelFile {
    pub fn into_samples(self) -> Result<PosteriorSamples> {
        if self.format != BNN_FORMAT {
            return Err(Error::format("bnn model", format!("unsupported format tag `{}`", self.format)));
        }
        self.architecture.validate()?;
        if self.n_params != self.architecture.param_count()
            || self.samples.len() != self.n_samples * self.n_params
        {
            return Err(Error::format("bnn model", "sample block does not match architecture"));
        }
        let ps = PosteriorSamples {
            samples: self.samples.chunks(self.n_params.max(1)).map(<[f64]>::to_vec).collect(),
            architecture: self.architecture,
            normalization: self.normalization,
            obs_sigma_samples: self.obs_sigma_samples,
            diagnostics: self.diagnostics,
            pretrain_loss: self.pretrain_loss,
            provenance: self.provenance,
        };
        ps.validate()?;
        Ok(ps)
    }
}

/// Raw (un-normalized) design matrices for a record set.
pub fn design_matrices(records: &[DatasetRecord]) -> (Array2<f64>, Array2<f64>) {
    let n = records.len();
    let mut x = Array2::zeros((n, INPUT_DIM));
    let mut y = Array2::zeros((n, OUTPUT_DIM));
    for (i, r) in records.iter().enumerate() {
        for (j, v) in features(&r.wrench, r.orientation).iter().enumerate() {
            x[[i, j]] = *v;
        }
        for k in 0..OUTPUT_DIM {
            y[[i, k]] = r.true_offset[k];
        }
    }
    (x, y)
}

/// MSE pretraining on z-scored data; returns weights and final loss.
pub fn pretrain_map(
    arch: &MlpArchitecture,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    config: &TrainConfig,
    seed: u64,
) -> Result<mlp::TrainOutcome> {
    if inputs.nrows() == 0 {
        return Err(Error::Empty("pretraining dataset".into()));
    }
    let mut rng = rng::stream(seed, &[ns::PRETRAIN]);
    let init = arch.init_weights(&mut rng);
    mlp::train_mse(arch, init, inputs, targets, config, &mut rng)
}

/// Full training: normalization, MAP pretraining, then NUTS around the MAP.
pub fn train_bnn(
    records: &[DatasetRecord],
    config: &BnnConfig,
    seed: u64,
    provenance: Provenance,
) -> Result<PosteriorSamples> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    let arch = config.architecture()?;
    let (raw_x, raw_y) = design_matrices(records);
    let normalization = NormalizationStats::fit(raw_x.view(), raw_y.view());
    let x = normalization.normalize_inputs(raw_x.view());
    let y = normalization.normalize_outputs(raw_y.view());

    let map = pretrain_map(&arch, x.view(), y.view(), &config.pretrain, seed)?;
    log::info!("MAP pretraining finished, loss {:.5}", map.final_loss);

    let data = RegressionData {
        inputs: x.view(),
        targets: y.view(),
    };
    let (_, resid) = residuals(&arch, &map.weights, &data)?;
    let n = resid.nrows() as f64;
    let mut theta0 = map.weights.clone();
    for col in resid.axis_iter(Axis(1)) {
        let rms = (col.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
        theta0.push(rms.max(1e-3).ln());
    }
    let prior = BnnPrior {
        center: map.weights.clone(),
        weight_std: config.prior_std,
        sigma_scale: config.obs_sigma_prior_scale,
    };
    let target = PosteriorDensity {
        arch: &arch,
        prior: &prior,
        data,
    };
    let mut rng = rng::stream(seed, &[ns::NUTS]);
    let run = nuts::nuts_sample(&target, theta0, &config.nuts, &mut rng)?;
    let p = arch.param_count();
    let (samples, obs_sigma_samples) = run
        .samples
        .iter()
        .map(|theta| {
            let (w, s) = split_theta(theta);
            debug_assert_eq!(w.len(), p);
            (w.to_vec(), s)
        })
        .unzip();
    Ok(PosteriorSamples {
        architecture: arch,
        normalization,
        samples,
        obs_sigma_samples,
        diagnostics: run.diagnostics,
        pretrain_loss: map.final_loss,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use ndarray::array;
    use rand::Rng;

    fn tiny_arch() -> MlpArchitecture {
        MlpArchitecture::new(INPUT_DIM, vec![3], OUTPUT_DIM).unwrap()
    }

    #[test]
    fn half_ln_2pi_constant() {
        assert!((HALF_LN_2PI - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_is_prior_only() {
        let arch = tiny_arch();
        let w = vec![0.1; arch.param_count()];
        let prior = BnnPrior {
            center: vec![0.0; w.len()],
            weight_std: 0.5,
            sigma_scale: 1.0,
        };
        let x = Array2::<f64>::zeros((0, INPUT_DIM));
        let y = Array2::<f64>::zeros((0, OUTPUT_DIM));
        let data = RegressionData {
            inputs: x.view(),
            targets: y.view(),
        };
        let lp = log_posterior(&arch, &prior, &data, &w, [1.0; 3]).unwrap();
        assert!((lp - log_prior(&prior, &w, [1.0; 3])).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_likelihood() {
        let arch = tiny_arch();
        let w = vec![0.0; arch.param_count()];
        let x = Array2::<f64>::ones((1, INPUT_DIM));
        let y = Array2::<f64>::zeros((1, OUTPUT_DIM));
        let data = RegressionData {
            inputs: x.view(),
            targets: y.view(),
        };
        let ll = log_likelihood(&arch, &data, &w, [1.0; 3]).unwrap();
        assert!((ll - 3.0 * (-0.5 * (2.0 * PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn duplicated_data_doubles_likelihood() {
        let arch = tiny_arch();
        let mut r = rng::stream(2, &[]);
        let w = arch.init_weights(&mut r);
        let x = Array2::from_shape_fn((5, INPUT_DIM), |_| r.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((5, OUTPUT_DIM), |_| r.random_range(-1.0..1.0));
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2 = ndarray::concatenate(Axis(0), &[y.view(), y.view()]).unwrap();
        let sigma = [0.7, 1.3, 0.9];
        let once = log_likelihood(&arch, &RegressionData { inputs: x.view(), targets: y.view() }, &w, sigma).unwrap();
        let twice =
            log_likelihood(&arch, &RegressionData { inputs: x2.view(), targets: y2.view() }, &w, sigma).unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-10 * once.abs());
    }

    #[test]
    fn prior_gradient_vanishes_at_center() {
        let arch = tiny_arch();
        let center = arch.init_weights(&mut rng::stream(5, &[]));
        let prior = BnnPrior {
            center: center.clone(),
            weight_std: 0.5,
            sigma_scale: 1.0,
        };
        let x = Array2::<f64>::zeros((0, INPUT_DIM));
        let y = Array2::<f64>::zeros((0, OUTPUT_DIM));
        let data = RegressionData { inputs: x.view(), targets: y.view() };
        let mut theta = center;
        theta.extend([0.0; 3]);
        let g = grad_log_posterior(&arch, &prior, &data, &theta).unwrap();
        assert!(g[..arch.param_count()].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_residual_contributes_no_weight_gradient() {
        // Zero network, zero targets: likelihood gradient wrt weights is zero,
        // and with the prior centered at zero the whole weight block vanishes.
        let arch = tiny_arch();
        let p = arch.param_count();
        let prior = BnnPrior { center: vec![0.0; p], weight_std: 0.5, sigma_scale: 1.0 };
        let x = array![[0.3, -0.1, 0.5, 0.2, 0.0, 0.1, 0.4, -0.2]];
        let y = Array2::<f64>::zeros((1, OUTPUT_DIM));
        let data = RegressionData { inputs: x.view(), targets: y.view() };
        let mut theta = vec![0.0; p];
        theta.extend([0.2; 3]);
        let g = grad_log_posterior(&arch, &prior, &data, &theta).unwrap();
        assert!(g[..p].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn log_posterior_rejects_bad_sigma() {
        let arch = tiny_arch();
        let w = vec![0.0; arch.param_count()];
        let prior = BnnPrior { center: w.clone(), weight_std: 0.5, sigma_scale: 1.0 };
        let x = Array2::<f64>::zeros((0, INPUT_DIM));
        let y = Array2::<f64>::zeros((0, OUTPUT_DIM));
        let data = RegressionData { inputs: x.view(), targets: y.view() };
        assert!(log_posterior(&arch, &prior, &data, &w, [1.0, 0.0, 1.0]).is_err());
    }

    fn fake_posterior(samples: Vec<Vec<f64>>, sigma: Vec<[f64; 3]>) -> PosteriorSamples {
        PosteriorSamples {
            architecture: tiny_arch(),
            normalization: NormalizationStats::identity(INPUT_DIM, OUTPUT_DIM),
            samples,
            obs_sigma_samples: sigma,
            diagnostics: NutsDiagnostics::default(),
            pretrain_loss: 0.0,
            provenance: Provenance::default(),
        }
    }

    fn some_wrench() -> Wrench {
        Wrench::new(Vector3::new(0.1, 0.2, -2.0), Vector3::new(0.01, -0.02, 0.0))
    }

    #[test]
    fn single_sample_without_noise_hits_floor() {
        let arch = tiny_arch();
        let w = arch.init_weights(&mut rng::stream(1, &[]));
        let ps = fake_posterior(vec![w.clone()], vec![[0.0; 3]]);
        let pred = ps.predict(&some_wrench(), WristOrientation::DEFAULT).unwrap();
        let expected = mlp::forward(&arch, &w, &features(&some_wrench(), WristOrientation::DEFAULT)).unwrap();
        for (k, e) in expected.iter().enumerate() {
            assert_eq!(pred.std[k], STD_FLOOR);
            assert!((pred.mean[k] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_samples_report_noise_only() {
        let arch = tiny_arch();
        let w = arch.init_weights(&mut rng::stream(1, &[]));
        let mut ps = fake_posterior(vec![w.clone(), w], vec![[0.1, 0.2, 0.3]; 2]);
        ps.normalization.output_std = vec![2.0, 2.0, 2.0];
        let pred = ps.predict(&some_wrench(), WristOrientation::DEFAULT).unwrap();
        for k in 0..3 {
            assert!((pred.std[k] - 0.2 * (k + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_posterior_cannot_predict() {
        let ps = fake_posterior(vec![], vec![]);
        assert!(matches!(
            ps.predict(&some_wrench(), WristOrientation::DEFAULT),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn model_file_roundtrip() {
        let arch = tiny_arch();
        let mut r = rng::stream(3, &[]);
        let ps = fake_posterior(
            vec![arch.init_weights(&mut r), arch.init_weights(&mut r)],
            vec![[0.1, 0.2, 0.3], [0.3, 0.2, 0.1]],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bnn.json");
        ps.save(&path).unwrap();
        assert_eq!(PosteriorSamples::load(&path).unwrap(), ps);
    }
}
