//! Independent oracles for the posterior gradient and the sampler.

use comest_core::bnn::{self, BnnPrior, RegressionData};
use comest_core::mlp::MlpArchitecture;
use comest_core::nuts::{effective_sample_size, nuts_sample, LogDensity, NutsSettings};
use comest_core::rng;
use comest_core::Result;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal<R: Rng>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

#[test]
fn posterior_gradient_matches_central_differences() {
    const H: f64 = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let mut r = rng::stream(77, &[case]);
        let depth = r.random_range(1..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(1..=6)).collect();
        let arch = MlpArchitecture::new(bnn::INPUT_DIM, hidden, bnn::OUTPUT_DIM).unwrap();
        let rows = r.random_range(3..=12);
        let x = Array2::from_shape_fn((rows, bnn::INPUT_DIM), |_| normal(&mut r));
        let y = Array2::from_shape_fn((rows, bnn::OUTPUT_DIM), |_| normal(&mut r));
        let prior = BnnPrior {
            center: arch.init_weights(&mut r),
            weight_std: r.random_range(0.3..2.0),
            sigma_scale: r.random_range(0.5..2.0),
        };
        let data = RegressionData {
            inputs: x.view(),
            targets: y.view(),
        };
        // Jitter moves the zero initial biases off ReLU kinks, where no derivative exists.
        let mut theta: Vec<f64> = arch.init_weights(&mut r).into_iter().map(|w| w + 0.1 * normal(&mut r)).collect();
        theta.extend((0..3).map(|_| r.random_range(-1.0..1.0)));

        let analytic = bnn::grad_log_posterior(&arch, &prior, &data, &theta).unwrap();
        assert_eq!(analytic.len(), arch.param_count() + 3);
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += H;
            minus[i] -= H;
            let fp = bnn::log_posterior_unconstrained(&arch, &prior, &data, &plus).unwrap();
            let fm = bnn::log_posterior_unconstrained(&arch, &prior, &data, &minus).unwrap();
            let fd = (fp - fm) / (2.0 * H);
            let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "case {case}, coordinate {i}: analytic {} vs fd {fd}", analytic[i]);
            worst = worst.max(rel);
        }
    }
    println!("worst relative gradient error {worst:.2e}");
}

/// Gaussian with mean `mu` and precision matrix `prec`.
struct Gaussian {
    mu: DVector<f64>,
    prec: DMatrix<f64>,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = DVector::from_column_slice(position) - &self.mu;
        let g = -(&self.prec * &d);
        grad.copy_from_slice(g.as_slice());
        Ok(0.5 * d.dot(&g))
    }
}

fn column(samples: &[Vec<f64>], i: usize) -> Vec<f64> {
    samples.iter().map(|s| s[i]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn nuts_recovers_standard_gaussian_5d() {
    let target = Gaussian {
        mu: DVector::zeros(5),
        prec: DMatrix::identity(5, 5),
    };
    let settings = NutsSettings {
        n_samples: 1000,
        n_warmup: 200,
        ..NutsSettings::default()
    };
    let run = nuts_sample(&target, vec![1.0; 5], &settings, &mut rng::stream(5, &[])).unwrap();
    assert_eq!(run.samples.len(), 1000);
    for i in 0..5 {
        let c = column(&run.samples, i);
        let (m, v) = (mean(&c), variance(&c));
        assert!(m.abs() < 0.1, "axis {i}: mean {m}");
        assert!((v - 1.0).abs() < 0.15, "axis {i}: variance {v}");
    }
    assert_eq!(run.diagnostics.divergences, 0);
}

#[test]
fn nuts_recovers_shifted_scaled_gaussian() {
    let target = Gaussian {
        mu: DVector::from_element(1, 3.0),
        prec: DMatrix::from_element(1, 1, 0.25),
    };
    let run = nuts_sample(&target, vec![0.0], &NutsSettings::default(), &mut rng::stream(6, &[])).unwrap();
    let c = column(&run.samples, 0);
    assert!((mean(&c) - 3.0).abs() < 0.2, "mean {}", mean(&c));
    assert!((variance(&c).sqrt() - 2.0).abs() < 0.3, "std {}", variance(&c).sqrt());
}

#[test]
fn nuts_matches_conjugate_linear_regression() {
    // y = Xβ + ε, ε ~ N(0, s²), β ~ N(0, τ² I): the posterior is Gaussian in closed form.
    let (n, p, s, tau) = (40, 3, 0.5, 2.0);
    let mut r = rng::stream(8, &[]);
    let beta = DVector::from_vec(vec![1.5, -0.7, 0.3]);
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut r));
    let y = &x * &beta + DVector::from_fn(n, |_, _| s * normal(&mut r));
    let prec = x.transpose() * &x / (s * s) + DMatrix::identity(p, p) / (tau * tau);
    let cov = prec.clone().cholesky().expect("posterior precision is SPD").inverse();
    let mu = &cov * x.transpose() * &y / (s * s);

    let target = Gaussian {
        mu: mu.clone(),
        prec,
    };
    let settings = NutsSettings {
        n_samples: 2000,
        n_warmup: 300,
        ..NutsSettings::default()
    };
    let run = nuts_sample(&target, vec![0.0; p], &settings, &mut rng::stream(9, &[])).unwrap();

    for i in 0..p {
        let c = column(&run.samples, i);
        let se = (variance(&c) / effective_sample_size(&c)).sqrt();
        let err = (mean(&c) - mu[i]).abs();
        assert!(err < 3.0 * se, "β{i}: sample mean {} vs {} (se {se:.2e})", mean(&c), mu[i]);
    }
    for i in 0..p {
        for j in 0..=i {
            let prod: Vec<f64> = run.samples.iter().map(|v| (v[i] - mu[i]) * (v[j] - mu[j])).collect();
            let se = (variance(&prod) / effective_sample_size(&prod)).sqrt();
            let err = (mean(&prod) - cov[(i, j)]).abs();
            assert!(err < 3.0 * se, "cov[{i},{j}]: {} vs {} (se {se:.2e})", mean(&prod), cov[(i, j)]);
        }
    }
}
