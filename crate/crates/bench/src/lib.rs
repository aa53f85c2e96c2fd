//! Fixtures shared by the benchmarks.

use comest_core::bnn::{self, BnnPrior};
use comest_core::mlp::MlpArchitecture;
use comest_core::rng;
use comest_core::sim::{self, DatasetConfig};
use ndarray::Array2;

/// Normalized desk-scale regression problem with its prior and a start point.
pub struct DeskPosterior {
    pub arch: MlpArchitecture,
    pub prior: BnnPrior,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub theta: Vec<f64>,
}

pub fn desk_posterior() -> DeskPosterior {
    let ds = sim::generate_dataset(&DatasetConfig::default(), 1).expect("default config is valid");
    let (raw_x, raw_y) = bnn::design_matrices(&ds.records);
    let norm = comest_core::mlp::NormalizationStats::fit(raw_x.view(), raw_y.view());
    let arch = bnn::BnnConfig::default().architecture().expect("default architecture is valid");
    let center = arch.init_weights(&mut rng::stream(1, &[]));
    let mut theta = center.clone();
    theta.extend([-1.0; 3]);
    DeskPosterior {
        prior: BnnPrior {
            center,
            weight_std: 0.5,
            sigma_scale: 1.0,
        },
        x: norm.normalize_inputs(raw_x.view()),
        y: norm.normalize_outputs(raw_y.view()),
        arch,
        theta,
    }
}
