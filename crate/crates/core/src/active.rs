//! Learned action scoring and grid search over the second wrist orientation.
//!
//! The scorer regresses the error the Bayesian regressor would make after
//! moving to a candidate orientation, given the first-reading estimate. At
//! inference the whole grid is scored and the minimum wins.

use std::path::Path;

use nalgebra::Vector3;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::analytical::ComEstimate;
use crate::bnn::{PosteriorSamples, Provenance};
use crate::error::{Error, Result};
use crate::mlp::{self, MlpArchitecture, NormalizationStats, TrainConfig};
use crate::persist;
use crate::pipeline::fuse;
use crate::rng::{self, ns};
use crate::sim::{ActionBounds, Dataset, WristOrientation};

pub const ACTIVE_INPUT_DIM: usize = 8;
pub const ACTIVENET_FORMAT: &str = "comest-activenet/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionScoreExample {
    pub prior_mean: Vector3<f64>,
    pub prior_std: Vector3<f64>,
    pub action: WristOrientation,
    /// Euclidean estimation error after taking `action`, m.
    pub score: f64,
}

impl ActionScoreExample {
    fn input(prior_mean: &Vector3<f64>, prior_std: &Vector3<f64>, action: WristOrientation) -> [f64; ACTIVE_INPUT_DIM] {
        [
            prior_mean.x,
            prior_mean.y,
            prior_mean.z,
            prior_std.x,
            prior_std.y,
            prior_std.z,
            action.theta1,
            action.theta2,
        ]
    }
}

/// Which estimate the training label measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelTarget {
    /// The second-reading estimate alone.
    #[default]
    Second,
    /// The fused first+second estimate.
    Fused,
}

/// Builds one labeled example per non-default reading of every grasp.
pub fn make_training_labels(
    bnn: &PosteriorSamples,
    dataset: &Dataset,
    label: LabelTarget,
) -> Result<Vec<ActionScoreExample>> {
    let mut examples = Vec::new();
    for (grasp_id, records) in dataset.grasps() {
        let default_idx = records
            .iter()
            .position(|r| r.orientation.is_default())
            .ok_or_else(|| Error::format("dataset", format!("grasp {grasp_id} has no (0, 0) reading")))?;
        let queries: Vec<_> = records.iter().map(|r| (r.wrench, r.orientation)).collect();
        let preds = bnn.predict_batch(&queries)?;
        let prior = preds[default_idx];
        for (i, (rec, pred)) in records.iter().zip(&preds).enumerate() {
            if i == default_idx || rec.orientation.is_default() {
                continue;
            }
            let estimate = match label {
                LabelTarget::Second => pred.mean,
                LabelTarget::Fused => fuse(&prior.to_estimate(), &pred.to_estimate())?.mean,
            };
            examples.push(ActionScoreExample {
                prior_mean: prior.mean,
                prior_std: prior.std,
                action: rec.orientation,
                score: (estimate - rec.true_offset).norm(),
            });
        }
    }
    Ok(examples)
}

/// Anything that can score a candidate action given the first estimate.
pub trait ActionScorer {
    fn score(&self, prior: &ComEstimate, action: WristOrientation) -> Result<f64>;

    fn score_batch(&self, prior: &ComEstimate, actions: &[WristOrientation]) -> Result<Vec<f64>> {
        actions.iter().map(|a| self.score(prior, *a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveNetConfig {
    pub hidden_sizes: Vec<usize>,
    pub train: TrainConfig,
    pub label_target: LabelTarget,
}

impl Default for ActiveNetConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 64, 32],
            train: TrainConfig {
                learning_rate: 1e-4,
                epochs: 200,
                ..TrainConfig::default()
            },
            label_target: LabelTarget::Second,
        }
    }
}

impl ActiveNetConfig {
    pub fn full_scale() -> Self {
        Self {
            hidden_sizes: vec![1024, 1024, 512, 64],
            train: TrainConfig {
                learning_rate: 1e-4,
                epochs: 500,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn architecture(&self) -> Result<MlpArchitecture> {
        MlpArchitecture::new(ACTIVE_INPUT_DIM, self.hidden_sizes.clone(), 1)
            .map_err(|e| Error::config("active.hidden_sizes", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture()?;
        self.train.validate("active.train")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl LabelSummary {
    pub fn of(examples: &[ActionScoreExample]) -> Self {
        if examples.is_empty() {
            return Self::default();
        }
        let n = examples.len() as f64;
        let mean = examples.iter().map(|e| e.score).sum::<f64>() / n;
        let var = examples.iter().map(|e| (e.score - mean).powi(2)).sum::<f64>() / n;
        Self {
            count: examples.len(),
            mean,
            std: var.sqrt(),
            min: examples.iter().map(|e| e.score).fold(f64::INFINITY, f64::min),
            max: examples.iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveNetModel {
    pub architecture: MlpArchitecture,
    pub normalization: NormalizationStats,
    pub weights: Vec<f64>,
    pub final_loss: f64,
    pub label_summary: LabelSummary,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ActiveNetFile {
    format: String,
    #[serde(flatten)]
    model: ActiveNetModel,
}

impl ActiveNetModel {
    fn forward_rows(&self, rows: Array2<f64>) -> Result<Vec<f64>> {
        let x = self.normalization.normalize_inputs(rows.view());
        let y = mlp::forward_batch(&self.architecture, &self.weights, x.view())?;
        let (m, s) = (self.normalization.output_mean[0], self.normalization.output_std[0]);
        Ok(y.column(0).iter().map(|v| v * s + m).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_json_atomic(
            path,
            &ActiveNetFile {
                format: ACTIVENET_FORMAT.into(),
                model: self.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ActiveNetFile = persist::read_json(path)?;
        if file.format != ACTIVENET_FORMAT {
            return Err(Error::format(
                "activenet model",
                format!("unsupported format tag `{}`", file.format),
            ));
        }
        let m = file.model;
        m.architecture.validate()?;
        if m.weights.len() != m.architecture.param_count() {
            return Err(Error::Dimension {
                expected: m.architecture.param_count(),
                got: m.weights.len(),
            });
        }
        m.normalization.validate(ACTIVE_INPUT_DIM, 1)?;
        Ok(m)
    }
}

fn prior_parts(prior: &ComEstimate) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let std = prior
        .std
        .ok_or_else(|| Error::Domain("action scoring needs an estimate with std".into()))?;
    Ok((prior.mean, std))
}

impl ActionScorer for ActiveNetModel {
    fn score(&self, prior: &ComEstimate, action: WristOrientation) -> Result<f64> {
        Ok(self.score_batch(prior, &[action])?[0])
    }

    fn score_batch(&self, prior: &ComEstimate, actions: &[WristOrientation]) -> Result<Vec<f64>> {
        let (mean, std) = prior_parts(prior)?;
        let mut rows = Array2::zeros((actions.len(), ACTIVE_INPUT_DIM));
        for (mut row, a) in rows.axis_iter_mut(Axis(0)).zip(actions) {
            row.assign(&ndarray::ArrayView1::from(&ActionScoreExample::input(&mean, &std, *a)));
        }
        self.forward_rows(rows)
    }
}

/// Single forward pass of the scorer.
pub fn score_action(model: &ActiveNetModel, prior: &ComEstimate, action: WristOrientation) -> Result<f64> {
    model.score(prior, action)
}

/// MSE regression of score on `(prior mean, prior std, action)`.
pub fn train_activenet(
    examples: &[ActionScoreExample],
    config: &ActiveNetConfig,
    seed: u64,
    provenance: Provenance,
) -> Result<ActiveNetModel> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("action-score examples".into()));
    }
    let arch = config.architecture()?;
    let n = examples.len();
    let mut raw_x = Array2::zeros((n, ACTIVE_INPUT_DIM));
    let mut raw_y = Array2::zeros((n, 1));
    for (i, e) in examples.iter().enumerate() {
        for (j, v) in ActionScoreExample::input(&e.prior_mean, &e.prior_std, e.action).iter().enumerate() {
            raw_x[[i, j]] = *v;
        }
        raw_y[[i, 0]] = e.score;
    }
    let normalization = NormalizationStats::fit(raw_x.view(), raw_y.view());
    let x = normalization.normalize_inputs(raw_x.view());
    let y = normalization.normalize_outputs(raw_y.view());
    let mut rng = rng::stream(seed, &[ns::ACTIVE]);
    let init = arch.init_weights(&mut rng);
    let out = mlp::train_mse(&arch, init, x.view(), y.view(), &config.train, &mut rng)?;
    Ok(ActiveNetModel {
        architecture: arch,
        normalization,
        weights: out.weights,
        final_loss: out.final_loss,
        label_summary: LabelSummary::of(examples),
        provenance,
    })
}

/// Evenly spaced `resolution × resolution` grid over the action bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub bounds: ActionBounds,
    pub resolution: usize,
}

impl ActionGrid {
    pub fn new(bounds: ActionBounds, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::config("grid_resolution", "must be ≥ 2 points per axis"));
        }
        Ok(Self { bounds, resolution })
    }

    fn axis(&self) -> Vec<f64> {
        let m = self.bounds.theta_max;
        let last = (self.resolution - 1) as f64;
        // Symmetric numerator keeps the centre (odd resolutions) exactly 0.
        (0..self.resolution)
            .map(|i| m * (2.0 * i as f64 - last) / last)
            .collect()
    }

    pub fn points(&self) -> Vec<WristOrientation> {
        let axis = self.axis();
        axis.iter()
            .flat_map(|&t1| axis.iter().map(move |&t2| WristOrientation::new(t1, t2)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionChoice {
    pub action: WristOrientation,
    pub score: f64,
    pub evaluations: usize,
}

/// Smaller score first, then smaller rotation, then lexicographic.
fn better(a: (f64, WristOrientation), b: (f64, WristOrientation)) -> bool {
    let key = |(s, o): (f64, WristOrientation)| (s, o.norm(), o.theta1, o.theta2);
    key(a).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Less)
}

/// Exhaustive grid search for the minimum-score action.
pub fn select_action<S: ActionScorer + ?Sized>(
    scorer: &S,
    prior: &ComEstimate,
    grid: &ActionGrid,
) -> Result<ActionChoice> {
    let points = grid.points();
    let scores = scorer.score_batch(prior, &points)?;
    let mut best: Option<(f64, WristOrientation)> = None;
    for (&score, &o) in scores.iter().zip(&points) {
        if !score.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite score at ({}, {})",
                o.theta1, o.theta2
            )));
        }
        if best.is_none_or(|b| better((score, o), b)) {
            best = Some((score, o));
        }
    }
    let (score, action) = best.expect("grid has at least four points");
    Ok(ActionChoice {
        action,
        score,
        evaluations: points.len(),
    })
}
