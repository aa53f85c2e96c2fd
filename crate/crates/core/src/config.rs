//! Run configuration: one TOML file drives every command.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::active::{ActionGrid, ActiveNetConfig};
use crate::bnn::{BnnConfig, Provenance};
use crate::error::{Error, Result};
use crate::persist;
use crate::pipeline::{Method, ReportMeta};
use crate::rng::{self, ns};
use crate::sim::{DatasetConfig, RigidGraspScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Test scenes, drawn from a seed namespace disjoint from training.
    pub scenes: usize,
    pub episodes_per_scene: usize,
    pub methods: Vec<Method>,
    /// Denominator of the relative-error footnote, m.
    pub object_max_dimension_m: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scenes: 20,
            episodes_per_scene: 5,
            methods: Method::ALL.to_vec(),
            object_max_dimension_m: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OodConfig {
    pub masses_kg: Vec<f64>,
    /// Fixed grasp offsets shared by every mass, m.
    pub offsets_m: Vec<[f64; 3]>,
    pub episodes_per_offset: usize,
    pub method: Method,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            masses_kg: vec![0.0434, 0.2446, 0.4462, 0.6481],
            offsets_m: vec![
                [0.03, -0.02, 0.04],
                [-0.04, 0.01, -0.03],
                [0.01, 0.05, 0.02],
                [-0.02, -0.04, -0.05],
                [0.05, 0.03, 0.06],
            ],
            episodes_per_offset: 4,
            method: Method::Active,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid_resolution: usize,
    pub dataset: DatasetConfig,
    pub bnn: BnnConfig,
    pub active: ActiveNetConfig,
    pub eval: EvalConfig,
    pub ood: OodConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            grid_resolution: 21,
            dataset: DatasetConfig::default(),
            bnn: BnnConfig::default(),
            active: ActiveNetConfig::default(),
            eval: EvalConfig::default(),
            ood: OodConfig::default(),
        }
    }
}

impl RunConfig {
    /// Full-scale collection and network sizes.
    pub fn full_scale() -> Self {
        Self {
            dataset: DatasetConfig::full_scale(),
            bnn: BnnConfig::full_scale(),
            active: ActiveNetConfig::full_scale(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.bnn.validate()?;
        self.active.validate()?;
        self.grid()?;
        if self.eval.methods.is_empty() {
            return Err(Error::config("eval.methods", "must list at least one method"));
        }
        if !(self.eval.object_max_dimension_m > 0.0) {
            return Err(Error::config("eval.object_max_dimension_m", "must be positive"));
        }
        if self.ood.masses_kg.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::config("ood.masses_kg", "masses must be positive"));
        }
        for o in &self.ood.offsets_m {
            RigidGraspScene::new(1.0, Vector3::from(*o))
                .map_err(|e| Error::config("ood.offsets_m", e.to_string()))?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<ActionGrid> {
        ActionGrid::new(self.dataset.bounds(), self.grid_resolution)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("<file>", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_atomic(path, self.to_toml().as_bytes())
    }

    pub fn hash(&self) -> String {
        persist::content_hash(self)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.seed,
            config_hash: self.hash(),
            config: serde_json::to_value(self).expect("config serializes to JSON"),
        }
    }

    pub fn report_meta(&self) -> ReportMeta {
        ReportMeta {
            seed: self.seed,
            config_hash: self.hash(),
            paired: true,
            object_max_dimension_m: self.eval.object_max_dimension_m,
        }
    }

    /// Evaluation scenes, one stream per scene id in the evaluation namespace.
    pub fn test_scenes(&self) -> Result<Vec<RigidGraspScene>> {
        (0..self.eval.scenes as u64)
            .map(|id| {
                let mut r = rng::stream(self.seed, &[ns::EVAL, ns::DATASET, id]);
                self.dataset.sample_scene(&mut r)
            })
            .collect()
    }

    /// The defaults as TOML with a comment above each documented key.
    pub fn annotated_default() -> String {
        let text = Self::default().to_toml();
        let mut out = String::from(
            "# Run configuration. Every key is optional; missing keys take the values shown.\n\
             # Lengths in meters, masses in kilograms, angles in radians.\n",
        );
        let mut section = String::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') {
                section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
                out.push('\n');
            } else if let Some((key, _)) = trimmed.split_once(" = ") {
                let path = if section.is_empty() {
                    key.to_string()
                } else {
                    format!("{section}.{key}")
                };
                if let Some(doc) = key_doc(&path) {
                    out.push_str("# ");
                    out.push_str(doc);
                    out.push('\n');
                }
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

fn key_doc(path: &str) -> Option<&'static str> {
    Some(match path {
        "seed" => "Base seed; every random stream derives from it.",
        "grid_resolution" => "Grid points per axis for the second-orientation search (21 = 6° over ±60°).",
        "dataset.grasps" => "Simulated grasps (full-scale collection: 204).",
        "dataset.orientations_per_grasp" => "Random orientations per grasp besides (0, 0) (full scale: 100).",
        "dataset.mass_min_kg" => "Lower end of the training mass range.",
        "dataset.mass_max_kg" => "Upper end of the training mass range.",
        "dataset.offset_box_m" => "Half-widths of the uniform CoM offset box (|dx|, |dy|, |dz|).",
        "dataset.theta_max" => "Per-axis wrist limit; actions lie in [-theta_max, theta_max]².",
        "dataset.gravity" => "Gravitational acceleration, m/s².",
        "dataset.noise.sigma_force" => "Per-axis force noise std, N.",
        "dataset.noise.sigma_torque" => "Per-axis torque noise std, N·m.",
        "dataset.noise.slip_enabled" => "Simulate in-hand slip about the gripper Z axis.",
        "dataset.noise.slip_prob" => "Slip probability per re-orientation.",
        "dataset.noise.slip_sigma" => "Std of the slip angle, rad.",
        "bnn.hidden_sizes" => "Hidden layer widths (full scale: [256, 128, 64]).",
        "bnn.prior_std" => "Std of the weight prior centred on the pretrained weights.",
        "bnn.obs_sigma_prior_scale" => "Scale of the half-normal prior on the observation std (z-scored units).",
        "bnn.pretrain.optimizer" => "adam or radam.",
        "bnn.pretrain.learning_rate" => "Pretraining step size.",
        "bnn.pretrain.epochs" => "Pretraining epochs (full scale: 500).",
        "bnn.pretrain.batch_size" => "Mini-batch size.",
        "bnn.nuts.n_samples" => "Posterior draws kept (full scale: 1000).",
        "bnn.nuts.n_warmup" => "Adaptation transitions discarded (full scale: 200).",
        "bnn.nuts.target_accept" => "Dual-averaging acceptance target.",
        "bnn.nuts.max_tree_depth" => "Maximum trajectory doublings.",
        "bnn.nuts.max_energy_error" => "Energy error that marks a transition divergent.",
        "active.hidden_sizes" => "Scorer hidden widths (full scale: [1024, 1024, 512, 64]).",
        "active.label_target" => "Label the scorer with the `second` estimate's error or the `fused` one.",
        "active.train.learning_rate" => "Scorer step size.",
        "active.train.epochs" => "Scorer epochs (full scale: 500).",
        "eval.scenes" => "Held-out test scenes.",
        "eval.episodes_per_scene" => "Episodes per scene; every method sees the same noise per episode.",
        "eval.methods" => "Methods to compare: active, random-rotate, one-grasp, analytical.",
        "eval.object_max_dimension_m" => "Object size used for the relative-error footnote.",
        "ood.masses_kg" => "Masses for the fixed-offset sweep; those outside the training range are OOD.",
        "ood.offsets_m" => "Grasp offsets held fixed across the sweep.",
        "ood.episodes_per_offset" => "Noisy episodes per offset and mass.",
        "ood.method" => "Method evaluated in the sweep.",
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_is_lossless() {
        for cfg in [RunConfig::default(), RunConfig::full_scale()] {
            let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn annotated_default_parses_to_default() {
        let text = RunConfig::annotated_default();
        assert!(text.contains("# Per-axis force noise std, N."));
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[dataset]\ngrasps = 3\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dataset.grasps, 3);
        assert_eq!(cfg.dataset.orientations_per_grasp, 40);
        assert_eq!(cfg.bnn, BnnConfig::default());
    }

    #[test]
    fn defaults_match_collection_and_training_settings() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.bnn.prior_std, 0.5);
        assert_eq!(cfg.bnn.pretrain.learning_rate, 1e-3);
        assert_eq!(cfg.active.train.learning_rate, 1e-4);
        let full = RunConfig::full_scale();
        full.validate().unwrap();
        assert_eq!(full.bnn.hidden_sizes, vec![256, 128, 64]);
        assert_eq!((full.bnn.nuts.n_samples, full.bnn.nuts.n_warmup), (1000, 200));
        assert_eq!(full.bnn.pretrain.epochs, 500);
        assert_eq!(full.active.hidden_sizes, vec![1024, 1024, 512, 64]);
        assert_eq!(full.active.train.epochs, 500);
        assert_eq!(full.dataset.grasps, 204);
        assert_eq!(full.dataset.orientations_per_grasp, 100);
    }

    #[test]
    fn invalid_fields_are_named() {
        let cfg = RunConfig {
            grid_resolution: 1,
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "grid_resolution"));
        let mut cfg = RunConfig::default();
        cfg.bnn.hidden_sizes = vec![0];
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "bnn.hidden_sizes"));
        assert!(RunConfig::from_toml("seed = \"x\"").is_err());
    }

    #[test]
    fn test_scenes_are_reproducible_and_in_range() {
        let cfg = RunConfig::default();
        let a = cfg.test_scenes().unwrap();
        assert_eq!(a, cfg.test_scenes().unwrap());
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|s| s.mass >= cfg.dataset.mass_min_kg && s.mass <= cfg.dataset.mass_max_kg));
    }
}
