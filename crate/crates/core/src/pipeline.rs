//! Episode-level inference: the active two-reading pipeline, its three
//! baselines, precision-weighted fusion, and the paired benchmark harness.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{select_action, ActionGrid, ActionScorer};
use crate::analytical::{solve_com_analytical, ComEstimate};
use crate::bnn::PosteriorSamples;
use crate::error::{Error, Result};
use crate::rng::{self, ns};
use crate::sim::{observe_wrench, ActionBounds, NoiseModel, RigidGraspScene, WristOrientation, Wrench};

/// Combines two independent Gaussian estimates per axis by inverse variance.
pub fn fuse(e1: &ComEstimate, e2: &ComEstimate) -> Result<ComEstimate> {
    let (s1, s2) = match (e1.std, e2.std) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Domain("fusion needs both stds defined".into())),
    };
    if !s1.iter().chain(s2.iter()).all(|s| *s > 0.0) {
        return Err(Error::Domain(format!("fusion needs positive stds, got {s1:?} and {s2:?}")));
    }
    let mut mean = Vector3::zeros();
    let mut std = Vector3::zeros();
    for k in 0..3 {
        let p1 = 1.0 / (s1[k] * s1[k]);
        let p2 = 1.0 / (s2[k] * s2[k]);
        let total = p1 + p2;
        mean[k] = (e1.mean[k] * p1 + e2.mean[k] * p2) / total;
        std[k] = (1.0 / total).sqrt();
    }
    Ok(ComEstimate {
        mean,
        std: Some(std),
    })
}

/// Something that answers orientation queries with wrench readings.
pub trait WrenchSource {
    fn observe(&mut self, o: WristOrientation) -> Result<Wrench>;
}

/// Simulated single-episode source. Noise for each query is drawn from a
/// stream keyed by `(seed, episode, orientation)`, so methods that query the
/// same orientation in the same episode see the same reading.
#[derive(Debug, Clone)]
pub struct SimulatedSource {
    scene: RigidGraspScene,
    noise: NoiseModel,
    seed: u64,
    episode_id: u64,
    queries: usize,
}

impl SimulatedSource {
    pub fn new(scene: RigidGraspScene, noise: NoiseModel, seed: u64, episode_id: u64) -> Self {
        Self {
            scene,
            noise,
            seed,
            episode_id,
            queries: 0,
        }
    }

    /// Current hidden offset, including any slip so far.
    pub fn current_offset(&self) -> Vector3<f64> {
        self.scene.com_offset
    }
}

impl WrenchSource for SimulatedSource {
    fn observe(&mut self, o: WristOrientation) -> Result<Wrench> {
        if self.queries == 0 && !o.is_default() {
            return Err(Error::Source(
                "the first query of an episode must be the default orientation".into(),
            ));
        }
        let mut rng = rng::stream(
            self.seed,
            &[ns::EVAL, self.episode_id, o.theta1.to_bits(), o.theta2.to_bits()],
        );
        let obs = observe_wrench(&self.scene, o, &self.noise, &mut rng);
        if let Some(offset) = obs.slipped_offset {
            self.scene.com_offset = offset;
        }
        self.queries += 1;
        Ok(obs.wrench)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Learned second orientation plus fusion.
    Active,
    RandomRotate,
    OneGrasp,
    Analytical,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Active,
        Method::RandomRotate,
        Method::OneGrasp,
        Method::Analytical,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Active => "active",
            Method::RandomRotate => "random-rotate",
            Method::OneGrasp => "one-grasp",
            Method::Analytical => "analytical",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// What a method produced before it is scored against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimation {
    pub method: Method,
    pub estimate: ComEstimate,
    /// First-reading estimate, for two-reading methods.
    pub prior: Option<ComEstimate>,
    pub actions: Vec<WristOrientation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub method: Method,
    pub scene_id: u64,
    pub episode_id: u64,
    pub mass: f64,
    pub estimate: ComEstimate,
    pub prior: Option<ComEstimate>,
    pub true_offset: Vector3<f64>,
    pub abs_error: Vector3<f64>,
    pub actions: Vec<WristOrientation>,
}

impl EpisodeResult {
    pub fn new(est: Estimation, true_offset: Vector3<f64>, scene_id: u64, episode_id: u64, mass: f64) -> Self {
        Self {
            method: est.method,
            scene_id,
            episode_id,
            mass,
            abs_error: (est.estimate.mean - true_offset).abs(),
            estimate: est.estimate,
            prior: est.prior,
            true_offset,
            actions: est.actions,
        }
    }

    /// Euclidean error, m.
    pub fn total_error(&self) -> f64 {
        self.abs_error.norm()
    }
}

/// Single reading at `(0, 0)`, no fusion.
pub fn run_one_grasp<S: WrenchSource + ?Sized>(source: &mut S, bnn: &PosteriorSamples) -> Result<Estimation> {
    let o = WristOrientation::DEFAULT;
    let w = source.observe(o)?;
    let estimate = bnn.predict(&w, o)?.to_estimate();
    Ok(Estimation {
        method: Method::OneGrasp,
        estimate,
        prior: None,
        actions: vec![o],
    })
}

fn two_readings<S: WrenchSource + ?Sized>(
    method: Method,
    source: &mut S,
    bnn: &PosteriorSamples,
    choose: impl FnOnce(&ComEstimate) -> Result<WristOrientation>,
) -> Result<Estimation> {
    let first = run_one_grasp(source, bnn)?;
    let prior = first.estimate;
    let action = choose(&prior)?;
    let w = source.observe(action)?;
    let second = bnn.predict(&w, action)?.to_estimate();
    let estimate = fuse(&prior, &second)?;
    Ok(Estimation {
        method,
        estimate,
        prior: Some(prior),
        actions: vec![WristOrientation::DEFAULT, action],
    })
}

/// First reading, scorer-selected second orientation, second reading, fusion.
pub fn run_active<S, A>(
    source: &mut S,
    bnn: &PosteriorSamples,
    scorer: &A,
    grid: &ActionGrid,
) -> Result<Estimation>
where
    S: WrenchSource + ?Sized,
    A: ActionScorer + ?Sized,
{
    two_readings(Method::Active, source, bnn, |prior| {
        Ok(select_action(scorer, prior, grid)?.action)
    })
}

/// As [`run_active`] with the second orientation drawn uniformly.
pub fn run_random_rotate<S: WrenchSource + ?Sized, R: Rng + ?Sized>(
    source: &mut S,
    bnn: &PosteriorSamples,
    bounds: &ActionBounds,
    rng: &mut R,
) -> Result<Estimation> {
    two_readings(Method::RandomRotate, source, bnn, |_| Ok(bounds.sample(rng)))
}

/// Closed-form solution at `(0, 0)`; the vertical component stays 0.
pub fn run_analytical<S: WrenchSource + ?Sized>(source: &mut S) -> Result<Estimation> {
    let o = WristOrientation::DEFAULT;
    let w = source.observe(o)?;
    Ok(Estimation {
        method: Method::Analytical,
        estimate: solve_com_analytical(&w)?,
        prior: None,
        actions: vec![o],
    })
}

/// Models and settings shared by every episode of an evaluation.
pub struct EvalContext<'a> {
    pub bnn: &'a PosteriorSamples,
    pub scorer: &'a (dyn ActionScorer + Sync),
    pub grid: ActionGrid,
    pub noise: NoiseModel,
}

impl EvalContext<'_> {
    pub fn run_method(
        &self,
        method: Method,
        scene: &RigidGraspScene,
        seed: u64,
        scene_id: u64,
        episode_id: u64,
    ) -> Result<EpisodeResult> {
        let mut source = SimulatedSource::new(*scene, self.noise, seed, episode_id);
        let est = match method {
            Method::Active => run_active(&mut source, self.bnn, self.scorer, &self.grid)?,
            Method::RandomRotate => {
                let mut rng = rng::stream(seed, &[ns::EVAL, episode_id, u64::MAX]);
                run_random_rotate(&mut source, self.bnn, &self.grid.bounds, &mut rng)?
            }
            Method::OneGrasp => run_one_grasp(&mut source, self.bnn)?,
            Method::Analytical => run_analytical(&mut source)?,
        };
        Ok(EpisodeResult::new(est, scene.com_offset, scene_id, episode_id, scene.mass))
    }
}

/// Per-method aggregate, lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub episodes: usize,
    pub mean_abs_error: Vector3<f64>,
    pub mean_total_error: f64,
    /// Across-episode spread of the total error.
    pub total_error_std: f64,
    /// Mean predicted std; `None` for estimators without one.
    pub mean_predicted_std: Option<Vector3<f64>>,
}

impl MethodSummary {
    pub fn of(method: Method, rows: &[&EpisodeResult]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_abs_error = rows.iter().map(|r| r.abs_error).sum::<Vector3<f64>>() / n;
        let mean_total_error = rows.iter().map(|r| r.total_error()).sum::<f64>() / n;
        let total_error_std = (rows
            .iter()
            .map(|r| (r.total_error() - mean_total_error).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let stds: Option<Vec<Vector3<f64>>> = rows.iter().map(|r| r.estimate.std).collect();
        let mean_predicted_std = stds
            .filter(|s| !s.is_empty())
            .map(|s| s.iter().sum::<Vector3<f64>>() / n);
        Self {
            method,
            episodes: rows.len(),
            mean_abs_error,
            mean_total_error,
            total_error_std,
            mean_predicted_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_hash: String,
    /// All methods saw identical noise streams per episode.
    pub paired: bool,
    /// Denominator for the relative-error footnote, m.
    pub object_max_dimension_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub methods: Vec<Method>,
    pub rows: Vec<EpisodeResult>,
}

/// Mean total error on physical hardware, reported for orientation only.
pub const HARDWARE_REFERENCE_MM: f64 = 14.7;
pub const HARDWARE_REFERENCE_RELATIVE: f64 = 0.076;

/// Runs every method on every `(scene, episode)` with shared seeds.
pub fn evaluate(
    ctx: &EvalContext,
    methods: &[Method],
    scenes: &[RigidGraspScene],
    episodes_per_scene: usize,
    meta: ReportMeta,
) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::Empty("scene list".into()));
    }
    if methods.is_empty() {
        return Err(Error::Empty("method list".into()));
    }
    let seed = meta.seed;
    let jobs: Vec<(u64, u64, Method)> = (0..scenes.len() as u64)
        .flat_map(|s| {
            (0..episodes_per_scene as u64).flat_map(move |e| {
                let episode = s * episodes_per_scene as u64 + e;
                methods.iter().map(move |m| (s, episode, *m))
            })
        })
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(s, episode, m)| ctx.run_method(m, &scenes[s as usize], seed, s, episode))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        meta,
        methods: methods.to_vec(),
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl EvalReport {
    pub fn rows_for(&self, method: Method) -> Vec<&EpisodeResult> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    pub fn summaries(&self) -> Vec<MethodSummary> {
        self.methods
            .iter()
            .map(|m| MethodSummary::of(*m, &self.rows_for(*m)))
            .collect()
    }

    /// Summaries sorted by mean total error, best first.
    pub fn ranking(&self) -> Vec<MethodSummary> {
        let mut s = self.summaries();
        s.sort_by(|a, b| a.mean_total_error.total_cmp(&b.mean_total_error));
        s
    }

    /// One row per episode and method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,scene_id,episode_id,mass_kg,true_dx,true_dy,true_dz,est_dx,est_dy,est_dz,\
             std_dx,std_dy,std_dz,err_dx,err_dy,err_dz,err_total,\
             action1_theta1,action1_theta2,action2_theta1,action2_theta2\n",
        );
        for r in &self.rows {
            let std = r.estimate.std;
            let a2 = r.actions.get(1);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.scene_id,
                r.episode_id,
                r.mass,
                r.true_offset.x,
                r.true_offset.y,
                r.true_offset.z,
                r.estimate.mean.x,
                r.estimate.mean.y,
                r.estimate.mean.z,
                fmt_opt(std.map(|s| s.x)),
                fmt_opt(std.map(|s| s.y)),
                fmt_opt(std.map(|s| s.z)),
                r.abs_error.x,
                r.abs_error.y,
                r.abs_error.z,
                r.total_error(),
                r.actions[0].theta1,
                r.actions[0].theta2,
                fmt_opt(a2.map(|a| a.theta1)),
                fmt_opt(a2.map(|a| a.theta2)),
            );
        }
        out
    }

    /// Aligned method × axis table in millimetres.
    pub fn summary_table(&self) -> String {
        let mm = |v: f64| format!("{:.2}", v * 1e3);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>8} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8} {:>8} {:>6}",
            "method", "err_x", "err_y", "err_z", "err_total", "err_sd", "std_x", "std_y", "std_z", "n"
        );
        for s in self.summaries() {
            let (sx, sy, sz) = match s.mean_predicted_std {
                Some(v) => (mm(v.x), mm(v.y), mm(v.z)),
                None => ("n/a".into(), "n/a".into(), "n/a".into()),
            };
            let _ = writeln!(
                out,
                "{:<14} {:>8} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8} {:>8} {:>6}",
                s.method.label(),
                mm(s.mean_abs_error.x),
                mm(s.mean_abs_error.y),
                mm(s.mean_abs_error.z),
                mm(s.mean_total_error),
                mm(s.total_error_std),
                sx,
                sy,
                sz,
                s.episodes
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "units: mm; err_* = mean absolute error, err_total = mean Euclidean error,");
        let _ = writeln!(out, "err_sd = across-episode std of err_total, std_* = mean predicted std");
        let _ = writeln!(
            out,
            "ranking by err_total: {}",
            self.ranking()
                .iter()
                .map(|s| s.method.label())
                .collect::<Vec<_>>()
                .join(" < ")
        );
        if self.meta.object_max_dimension_m > 0.0 {
            for s in self.summaries() {
                let _ = writeln!(
                    out,
                    "relative error ({}): {:.1}% of {:.0} mm object size",
                    s.method.label(),
                    100.0 * s.mean_total_error / self.meta.object_max_dimension_m,
                    self.meta.object_max_dimension_m * 1e3
                );
            }
        }
        let _ = writeln!(
            out,
            "paired seeds: {}; seed: {}; config: {}",
            self.meta.paired, self.meta.seed, self.meta.config_hash
        );
        let _ = writeln!(
            out,
            "hardware reference (physical objects, not reproducible here): {:.1} mm mean error, {:.1}% relative",
            HARDWARE_REFERENCE_MM,
            HARDWARE_REFERENCE_RELATIVE * 100.0
        );
        out
    }
}

/// Per-mass result of the fixed-offset mass sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub mass_kg: f64,
    pub in_distribution: bool,
    pub episodes: usize,
    pub mean_abs_error: Vector3<f64>,
    pub mean_total_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub meta: ReportMeta,
    pub method: Method,
    pub training_mass_range: (f64, f64),
    pub rows: Vec<OodRow>,
}

impl OodReport {
    fn mean_over(&self, in_dist: bool) -> Option<f64> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.in_distribution == in_dist).collect();
        (!rows.is_empty()).then(|| rows.iter().map(|r| r.mean_total_error).sum::<f64>() / rows.len() as f64)
    }

    pub fn in_distribution_error(&self) -> Option<f64> {
        self.mean_over(true)
    }

    pub fn ood_error(&self) -> Option<f64> {
        self.mean_over(false)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mass_kg,in_distribution,episodes,err_dx,err_dy,err_dz,err_total\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.method,
                r.mass_kg,
                r.in_distribution,
                r.episodes,
                r.mean_abs_error.x,
                r.mean_abs_error.y,
                r.mean_abs_error.z,
                r.mean_total_error
            );
        }
        out
    }

    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>8} {:>8} {:>8} {:>9}", "mass (g)", "err_x", "err_y", "err_z", "err_total");
        for r in &self.rows {
            let label = format!("{:.1}{}", r.mass_kg * 1e3, if r.in_distribution { "" } else { " (OOD)" });
            let _ = writeln!(
                out,
                "{:<14} {:>8.2} {:>8.2} {:>8.2} {:>9.2}",
                label,
                r.mean_abs_error.x * 1e3,
                r.mean_abs_error.y * 1e3,
                r.mean_abs_error.z * 1e3,
                r.mean_total_error * 1e3
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "method: {}; training mass range: {:.1}–{:.1} g; units: mm",
            self.method,
            self.training_mass_range.0 * 1e3,
            self.training_mass_range.1 * 1e3
        );
        if let (Some(i), Some(o)) = (self.in_distribution_error(), self.ood_error()) {
            let _ = writeln!(out, "mean err_total in-distribution {:.2} mm, OOD {:.2} mm", i * 1e3, o * 1e3);
        }
        let _ = writeln!(out, "seed: {}; config: {}", self.meta.seed, self.meta.config_hash);
        out
    }
}

/// Sweeps object mass with the grasp offsets held fixed.
pub fn ood_study(
    ctx: &EvalContext,
    method: Method,
    masses: &[f64],
    offsets: &[Vector3<f64>],
    episodes_per_offset: usize,
    training_mass_range: (f64, f64),
    meta: ReportMeta,
) -> Result<OodReport> {
    if masses.is_empty() || offsets.is_empty() {
        return Err(Error::Empty("mass or offset list".into()));
    }
    let seed = rng::derive_seed(meta.seed, &[ns::OOD]);
    let rows = masses
        .iter()
        .map(|&mass| {
            let mut results = Vec::new();
            for (oi, offset) in offsets.iter().enumerate() {
                let scene = RigidGraspScene::new(mass, *offset)?;
                for e in 0..episodes_per_offset {
                    // Episode ids are shared across masses so each mass sees
                    // the same noise draws.
                    let episode = (oi * episodes_per_offset + e) as u64;
                    results.push(ctx.run_method(method, &scene, seed, oi as u64, episode)?);
                }
            }
            let refs: Vec<&EpisodeResult> = results.iter().collect();
            let s = MethodSummary::of(method, &refs);
            let (lo, hi) = training_mass_range;
            Ok(OodRow {
                mass_kg: mass,
                in_distribution: mass >= lo && mass <= hi,
                episodes: results.len(),
                mean_abs_error: s.mean_abs_error,
                mean_total_error: s.mean_total_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OodReport {
        meta,
        method,
        training_mass_range,
        rows,
    })
}
