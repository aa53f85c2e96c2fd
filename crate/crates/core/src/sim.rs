//! Gravity-wrench simulator for a rigidly grasped object.
//!
//! Frames: at the default orientation `(0, 0)` the gripper frame coincides
//! with the world frame and the gripper points straight down (world `-Z`).
//! A wrist orientation rotates the gripper by `R = Rx(theta1) * Ry(theta2)`,
//! so a world vector `v` reads `Rᵀ v` in the sensor frame. The CoM offset is
//! fixed in the gripper frame while the object stays rigidly held.
//!
//! Readings are object-only: the empty-gripper wrench is assumed subtracted.

use std::f64::consts::FRAC_PI_3;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist;
use crate::rng::{self, ns};

pub const DEFAULT_GRAVITY: f64 = 9.81;
pub const DEFAULT_MAX_OFFSET: f64 = 0.15;
pub const DATASET_FORMAT: &str = "comest-dataset/v1";

/// The two free wrist joints, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WristOrientation {
    /// Rotation about gripper-frame X.
    pub theta1: f64,
    /// Rotation about gripper-frame Y.
    pub theta2: f64,
}

impl WristOrientation {
    pub const DEFAULT: WristOrientation = WristOrientation {
        theta1: 0.0,
        theta2: 0.0,
    };

    pub fn new(theta1: f64, theta2: f64) -> Self {
        Self { theta1, theta2 }
    }

    pub fn is_default(&self) -> bool {
        self.theta1 == 0.0 && self.theta2 == 0.0
    }

    pub fn norm(&self) -> f64 {
        self.theta1.hypot(self.theta2)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.theta1, self.theta2]
    }
}

/// Symmetric per-axis joint limits `[-theta_max, theta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub theta_max: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            theta_max: FRAC_PI_3,
        }
    }
}

impl ActionBounds {
    pub fn new(theta_max: f64) -> Result<Self> {
        if !(theta_max.is_finite() && theta_max > 0.0) {
            return Err(Error::Domain(format!(
                "theta_max must be positive and finite, got {theta_max}"
            )));
        }
        Ok(Self { theta_max })
    }

    pub fn contains(&self, o: WristOrientation) -> bool {
        o.theta1.is_finite()
            && o.theta2.is_finite()
            && o.theta1.abs() <= self.theta_max
            && o.theta2.abs() <= self.theta_max
    }

    pub fn check(&self, o: WristOrientation) -> Result<()> {
        if self.contains(o) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "orientation ({}, {}) outside ±{} rad",
                o.theta1, o.theta2, self.theta_max
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WristOrientation {
        let m = self.theta_max;
        WristOrientation::new(rng.random_range(-m..=m), rng.random_range(-m..=m))
    }
}

/// Ground truth for one grasp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidGraspScene {
    pub mass: f64,
    /// CoM displacement from the grasp point, gripper frame.
    pub com_offset: Vector3<f64>,
    pub gravity: f64,
}

impl RigidGraspScene {
    pub fn new(mass: f64, com_offset: Vector3<f64>) -> Result<Self> {
        Self::with_limits(mass, com_offset, DEFAULT_GRAVITY, DEFAULT_MAX_OFFSET)
    }

    pub fn with_limits(
        mass: f64,
        com_offset: Vector3<f64>,
        gravity: f64,
        max_offset: f64,
    ) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Domain(format!("mass must be positive, got {mass}")));
        }
        if !(gravity.is_finite() && gravity > 0.0) {
            return Err(Error::Domain(format!(
                "gravity must be positive, got {gravity}"
            )));
        }
        if !com_offset.iter().all(|v| v.is_finite()) || com_offset.norm() > max_offset {
            return Err(Error::Domain(format!(
                "|com offset| = {} exceeds {max_offset} m",
                com_offset.norm()
            )));
        }
        Ok(Self {
            mass,
            com_offset,
            gravity,
        })
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Object-only force-torque reading in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Per-axis force noise std, N.
    pub sigma_force: f64,
    /// Per-axis torque noise std, N·m.
    pub sigma_torque: f64,
    pub slip_enabled: bool,
    /// Slip probability per re-orientation away from `(0, 0)`.
    pub slip_prob: f64,
    /// Std of the slip rotation about gripper Z, rad.
    pub slip_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_force: 0.05,
            sigma_torque: 0.005,
            slip_enabled: false,
            slip_prob: 0.08,
            slip_sigma: 0.1,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sigma_force: 0.0,
            sigma_torque: 0.0,
            slip_enabled: false,
            slip_prob: 0.0,
            slip_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("noise.{name}"), format!("must be ≥ 0, got {v}")))
            }
        };
        nonneg("sigma_force", self.sigma_force)?;
        nonneg("sigma_torque", self.sigma_torque)?;
        nonneg("slip_sigma", self.slip_sigma)?;
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::config(
                "noise.slip_prob",
                format!("must lie in [0, 1], got {}", self.slip_prob),
            ));
        }
        Ok(())
    }
}

/// `Rx(theta1) * Ry(theta2)`, after checking the bounds.
pub fn orientation_to_rotation(o: WristOrientation, bounds: &ActionBounds) -> Result<Matrix3<f64>> {
    bounds.check(o)?;
    Ok(rotation(o))
}

pub(crate) fn rotation(o: WristOrientation) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), o.theta1);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), o.theta2);
    (rx * ry).into_inner()
}

/// Noiseless object-only wrench at orientation `o`.
pub fn gravity_wrench(scene: &RigidGraspScene, o: WristOrientation) -> Wrench {
    let r = rotation(o);
    let g_world = Vector3::new(0.0, 0.0, -scene.weight());
    let force = r.transpose() * g_world;
    let torque = scene.com_offset.cross(&force);
    Wrench { force, torque }
}

/// A noisy reading plus the post-slip offset, if the object slipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub wrench: Wrench,
    pub slipped_offset: Option<Vector3<f64>>,
}

/// Samples a sensor reading. When a slip fires, the offset is rotated about
/// gripper Z before the reading is taken and returned so the caller can
/// carry the mutated state forward.
pub fn observe_wrench<R: Rng + ?Sized>(
    scene: &RigidGraspScene,
    o: WristOrientation,
    noise: &NoiseModel,
    rng: &mut R,
) -> Observation {
    let mut slipped_offset = None;
    let mut effective = *scene;
    if noise.slip_enabled && !o.is_default() && noise.slip_prob > 0.0 && rng.random_bool(noise.slip_prob) {
        let angle = gaussian(rng, noise.slip_sigma);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
        effective.com_offset = rz * scene.com_offset;
        slipped_offset = Some(effective.com_offset);
    }
    let clean = gravity_wrench(&effective, o);
    let mut force = clean.force;
    let mut torque = clean.torque;
    for v in force.iter_mut() {
        *v += gaussian(rng, noise.sigma_force);
    }
    for v in torque.iter_mut() {
        *v += gaussian(rng, noise.sigma_torque);
    }
    Observation {
        wrench: Wrench { force, torque },
        slipped_offset,
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    // Always draw so the stream position does not depend on sigma.
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    z * sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub grasp_id: u64,
    pub orientation: WristOrientation,
    pub wrench: Wrench,
    /// Ground-truth offset at orientation `(0, 0)`.
    pub true_offset: Vector3<f64>,
    pub mass: f64,
}

/// One grasp: a reading at `(0, 0)` followed by `n_orientations` readings at
/// uniformly drawn orientations. A reading during which the object slipped is
/// discarded and the object re-seated, so every kept record shares the
/// grasp's offset.
pub fn generate_grasp_trial<R: Rng + ?Sized>(
    grasp_id: u64,
    scene: &RigidGraspScene,
    n_orientations: usize,
    bounds: &ActionBounds,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Vec<DatasetRecord>> {
    if n_orientations == 0 {
        return Err(Error::Domain("n_orientations must be ≥ 1".into()));
    }
    let mut records = Vec::with_capacity(n_orientations + 1);
    let orientations = std::iter::once(WristOrientation::DEFAULT)
        .chain((0..n_orientations).map(|_| bounds.sample(rng)))
        .collect::<Vec<_>>();
    for o in orientations {
        let obs = observe_wrench(scene, o, noise, rng);
        if obs.slipped_offset.is_some() {
            continue;
        }
        records.push(DatasetRecord {
            grasp_id,
            orientation: o,
            wrench: obs.wrench,
            true_offset: scene.com_offset,
            mass: scene.mass,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub grasps: usize,
    pub orientations_per_grasp: usize,
    pub mass_min_kg: f64,
    pub mass_max_kg: f64,
    /// Half-widths of the offset box (|dx|, |dy|, |dz|), m.
    pub offset_box_m: [f64; 3],
    pub theta_max: f64,
    pub gravity: f64,
    pub noise: NoiseModel,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            grasps: 50,
            orientations_per_grasp: 40,
            mass_min_kg: 0.12736,
            mass_max_kg: 0.58536,
            offset_box_m: [0.075, 0.075, 0.08],
            theta_max: FRAC_PI_3,
            gravity: DEFAULT_GRAVITY,
            noise: NoiseModel::default(),
        }
    }
}

impl DatasetConfig {
    /// The collection protocol at full scale: 204 grasps of 100 rotations.
    pub fn full_scale() -> Self {
        Self {
            grasps: 204,
            orientations_per_grasp: 100,
            noise: NoiseModel {
                slip_enabled: true,
                ..NoiseModel::default()
            },
            ..Self::default()
        }
    }

    pub fn bounds(&self) -> ActionBounds {
        ActionBounds {
            theta_max: self.theta_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass_min_kg.is_finite() && self.mass_min_kg > 0.0) {
            return Err(Error::config("dataset.mass_min_kg", "must be positive"));
        }
        if !(self.mass_max_kg.is_finite() && self.mass_max_kg >= self.mass_min_kg) {
            return Err(Error::config(
                "dataset.mass_max_kg",
                format!(
                    "must be ≥ mass_min_kg ({} > {})",
                    self.mass_min_kg, self.mass_max_kg
                ),
            ));
        }
        if self.offset_box_m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("dataset.offset_box_m", "half-widths must be ≥ 0"));
        }
        let corner = Vector3::from(self.offset_box_m).norm();
        if corner > DEFAULT_MAX_OFFSET {
            return Err(Error::config(
                "dataset.offset_box_m",
                format!("box corner {corner:.3} m exceeds {DEFAULT_MAX_OFFSET} m"),
            ));
        }
        if !(self.theta_max.is_finite() && self.theta_max > 0.0) {
            return Err(Error::config("dataset.theta_max", "must be positive"));
        }
        if !(self.gravity.is_finite() && self.gravity > 0.0) {
            return Err(Error::config("dataset.gravity", "must be positive"));
        }
        if self.grasps > 0 && self.orientations_per_grasp == 0 {
            return Err(Error::config("dataset.orientations_per_grasp", "must be ≥ 1"));
        }
        self.noise.validate()
    }

    /// Draws a scene uniformly from the configured mass range and offset box.
    pub fn sample_scene<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RigidGraspScene> {
        let mass = if self.mass_max_kg > self.mass_min_kg {
            rng.random_range(self.mass_min_kg..=self.mass_max_kg)
        } else {
            self.mass_min_kg
        };
        let mut offset = Vector3::zeros();
        for (v, &h) in offset.iter_mut().zip(self.offset_box_m.iter()) {
            *v = if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
        }
        RigidGraspScene::with_limits(mass, offset, self.gravity, DEFAULT_MAX_OFFSET)
    }
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub seed: u64,
    pub config: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    /// Records grouped by grasp id, in ascending id order.
    pub fn grasps(&self) -> Vec<(u64, Vec<&DatasetRecord>)> {
        let mut out: Vec<(u64, Vec<&DatasetRecord>)> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some((id, group)) if *id == r.grasp_id => group.push(r),
                _ => out.push((r.grasp_id, vec![r])),
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Generates the full dataset; each grasp draws from its own stream keyed by
/// `(seed, grasp_id)` so the output does not depend on thread scheduling.
pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let bounds = config.bounds();
    let trials: Vec<Vec<DatasetRecord>> = (0..config.grasps as u64)
        .into_par_iter()
        .map(|grasp_id| {
            let mut rng = rng::stream(seed, &[ns::DATASET, grasp_id]);
            let scene = config.sample_scene(&mut rng)?;
            generate_grasp_trial(
                grasp_id,
                &scene,
                config.orientations_per_grasp,
                &bounds,
                &config.noise,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.into(),
            seed,
            config: config.clone(),
        },
        records: trials.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    grasp_id: u64,
    theta1: f64,
    theta2: f64,
    fx: f64,
    fy: f64,
    fz: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    dx: f64,
    dy: f64,
    dz: f64,
    mass_kg: f64,
}

impl From<&DatasetRecord> for RecordLine {
    fn from(r: &DatasetRecord) -> Self {
        let f = r.wrench.force;
        let t = r.wrench.torque;
        RecordLine {
            grasp_id: r.grasp_id,
            theta1: r.orientation.theta1,
            theta2: r.orientation.theta2,
            fx: f.x,
            fy: f.y,
            fz: f.z,
            tx: t.x,
            ty: t.y,
            tz: t.z,
            dx: r.true_offset.x,
            dy: r.true_offset.y,
            dz: r.true_offset.z,
            mass_kg: r.mass,
        }
    }
}

impl From<RecordLine> for DatasetRecord {
    fn from(l: RecordLine) -> Self {
        DatasetRecord {
            grasp_id: l.grasp_id,
            orientation: WristOrientation::new(l.theta1, l.theta2),
            wrench: Wrench::new(Vector3::new(l.fx, l.fy, l.fz), Vector3::new(l.tx, l.ty, l.tz)),
            true_offset: Vector3::new(l.dx, l.dy, l.dz),
            mass: l.mass_kg,
        }
    }
}

/// Serializes to the line-delimited format: header line, then one record per line.
pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let enc = |e: serde_json::Error| Error::format("dataset", e);
    serde_json::to_writer(&mut buf, &dataset.header).map_err(enc)?;
    buf.push(b'\n');
    for r in &dataset.records {
        serde_json::to_writer(&mut buf, &RecordLine::from(r)).map_err(enc)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let bytes = encode_dataset(dataset)?;
    persist::write_atomic(path, &bytes)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format("dataset", "missing header line"))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::format("dataset header", e))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::format(
            "dataset header",
            format!("unsupported format tag `{}`", header.format),
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::format("dataset record", format!("line {}: {e}", i + 2)))?;
        records.push(rec.into());
    }
    Ok(Dataset { header, records })
}
