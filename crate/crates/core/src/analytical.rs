//! Closed-form CoM from a single wrench reading.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Wrench;

/// Readings weaker than this are treated as carrying no usable signal.
pub const DEFAULT_FORCE_FLOOR: f64 = 0.1;

/// Per-axis CoM estimate in meters. `std` is `None` when the estimator
/// has no notion of uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComEstimate {
    pub mean: Vector3<f64>,
    pub std: Option<Vector3<f64>>,
}

impl ComEstimate {
    pub fn new(mean: Vector3<f64>, std: Vector3<f64>) -> Result<Self> {
        if !std.iter().all(|s| *s > 0.0 && !s.is_nan()) {
            return Err(Error::Domain(format!("estimate std must be positive, got {std:?}")));
        }
        Ok(Self {
            mean,
            std: Some(std),
        })
    }

    pub fn point(mean: Vector3<f64>) -> Self {
        Self { mean, std: None }
    }
}

/// Recovers the CoM component perpendicular to the force as `(F × τ) / |F|²`.
///
/// With `τ = r × F` this inverts exactly for the perpendicular part of `r`;
/// the part along `F` produces no torque and is reported as 0.
pub fn solve_com_analytical(w: &Wrench) -> Result<ComEstimate> {
    solve_com_analytical_with_floor(w, DEFAULT_FORCE_FLOOR)
}

pub fn solve_com_analytical_with_floor(w: &Wrench, force_floor: f64) -> Result<ComEstimate> {
    let f2 = w.force.norm_squared();
    let norm = f2.sqrt();
    if !(norm > force_floor) || !w.is_finite() {
        return Err(Error::InsufficientSignal {
            force_norm: norm,
            floor: force_floor,
        });
    }
    Ok(ComEstimate::point(w.force.cross(&w.torque) / f2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gravity_wrench, RigidGraspScene, WristOrientation};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn inverts_hand_example() {
        let w = Wrench::new(
            Vector3::new(0.0, 0.0, -1.962),
            Vector3::new(-0.07848, 0.05886, 0.0),
        );
        let est = solve_com_analytical(&w).unwrap();
        assert_relative_eq!(est.mean, Vector3::new(0.03, 0.04, 0.0), epsilon = 1e-12);
        assert!(est.std.is_none());
    }

    #[test]
    fn zero_torque_gives_zero_offset() {
        let w = Wrench::new(Vector3::new(0.3, -1.0, -2.0), Vector3::zeros());
        assert_eq!(solve_com_analytical(&w).unwrap().mean, Vector3::zeros());
    }

    #[test]
    fn weak_force_is_rejected() {
        let w = Wrench::new(Vector3::new(0.0, 0.0, -0.05), Vector3::new(0.001, 0.0, 0.0));
        assert!(matches!(
            solve_com_analytical(&w),
            Err(Error::InsufficientSignal { .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_at_default_pose(
            mass in 0.05f64..2.0,
            dx in -0.075f64..0.075,
            dy in -0.075f64..0.075,
            dz in -0.08f64..0.08,
        ) {
            let scene = RigidGraspScene::new(mass, Vector3::new(dx, dy, dz)).unwrap();
            let w = gravity_wrench(&scene, WristOrientation::DEFAULT);
            let est = solve_com_analytical(&w).unwrap().mean;
            prop_assert!((est - Vector3::new(dx, dy, 0.0)).abs().max() < 1e-9);
        }

        #[test]
        fn estimate_is_perpendicular_to_force(
            f in prop::array::uniform3(-5.0f64..5.0),
            t in prop::array::uniform3(-0.5f64..0.5),
        ) {
            let w = Wrench::new(Vector3::from(f), Vector3::from(t));
            prop_assume!(w.force.norm() > 0.2);
            let r = solve_com_analytical(&w).unwrap().mean;
            prop_assert!(r.dot(&w.force).abs() <= 1e-12 * (r.norm() * w.force.norm()).max(1e-300));
        }

        #[test]
        fn scaling_behaviour(
            f in prop::array::uniform3(-5.0f64..5.0),
            t in prop::array::uniform3(-0.5f64..0.5),
            c in 0.1f64..10.0,
        ) {
            let w = Wrench::new(Vector3::from(f), Vector3::from(t));
            prop_assume!(w.force.norm() > 1.0);
            let r = solve_com_analytical(&w).unwrap().mean;
            // Scaling the whole wrench leaves the lever arm unchanged.
            let both = solve_com_analytical(&Wrench::new(w.force * c, w.torque * c)).unwrap().mean;
            prop_assert!((both - r).norm() <= 1e-12 * r.norm().max(1e-12));
            // Scaling only the force shrinks it by 1/c.
            let force_only = solve_com_analytical(&Wrench::new(w.force * c, w.torque)).unwrap().mean;
            prop_assert!((force_only - r / c).norm() <= 1e-12 * (r.norm() / c).max(1e-12));
        }
    }
}
