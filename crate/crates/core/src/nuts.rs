//! No-U-Turn Hamiltonian Monte Carlo with multinomial trajectory sampling
//! and dual-averaging step-size adaptation. Unit (identity) mass matrix.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An unnormalized log density with its gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Returns `log p(position)` and writes `∇ log p` into `grad`.
    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NutsSettings {
    pub n_samples: usize,
    pub n_warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Energy error beyond which a trajectory is declared divergent.
    pub max_energy_error: f64,
    /// Skip the step-size search and start here.
    pub initial_step_size: Option<f64>,
}

impl Default for NutsSettings {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            n_warmup: 200,
            target_accept: 0.8,
            max_tree_depth: 10,
            max_energy_error: 1000.0,
            initial_step_size: None,
        }
    }
}

impl NutsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("nuts.n_samples", "must be ≥ 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("nuts.target_accept", "must lie in (0, 1)"));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::config("nuts.max_tree_depth", "must be ≥ 1"));
        }
        if let Some(eps) = self.initial_step_size {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::config("nuts.initial_step_size", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NutsDiagnostics {
    /// Divergent post-warmup transitions.
    pub divergences: usize,
    pub warmup_divergences: usize,
    /// Mean acceptance statistic over post-warmup transitions.
    pub mean_accept: f64,
    pub step_size: f64,
    pub mean_tree_depth: f64,
    pub total_leapfrog_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NutsRun {
    pub samples: Vec<Vec<f64>>,
    pub log_densities: Vec<f64>,
    pub diagnostics: NutsDiagnostics,
}

/// Phase-space point: position, momentum, cached gradient and log density.
#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_grad(&position, &mut grad)?;
        Ok(Self {
            position,
            momentum,
            grad,
            log_density,
        })
    }

    /// Potential plus kinetic energy.
    pub fn hamiltonian(&self) -> f64 {
        -self.log_density + 0.5 * dot(&self.momentum, &self.momentum)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One velocity-Verlet step. `None` when the density becomes non-finite or
/// the target reports an error along the way.
pub fn leapfrog<T: LogDensity + ?Sized>(target: &T, from: &PhasePoint, step: f64) -> Option<PhasePoint> {
    let half = 0.5 * step;
    let mut momentum: Vec<f64> = from
        .momentum
        .iter()
        .zip(&from.grad)
        .map(|(p, g)| p + half * g)
        .collect();
    let position: Vec<f64> = from
        .position
        .iter()
        .zip(&momentum)
        .map(|(q, p)| q + step * p)
        .collect();
    let mut grad = vec![0.0; position.len()];
    let log_density = target.log_density_grad(&position, &mut grad).ok()?;
    if !log_density.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return None;
    }
    for (p, g) in momentum.iter_mut().zip(&grad) {
        *p += half * g;
    }
    Some(PhasePoint {
        position,
        momentum,
        grad,
        log_density,
    })
}

/// Both endpoints moving apart along their momenta, else a U-turn.
fn is_turning(left: &PhasePoint, right: &PhasePoint) -> bool {
    let span: Vec<f64> = right
        .position
        .iter()
        .zip(&left.position)
        .map(|(r, l)| r - l)
        .collect();
    dot(&span, &left.momentum) < 0.0 || dot(&span, &right.momentum) < 0.0
}

struct Subtree {
    left: PhasePoint,
    right: PhasePoint,
    proposal: PhasePoint,
    /// log Σ exp(H0 − H) over the subtree's points.
    log_weight: f64,
    n_leapfrog: u64,
    sum_accept: f64,
    turning: bool,
    diverged: bool,
}

struct TreeBuilder<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    step: f64,
    h0: f64,
    max_energy_error: f64,
}

impl<T: LogDensity + ?Sized> TreeBuilder<'_, T> {
    fn build<R: Rng + ?Sized>(&self, edge: &PhasePoint, forward: bool, depth: usize, rng: &mut R) -> Subtree {
        if depth == 0 {
            return self.single_step(edge, forward);
        }
        let first = self.build(edge, forward, depth - 1, rng);
        if first.turning || first.diverged {
            return first;
        }
        let next_edge = if forward { &first.right } else { &first.left };
        let second = self.build(next_edge, forward, depth - 1, rng);
        let n_leapfrog = first.n_leapfrog + second.n_leapfrog;
        let sum_accept = first.sum_accept + second.sum_accept;
        if second.turning || second.diverged {
            return Subtree {
                n_leapfrog,
                sum_accept,
                ..second
            };
        }
        let log_weight = log_add_exp(first.log_weight, second.log_weight);
        let take_second = rng.random::<f64>().ln() < second.log_weight - log_weight;
        let (left, right) = if forward {
            (first.left, second.right)
        } else {
            (second.left, first.right)
        };
        let turning = is_turning(&left, &right);
        Subtree {
            left,
            right,
            proposal: if take_second { second.proposal } else { first.proposal },
            log_weight,
            n_leapfrog,
            sum_accept,
            turning,
            diverged: false,
        }
    }

    fn single_step(&self, edge: &PhasePoint, forward: bool) -> Subtree {
        let step = if forward { self.step } else { -self.step };
        match leapfrog(self.target, edge, step) {
            Some(point) => {
                let energy_error = point.hamiltonian() - self.h0;
                let diverged = !energy_error.is_finite() || energy_error > self.max_energy_error;
                let accept = if energy_error.is_finite() {
                    (-energy_error).exp().min(1.0)
                } else {
                    0.0
                };
                Subtree {
                    left: point.clone(),
                    right: point.clone(),
                    proposal: point,
                    log_weight: if diverged { f64::NEG_INFINITY } else { -energy_error },
                    n_leapfrog: 1,
                    sum_accept: accept,
                    turning: false,
                    diverged,
                }
            }
            None => Subtree {
                left: edge.clone(),
                right: edge.clone(),
                proposal: edge.clone(),
                log_weight: f64::NEG_INFINITY,
                n_leapfrog: 1,
                sum_accept: 0.0,
                turning: false,
                diverged: true,
            },
        }
    }
}

/// Outcome of a single NUTS transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub point: PhasePoint,
    pub accept_stat: f64,
    pub diverged: bool,
    pub depth: usize,
    pub n_leapfrog: u64,
}

fn sample_momentum<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// One NUTS transition from `current` with the given step size.
pub fn transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &PhasePoint,
    step: f64,
    settings: &NutsSettings,
    rng: &mut R,
) -> Transition {
    let mut start = current.clone();
    start.momentum = sample_momentum(start.position.len(), rng);
    let h0 = start.hamiltonian();
    let builder = TreeBuilder {
        target,
        step,
        h0,
        max_energy_error: settings.max_energy_error,
    };
    let mut left = start.clone();
    let mut right = start.clone();
    let mut proposal = start;
    let mut log_weight = 0.0;
    let mut n_leapfrog = 0;
    let mut sum_accept = 0.0;
    let mut diverged = false;
    let mut depth = 0;
    while depth < settings.max_tree_depth {
        let forward = rng.random::<bool>();
        let edge = if forward { &right } else { &left };
        let sub = builder.build(edge, forward, depth, rng);
        depth += 1;
        n_leapfrog += sub.n_leapfrog;
        sum_accept += sub.sum_accept;
        if sub.diverged {
            diverged = true;
            break;
        }
        if sub.turning {
            break;
        }
        // Biased progressive sampling favours the newer half.
        if rng.random::<f64>().ln() < sub.log_weight - log_weight {
            proposal = sub.proposal;
        }
        log_weight = log_add_exp(log_weight, sub.log_weight);
        if forward {
            right = sub.right;
        } else {
            left = sub.left;
        }
        if is_turning(&left, &right) {
            break;
        }
    }
    Transition {
        point: proposal,
        accept_stat: if n_leapfrog > 0 {
            sum_accept / n_leapfrog as f64
        } else {
            0.0
        },
        diverged,
        depth,
        n_leapfrog,
    }
}

/// Dual-averaging controller for the log step size.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    log_step: f64,
    log_step_avg: f64,
    h_bar: f64,
    count: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
}

impl DualAveraging {
    pub fn new(initial_step: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_avg: 0.0,
            h_bar: 0.0,
            count: 0.0,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    pub fn update(&mut self, accept_stat: f64, target: f64) {
        self.count += 1.0;
        let w = 1.0 / (self.count + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (target - accept_stat);
        self.log_step = self.mu - self.count.sqrt() / self.gamma * self.h_bar;
        let eta = self.count.powf(-self.kappa);
        self.log_step_avg = eta * self.log_step + (1.0 - eta) * self.log_step_avg;
    }

    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn adapted(&self) -> f64 {
        if self.count == 0.0 {
            self.current()
        } else {
            self.log_step_avg.exp()
        }
    }
}

/// Doubles or halves a unit step until a single leapfrog step's acceptance
/// ratio crosses one half.
pub fn find_initial_step<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &PhasePoint,
    rng: &mut R,
) -> f64 {
    let mut start = current.clone();
    start.momentum = sample_momentum(start.position.len(), rng);
    let h0 = start.hamiltonian();
    let log_ratio = |step: f64| match leapfrog(target, &start, step) {
        Some(p) => {
            let v = h0 - p.hamiltonian();
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        None => f64::NEG_INFINITY,
    };
    let mut step = 1.0;
    let direction = if log_ratio(step) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let lr = log_ratio(step);
        if direction * lr <= -direction * 2f64.ln() {
            break;
        }
        step *= 2f64.powf(direction);
    }
    step
}

/// Runs one chain: `n_warmup` adaptive transitions followed by
/// `n_samples` transitions at the adapted step size.
pub fn nuts_sample<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: Vec<f64>,
    settings: &NutsSettings,
    rng: &mut R,
) -> Result<NutsRun> {
    settings.validate()?;
    if init.len() != target.dim() {
        return Err(Error::Dimension {
            expected: target.dim(),
            got: init.len(),
        });
    }
    let dim = init.len();
    let mut current = PhasePoint::new(target, init, vec![0.0; dim])?;
    if !current.log_density.is_finite() || !current.grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite initial log density ({})",
            current.log_density
        )));
    }

    let initial_step = settings
        .initial_step_size
        .unwrap_or_else(|| find_initial_step(target, &current, rng));
    let mut adapt = DualAveraging::new(initial_step);
    let mut diagnostics = NutsDiagnostics::default();

    for i in 0..settings.n_warmup {
        let t = transition(target, &current, adapt.current(), settings, rng);
        log::debug!(
            "warmup {i}: depth {}, accept {:.3}, step {:.3e}",
            t.depth,
            t.accept_stat,
            adapt.current()
        );
        diagnostics.total_leapfrog_steps += t.n_leapfrog;
        if t.diverged {
            diagnostics.warmup_divergences += 1;
        }
        adapt.update(t.accept_stat, settings.target_accept);
        current = t.point;
    }
    if settings.n_warmup > 0 && diagnostics.warmup_divergences == settings.n_warmup {
        return Err(Error::Numerical(format!(
            "every warmup transition diverged ({} of {}, final step size {:.3e})",
            diagnostics.warmup_divergences,
            settings.n_warmup,
            adapt.current()
        )));
    }

    let step = adapt.adapted();
    diagnostics.step_size = step;
    let mut samples = Vec::with_capacity(settings.n_samples);
    let mut log_densities = Vec::with_capacity(settings.n_samples);
    let mut accept_sum = 0.0;
    let mut depth_sum = 0.0;
    for i in 0..settings.n_samples {
        let t = transition(target, &current, step, settings, rng);
        log::debug!("draw {i}: depth {}, accept {:.3}", t.depth, t.accept_stat);
        diagnostics.total_leapfrog_steps += t.n_leapfrog;
        if t.diverged {
            diagnostics.divergences += 1;
        }
        accept_sum += t.accept_stat;
        depth_sum += t.depth as f64;
        current = t.point;
        samples.push(current.position.clone());
        log_densities.push(current.log_density);
    }
    let n = settings.n_samples as f64;
    diagnostics.mean_accept = accept_sum / n;
    diagnostics.mean_tree_depth = depth_sum / n;
    Ok(NutsRun {
        samples,
        log_densities,
        diagnostics,
    })
}

/// Effective sample size of a scalar chain (initial monotone sequence).
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = chain.iter().map(|v| v - mean).collect();
    let var = dot(&centered, &centered) / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| dot(&centered[..n - lag], &centered[lag..]) / (n as f64 * var);
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Split-R̂ across chains of equal length for one coordinate.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    let m = halves.len() as f64;
    let n = halves.first().map_or(0, |h| h.len()) as f64;
    if n < 2.0 || m < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}
