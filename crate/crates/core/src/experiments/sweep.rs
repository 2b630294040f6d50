//! β grids and fairness-budget sweeps.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fairness::{FairnessKind, FairnessSpec};
use crate::objectives::Objective;
use crate::solvers::{self, EquilibriumResult, Targets};

/// Slack allowed when checking that sweep values never decrease.
pub const MONOTONE_TOL: f64 = 1e-9;
pub const DEFAULT_GRID_POINTS: usize = 25;
pub const DEFAULT_GRID_LO: f64 = 1e-3;
pub const DEFAULT_STARTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub spacing: Spacing,
}

impl BetaGrid {
    pub fn new(lo: f64, hi: f64, n: usize, spacing: Spacing) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
            return Err(Error::Input(format!("beta grid needs 0 <= lo <= hi, got {lo}:{hi}")));
        }
        if n == 0 {
            return Err(Error::Input("beta grid needs at least one point".into()));
        }
        if spacing == Spacing::Geometric && lo <= 0.0 {
            return Err(Error::Input("geometric beta grid needs lo > 0".into()));
        }
        Ok(BetaGrid { lo, hi, n, spacing })
    }

    /// 25 geometric points from 1e-3 to 2Δ(w_u); the top is raised to 1e-2
    /// when the unconstrained optimum is already (nearly) fair.
    pub fn default_for(delta_unconstrained: f64) -> Self {
        let hi = (2.0 * delta_unconstrained).max(10.0 * DEFAULT_GRID_LO);
        BetaGrid {
            lo: DEFAULT_GRID_LO,
            hi,
            n: DEFAULT_GRID_POINTS,
            spacing: Spacing::Geometric,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let last = (self.n - 1) as f64;
        let mut v: Vec<f64> = (0..self.n)
            .map(|i| {
                let t = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.lo + (self.hi - self.lo) * t,
                    Spacing::Geometric => self.lo * (self.hi / self.lo).powf(t),
                }
            })
            .collect();
        v[self.n - 1] = self.hi;
        v
    }
}

/// `lo:hi:n` followed by `lin` or `geo`, e.g. `0.001:1:25geo`.
impl std::str::FromStr for BetaGrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("beta grid '{s}' is not of the form lo:hi:n{{lin|geo}}"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let last = parts[2].trim();
        let (count, spacing) = if let Some(c) = last.strip_suffix("geo") {
            (c, Spacing::Geometric)
        } else if let Some(c) = last.strip_suffix("lin") {
            (c, Spacing::Linear)
        } else {
            (last, Spacing::Linear)
        };
        let n: usize = count.trim().parse().map_err(|_| bad())?;
        BetaGrid::new(lo, hi, n, spacing)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepMeta {
    pub label: String,
    pub cost_case: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub beta: f64,
    /// NaN when the solve failed.
    pub objective_value: f64,
    pub delta_at_opt: f64,
    pub policy: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub heuristic: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub objective: Objective,
    pub kind: FairnessKind,
    pub points: Vec<SweepPoint>,
    pub unconstrained_value: f64,
    /// Δ at the unconstrained optimum: the recovery threshold.
    pub unconstrained_delta: f64,
    pub meta: SweepMeta,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.beta).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.objective_value).collect()
    }

    /// Converged values never decrease along the grid.
    pub fn is_monotone(&self) -> bool {
        let vals: Vec<f64> = self.points.iter().filter(|p| p.converged).map(|p| p.objective_value).collect();
        vals.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL)
    }

    /// Smallest grid β whose loss against the unconstrained optimum is below `tol`.
    pub fn recovery_beta(&self, tol: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.converged && self.unconstrained_value - p.objective_value < tol)
            .map(|p| p.beta)
    }
}

/// Convex kinds go to the exact solver; nonconvex kinds to multistart, whose
/// candidate set includes the ellipsoidal restriction.
pub fn solve_point(
    obj: Objective,
    spec: &FairnessSpec,
    targets: &Targets,
    starts: usize,
    seed: u64,
) -> Result<EquilibriumResult> {
    if spec.kind().is_convex() {
        solvers::solve_constrained(obj, spec, targets)
    } else {
        solvers::solve_nonconvex_multistart(obj, spec, targets, starts, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub starts: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            starts: DEFAULT_STARTS,
            seed: 0,
        }
    }
}

/// One constrained solve per β (in parallel) plus the unconstrained reference.
/// Per-point failures are recorded and the sweep continues.
pub fn beta_sweep(
    spec: &FairnessSpec,
    targets: &Targets,
    grid: &[f64],
    obj: Objective,
    opts: &SweepOptions,
    meta: SweepMeta,
) -> Result<SweepResult> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Input("beta grid must be sorted ascending".into()));
    }
    let unc = solvers::solve_unconstrained(obj, targets);
    let d = targets.dim();
    let mut points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&beta| {
            let run = spec
                .with_beta(beta)
                .and_then(|s| solve_point(obj, &s, targets, opts.starts, opts.seed));
            match run {
                Ok(r) => SweepPoint {
                    beta,
                    objective_value: r.objective_value,
                    delta_at_opt: r.delta_value.unwrap_or(f64::NAN),
                    policy: r.policy.weights.clone(),
                    iterations: r.iterations,
                    converged: r.converged,
                    heuristic: r.heuristic,
                    error: None,
                },
                Err(e) => SweepPoint {
                    beta,
                    objective_value: f64::NAN,
                    delta_at_opt: f64::NAN,
                    policy: DVector::from_element(d, f64::NAN),
                    iterations: 0,
                    converged: false,
                    heuristic: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    // A heuristic point that lost to its predecessor: the predecessor's policy
    // is feasible for the larger budget too, so keep it.
    for k in 1..points.len() {
        let (prev, cur) = points.split_at_mut(k);
        let p = &prev[k - 1];
        let c = &mut cur[0];
        if c.heuristic && p.converged && c.converged && c.objective_value < p.objective_value {
            c.objective_value = p.objective_value;
            c.delta_at_opt = p.delta_at_opt;
            c.policy = p.policy.clone();
        }
    }
    Ok(SweepResult {
        objective: obj,
        kind: spec.kind(),
        points,
        unconstrained_value: unc.objective_value,
        unconstrained_delta: spec.delta(unc.weights()),
        meta,
    })
}
