//! Solves for quadratic-minus-f discrepancies: the inner ellipsoid, the outer
//! envelope, and a multistart search of the true nonconvex region.

use nalgebra::DVector;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{EquilibriumResult, Geometry, Targets};
use crate::error::{Error, Result};
use crate::fairness::{check_class_f, ClassF, Discrepancy, FairnessSpec};
use crate::model::Policy;
use crate::objectives::Objective;

const ZOOM_ROUNDS: usize = 30;
const GRID_ANGLES: usize = 4096;
const RAY_SCAN: usize = 64;
const LOCAL_ITERS: usize = 300;

fn class_f_core(spec: &FairnessSpec) -> Result<ClassF> {
    let cf = check_class_f(spec);
    cf.core.ok_or_else(|| {
        Error::Contract(format!(
            "{} spec is not in the quadratic-minus-f class: {}",
            spec.kind().label(),
            cf.check.reason
        ))
    })
}

/// Optimum over the core ellipsoid {wᵀQw ≤ β}; always β-fair and deployable.
pub fn solve_nonconvex_restricted(obj: Objective, spec: &FairnessSpec, targets: &Targets) -> Result<EquilibriumResult> {
    let core = class_f_core(spec)?;
    super::check_dims(targets, spec.dim())?;
    super::ellipsoid_solve(obj, spec, &core.q, core.beta, targets, Geometry::NonconvexRestricted)
}

/// Optimum over {wᵀQw ≤ β + LD} ∩ B(1); an upper bound on the nonconvex optimum.
/// The returned policy need not be β-fair.
pub fn solve_nonconvex_envelope(obj: Objective, spec: &FairnessSpec, targets: &Targets) -> Result<EquilibriumResult> {
    let core = class_f_core(spec)?;
    super::check_dims(targets, spec.dim())?;
    let level = core.envelope_level();
    super::ellipsoid_solve(obj, spec, &core.q, level, targets, Geometry::NonconvexEnvelope)
}

/// Largest t ≤ 1 such that Δ(s·u) ≤ β for the scanned s ∈ [0, t].
fn radial_limit(spec: &FairnessSpec, u: &DVector<f64>) -> f64 {
    if let Discrepancy::Asym { m_priv, m_other } = &spec.discrepancy {
        // Δ(tu) = t²·a, so the fair part of the ray is an interval
        let a = (m_priv * u).norm_squared() - (m_other * u).norm_squared();
        if a <= 0.0 {
            return 1.0;
        }
        let mut t = (spec.beta / a).sqrt().min(1.0);
        while t > 0.0 && spec.delta(&(u * t)) > spec.beta {
            t *= 1.0 - 1e-15;
        }
        return t;
    }
    let feasible = |t: f64| spec.delta(&(u * t)) <= spec.beta;
    let mut lo = 0.0;
    for k in 1..=RAY_SCAN {
        let t = k as f64 / RAY_SCAN as f64;
        if feasible(t) {
            lo = t;
            continue;
        }
        let mut hi = t;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return lo;
    }
    1.0
}

/// Best feasible point on the ray through `u` (unit), and its value.
fn ray_best(obj: Objective, spec: &FairnessSpec, targets: &Targets, u: &DVector<f64>) -> (DVector<f64>, f64) {
    let r = radial_limit(spec, u);
    let t = match obj {
        Objective::Accuracy => targets.w_star.dot(u).clamp(0.0, r),
        Objective::SocialWelfare => {
            if targets.coeff.vector.dot(u) > 0.0 {
                r
            } else {
                0.0
            }
        }
    };
    let w = u * t;
    let val = targets.value(obj, &w);
    (w, val)
}

fn unit(v: &DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    (n > 0.0 && n.is_finite()).then(|| v / n)
}

fn gradient(obj: Objective, targets: &Targets, w: &DVector<f64>) -> DVector<f64> {
    match obj {
        Objective::Accuracy => (&targets.w_star - w) * 2.0,
        Objective::SocialWelfare => targets.coeff.vector.clone(),
    }
}

/// Projected-gradient ascent with radial retraction; only improving steps are kept.
fn local_search(
    obj: Objective,
    spec: &FairnessSpec,
    targets: &Targets,
    start: (DVector<f64>, f64),
    dir: DVector<f64>,
) -> (DVector<f64>, f64, usize) {
    let (mut w, mut val) = start;
    let mut dir = dir;
    let mut eta = 0.5;
    let mut iters = 0;
    while iters < LOCAL_ITERS && eta > 1e-12 {
        iters += 1;
        let g = gradient(obj, targets, &w);
        // move on the sphere of directions so that w = 0 can still make progress
        let base = if w.norm() > 1e-12 { w.clone() } else { dir.clone() * 1e-3 };
        let Some(u) = unit(&(&base + &g * eta)) else {
            eta *= 0.5;
            continue;
        };
        let (cand, cval) = ray_best(obj, spec, targets, &u);
        if cval > val {
            w = cand;
            val = cval;
            dir = u;
            eta = (eta * 1.5).min(4.0);
        } else {
            eta *= 0.5;
        }
    }
    (w, val, iters)
}

fn angle_point(a: f64) -> DVector<f64> {
    DVector::from_row_slice(&[a.cos(), a.sin()])
}

/// Dense angular search with zoom rounds; d = 2 only.
fn grid_2d(obj: Objective, spec: &FairnessSpec, targets: &Targets) -> (DVector<f64>, f64) {
    let tau = std::f64::consts::TAU;
    let evals: Vec<(f64, DVector<f64>, f64)> = (0..GRID_ANGLES)
        .into_par_iter()
        .map(|k| {
            let a = tau * k as f64 / GRID_ANGLES as f64;
            let (w, v) = ray_best(obj, spec, targets, &angle_point(a));
            (a, w, v)
        })
        .collect();
    let mut best = evals
        .into_iter()
        .fold(None::<(f64, DVector<f64>, f64)>, |acc, e| match acc {
            Some(b) if b.2 >= e.2 => Some(b),
            _ => Some(e),
        })
        .expect("grid is nonempty");
    let mut half = tau / GRID_ANGLES as f64;
    for _ in 0..ZOOM_ROUNDS {
        let center = best.0;
        for j in 0..=64 {
            let a = center + half * (j as f64 / 32.0 - 1.0);
            let (w, v) = ray_best(obj, spec, targets, &angle_point(a));
            if v > best.2 {
                best = (a, w, v);
            }
        }
        half /= 8.0;
    }
    (best.1, best.2)
}

/// Best point found in W(β) ∩ B(1) from `starts` random directions plus warm
/// starts (restricted optimum, w*, w̃, origin). For d = 2 a dense angular grid is
/// also searched. A heuristic lower bound on the nonconvex optimum.
pub fn solve_nonconvex_multistart(
    obj: Objective,
    spec: &FairnessSpec,
    targets: &Targets,
    starts: usize,
    seed: u64,
) -> Result<EquilibriumResult> {
    let d = spec.dim();
    super::check_dims(targets, d)?;
    let zero = DVector::zeros(d);
    let mut candidates: Vec<(DVector<f64>, f64)> = vec![(zero.clone(), targets.value(obj, &zero))];
    if let Ok(r) = solve_nonconvex_restricted(obj, spec, targets) {
        if spec.delta(r.weights()) <= spec.beta && r.weights().norm() <= 1.0 {
            candidates.push((r.weights().clone(), targets.value(obj, r.weights())));
        }
    }
    let mut seeds: Vec<DVector<f64>> = Vec::new();
    for v in [&targets.w_star, &targets.coeff.vector] {
        if let Some(u) = unit(v) {
            seeds.push(u);
        }
    }
    for (w, _) in candidates.clone() {
        if let Some(u) = unit(&w) {
            seeds.push(u);
        }
    }
    for k in 0..starts {
        let mut rng = crate::rng::stream(seed, &[0x6d73, k as u64]);
        let z = DVector::from_fn(d, |_, _| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        seeds.push(unit(&z).unwrap_or_else(|| {
            let mut e = DVector::zeros(d);
            e[0] = 1.0;
            e
        }));
    }
    let runs: Vec<(DVector<f64>, f64, usize)> = seeds
        .par_iter()
        .map(|u| {
            let start = ray_best(obj, spec, targets, u);
            local_search(obj, spec, targets, start, u.clone())
        })
        .collect();
    let mut iterations = 0;
    for (w, v, it) in runs {
        iterations += it;
        candidates.push((w, v));
    }
    if d == 2 {
        candidates.push(grid_2d(obj, spec, targets));
    }
    // strict improvement keeps the earliest index on ties
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.1 > candidates[best].1 {
            best = i;
        }
    }
    let (w, value) = candidates.swap_remove(best);
    Ok(EquilibriumResult {
        delta_value: Some(spec.delta(&w)),
        beta: Some(spec.beta),
        policy: Policy::new(w),
        objective: obj,
        objective_value: value,
        geometry: Geometry::NonconvexMultistart,
        iterations,
        converged: true,
        degenerate: obj == Objective::SocialWelfare && targets.coeff.is_zero(),
        heuristic: true,
    })
}

/// Restricted ≤ multistart ≤ envelope, solved together.
#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    pub restricted: EquilibriumResult,
    pub multistart: EquilibriumResult,
    pub envelope: EquilibriumResult,
    pub core: ClassF,
}

impl Sandwich {
    /// Slack used when checking the ordering.
    pub const TOL: f64 = 1e-9;

    pub fn ordered(&self) -> bool {
        self.restricted.objective_value <= self.multistart.objective_value + Self::TOL
            && self.multistart.objective_value <= self.envelope.objective_value + Self::TOL
    }

    /// Realized loss of the restriction against the best nonconvex point found.
    pub fn restriction_gap(&self) -> f64 {
        self.multistart.objective_value - self.restricted.objective_value
    }
}

pub fn solve_nonconvex_sandwich(
    obj: Objective,
    spec: &FairnessSpec,
    targets: &Targets,
    starts: usize,
    seed: u64,
) -> Result<Sandwich> {
    let core = class_f_core(spec)?;
    Ok(Sandwich {
        restricted: solve_nonconvex_restricted(obj, spec, targets)?,
        multistart: solve_nonconvex_multistart(obj, spec, targets, starts, seed)?,
        envelope: solve_nonconvex_envelope(obj, spec, targets)?,
        core,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::Expr;
    use crate::objectives::SwCoefficient;
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn diag(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&v(xs))
    }

    fn fig4(beta: f64) -> FairnessSpec {
        let f = Expr::parse("0.3*sqrt(abs(w1)) + 0.3*sqrt(abs(w2))").unwrap();
        FairnessSpec::custom(DMatrix::identity(2, 2), f, 0.6, beta).unwrap()
    }

    #[test]
    fn zero_f_restricted_equals_l2() {
        let q = diag(&[1.0, 2.0]);
        let spec = FairnessSpec::custom(q.clone(), Expr::zero(), 0.0, 0.5).unwrap();
        let t = Targets::new(v(&[0.9, 0.8]), SwCoefficient::new(v(&[0.4, 0.3])));
        let l2 = FairnessSpec::l2(diag(&[1.0, 2f64.sqrt()]), 0.5).unwrap();
        for obj in [Objective::Accuracy, Objective::SocialWelfare] {
            let a = solve_nonconvex_restricted(obj, &spec, &t).unwrap();
            let b = super::super::solve_constrained(obj, &l2, &t).unwrap();
            assert!((a.objective_value - b.objective_value).abs() < 1e-12);
            let e = solve_nonconvex_envelope(obj, &spec, &t).unwrap();
            assert!((a.objective_value - e.objective_value).abs() < 1e-12);
        }
    }

    #[test]
    fn restricted_is_fair() {
        let spec = FairnessSpec::asym(diag(&[1.0, 0.8]), diag(&[0.3, 0.6]), 0.4).unwrap();
        let t = Targets::new(v(&[0.9, -0.7]), SwCoefficient::new(v(&[0.4, 0.3])));
        for obj in [Objective::Accuracy, Objective::SocialWelfare] {
            let r = solve_nonconvex_restricted(obj, &spec, &t).unwrap();
            assert!(r.delta_value.unwrap() <= 0.4 + 1e-12);
            assert!(r.policy.deployable);
        }
    }

    #[test]
    fn fig4_multistart_beats_restriction() {
        let spec = fig4(0.3);
        let t = Targets::new(v(&[1.0, 1.0]), SwCoefficient::new(v(&[1.0, 1.0])));
        let s = solve_nonconvex_sandwich(Objective::Accuracy, &spec, &t, 16, 1).unwrap();
        assert!(s.multistart.objective_value >= s.restricted.objective_value);
        assert!(s.multistart.delta_value.unwrap() <= 0.3 + 1e-12);
    }

    #[test]
    fn multistart_matches_closed_form_on_convex_core() {
        let spec = FairnessSpec::custom(diag(&[1.0, 3.0]), Expr::zero(), 0.0, 0.5).unwrap();
        let t = Targets::new(v(&[0.9, 0.8]), SwCoefficient::new(v(&[0.4, 0.3])));
        for obj in [Objective::Accuracy, Objective::SocialWelfare] {
            let m = solve_nonconvex_multistart(obj, &spec, &t, 8, 3).unwrap();
            let r = solve_nonconvex_restricted(obj, &spec, &t).unwrap();
            assert!((m.objective_value - r.objective_value).abs() < 1e-6);
        }
    }

    #[test]
    fn seeds_agree_in_2d() {
        let spec = FairnessSpec::asym(diag(&[1.0, 0.8]), diag(&[0.3, 0.6]), 0.4).unwrap();
        let t = Targets::new(v(&[0.9, -0.7]), SwCoefficient::new(v(&[0.4, 0.3])));
        let a = solve_nonconvex_multistart(Objective::Accuracy, &spec, &t, 64, 1).unwrap();
        let b = solve_nonconvex_multistart(Objective::Accuracy, &spec, &t, 64, 2).unwrap();
        assert!((a.objective_value - b.objective_value).abs() < 1e-6);
    }

    #[test]
    fn convex_kinds_are_contract_errors() {
        let spec = FairnessSpec::l2(DMatrix::identity(2, 2), 0.5).unwrap();
        let t = Targets::new(v(&[0.9, 0.8]), SwCoefficient::new(v(&[0.4, 0.3])));
        assert!(matches!(
            solve_nonconvex_restricted(Objective::Accuracy, &spec, &t),
            Err(Error::Contract(_))
        ));
    }
}
