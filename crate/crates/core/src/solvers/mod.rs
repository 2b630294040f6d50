//! Unconstrained and fairness-constrained solves for the principal.
//!
//! Accuracy solves are Euclidean projections of w* onto the feasible region;
//! social-welfare solves maximize the linear form ⟨w̃, ·⟩.

pub mod nonconvex;
pub mod project;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fairness::{self, Discrepancy, FairnessSpec};
use crate::linalg;
use crate::model::{Policy, Scenario};
use crate::objectives::{self, Objective, SwCoefficient};

pub use nonconvex::{
    solve_nonconvex_envelope, solve_nonconvex_multistart, solve_nonconvex_restricted, solve_nonconvex_sandwich,
    Sandwich,
};
pub use project::{
    project_intersection_dykstra, project_onto_ellipsoid, project_onto_polyhedron, ConvexSet, Ellipsoid, Projection,
};

/// Feasibility slack for returned policies.
pub const FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    BallOnly,
    PolyBall,
    Ellipsoid,
    EllipsoidBall,
    NonconvexRestricted,
    NonconvexEnvelope,
    NonconvexMultistart,
}

impl Geometry {
    pub fn label(self) -> &'static str {
        match self {
            Geometry::BallOnly => "ball",
            Geometry::PolyBall => "poly+ball",
            Geometry::Ellipsoid => "ellipsoid",
            Geometry::EllipsoidBall => "ellipsoid+ball",
            Geometry::NonconvexRestricted => "nonconvex-restricted",
            Geometry::NonconvexEnvelope => "nonconvex-envelope",
            Geometry::NonconvexMultistart => "nonconvex-multistart",
        }
    }
}

/// What the principal is optimizing against: w* for accuracy, w̃ for welfare.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub w_star: DVector<f64>,
    pub coeff: SwCoefficient,
}

impl Targets {
    pub fn new(w_star: DVector<f64>, coeff: SwCoefficient) -> Self {
        Targets { w_star, coeff }
    }

    pub fn from_scenario(s: &Scenario) -> Result<Self> {
        Ok(Targets {
            w_star: s.ground_truth.clone(),
            coeff: objectives::sw_coefficient(s)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    pub fn value(&self, obj: Objective, w: &DVector<f64>) -> f64 {
        objectives::objective_value(obj, w, &self.w_star, &self.coeff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub policy: Policy,
    pub objective: Objective,
    pub objective_value: f64,
    /// Δ at the returned policy; `None` for unconstrained solves.
    pub delta_value: Option<f64>,
    pub beta: Option<f64>,
    pub geometry: Geometry,
    pub iterations: usize,
    pub converged: bool,
    /// Zero welfare coefficient: every feasible point is optimal, w = 0 returned.
    pub degenerate: bool,
    /// Best point found by search rather than a certified optimum.
    pub heuristic: bool,
}

impl EquilibriumResult {
    fn build(
        obj: Objective,
        targets: &Targets,
        w: DVector<f64>,
        spec: Option<&FairnessSpec>,
        geometry: Geometry,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let objective_value = targets.value(obj, &w);
        EquilibriumResult {
            delta_value: spec.map(|s| s.delta(&w)),
            beta: spec.map(|s| s.beta),
            policy: Policy::new(w),
            objective: obj,
            objective_value,
            geometry,
            iterations,
            converged,
            degenerate: false,
            heuristic: false,
        }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.policy.weights
    }

    /// ‖w‖ ≤ 1 + 1e-8 and, when constrained, Δ(w) ≤ β + 1e-8. Envelope
    /// solutions are only checked against the ball.
    pub fn is_feasible(&self) -> bool {
        let in_ball = self.policy.weights.norm() <= 1.0 + FEAS_TOL;
        if self.geometry == Geometry::NonconvexEnvelope {
            return in_ball;
        }
        let fair = match (self.delta_value, self.beta) {
            (Some(d), Some(b)) => d <= b + FEAS_TOL,
            _ => true,
        };
        in_ball && fair
    }
}

pub(crate) fn check_dims(targets: &Targets, d: usize) -> Result<()> {
    if targets.w_star.len() != d || targets.coeff.vector.len() != d {
        return Err(Error::Input(format!(
            "targets have dimension {} / {}, expected {d}",
            targets.w_star.len(),
            targets.coeff.vector.len()
        )));
    }
    Ok(())
}

/// Optimum over B(1) alone.
pub fn solve_unconstrained(obj: Objective, targets: &Targets) -> EquilibriumResult {
    match obj {
        Objective::Accuracy => {
            let n = linalg::norm_comp(&targets.w_star);
            let w = if n <= 1.0 {
                targets.w_star.clone()
            } else {
                &targets.w_star / n
            };
            let mut r = EquilibriumResult::build(obj, targets, w, None, Geometry::BallOnly, 0, true);
            r.objective_value = -(n - 1.0).max(0.0).powi(2);
            r
        }
        Objective::SocialWelfare => {
            let n = targets.coeff.norm();
            if n == 0.0 {
                let mut r = EquilibriumResult::build(
                    obj,
                    targets,
                    DVector::zeros(targets.dim()),
                    None,
                    Geometry::BallOnly,
                    0,
                    true,
                );
                r.degenerate = true;
                return r;
            }
            let w = &targets.coeff.vector / n;
            let mut r = EquilibriumResult::build(obj, targets, w, None, Geometry::BallOnly, 0, true);
            r.objective_value = n;
            r
        }
    }
}

/// ‖w̃‖_{Q⁻¹} for Q ≻ 0.
pub fn dual_norm(q: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    let y = linalg::spd_solve(q, v).ok_or_else(|| Error::Input("Q must be positive definite".into()))?;
    Ok(linalg::dot_comp(v, &y).max(0.0).sqrt())
}

/// Closed-form maximizer of ⟨w̃, w⟩ over {wᵀQw ≤ β}: √β Q⁻¹w̃ / ‖w̃‖_{Q⁻¹}.
/// The ball is not imposed; callers use it when β ≤ λ_d(Q).
pub fn solve_ellipsoid_sw(coeff: &SwCoefficient, q: &DMatrix<f64>, beta: f64) -> Result<EquilibriumResult> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Input(format!("beta must be finite and >= 0, got {beta}")));
    }
    if !linalg::is_positive_definite(q) {
        return Err(Error::Input("Q must be positive definite".into()));
    }
    let d = q.nrows();
    let geometry = if beta <= linalg::min_eigenvalue(q) {
        Geometry::Ellipsoid
    } else {
        Geometry::EllipsoidBall
    };
    let make = |w: DVector<f64>, value: f64, degenerate: bool| EquilibriumResult {
        policy: Policy::new(w.clone()),
        objective: Objective::SocialWelfare,
        objective_value: value,
        delta_value: Some(linalg::quad_form(q, &w)),
        beta: Some(beta),
        geometry,
        iterations: 0,
        converged: true,
        degenerate,
        heuristic: false,
    };
    if coeff.is_zero() {
        return Ok(make(DVector::zeros(d), 0.0, true));
    }
    let y = linalg::spd_solve(q, &coeff.vector).ok_or_else(|| Error::Input("Q must be positive definite".into()))?;
    let qn = linalg::dot_comp(&coeff.vector, &y).max(0.0).sqrt();
    let w = y * (beta.sqrt() / qn);
    Ok(make(w, beta.sqrt() * qn, false))
}

/// β-fair optimum for the convex kinds (ℓ1 and ℓ2).
pub fn solve_constrained(obj: Objective, spec: &FairnessSpec, targets: &Targets) -> Result<EquilibriumResult> {
    check_dims(targets, spec.dim())?;
    let unc = solve_unconstrained(obj, targets);
    match &spec.discrepancy {
        Discrepancy::L1 { m } => {
            if spec.delta(unc.weights()) <= spec.beta {
                return Ok(recovered(unc, spec, Geometry::PolyBall));
            }
            if spec.beta == 0.0 {
                return solve_kernel(obj, spec, m, targets, Geometry::PolyBall);
            }
            solve_poly(obj, spec, m, targets)
        }
        Discrepancy::L2 { m } => {
            let q = m.transpose() * m;
            let lmin = linalg::min_eigenvalue(&q);
            let geometry = if lmin > linalg::RANK_TOL && spec.beta <= lmin {
                Geometry::Ellipsoid
            } else {
                Geometry::EllipsoidBall
            };
            if spec.delta(unc.weights()) <= spec.beta {
                return Ok(recovered(unc, spec, geometry));
            }
            if spec.beta == 0.0 {
                return solve_kernel(obj, spec, m, targets, geometry);
            }
            solve_ellipsoidal(obj, spec, &q, spec.beta, targets, geometry)
        }
        Discrepancy::Asym { .. } | Discrepancy::Custom { .. } => Err(Error::Contract(format!(
            "{} discrepancies are nonconvex; use the restricted, envelope or multistart solvers",
            spec.kind().label()
        ))),
    }
}

/// Convenience wrapper taking the scenario.
pub fn solve_constrained_for(obj: Objective, spec: &FairnessSpec, s: &Scenario) -> Result<EquilibriumResult> {
    solve_constrained(obj, spec, &Targets::from_scenario(s)?)
}

/// β = 0: both norms vanish exactly on ker(M), so the feasible set is
/// ker(M) ∩ B(1) and the solve is a projection onto a subspace.
fn solve_kernel(
    obj: Objective,
    spec: &FairnessSpec,
    m: &DMatrix<f64>,
    targets: &Targets,
    geometry: Geometry,
) -> Result<EquilibriumResult> {
    let d = m.ncols();
    // zero rows leave the kernel alone and make the thin SVD return all d vectors
    let padded = DMatrix::from_fn(m.nrows().max(d), d, |i, j| if i < m.nrows() { m[(i, j)] } else { 0.0 });
    let (s, v) = linalg::right_singular_vectors(&padded);
    let smax = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|&&x| x > linalg::RANK_TOL * smax).count();
    let null = v.columns(rank, d - rank);
    let target = match obj {
        Objective::Accuracy => &targets.w_star,
        Objective::SocialWelfare => &targets.coeff.vector,
    };
    let mut w = null * (null.transpose() * target);
    let n = w.norm();
    let degenerate = obj == Objective::SocialWelfare && targets.coeff.is_zero();
    // welfare goes to the unit sphere of the kernel; accuracy is clipped to the ball
    if n > 1.0 || (obj == Objective::SocialWelfare && n > 0.0) {
        w /= n;
    }
    let p = Projection {
        point: w,
        iterations: 1,
        converged: true,
    };
    finish(obj, spec, targets, p, geometry, degenerate)
}

fn recovered(mut unc: EquilibriumResult, spec: &FairnessSpec, geometry: Geometry) -> EquilibriumResult {
    unc.delta_value = Some(spec.delta(unc.weights()));
    unc.beta = Some(spec.beta);
    unc.geometry = geometry;
    unc
}

fn finish(
    obj: Objective,
    spec: &FairnessSpec,
    targets: &Targets,
    p: Projection,
    geometry: Geometry,
    degenerate: bool,
) -> Result<EquilibriumResult> {
    let mut r = EquilibriumResult::build(obj, targets, p.point, Some(spec), geometry, p.iterations, p.converged);
    r.degenerate = degenerate;
    if !r.converged {
        return Err(Error::Numeric {
            msg: format!("{} solve did not converge", geometry.label()),
            residual: r.delta_value.unwrap_or(f64::NAN) - spec.beta,
        });
    }
    Ok(r)
}

fn solve_poly(obj: Objective, spec: &FairnessSpec, m: &DMatrix<f64>, targets: &Targets) -> Result<EquilibriumResult> {
    let poly = fairness::polyhedron_rows(m, spec.beta)?;
    let proj = |y: &DVector<f64>| Ok(project_onto_polyhedron(y, &poly.rows, &poly.rhs));
    match obj {
        Objective::Accuracy => {
            let p = project::project_with_ball(&targets.w_star, proj)?;
            finish(obj, spec, targets, p, Geometry::PolyBall, false)
        }
        Objective::SocialWelfare => {
            let c = &targets.coeff.vector;
            if targets.coeff.is_zero() {
                let p = Projection {
                    point: DVector::zeros(c.len()),
                    iterations: 0,
                    converged: true,
                };
                return finish(obj, spec, targets, p, Geometry::PolyBall, true);
            }
            let member = |w: &DVector<f64>| fairness::delta_l1(w, m) <= spec.beta;
            let p = project::maximize_linear_with_ball(c, member, proj, l1_linear_max(m, spec.beta, c))?;
            finish(obj, spec, targets, p, Geometry::PolyBall, false)
        }
    }
}

/// argmax ⟨c, w⟩ over {‖Mw‖₁ ≤ β} for invertible M: a scaled vertex M⁻¹(β sign(g_i) e_i), g = M⁻ᵀc.
fn l1_linear_max(m: &DMatrix<f64>, beta: f64, c: &DVector<f64>) -> Option<DVector<f64>> {
    if linalg::min_singular_value(m) <= linalg::RANK_TOL {
        return None;
    }
    let lu = m.clone().lu();
    let g = m.transpose().lu().solve(c)?;
    let (i, gi) = g
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |best, (i, &x)| if x.abs() > best.1.abs() { (i, x) } else { best });
    let mut y = DVector::zeros(c.len());
    y[i] = beta * gi.signum();
    lu.solve(&y)
}

/// Objective over {wᵀQw ≤ level} ∩ B(1).
fn solve_ellipsoidal(
    obj: Objective,
    spec: &FairnessSpec,
    q: &DMatrix<f64>,
    level: f64,
    targets: &Targets,
    geometry: Geometry,
) -> Result<EquilibriumResult> {
    let e = Ellipsoid::new(q, level)?;
    match obj {
        Objective::Accuracy => {
            let p = project::project_with_ball(&targets.w_star, |y| e.project(y))?;
            finish(obj, spec, targets, p, geometry, false)
        }
        Objective::SocialWelfare => {
            let c = &targets.coeff.vector;
            if targets.coeff.is_zero() {
                let p = Projection {
                    point: DVector::zeros(c.len()),
                    iterations: 0,
                    converged: true,
                };
                return finish(obj, spec, targets, p, geometry, true);
            }
            let pd = linalg::is_positive_definite(q);
            if pd && level <= linalg::min_eigenvalue(q) {
                let closed = solve_ellipsoid_sw(&targets.coeff, q, level)?;
                let p = Projection {
                    point: closed.policy.weights.clone(),
                    iterations: 0,
                    converged: true,
                };
                let mut r = finish(obj, spec, targets, p, geometry, false)?;
                r.objective_value = closed.objective_value;
                return Ok(r);
            }
            let opt = if pd {
                Some(solve_ellipsoid_sw(&targets.coeff, q, level)?.policy.weights)
            } else {
                None
            };
            let p = project::maximize_linear_with_ball(c, |w| e.contains(w, 0.0), |y| e.project(y), opt)?;
            finish(obj, spec, targets, p, geometry, false)
        }
    }
}

/// Welfare maximum over any convex spec by the generic linear-max routine,
/// bypassing every closed form. Used to cross-check the closed forms.
pub fn solve_sw_numeric(spec: &FairnessSpec, coeff: &SwCoefficient) -> Result<EquilibriumResult> {
    let d = spec.dim();
    let targets = Targets::new(DVector::zeros(d), coeff.clone());
    let c = &coeff.vector;
    let p = match &spec.discrepancy {
        Discrepancy::L1 { m } => {
            let poly = fairness::polyhedron_rows(m, spec.beta)?;
            project::maximize_linear_with_ball(
                c,
                |w| fairness::delta_l1(w, m) <= spec.beta,
                |y| Ok(project_onto_polyhedron(y, &poly.rows, &poly.rhs)),
                None,
            )?
        }
        Discrepancy::L2 { m } => {
            let e = Ellipsoid::new(&(m.transpose() * m), spec.beta)?;
            project::maximize_linear_with_ball(c, |w| e.contains(w, 0.0), |y| e.project(y), None)?
        }
        _ => {
            return Err(Error::Contract("numeric welfare solve needs a convex discrepancy".into()));
        }
    };
    let geometry = match spec.kind() {
        fairness::FairnessKind::L1 => Geometry::PolyBall,
        _ => Geometry::EllipsoidBall,
    };
    finish(Objective::SocialWelfare, spec, &targets, p, geometry, coeff.is_zero())
}

/// Internal helper shared with the nonconvex solvers.
pub(crate) fn ellipsoid_solve(
    obj: Objective,
    spec: &FairnessSpec,
    q: &DMatrix<f64>,
    level: f64,
    targets: &Targets,
    geometry: Geometry,
) -> Result<EquilibriumResult> {
    solve_ellipsoidal(obj, spec, q, level, targets, geometry)
}
