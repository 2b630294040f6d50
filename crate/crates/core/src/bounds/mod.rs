//! Upper bounds on optimality loss with precondition gating, and a report that
//! compares them against realized losses from the solvers.

pub mod hoffman;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fairness::{self, check_class_f, ClassF, Discrepancy, FairnessSpec};
use crate::linalg;
use crate::objectives::{Objective, SwCoefficient};
use crate::solvers::{self, Targets};

pub use hoffman::{hoffman_constant, hoffman_estimate, HoffmanEstimate};

/// Slack when comparing a realized loss with its bound.
pub const BOUND_TOL: f64 = 1e-8;

/// (accuracy bound, welfare bound) with no assumptions: 4(‖w*‖ + 1) and 2‖w̃‖.
pub fn generic_loss_bounds(w_star: &DVector<f64>, coeff: &SwCoefficient) -> (f64, f64) {
    (4.0 * (linalg::norm_comp(w_star) + 1.0), 2.0 * coeff.norm())
}

/// w* itself inside the ball, w*/‖w*‖ outside.
fn ball_normalized(w_star: &DVector<f64>) -> DVector<f64> {
    let n = linalg::norm_comp(w_star);
    if n <= 1.0 {
        w_star.clone()
    } else {
        w_star / n
    }
}

/// ‖(rows·w′ − β1)₊‖₂ over the ℓ1 polyhedron.
pub fn polyhedral_residual(m: &DMatrix<f64>, beta: f64, w_star: &DVector<f64>) -> Result<DVector<f64>> {
    let poly = fairness::polyhedron_rows(m, beta)?;
    let wp = ball_normalized(w_star);
    Ok((&poly.rows * wp - &poly.rhs).map(|x| x.max(0.0)))
}

/// [H · ‖(rows·w′ − β1)₊‖₂]² with H the Hoffman constant of the ℓ1 polyhedron.
pub fn polyhedral_acc_bound(m: &DMatrix<f64>, beta: f64, w_star: &DVector<f64>) -> Result<f64> {
    let poly = fairness::polyhedron_rows(m, beta)?;
    let h = hoffman_constant(&poly.rows)?;
    let r = polyhedral_residual(m, beta, w_star)?;
    let rn = linalg::norm_comp(&r);
    Ok((h * rn).powi(2))
}

/// Welfare-loss bound for an invertible ℓ2 discrepancy matrix.
pub fn ellipsoid_sw_bound() -> f64 {
    std::f64::consts::SQRT_2
}

fn indicator(outside: bool, x: f64) -> f64 {
    if outside {
        x
    } else {
        0.0
    }
}

/// (2q(t + s), ‖w̃‖ − √β‖w̃‖_{Q⁻¹}) for an ellipsoid inside the unit ball.
pub fn internal_ellipsoid_bounds(
    q: &DMatrix<f64>,
    beta: f64,
    w_star: &DVector<f64>,
    coeff: &SwCoefficient,
) -> Result<(f64, f64)> {
    if !linalg::is_positive_definite(q) {
        return Err(Error::Input("Q must be positive definite".into()));
    }
    let lmin = linalg::min_eigenvalue(q);
    let smax = (beta / lmin).sqrt();
    let wn = linalg::norm_comp(w_star);
    let outside = linalg::quad_form(q, w_star) > beta;
    let qq = indicator(outside, smax + wn);
    let s = indicator(outside, wn.min(1.0) + smax);
    let t = 2.0 * smax;
    let acc = 2.0 * qq * (t + s);
    let sw = coeff.norm() - beta.sqrt() * solvers::dual_norm(q, &coeff.vector)?;
    Ok((acc, sw))
}

/// Same forms as [`internal_ellipsoid_bounds`] on the class-𝓕 core ellipsoid.
pub fn nonconvex_se_bounds(core: &ClassF, w_star: &DVector<f64>, coeff: &SwCoefficient) -> Result<(f64, f64)> {
    internal_ellipsoid_bounds(&core.q, core.beta, w_star, coeff)
}

/// Loss of the ellipsoidal restriction against the nonconvex optimum:
/// (2c(a + e), min{‖w̃‖, √(β+LD)‖w̃‖_{Q⁻¹}} − √β‖w̃‖_{Q⁻¹}).
pub fn restriction_loss_bounds(core: &ClassF, w_star: &DVector<f64>, coeff: &SwCoefficient) -> Result<(f64, f64)> {
    let lmin = core.lambda_min;
    let beta = core.beta;
    let level = core.envelope_level();
    let sp = (beta / lmin).sqrt();
    let wn = linalg::norm_comp(w_star);
    let outside = linalg::quad_form(&core.q, w_star) > beta;
    let a = indicator(outside, sp + wn.min(1.0).min((level / lmin).sqrt()));
    let c = indicator(outside, sp + wn);
    let e = 2.0 * sp;
    let acc = 2.0 * c * (a + e);
    let qn = solvers::dual_norm(&core.q, &coeff.vector)?;
    let sw = coeff.norm().min(level.sqrt() * qn) - beta.sqrt() * qn;
    Ok((acc, sw.max(0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessVerdict {
    /// w* ∉ E(β).
    pub outside_core: bool,
    /// LD < λ_d(Q) − β.
    pub envelope_inside_ball: bool,
    /// ‖w*‖ > √((β + LD)/λ_d(Q)).
    pub beyond_envelope_radius: bool,
    pub se: (f64, f64),
    pub restriction: (f64, f64),
}

impl TightnessVerdict {
    pub fn conditions_met(&self) -> bool {
        self.outside_core && self.envelope_inside_ball && self.beyond_envelope_radius
    }

    pub fn acc_strict(&self) -> bool {
        self.restriction.0 < self.se.0
    }

    pub fn sw_strict(&self) -> bool {
        self.restriction.1 < self.se.1
    }

    /// Conditions met implies both comparisons strict (welfare only when w̃ ≠ 0).
    pub fn holds(&self, coeff_nonzero: bool) -> bool {
        !self.conditions_met() || (self.acc_strict() && (!coeff_nonzero || self.sw_strict()))
    }

    pub fn label(&self) -> &'static str {
        if self.conditions_met() {
            "conditions met"
        } else {
            "conditions not met"
        }
    }
}

/// Evaluate the three conditions under which the restriction bounds beat the SE bounds.
pub fn restriction_tightness_check(
    core: &ClassF,
    w_star: &DVector<f64>,
    coeff: &SwCoefficient,
) -> Result<TightnessVerdict> {
    let ld = core.lipschitz * core.diameter;
    Ok(TightnessVerdict {
        outside_core: linalg::quad_form(&core.q, w_star) > core.beta,
        envelope_inside_ball: ld < core.lambda_min - core.beta,
        beyond_envelope_radius: linalg::norm_comp(w_star) > ((core.beta + ld) / core.lambda_min).sqrt(),
        se: nonconvex_se_bounds(core, w_star, coeff)?,
        restriction: restriction_loss_bounds(core, w_star, coeff)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Generic,
    Polyhedral,
    EllipsoidSqrt2,
    InternalEllipsoid,
    NonconvexSe,
    RestrictionLoss,
}

impl BoundKind {
    pub fn label(self) -> &'static str {
        match self {
            BoundKind::Generic => "generic",
            BoundKind::Polyhedral => "polyhedral",
            BoundKind::EllipsoidSqrt2 => "ellipsoid-sqrt2",
            BoundKind::InternalEllipsoid => "internal-ellipsoid",
            BoundKind::NonconvexSe => "nonconvex-se",
            BoundKind::RestrictionLoss => "restriction-loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Precondition {
    pub name: String,
    pub met: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundEntry {
    pub kind: BoundKind,
    pub objective: Objective,
    /// Present only when every precondition is met.
    pub value: Option<f64>,
    pub preconditions: Vec<Precondition>,
    pub realized_loss: Option<f64>,
    /// False when the value rests on an uncertified Hoffman estimate.
    pub certified: bool,
}

impl BoundEntry {
    pub fn preconditions_met(&self) -> bool {
        self.preconditions.iter().all(|p| p.met)
    }

    pub fn valid(&self) -> Option<bool> {
        match (self.value, self.realized_loss) {
            (Some(b), Some(r)) => Some(r <= b + BOUND_TOL),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsInputs {
    pub beta: f64,
    pub lambda_min: Option<f64>,
    pub sigma_min: Option<f64>,
    pub hoffman: Option<HoffmanEstimate>,
    pub lipschitz: Option<f64>,
    pub diameter: Option<f64>,
    pub w_star: DVector<f64>,
    pub coeff: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub kind: fairness::FairnessKind,
    pub entries: Vec<BoundEntry>,
    pub inputs: BoundsInputs,
    pub tightness: Option<TightnessVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Run the solvers and attach realized losses.
    pub solve: bool,
    pub starts: usize,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            solve: true,
            starts: 32,
            seed: 0,
        }
    }
}

fn pre(name: &str, met: bool) -> Precondition {
    Precondition {
        name: name.to_string(),
        met,
    }
}

fn entry(kind: BoundKind, objective: Objective, value: f64, preconditions: Vec<Precondition>) -> BoundEntry {
    let met = preconditions.iter().all(|p| p.met);
    BoundEntry {
        kind,
        objective,
        value: met.then_some(value),
        preconditions,
        realized_loss: None,
        certified: true,
    }
}

/// Realized losses keyed by (objective, comparison).
struct Realized {
    /// unconstrained minus constrained (best known feasible point for nonconvex kinds)
    se: [Option<f64>; 2],
    /// multistart minus restricted
    restriction: [Option<f64>; 2],
}

fn obj_index(o: Objective) -> usize {
    match o {
        Objective::Accuracy => 0,
        Objective::SocialWelfare => 1,
    }
}

const OBJECTIVES: [Objective; 2] = [Objective::Accuracy, Objective::SocialWelfare];

fn realized(spec: &FairnessSpec, targets: &Targets, opts: &ReportOptions) -> Result<Realized> {
    let mut out = Realized {
        se: [None, None],
        restriction: [None, None],
    };
    for obj in OBJECTIVES {
        let i = obj_index(obj);
        let unc = solvers::solve_unconstrained(obj, targets).objective_value;
        if spec.kind().is_convex() {
            let c = solvers::solve_constrained(obj, spec, targets)?;
            out.se[i] = Some(unc - c.objective_value);
        } else if check_class_f(spec).core.is_some() {
            let s = solvers::solve_nonconvex_sandwich(obj, spec, targets, opts.starts, opts.seed)?;
            out.se[i] = Some(unc - s.multistart.objective_value);
            out.restriction[i] = Some(s.restriction_gap());
        } else {
            let m = solvers::solve_nonconvex_multistart(obj, spec, targets, opts.starts, opts.seed)?;
            out.se[i] = Some(unc - m.objective_value);
        }
    }
    Ok(out)
}

/// Every bound relevant to the spec, gated on its preconditions.
pub fn bounds_report(spec: &FairnessSpec, targets: &Targets, opts: &ReportOptions) -> Result<BoundsReport> {
    let beta = spec.beta;
    let w_star = &targets.w_star;
    let coeff = &targets.coeff;
    let wn = linalg::norm_comp(w_star);
    let mut inputs = BoundsInputs {
        beta,
        lambda_min: None,
        sigma_min: None,
        hoffman: None,
        lipschitz: None,
        diameter: None,
        w_star: w_star.clone(),
        coeff: coeff.vector.clone(),
    };
    let (g_acc, g_sw) = generic_loss_bounds(w_star, coeff);
    let mut entries = vec![
        entry(BoundKind::Generic, Objective::Accuracy, g_acc, vec![]),
        entry(BoundKind::Generic, Objective::SocialWelfare, g_sw, vec![]),
    ];
    let mut tightness = None;
    match &spec.discrepancy {
        Discrepancy::L1 { m } => {
            let p1 = fairness::check_property1(m, beta);
            inputs.sigma_min = Some(p1.sigma_min);
            let mut value = f64::NAN;
            let mut certified = true;
            if p1.check.satisfied {
                let poly = fairness::polyhedron_rows(m, beta)?;
                let h = hoffman_estimate(&poly.rows);
                inputs.hoffman = Some(h);
                certified = h.certified;
                let r = polyhedral_residual(m, beta, w_star)?;
                value = (h.value * linalg::norm_comp(&r)).powi(2);
            }
            let mut e = entry(
                BoundKind::Polyhedral,
                Objective::Accuracy,
                value,
                vec![pre("property 1", p1.check.satisfied), pre("|w*| <= 1", wn <= 1.0)],
            );
            e.certified = certified;
            entries.push(e);
        }
        Discrepancy::L2 { m } => {
            let p2 = fairness::check_property2(m);
            entries.push(entry(
                BoundKind::EllipsoidSqrt2,
                Objective::SocialWelfare,
                ellipsoid_sw_bound(),
                vec![pre("property 2", p2.check.satisfied), pre("|w~| <= 1", coeff.norm() <= 1.0)],
            ));
            if let Some(q) = &p2.q {
                let p3 = fairness::check_property3(q, beta);
                inputs.lambda_min = Some(p3.lambda_min);
                let (acc, sw) = if p3.check.satisfied {
                    internal_ellipsoid_bounds(q, beta, w_star, coeff)?
                } else {
                    (f64::NAN, f64::NAN)
                };
                let conds = vec![pre("property 3", p3.check.satisfied)];
                entries.push(entry(BoundKind::InternalEllipsoid, Objective::Accuracy, acc, conds.clone()));
                entries.push(entry(BoundKind::InternalEllipsoid, Objective::SocialWelfare, sw, conds));
            } else {
                let conds = vec![pre("property 3", false)];
                entries.push(entry(BoundKind::InternalEllipsoid, Objective::Accuracy, f64::NAN, conds.clone()));
                entries.push(entry(BoundKind::InternalEllipsoid, Objective::SocialWelfare, f64::NAN, conds));
            }
        }
        Discrepancy::Asym { .. } | Discrepancy::Custom { .. } => {
            let cf = check_class_f(spec);
            let member = cf.check.satisfied;
            let (se, rl, consistent) = match &cf.core {
                Some(core) => {
                    inputs.lambda_min = Some(core.lambda_min);
                    inputs.lipschitz = Some(core.lipschitz);
                    inputs.diameter = Some(core.diameter);
                    tightness = Some(restriction_tightness_check(core, w_star, coeff)?);
                    (
                        nonconvex_se_bounds(core, w_star, coeff)?,
                        restriction_loss_bounds(core, w_star, coeff)?,
                        core.lipschitz_consistent,
                    )
                }
                None => ((f64::NAN, f64::NAN), (f64::NAN, f64::NAN), false),
            };
            let se_conds = vec![pre("class F", member)];
            let rl_conds = vec![pre("class F", member), pre("f <= L|w| on samples", consistent)];
            entries.push(entry(BoundKind::NonconvexSe, Objective::Accuracy, se.0, se_conds.clone()));
            entries.push(entry(BoundKind::NonconvexSe, Objective::SocialWelfare, se.1, se_conds));
            entries.push(entry(BoundKind::RestrictionLoss, Objective::Accuracy, rl.0, rl_conds.clone()));
            entries.push(entry(BoundKind::RestrictionLoss, Objective::SocialWelfare, rl.1, rl_conds));
        }
    }
    if opts.solve {
        let r = realized(spec, targets, opts)?;
        for e in &mut entries {
            let i = obj_index(e.objective);
            e.realized_loss = match e.kind {
                BoundKind::RestrictionLoss => r.restriction[i],
                _ => r.se[i],
            };
        }
    }
    Ok(BoundsReport {
        kind: spec.kind(),
        entries,
        inputs,
        tightness,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.16e}"),
        None => String::new(),
    }
}

impl BoundsReport {
    /// Entries whose bound was emitted.
    pub fn emitted(&self) -> impl Iterator<Item = &BoundEntry> {
        self.entries.iter().filter(|e| e.value.is_some())
    }

    pub fn all_valid(&self) -> bool {
        self.entries.iter().all(|e| e.valid() != Some(false))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bound,objective,value,preconditions_met,realized_loss,valid,certified\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.kind.label(),
                e.objective.label(),
                fmt_opt(e.value),
                e.preconditions_met(),
                fmt_opt(e.realized_loss),
                e.valid().map(|v| v.to_string()).unwrap_or_default(),
                e.certified
            ));
        }
        out
    }
}

impl fmt::Display for BoundsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = &self.inputs;
        writeln!(f, "bounds for {} fairness, beta = {}", self.kind.label(), i.beta)?;
        let fmt_v = |v: &DVector<f64>| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ");
        writeln!(f, "  w* = ({})  |w*| = {:.6}", fmt_v(&i.w_star), i.w_star.norm())?;
        writeln!(f, "  w~ = ({})  |w~| = {:.6}", fmt_v(&i.coeff), i.coeff.norm())?;
        if let Some(s) = i.sigma_min {
            writeln!(f, "  sigma_d(M) = {s:.12}")?;
        }
        if let Some(h) = i.hoffman {
            let tag = if h.certified { "" } else { " (sampled lower bound, not certified)" };
            writeln!(f, "  H(M) = {:.12}{tag}", h.value)?;
        }
        if let Some(l) = i.lambda_min {
            writeln!(f, "  lambda_d(Q) = {l:.12}")?;
        }
        if let (Some(l), Some(d)) = (i.lipschitz, i.diameter) {
            writeln!(f, "  L = {l:.6}, D = {d:.6}")?;
        }
        for e in &self.entries {
            let conds = e
                .preconditions
                .iter()
                .map(|p| format!("{}: {}", p.name, if p.met { "ok" } else { "fails" }))
                .collect::<Vec<_>>()
                .join(", ");
            let head = format!("  {:<20} {:<4}", e.kind.label(), e.objective.label());
            match e.value {
                Some(v) => {
                    write!(f, "{head} bound = {v:.9}")?;
                    if let Some(r) = e.realized_loss {
                        write!(f, "  realized = {r:.9}  {}", if r <= v + BOUND_TOL { "ok" } else { "VIOLATED" })?;
                    }
                    if !e.certified {
                        write!(f, "  (uncertified)")?;
                    }
                }
                None => write!(f, "{head} not emitted")?,
            }
            if conds.is_empty() {
                writeln!(f)?;
            } else {
                writeln!(f, "  [{conds}]")?;
            }
        }
        if let Some(t) = &self.tightness {
            writeln!(
                f,
                "  restriction vs SE bounds: {} (acc {:.6} vs {:.6}, sw {:.6} vs {:.6})",
                t.label(),
                t.restriction.0,
                t.se.0,
                t.restriction.1,
                t.se.1
            )?;
        }
        Ok(())
    }
}
