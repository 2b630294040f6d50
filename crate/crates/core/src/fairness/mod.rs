//! Discrepancy functions, the β-fair sets they induce, and property checks.

pub mod expr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::agent;
use crate::error::{Error, Result};
use crate::linalg::{self, MATRIX_TOL, RANK_TOL};
use crate::model::Scenario;

pub use expr::Expr;

/// Hard cap on d for the 2^d-row polyhedron.
pub const MAX_POLY_DIM: usize = 16;
/// Dimension at which polyhedron construction starts warning.
pub const WARN_POLY_DIM: usize = 12;
/// Slack on Δ(w) ≤ β in membership tests.
pub const FAIR_TOL: f64 = 1e-12;

/// M = M₁ − M₂ with M_g = Π_D A_g⁻¹ Cᵀ Π_g.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyMatrix {
    pub matrix: DMatrix<f64>,
    pub per_group: [DMatrix<f64>; 2],
}

pub fn group_map(s: &Scenario, g: usize) -> Result<DMatrix<f64>> {
    let grp = s.group(g);
    let ainv = grp.cost_inverse()?;
    Ok(s.desirability_matrix() * ainv * s.contribution.matrix().transpose() * &grp.projector)
}

pub fn discrepancy_matrix(s: &Scenario) -> Result<DiscrepancyMatrix> {
    let m1 = group_map(s, 0)?;
    let m2 = group_map(s, 1)?;
    Ok(DiscrepancyMatrix {
        matrix: &m1 - &m2,
        per_group: [m1, m2],
    })
}

/// ‖M w‖₁.
pub fn delta_l1(w: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    linalg::compensated_sum((m * w).iter().map(|x| x.abs()))
}

/// wᵀ MᵀM w = ‖M w‖².
pub fn delta_l2(w: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    linalg::compensated_sum((m * w).iter().map(|x| x * x))
}

/// ‖M_g w‖² − ‖M_g' w‖².
pub fn delta_asym(w: &DVector<f64>, m_g: &DMatrix<f64>, m_other: &DMatrix<f64>) -> f64 {
    let a = m_g * w;
    let b = m_other * w;
    linalg::compensated_sum(a.iter().map(|x| x * x).chain(b.iter().map(|x| -x * x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FairnessKind {
    L1,
    L2,
    Asym,
    Custom,
}

impl FairnessKind {
    pub fn label(self) -> &'static str {
        match self {
            FairnessKind::L1 => "l1",
            FairnessKind::L2 => "l2",
            FairnessKind::Asym => "asym",
            FairnessKind::Custom => "custom",
        }
    }

    pub fn is_convex(self) -> bool {
        matches!(self, FairnessKind::L1 | FairnessKind::L2)
    }
}

impl std::str::FromStr for FairnessKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(FairnessKind::L1),
            "l2" => Ok(FairnessKind::L2),
            "asym" => Ok(FairnessKind::Asym),
            "custom" => Ok(FairnessKind::Custom),
            other => Err(Error::Input(format!("unknown fairness kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Discrepancy {
    L1 {
        m: DMatrix<f64>,
    },
    L2 {
        m: DMatrix<f64>,
    },
    /// Penalizes the privileged group's desirable effort exceeding the other's.
    Asym {
        m_priv: DMatrix<f64>,
        m_other: DMatrix<f64>,
    },
    /// wᵀQw − f(w) with a user-supplied Lipschitz constant for f.
    Custom {
        q: DMatrix<f64>,
        f: Expr,
        lipschitz: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessSpec {
    pub discrepancy: Discrepancy,
    pub beta: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Input(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(())
}

impl FairnessSpec {
    pub fn new(discrepancy: Discrepancy, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(FairnessSpec { discrepancy, beta })
    }

    pub fn l1(m: DMatrix<f64>, beta: f64) -> Result<Self> {
        Self::new(Discrepancy::L1 { m }, beta)
    }

    pub fn l2(m: DMatrix<f64>, beta: f64) -> Result<Self> {
        Self::new(Discrepancy::L2 { m }, beta)
    }

    pub fn asym(m_priv: DMatrix<f64>, m_other: DMatrix<f64>, beta: f64) -> Result<Self> {
        Self::new(Discrepancy::Asym { m_priv, m_other }, beta)
    }

    pub fn custom(q: DMatrix<f64>, f: Expr, lipschitz: f64, beta: f64) -> Result<Self> {
        if !lipschitz.is_finite() || lipschitz < 0.0 {
            return Err(Error::Input("Lipschitz constant must be finite and >= 0".into()));
        }
        if let Some(i) = f.max_var() {
            if i >= q.nrows() {
                return Err(Error::Input(format!(
                    "f references w{} but the dimension is {}",
                    i + 1,
                    q.nrows()
                )));
            }
        }
        Self::new(Discrepancy::Custom { q, f, lipschitz }, beta)
    }

    /// Build a convex or asymmetric spec from a scenario's discrepancy matrix.
    /// `privileged` is 1 or 2 and only matters for `Asym`.
    pub fn from_scenario(s: &Scenario, kind: FairnessKind, beta: f64, privileged: usize) -> Result<Self> {
        let dm = discrepancy_matrix(s)?;
        match kind {
            FairnessKind::L1 => Self::l1(dm.matrix, beta),
            FairnessKind::L2 => Self::l2(dm.matrix, beta),
            FairnessKind::Asym => {
                if !(1..=2).contains(&privileged) {
                    return Err(Error::Input("privileged group must be 1 or 2".into()));
                }
                let [m1, m2] = dm.per_group;
                if privileged == 1 {
                    Self::asym(m1, m2, beta)
                } else {
                    Self::asym(m2, m1, beta)
                }
            }
            FairnessKind::Custom => Err(Error::Input(
                "custom discrepancies need an explicit Q and f".into(),
            )),
        }
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(FairnessSpec {
            discrepancy: self.discrepancy.clone(),
            beta,
        })
    }

    pub fn kind(&self) -> FairnessKind {
        match self.discrepancy {
            Discrepancy::L1 { .. } => FairnessKind::L1,
            Discrepancy::L2 { .. } => FairnessKind::L2,
            Discrepancy::Asym { .. } => FairnessKind::Asym,
            Discrepancy::Custom { .. } => FairnessKind::Custom,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.discrepancy {
            Discrepancy::L1 { m } | Discrepancy::L2 { m } => m.ncols(),
            Discrepancy::Asym { m_priv, .. } => m_priv.ncols(),
            Discrepancy::Custom { q, .. } => q.ncols(),
        }
    }

    pub fn delta(&self, w: &DVector<f64>) -> f64 {
        match &self.discrepancy {
            Discrepancy::L1 { m } => delta_l1(w, m),
            Discrepancy::L2 { m } => delta_l2(w, m),
            Discrepancy::Asym { m_priv, m_other } => delta_asym(w, m_priv, m_other),
            Discrepancy::Custom { q, f, .. } => {
                linalg::quad_form(q, w) - f.eval(w.as_slice())
            }
        }
    }

    /// The quadratic part: MᵀM for L2, M_gᵀM_g for Asym, Q for custom.
    pub fn quadratic(&self) -> Option<DMatrix<f64>> {
        match &self.discrepancy {
            Discrepancy::L1 { .. } => None,
            Discrepancy::L2 { m } => Some(m.transpose() * m),
            Discrepancy::Asym { m_priv, .. } => Some(m_priv.transpose() * m_priv),
            Discrepancy::Custom { q, .. } => Some((q + q.transpose()) * 0.5),
        }
    }
}

/// Δ(w) ≤ β + 1e-12.
pub fn is_beta_fair(w: &DVector<f64>, spec: &FairnessSpec) -> bool {
    spec.delta(w) <= spec.beta + FAIR_TOL
}

/// Δ from simulated best responses, compared on desirability-weighted efforts.
/// For `Asym`, group `privileged` (1 or 2) is the penalized one.
pub fn delta_from_best_responses(s: &Scenario, kind: FairnessKind, w: &DVector<f64>, privileged: usize) -> Result<f64> {
    let pd = s.desirability_matrix();
    let y1 = &pd * agent::best_response_effort(w, s.group(0), &s.contribution)?;
    let y2 = &pd * agent::best_response_effort(w, s.group(1), &s.contribution)?;
    let diff = &y1 - &y2;
    Ok(match kind {
        FairnessKind::L1 => diff.iter().map(|x| x.abs()).sum(),
        FairnessKind::L2 => diff.norm_squared(),
        FairnessKind::Asym => {
            let (a, b) = if privileged == 2 { (y2, y1) } else { (y1, y2) };
            a.norm_squared() - b.norm_squared()
        }
        FairnessKind::Custom => {
            return Err(Error::Input("custom discrepancies have no best-response form".into()))
        }
    })
}

/// {w : rows · w ≤ rhs} = {w : ‖M w‖₁ ≤ β}.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// d ≥ 12: legal but large.
    pub large: bool,
}

/// Rows aᵀM over a ∈ {−1,+1}^d in lexicographic order (first coordinate most
/// significant, −1 before +1).
pub fn polyhedron_rows(m: &DMatrix<f64>, beta: f64) -> Result<Polyhedron> {
    let d = m.nrows();
    if d > MAX_POLY_DIM {
        return Err(Error::Capacity(format!(
            "polyhedron needs 2^{d} rows; capped at d = {MAX_POLY_DIM}"
        )));
    }
    check_beta(beta)?;
    let k = 1usize << d;
    let mut rows = DMatrix::zeros(k, m.ncols());
    for s in 0..k {
        for i in 0..d {
            let sign = if (s >> (d - 1 - i)) & 1 == 1 { 1.0 } else { -1.0 };
            for j in 0..m.ncols() {
                rows[(s, j)] += sign * m[(i, j)];
            }
        }
    }
    Ok(Polyhedron {
        rows,
        rhs: DVector::from_element(k, beta),
        large: d >= WARN_POLY_DIM,
    })
}

/// Outcome of one sufficient-condition check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub satisfied: bool,
    /// Signed slack of the deciding inequality (≥ 0 when satisfied).
    pub margin: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property1 {
    pub check: Check,
    pub sigma_min: f64,
}

/// ker(M) = ∅ and β ≤ σ_d(M).
pub fn check_property1(m: &DMatrix<f64>, beta: f64) -> Property1 {
    let sigma = linalg::min_singular_value(m);
    let check = if sigma <= RANK_TOL {
        Check {
            satisfied: false,
            margin: sigma - RANK_TOL,
            reason: "kernel nonempty".into(),
        }
    } else if beta <= sigma {
        Check {
            satisfied: true,
            margin: sigma - beta,
            reason: format!("sigma_d(M) = {sigma:.12} >= beta = {beta}"),
        }
    } else {
        Check {
            satisfied: false,
            margin: sigma - beta,
            reason: format!("beta = {beta} exceeds sigma_d(M) = {sigma:.12}"),
        }
    };
    Property1 { check, sigma_min: sigma }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corollary {
    pub name: &'static str,
    pub check: Check,
}

/// Shape-specific sufficient conditions: equal costs, or equal projectors with A₂ ≻ A₁.
pub fn property_corollaries(s: &Scenario, beta: f64) -> Result<Vec<Corollary>> {
    let mut out = Vec::new();
    let [g1, g2] = &s.groups;
    let c = s.contribution.matrix();
    let pd = s.desirability_matrix();
    if (&g1.cost - &g2.cost).norm() <= MATRIX_TOL {
        let ainv = g1.cost_inverse()?;
        let k = &pd * ainv * c.transpose() * (&g1.projector - &g2.projector);
        let p1 = check_property1(&k, beta);
        out.push(Corollary {
            name: "uniform-cost",
            check: p1.check,
        });
    }
    if (&g1.projector - &g2.projector).norm() <= MATRIX_TOL {
        let proj_min = linalg::min_eigenvalue(&g1.projector);
        let gap = linalg::min_eigenvalue(&(&g2.cost - &g1.cost));
        let check = if proj_min <= RANK_TOL {
            Check {
                satisfied: false,
                margin: proj_min,
                reason: "shared projector has a nonempty kernel".into(),
            }
        } else if gap <= RANK_TOL {
            Check {
                satisfied: false,
                margin: gap,
                reason: "A2 - A1 is not positive definite".into(),
            }
        } else {
            let k = &pd * (g1.cost_inverse()? - g2.cost_inverse()?) * c.transpose() * &g1.projector;
            let sigma = linalg::min_singular_value(&k);
            Check {
                satisfied: beta <= sigma,
                margin: sigma - beta,
                reason: format!("A2 > A1 (gap {gap:.6e}); sigma_d = {sigma:.12}"),
            }
        };
        out.push(Corollary {
            name: "uniform-information",
            check,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property2 {
    pub check: Check,
    /// MᵀM when M is invertible.
    pub q: Option<DMatrix<f64>>,
}

/// M invertible; then Δ_ℓ2 ≤ β is the ellipsoid wᵀ(MᵀM)w ≤ β.
pub fn check_property2(m: &DMatrix<f64>) -> Property2 {
    let sigma = linalg::min_singular_value(m);
    if sigma > RANK_TOL {
        Property2 {
            check: Check {
                satisfied: true,
                margin: sigma - RANK_TOL,
                reason: format!("M invertible (sigma_d = {sigma:.12})"),
            },
            q: Some(m.transpose() * m),
        }
    } else {
        Property2 {
            check: Check {
                satisfied: false,
                margin: sigma - RANK_TOL,
                reason: "M singular".into(),
            },
            q: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property3 {
    pub check: Check,
    pub lambda_min: f64,
    /// A point of the ellipsoid outside the unit ball when the check fails.
    pub witness: Option<DVector<f64>>,
}

/// Q ≻ 0 and β ≤ λ_d(Q): the ellipsoid lies inside the unit ball.
pub fn check_property3(q: &DMatrix<f64>, beta: f64) -> Property3 {
    let (vals, vecs) = linalg::sym_eigen(q);
    let lmin = vals[0];
    if lmin <= RANK_TOL {
        let witness = Some(vecs.column(0).into_owned() * 2.0);
        return Property3 {
            check: Check {
                satisfied: false,
                margin: lmin - RANK_TOL,
                reason: "Q not positive definite".into(),
            },
            lambda_min: lmin,
            witness,
        };
    }
    if beta <= lmin {
        Property3 {
            check: Check {
                satisfied: true,
                margin: lmin - beta,
                reason: format!("lambda_d(Q) = {lmin:.12} >= beta = {beta}"),
            },
            lambda_min: lmin,
            witness: None,
        }
    } else {
        let witness = vecs.column(0).into_owned() * (beta / lmin).sqrt();
        Property3 {
            check: Check {
                satisfied: false,
                margin: lmin - beta,
                reason: format!("beta = {beta} exceeds lambda_d(Q) = {lmin:.12}"),
            },
            lambda_min: lmin,
            witness: Some(witness),
        }
    }
}

/// Ellipsoidal core of a class-𝓕 discrepancy.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassF {
    pub q: DMatrix<f64>,
    pub beta: f64,
    pub lambda_min: f64,
    pub lipschitz: f64,
    /// Upper bound on ‖w‖ over W(β) ∩ B(1).
    pub diameter: f64,
    /// Sampled check that f(w) ≤ L‖w‖ on the unit ball (always true for Asym).
    pub lipschitz_consistent: bool,
}

impl ClassF {
    pub fn envelope_level(&self) -> f64 {
        self.beta + self.lipschitz * self.diameter
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFCheck {
    pub check: Check,
    pub core: Option<ClassF>,
}

const CLASS_F_SAMPLES: usize = 2000;

fn unit_ball_samples(d: usize, n: usize, seed: u64) -> Vec<DVector<f64>> {
    use rand_distr::StandardNormal;
    (0..n)
        .map(|i| {
            let mut rng = crate::rng::stream(seed, &[0xba11, i as u64]);
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r: f64 = rng.random::<f64>().powf(1.0 / d as f64);
            let n = z.norm();
            if n == 0.0 {
                z
            } else {
                z * (r / n)
            }
        })
        .collect()
}

/// Class-𝓕 membership: Q ≻ 0 and β ≤ λ_d(Q), plus f(0) = 0 and f ≥ 0 for custom f.
/// Reports L and a diameter bound D for W(β) ∩ B(1).
pub fn check_class_f(spec: &FairnessSpec) -> ClassFCheck {
    let beta = spec.beta;
    let not_member = |margin: f64, reason: String| ClassFCheck {
        check: Check {
            satisfied: false,
            margin,
            reason,
        },
        core: None,
    };
    let q = match spec.quadratic() {
        Some(q) if !spec.kind().is_convex() => q,
        _ => {
            return not_member(
                f64::NAN,
                format!("{} is not a quadratic-minus-f discrepancy", spec.kind().label()),
            )
        }
    };
    let lmin = linalg::min_eigenvalue(&q);
    if lmin <= RANK_TOL {
        return not_member(lmin - RANK_TOL, "Q not positive definite (kernel nonempty)".into());
    }
    if beta > lmin {
        return not_member(lmin - beta, format!("beta = {beta} exceeds lambda_d(Q) = {lmin:.12}"));
    }
    let (lipschitz, diameter, consistent) = match &spec.discrepancy {
        Discrepancy::Asym { m_priv, m_other } => {
            let p = m_other.transpose() * m_other;
            let k = m_priv.transpose() * m_priv - &p;
            let kmin = linalg::min_eigenvalue(&k);
            let diameter = if kmin > RANK_TOL { (beta / kmin).sqrt().min(1.0) } else { 1.0 };
            (2.0 * diameter * linalg::max_eigenvalue(&p), diameter, true)
        }
        Discrepancy::Custom { f, lipschitz, .. } => {
            let d = q.nrows();
            let f0 = f.eval(&vec![0.0; d]);
            if !(f0.abs() <= 1e-12) {
                return not_member(-f0.abs(), format!("f(0) = {f0}, must be 0"));
            }
            let samples = unit_ball_samples(d, CLASS_F_SAMPLES, 0xc1a55f);
            let mut consistent = true;
            for w in &samples {
                let fw = f.eval(w.as_slice());
                if !(fw >= -1e-12) {
                    return not_member(fw, format!("f negative at sampled point ({fw:.6e})"));
                }
                if fw > lipschitz * w.norm() + 1e-12 {
                    consistent = false;
                }
            }
            // ‖w‖ ≤ D_k on W ∩ B(1) implies λ_d ‖w‖² ≤ β + L D_k.
            let mut dk = 1.0f64;
            for _ in 0..200 {
                let next = ((beta + lipschitz * dk) / lmin).sqrt().min(1.0);
                if (dk - next).abs() <= 1e-15 {
                    dk = next;
                    break;
                }
                dk = next;
            }
            (*lipschitz, dk, consistent)
        }
        _ => unreachable!("convex kinds handled above"),
    };
    ClassFCheck {
        check: Check {
            satisfied: true,
            margin: lmin - beta,
            reason: format!("Q > 0, lambda_d(Q) = {lmin:.12} >= beta = {beta}"),
        },
        core: Some(ClassF {
            q,
            beta,
            lambda_min: lmin,
            lipschitz,
            diameter,
            lipschitz_consistent: consistent,
        }),
    }
}

/// Sampled estimate of μ(M) = inf over the unit sphere of ‖M w‖₁ (an upper estimate).
pub fn estimate_mu(m: &DMatrix<f64>, samples: usize, seed: u64) -> f64 {
    use rand_distr::StandardNormal;
    let d = m.ncols();
    let (_, v) = linalg::right_singular_vectors(m);
    let mut best = if v.ncols() == d && d > 0 {
        delta_l1(&v.column(d - 1).into_owned(), m)
    } else {
        f64::INFINITY
    };
    for i in 0..samples {
        let mut rng = crate::rng::stream(seed, &[0x3b, i as u64]);
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = z.norm();
        if n > 0.0 {
            best = best.min(delta_l1(&(z / n), m));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub kind: FairnessKind,
    pub beta: f64,
    pub property1: Option<Property1>,
    pub corollaries: Vec<Corollary>,
    pub mu_estimate: Option<f64>,
    pub property2: Option<Property2>,
    pub property3: Option<Property3>,
    pub class_f: Option<ClassFCheck>,
}

/// Every checker relevant to the spec's kind. The L1/L2 checks run on the
/// scenario's own discrepancy matrix.
pub fn property_report(s: &Scenario, spec: &FairnessSpec) -> Result<PropertyReport> {
    let beta = spec.beta;
    let mut rep = PropertyReport {
        kind: spec.kind(),
        beta,
        property1: None,
        corollaries: Vec::new(),
        mu_estimate: None,
        property2: None,
        property3: None,
        class_f: None,
    };
    match &spec.discrepancy {
        Discrepancy::L1 { m } => {
            rep.property1 = Some(check_property1(m, beta));
            rep.corollaries = property_corollaries(s, beta)?;
            rep.mu_estimate = Some(estimate_mu(m, 4096, 0x6d75));
        }
        Discrepancy::L2 { m } => {
            let p2 = check_property2(m);
            if let Some(q) = &p2.q {
                rep.property3 = Some(check_property3(q, beta));
            }
            rep.property2 = Some(p2);
            rep.corollaries = property_corollaries(s, beta)?;
        }
        Discrepancy::Asym { .. } | Discrepancy::Custom { .. } => {
            rep.class_f = Some(check_class_f(spec));
        }
    }
    Ok(rep)
}

fn fmt_check(f: &mut std::fmt::Formatter<'_>, name: &str, c: &Check) -> std::fmt::Result {
    writeln!(
        f,
        "{name}: {} (margin {:.6e}) - {}",
        if c.satisfied { "satisfied" } else { "not satisfied" },
        c.margin,
        c.reason
    )
}

impl std::fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "fairness kind {} at beta = {}", self.kind.label(), self.beta)?;
        if let Some(p) = &self.property1 {
            fmt_check(f, "property 1 (polyhedron in ball)", &p.check)?;
            writeln!(f, "  sigma_d(M) = {:.12}", p.sigma_min)?;
        }
        if let Some(mu) = self.mu_estimate {
            writeln!(f, "  mu(M) sampled estimate = {mu:.12}")?;
        }
        for c in &self.corollaries {
            fmt_check(f, &format!("  {} corollary", c.name), &c.check)?;
        }
        if let Some(p) = &self.property2 {
            fmt_check(f, "property 2 (ellipsoid)", &p.check)?;
        }
        if let Some(p) = &self.property3 {
            fmt_check(f, "property 3 (ellipsoid in ball)", &p.check)?;
            writeln!(f, "  lambda_d(Q) = {:.12}", p.lambda_min)?;
        }
        if let Some(c) = &self.class_f {
            fmt_check(f, "class F", &c.check)?;
            if let Some(core) = &c.core {
                writeln!(
                    f,
                    "  lambda_d(Q) = {:.12}, L = {:.12}, D = {:.12}, f <= L|w| on samples: {}",
                    core.lambda_min, core.lipschitz, core.diameter, core.lipschitz_consistent
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContributionMatrix, GroupParams};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn diag(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&v(xs))
    }

    fn worked_example() -> Scenario {
        Scenario {
            contribution: ContributionMatrix::identity(2),
            groups: [
                GroupParams::new(DMatrix::identity(2, 2), diag(&[1.0, 0.0])),
                GroupParams::new(DMatrix::identity(2, 2), diag(&[0.0, 1.0])),
            ],
            desirability: v(&[1.0, 0.75]),
            ground_truth: v(&[0.5, 0.5]),
            allow_zero_desirability: false,
        }
    }

    #[test]
    fn worked_example_matrix() {
        let dm = discrepancy_matrix(&worked_example()).unwrap();
        assert!((dm.matrix - diag(&[1.0, -0.75])).norm() < 1e-15);
        assert_eq!(&dm.per_group[0] - &dm.per_group[1], discrepancy_matrix(&worked_example()).unwrap().matrix);
    }

    #[test]
    fn homogeneous_groups_give_zero_matrix() {
        let mut s = worked_example();
        s.groups[1] = s.groups[0].clone();
        assert_eq!(discrepancy_matrix(&s).unwrap().matrix, DMatrix::zeros(2, 2));
    }

    #[test]
    fn cost_asymmetry_matrix() {
        let mut s = worked_example();
        s.desirability = v(&[1.0, 1.0]);
        s.groups[0] = GroupParams::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        s.groups[1] = GroupParams::new(DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2));
        let m = discrepancy_matrix(&s).unwrap().matrix;
        assert!((m - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
    }

    #[test]
    fn delta_examples() {
        let m = diag(&[1.0, -0.75]);
        let w = v(&[0.5, 0.5]);
        assert_eq!(delta_l1(&w, &m), 7.0 / 8.0);
        assert_eq!(delta_l2(&w, &m), 25.0 / 64.0);
        assert_eq!(delta_l1(&DVector::zeros(2), &m), 0.0);
        assert_eq!(delta_l1(&w, &DMatrix::zeros(2, 2)), 0.0);
        let s = worked_example();
        let br1 = delta_from_best_responses(&s, FairnessKind::L1, &w, 1).unwrap();
        let br2 = delta_from_best_responses(&s, FairnessKind::L2, &w, 1).unwrap();
        assert!((br1 - 7.0 / 8.0).abs() < 1e-15);
        assert!((br2 - 25.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn asym_antisymmetric() {
        let a = diag(&[1.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.3, 1.0]);
        let w = v(&[0.3, -0.7]);
        assert_eq!(delta_asym(&w, &a, &a), 0.0);
        assert_eq!(delta_asym(&DVector::zeros(2), &a, &b), 0.0);
        assert!((delta_asym(&w, &a, &b) + delta_asym(&w, &b, &a)).abs() < 1e-15);
    }

    #[test]
    fn worked_example_rows_in_lex_order() {
        let p = polyhedron_rows(&diag(&[1.0, -0.75]), 0.5).unwrap();
        let expect = DMatrix::from_row_slice(4, 2, &[-1.0, 0.75, -1.0, -0.75, 1.0, 0.75, 1.0, -0.75]);
        assert_eq!(p.rows, expect);
        let resid = (&p.rows * v(&[0.5, 0.5]) - &p.rhs).map(|x| x.max(0.0));
        assert_eq!(resid, v(&[0.0, 0.0, 0.375, 0.0]));
    }

    #[test]
    fn one_dimensional_rows() {
        let p = polyhedron_rows(&DMatrix::from_element(1, 1, 2.5), 1.0).unwrap();
        assert_eq!(p.rows, DMatrix::from_row_slice(2, 1, &[-2.5, 2.5]));
    }

    #[test]
    fn polyhedron_cap() {
        assert!(matches!(polyhedron_rows(&DMatrix::identity(17, 17), 1.0), Err(Error::Capacity(_))));
        assert!(polyhedron_rows(&DMatrix::identity(12, 12), 1.0).unwrap().large);
    }

    #[test]
    fn property1_examples() {
        let m = diag(&[1.0, -0.75]);
        let p = check_property1(&m, 0.5);
        assert!(p.check.satisfied);
        assert!((p.sigma_min - 0.75).abs() < 1e-15);
        assert!((p.check.margin - 0.25).abs() < 1e-15);
        assert!(!check_property1(&m, 0.9).check.satisfied);
        let sing = check_property1(&diag(&[1.0, 0.0]), 0.1);
        assert!(!sing.check.satisfied);
        assert_eq!(sing.check.reason, "kernel nonempty");
    }

    #[test]
    fn worked_example_corollary() {
        let cs = property_corollaries(&worked_example(), 0.5).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].name, "uniform-cost");
        assert!(cs[0].check.satisfied);
    }

    #[test]
    fn uniform_information_corollary() {
        let mut s = worked_example();
        s.groups[0] = GroupParams::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        s.groups[1] = GroupParams::new(DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2));
        let cs = property_corollaries(&s, 0.1).unwrap();
        let c = cs.iter().find(|c| c.name == "uniform-information").unwrap();
        assert!(c.check.satisfied);
        let m = discrepancy_matrix(&s).unwrap().matrix;
        assert!(check_property2(&m).check.satisfied);
    }

    #[test]
    fn property2_examples() {
        let p = check_property2(&diag(&[1.0, -0.75]));
        assert!(p.check.satisfied);
        assert!((p.q.unwrap() - diag(&[1.0, 9.0 / 16.0])).norm() < 1e-15);
        assert!(!check_property2(&diag(&[1.0, 0.0])).check.satisfied);
    }

    #[test]
    fn property3_examples() {
        let q = diag(&[1.0, 4.0]);
        assert!(check_property3(&q, 1.0).check.satisfied);
        let fail = check_property3(&q, 2.0);
        assert!(!fail.check.satisfied);
        let w = fail.witness.unwrap();
        assert!((w[0].abs() - 2f64.sqrt()).abs() < 1e-12 && w[1].abs() < 1e-12);
        assert!(linalg::quad_form(&q, &w) <= 2.0 + 1e-12 && w.norm() > 1.0);
        let eq = check_property3(&DMatrix::identity(3, 3), 1.0);
        assert!(eq.check.satisfied && eq.check.margin.abs() < 1e-15);
    }

    #[test]
    fn ellipsoid_boundary_inside_ball_when_property3() {
        let q = diag(&[1.0, 4.0]);
        for k in 0..1000 {
            let t = k as f64 * std::f64::consts::TAU / 1000.0;
            let w = v(&[t.cos(), t.sin() / 2.0]);
            assert!((linalg::quad_form(&q, &w) - 1.0).abs() < 1e-12);
            assert!(w.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn class_f_full_span_member() {
        let s = Scenario {
            groups: [
                GroupParams::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)),
                GroupParams::new(DMatrix::identity(2, 2) * 2.0, diag(&[1.0, 0.0])),
            ],
            ..worked_example()
        };
        let spec = FairnessSpec::from_scenario(&s, FairnessKind::Asym, 0.3, 1).unwrap();
        let cf = check_class_f(&spec);
        assert!(cf.check.satisfied, "{}", cf.check.reason);
        let core = cf.core.unwrap();
        assert!(core.diameter <= 1.0 && core.lipschitz >= 0.0);
        // privileged group 2 is rank deficient
        let spec2 = FairnessSpec::from_scenario(&s, FairnessKind::Asym, 0.3, 2).unwrap();
        assert!(!check_class_f(&spec2).check.satisfied);
    }

    #[test]
    fn class_f_zero_f_is_ellipsoid() {
        let spec = FairnessSpec::custom(diag(&[1.0, 2.0]), Expr::zero(), 0.0, 0.5).unwrap();
        let cf = check_class_f(&spec);
        let core = cf.core.unwrap();
        assert_eq!(core.lipschitz, 0.0);
        assert_eq!(core.envelope_level(), 0.5);
        assert!((core.diameter - (0.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn class_f_rejects_convex_kinds_and_bad_f() {
        let spec = FairnessSpec::l2(DMatrix::identity(2, 2), 0.5).unwrap();
        assert!(!check_class_f(&spec).check.satisfied);
        let shifted = FairnessSpec::custom(DMatrix::identity(2, 2), Expr::parse("1 + w1").unwrap(), 1.0, 0.5).unwrap();
        assert!(!check_class_f(&shifted).check.satisfied);
        let negative = FairnessSpec::custom(DMatrix::identity(2, 2), Expr::parse("w1").unwrap(), 1.0, 0.5).unwrap();
        assert!(!check_class_f(&negative).check.satisfied);
    }

    #[test]
    fn is_beta_fair_examples() {
        let l1 = FairnessSpec::l1(diag(&[1.0, -0.75]), 7.0 / 8.0).unwrap();
        assert!(is_beta_fair(&v(&[0.5, 0.5]), &l1));
        assert!(is_beta_fair(&DVector::zeros(2), &l1.with_beta(0.0).unwrap()));
        let f = Expr::parse("0.3*sqrt(abs(w1)) + 0.3*sqrt(abs(w2))").unwrap();
        let fig = FairnessSpec::custom(DMatrix::identity(2, 2), f, 1.0, 0.3).unwrap();
        let d = fig.delta(&v(&[0.5, 0.5]));
        assert!((d - (0.5 - 0.6 * 0.5f64.sqrt())).abs() < 1e-15);
        assert!((d - 0.0757).abs() < 1e-4);
        assert!(is_beta_fair(&v(&[0.5, 0.5]), &fig));
        assert!(is_beta_fair(&DVector::zeros(2), &fig));
    }

    #[test]
    fn negative_beta_rejected() {
        assert!(FairnessSpec::l1(DMatrix::identity(2, 2), -0.1).is_err());
    }

    #[test]
    fn mu_estimate_brackets_sigma() {
        let m = diag(&[1.0, -0.75]);
        let mu = estimate_mu(&m, 2000, 1);
        assert!(mu >= 0.75 - 1e-12 && mu <= 0.75 + 1e-6);
    }

    #[test]
    fn report_for_worked_example() {
        let s = worked_example();
        let spec = FairnessSpec::from_scenario(&s, FairnessKind::L1, 0.5, 1).unwrap();
        let rep = property_report(&s, &spec).unwrap();
        let text = rep.to_string();
        assert!(text.contains("property 1 (polyhedron in ball): satisfied"));
        assert!(text.contains("0.750000000000"));
    }
}
