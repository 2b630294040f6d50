//! Static game data: causal graph, contribution matrix, groups, scenario.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, MATRIX_TOL, RANK_TOL};

/// Graph construction is capped at this many nodes.
pub const MAX_GRAPH_NODES: usize = 24;
/// Slack on ‖w‖ ≤ 1 when marking a policy deployable.
pub const DEPLOY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    node_count: usize,
    edges: Vec<Edge>,
}

impl CausalGraph {
    /// Checks indices, self-loops, duplicate pairs, weights and acyclicity.
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Input("graph needs at least one node".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &edges {
            if e.source >= node_count || e.target >= node_count {
                return Err(Error::Input(format!(
                    "edge {}->{} references a node outside [0, {node_count})",
                    e.source, e.target
                )));
            }
            if e.source == e.target {
                return Err(Error::Structural(format!("self-loop on node {}", e.source)));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::Input(format!(
                    "edge {}->{} has weight {} (must be finite and >= 0)",
                    e.source, e.target, e.weight
                )));
            }
            if !seen.insert((e.source, e.target)) {
                return Err(Error::Structural(format!(
                    "duplicate edge {}->{}",
                    e.source, e.target
                )));
            }
        }
        let g = CausalGraph { node_count, edges };
        g.topological_order()?;
        Ok(g)
    }

    pub fn from_triples(node_count: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let edges = triples
            .iter()
            .map(|&(source, target, weight)| Edge {
                source,
                target,
                weight,
            })
            .collect();
        Self::new(node_count, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Kahn's algorithm; smallest ready index first so the order is canonical.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.node_count;
        let mut indeg = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            indeg[e.target] += 1;
            out[e.source].push(e.target);
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&u) = ready.iter().next() {
            ready.remove(&u);
            order.push(u);
            for &v in &out[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.insert(v);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Structural("cycle detected in causal graph".into()));
        }
        Ok(order)
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(Error::Input("permutation length differs from node count".into()));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                source: perm[e.source],
                target: perm[e.target],
                weight: e.weight,
            })
            .collect();
        Self::new(self.node_count, edges)
    }
}

/// `C[(i, j)]` aggregates every directed path from `j` into `i`; `x' = x + C x_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMatrix(DMatrix<f64>);

impl ContributionMatrix {
    pub fn identity(d: usize) -> Self {
        ContributionMatrix(DMatrix::identity(d, d))
    }

    /// Wrap a raw matrix. Checks unit diagonal and invertibility.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Input("contribution matrix must be square".into()));
        }
        if (0..m.nrows()).any(|i| (m[(i, i)] - 1.0).abs() > MATRIX_TOL) {
            return Err(Error::Structural("contribution matrix diagonal must be 1".into()));
        }
        if linalg::min_singular_value(&m) <= RANK_TOL {
            return Err(Error::Structural("contribution matrix is singular".into()));
        }
        Ok(ContributionMatrix(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Path-sum contribution matrix. Each path contributes the sum of its edge weights.
///
/// Uses a per-source dynamic program over a topological order: with `N[v]` the
/// number of paths `j -> v` and `S[v]` their summed weight,
/// `S[v] = Σ_{u->v} S[u] + N[u]·w(u,v)`.
pub fn build_contribution_matrix(graph: &CausalGraph) -> Result<ContributionMatrix> {
    let d = graph.node_count();
    if d > MAX_GRAPH_NODES {
        return Err(Error::Capacity(format!(
            "graph has {d} nodes; construction is capped at {MAX_GRAPH_NODES}"
        )));
    }
    let order = graph.topological_order()?;
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
    for e in graph.edges() {
        incoming[e.target].push((e.source, e.weight));
    }
    let mut c = DMatrix::identity(d, d);
    for j in 0..d {
        let mut count = vec![0.0f64; d];
        let mut sum = vec![0.0f64; d];
        count[j] = 1.0;
        for &v in &order {
            if v == j {
                continue;
            }
            for &(u, w) in &incoming[v] {
                if count[u] > 0.0 {
                    count[v] += count[u];
                    sum[v] += sum[u] + count[u] * w;
                }
            }
        }
        for i in 0..d {
            if i != j {
                c[(i, j)] = sum[i];
            }
        }
    }
    Ok(ContributionMatrix(c))
}

/// Gaussian sampler `x = mean + F z`, `z ~ N(0, I_r)`; support is span(mean, F).
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub mean: DVector<f64>,
    pub factor: DMatrix<f64>,
}

impl Sampler {
    pub fn standard(d: usize) -> Self {
        Sampler {
            mean: DVector::zeros(d),
            factor: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let z = DVector::from_fn(self.factor.ncols(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.factor * z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    pub cost: DMatrix<f64>,
    pub projector: DMatrix<f64>,
    pub sampler: Option<Sampler>,
}

impl GroupParams {
    pub fn new(cost: DMatrix<f64>, projector: DMatrix<f64>) -> Self {
        GroupParams {
            cost,
            projector,
            sampler: None,
        }
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> Self {
        self.sampler = Some(sampler);
        self
    }

    /// A_g⁻¹ applied to `v`.
    pub fn cost_solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::spd_solve(&self.cost, v)
            .ok_or_else(|| Error::Structural("cost matrix is not positive definite".into()))
    }

    pub fn cost_inverse(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.cost)
            .ok_or_else(|| Error::Structural("cost matrix is not positive definite".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub contribution: ContributionMatrix,
    pub groups: [GroupParams; 2],
    pub desirability: DVector<f64>,
    pub ground_truth: DVector<f64>,
    /// Permit zero desirability scores (strict replication of 0/1 encodings).
    pub allow_zero_desirability: bool,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.desirability.len()
    }

    /// Π_D.
    pub fn desirability_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.desirability)
    }

    pub fn group(&self, g: usize) -> &GroupParams {
        &self.groups[g]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub weights: DVector<f64>,
    pub deployable: bool,
}

impl Policy {
    pub fn new(weights: DVector<f64>) -> Self {
        let deployable = weights.norm() <= 1.0 + DEPLOY_TOL;
        Policy {
            weights,
            deployable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    DimensionMismatch,
    CostNotSymmetric,
    CostNotPositiveDefinite,
    ProjectorNotSymmetric,
    ProjectorNotIdempotent,
    ProjectorEigenvalues,
    DesirabilityNotPositive,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, message: String) {
        self.violations.push(Violation { kind, message });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "scenario valid");
        }
        for v in &self.violations {
            writeln!(f, "violation: {}", v.message)?;
        }
        Ok(())
    }
}

/// Collect every violated structural invariant. Never fails.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut r = ValidationReport::default();
    let d = s.desirability.len();
    let c = s.contribution.matrix();
    if c.nrows() != d || c.ncols() != d {
        r.push(
            ViolationKind::DimensionMismatch,
            format!("contribution matrix is {}x{}, expected {d}x{d}", c.nrows(), c.ncols()),
        );
    }
    if s.ground_truth.len() != d {
        r.push(
            ViolationKind::DimensionMismatch,
            format!("ground truth has length {}, expected {d}", s.ground_truth.len()),
        );
    }
    let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
    if !s.ground_truth.iter().all(|x| x.is_finite()) || !s.desirability.iter().all(|x| x.is_finite()) {
        r.push(ViolationKind::NonFinite, "non-finite vector entry".into());
    }
    for (g, grp) in s.groups.iter().enumerate() {
        let name = g + 1;
        for (label, m) in [("cost matrix", &grp.cost), ("projector", &grp.projector)] {
            if m.nrows() != d || m.ncols() != d {
                r.push(
                    ViolationKind::DimensionMismatch,
                    format!("group {name} {label} is {}x{}, expected {d}x{d}", m.nrows(), m.ncols()),
                );
            }
            if !finite(m) {
                r.push(ViolationKind::NonFinite, format!("group {name} {label} has non-finite entries"));
            }
        }
        if let Some(sm) = &grp.sampler {
            if sm.mean.len() != d || sm.factor.nrows() != d {
                r.push(
                    ViolationKind::DimensionMismatch,
                    format!("group {name} sampler dimension differs from {d}"),
                );
            }
        }
        if grp.cost.is_square() && finite(&grp.cost) {
            if !linalg::is_symmetric(&grp.cost, MATRIX_TOL) {
                r.push(
                    ViolationKind::CostNotSymmetric,
                    format!("group {name} cost matrix not symmetric"),
                );
            }
            let lmin = linalg::min_eigenvalue(&grp.cost);
            if lmin <= RANK_TOL {
                r.push(
                    ViolationKind::CostNotPositiveDefinite,
                    format!("group {name} cost matrix not PD (smallest eigenvalue {lmin:.6e})"),
                );
            }
        }
        let p = &grp.projector;
        if p.is_square() && finite(p) {
            if !linalg::is_symmetric(p, MATRIX_TOL) {
                r.push(
                    ViolationKind::ProjectorNotSymmetric,
                    format!("group {name} projector not symmetric"),
                );
            }
            let err = (p * p - p).norm();
            if err > MATRIX_TOL {
                r.push(
                    ViolationKind::ProjectorNotIdempotent,
                    format!("group {name} projector not idempotent (|P^2 - P|_F = {err:.3e})"),
                );
            }
            let (vals, _) = linalg::sym_eigen(p);
            if vals
                .iter()
                .any(|&l| l.abs() > MATRIX_TOL && (l - 1.0).abs() > MATRIX_TOL)
            {
                r.push(
                    ViolationKind::ProjectorEigenvalues,
                    format!("group {name} projector has eigenvalues outside {{0, 1}}"),
                );
            }
        }
    }
    for (i, &v) in s.desirability.iter().enumerate() {
        let bad = if s.allow_zero_desirability { v < 0.0 } else { v <= 0.0 };
        if bad {
            r.push(
                ViolationKind::DesirabilityNotPositive,
                format!("desirability of feature {i} is {v} (must be > 0)"),
            );
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorEstimate {
    pub projector: DMatrix<f64>,
    pub requested_rank: usize,
    pub rank: usize,
    /// True when `rank < requested_rank` because the samples span less.
    pub reduced: bool,
}

/// `V_k V_kᵀ` from the top-k right singular vectors of the sample rows.
pub fn projector_from_samples(rows: &DMatrix<f64>, k: usize) -> Result<ProjectorEstimate> {
    let (n, d) = rows.shape();
    if n == 0 || d == 0 {
        return Err(Error::Input("projector needs at least one sample row".into()));
    }
    if k == 0 {
        return Err(Error::Input("projector rank k must be positive".into()));
    }
    let (s, v) = linalg::right_singular_vectors(rows);
    let smax = s.first().copied().unwrap_or(0.0);
    let eff = s.iter().filter(|&&x| smax > 0.0 && x > RANK_TOL * smax).count();
    let rank = k.min(eff);
    let vk = v.columns(0, rank);
    let projector = &vk * vk.transpose();
    Ok(ProjectorEstimate {
        projector: (&projector + projector.transpose()) * 0.5,
        requested_rank: k,
        rank,
        reduced: rank < k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn empty_graph_gives_identity() {
        let g = CausalGraph::new(3, vec![]).unwrap();
        let c = build_contribution_matrix(&g).unwrap();
        assert_eq!(c.matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn chain_graph_sums_weights() {
        let g = CausalGraph::from_triples(3, &[(0, 1, 0.5), (1, 2, 0.25)]).unwrap();
        let c = build_contribution_matrix(&g).unwrap();
        let c = c.matrix();
        assert!(approx(c[(1, 0)], 0.5));
        assert!(approx(c[(2, 1)], 0.25));
        assert!(approx(c[(2, 0)], 0.75));
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(0, 2)], 0.0);
        assert_eq!(c[(1, 2)], 0.0);
    }

    #[test]
    fn shortcut_edge_adds_path() {
        let g = CausalGraph::from_triples(3, &[(0, 1, 0.5), (0, 2, 0.1), (1, 2, 0.25)]).unwrap();
        let c = build_contribution_matrix(&g).unwrap();
        assert!(approx(c.matrix()[(2, 0)], 0.85));
    }

    #[test]
    fn cycle_is_structural_error() {
        let err = CausalGraph::from_triples(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn bad_edges_rejected() {
        assert!(matches!(
            CausalGraph::from_triples(2, &[(0, 2, 1.0)]),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            CausalGraph::from_triples(2, &[(1, 1, 1.0)]),
            Err(Error::Structural(_))
        ));
        assert!(matches!(
            CausalGraph::from_triples(2, &[(0, 1, 1.0), (0, 1, 2.0)]),
            Err(Error::Structural(_))
        ));
        assert!(matches!(
            CausalGraph::from_triples(2, &[(0, 1, -1.0)]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn graph_cap_enforced() {
        let g = CausalGraph::new(MAX_GRAPH_NODES + 1, vec![]).unwrap();
        assert!(matches!(build_contribution_matrix(&g), Err(Error::Capacity(_))));
    }

    fn base_scenario() -> Scenario {
        let i2 = DMatrix::identity(2, 2);
        Scenario {
            contribution: ContributionMatrix::identity(2),
            groups: [
                GroupParams::new(i2.clone(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))),
                GroupParams::new(i2.clone(), DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))),
            ],
            desirability: DVector::from_vec(vec![1.0, 0.75]),
            ground_truth: DVector::from_vec(vec![0.5, 0.5]),
            allow_zero_desirability: false,
        }
    }

    #[test]
    fn identity_costs_validate() {
        assert!(validate_scenario(&base_scenario()).is_valid());
    }

    #[test]
    fn negative_eigenvalue_reported() {
        let mut s = base_scenario();
        s.groups[0].cost = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let r = validate_scenario(&s);
        assert!(r.has(ViolationKind::CostNotPositiveDefinite));
        assert!(r.to_string().contains("not PD"));
    }

    #[test]
    fn half_projector_not_idempotent() {
        let mut s = base_scenario();
        s.groups[0].projector = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
        let r = validate_scenario(&s);
        assert!(r.has(ViolationKind::ProjectorNotIdempotent));
        assert!(r.to_string().contains("not idempotent"));
    }

    #[test]
    fn zero_desirability_needs_override() {
        let mut s = base_scenario();
        s.desirability[1] = 0.0;
        assert!(validate_scenario(&s).has(ViolationKind::DesirabilityNotPositive));
        s.allow_zero_desirability = true;
        assert!(validate_scenario(&s).is_valid());
    }

    #[test]
    fn dimension_mismatch_reported() {
        let mut s = base_scenario();
        s.ground_truth = DVector::zeros(3);
        assert!(validate_scenario(&s).has(ViolationKind::DimensionMismatch));
    }

    #[test]
    fn projector_one_dimensional_rows() {
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let p = projector_from_samples(&rows, 1).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((p.projector - expect).norm() < 1e-12);
        assert!(!p.reduced);
    }

    #[test]
    fn projector_full_span() {
        let rows = DMatrix::from_row_slice(
            5,
            2,
            &[1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.0],
        );
        let p = projector_from_samples(&rows, 2).unwrap();
        assert!((p.projector - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn projector_rank_reduced_and_flagged() {
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let p = projector_from_samples(&rows, 2).unwrap();
        assert_eq!(p.rank, 1);
        assert!(p.reduced);
    }

    #[test]
    fn policy_deployable_flag() {
        assert!(Policy::new(DVector::from_vec(vec![0.6, 0.8])).deployable);
        assert!(!Policy::new(DVector::from_vec(vec![0.6, 0.81])).deployable);
    }
}
