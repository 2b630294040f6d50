//! Seeded synthetic scenarios standing in for real tabular data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{self, CausalGraph, GroupParams, Sampler, Scenario};
use crate::rng;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostCase {
    /// A₁ = A₂ = I.
    Uniform,
    /// A₁ = I, A₂ = 2A₁.
    Scaled,
    /// Independent random positive definite matrices.
    Random,
}

impl CostCase {
    pub fn label(self) -> &'static str {
        match self {
            CostCase::Uniform => "uniform",
            CostCase::Scaled => "scaled",
            CostCase::Random => "random",
        }
    }
}

impl std::str::FromStr for CostCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CostCase::Uniform),
            "scaled" => Ok(CostCase::Scaled),
            "random" => Ok(CostCase::Random),
            other => Err(Error::Input(format!("unknown cost case '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub d: usize,
    pub n_per_group: usize,
    pub seed: u64,
    pub cost_case: CostCase,
    /// Probability of each forward edge i → j (i < j).
    pub edge_prob: f64,
    pub max_weight: f64,
    /// Dimension of each group's sampling subspace (heterogeneity knob).
    pub subspace_dims: [usize; 2],
    /// SVD projector rank.
    pub k: usize,
    pub desirable: Vec<usize>,
    pub epsilon: f64,
}

impl SynthOptions {
    pub fn new(d: usize, seed: u64) -> Self {
        SynthOptions {
            d,
            n_per_group: 200,
            seed,
            cost_case: CostCase::Uniform,
            edge_prob: 0.3,
            max_weight: 0.5,
            subspace_dims: [d, d],
            k: d.min(5),
            desirable: (0..d).collect(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub scenario: Scenario,
    pub graph: CausalGraph,
    /// Sample rows per group.
    pub samples: [DMatrix<f64>; 2],
}

fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn random_pd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let b = gaussian(rng, d, d);
    &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5
}

/// Diagonal desirability: 1 on `desirable`, `epsilon` elsewhere.
pub fn desirability_vector(d: usize, desirable: &[usize], epsilon: f64) -> DVector<f64> {
    DVector::from_fn(d, |i, _| if desirable.contains(&i) { 1.0 } else { epsilon })
}

pub fn synth_generate(o: &SynthOptions) -> Result<Synthetic> {
    let d = o.d;
    if d == 0 || o.subspace_dims.iter().any(|&r| r == 0 || r > d) || o.desirable.iter().any(|&i| i >= d) {
        return Err(Error::Input("synthetic options out of range".into()));
    }
    let mut g_rng = rng::stream(o.seed, &[0x5359, 1]);
    let mut triples = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if g_rng.random::<f64>() < o.edge_prob {
                triples.push((i, j, o.max_weight * g_rng.random::<f64>()));
            }
        }
    }
    let graph = CausalGraph::from_triples(d, &triples)?;
    let contribution = model::build_contribution_matrix(&graph)?;

    let mut c_rng = rng::stream(o.seed, &[0x5359, 2]);
    let costs = match o.cost_case {
        CostCase::Uniform => [DMatrix::identity(d, d), DMatrix::identity(d, d)],
        CostCase::Scaled => [DMatrix::identity(d, d), DMatrix::identity(d, d) * 2.0],
        CostCase::Random => [random_pd(&mut c_rng, d), random_pd(&mut c_rng, d)],
    };

    let mut samples: [DMatrix<f64>; 2] = [DMatrix::zeros(0, d), DMatrix::zeros(0, d)];
    let mut groups = Vec::with_capacity(2);
    for (g, cost) in costs.into_iter().enumerate() {
        let mut s_rng = rng::stream(o.seed, &[0x5359, 3, g as u64]);
        let sampler = Sampler {
            mean: DVector::zeros(d),
            factor: gaussian(&mut s_rng, d, o.subspace_dims[g]),
        };
        let mut rows = DMatrix::zeros(o.n_per_group, d);
        for i in 0..o.n_per_group {
            rows.set_row(i, &sampler.draw(&mut s_rng).transpose());
        }
        let proj = model::projector_from_samples(&rows, o.k)?;
        groups.push(GroupParams::new(cost, proj.projector).with_sampler(sampler));
        samples[g] = rows;
    }

    let mut w_rng = rng::stream(o.seed, &[0x5359, 4]);
    let dir = gaussian(&mut w_rng, d, 1).column(0).into_owned();
    let radius = 0.3 + 0.7 * w_rng.random::<f64>();
    let ground_truth = dir.normalize() * radius;

    let g2 = groups.pop().expect("two groups");
    let g1 = groups.pop().expect("two groups");
    Ok(Synthetic {
        scenario: Scenario {
            contribution,
            groups: [g1, g2],
            desirability: desirability_vector(d, &o.desirable, o.epsilon),
            ground_truth,
            allow_zero_desirability: o.epsilon == 0.0,
        },
        graph,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_determinism() {
        let o = SynthOptions::new(5, 11);
        assert_eq!(synth_generate(&o).unwrap(), synth_generate(&o).unwrap());
        let other = synth_generate(&SynthOptions::new(5, 12)).unwrap();
        assert_ne!(synth_generate(&o).unwrap().scenario, other.scenario);
    }

    #[test]
    fn scaled_costs() {
        let mut o = SynthOptions::new(4, 3);
        o.cost_case = CostCase::Scaled;
        let s = synth_generate(&o).unwrap().scenario;
        assert_eq!(s.groups[1].cost, &s.groups[0].cost * 2.0);
    }

    #[test]
    fn generated_scenarios_validate() {
        for case in [CostCase::Uniform, CostCase::Scaled, CostCase::Random] {
            let mut o = SynthOptions::new(6, 5);
            o.cost_case = case;
            o.subspace_dims = [6, 3];
            let syn = synth_generate(&o).unwrap();
            let rep = model::validate_scenario(&syn.scenario);
            assert!(rep.is_valid(), "{case:?}: {rep:?}");
            let p = &syn.scenario.groups[1].projector;
            assert!((p * p - p).norm() < 1e-8);
            assert!(syn.scenario.ground_truth.norm() <= 1.0);
        }
    }
}
