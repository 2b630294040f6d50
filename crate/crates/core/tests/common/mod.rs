//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fairstack::experiments::{synth_generate, CostCase, SynthOptions};
use fairstack::fairness::FairnessSpec;
use fairstack::linalg;
use fairstack::model::Scenario;
use fairstack::objectives::SwCoefficient;
use fairstack::solvers::Targets;

pub fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    fairstack::rng::stream(seed, &[0x7e57, tag])
}

pub fn gaussian_vec(r: &mut impl Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| r.sample(StandardNormal))
}

pub fn gaussian_mat(r: &mut impl Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| r.sample(StandardNormal))
}

/// Uniform in the ball of the given radius.
pub fn in_ball(r: &mut impl Rng, d: usize, radius: f64) -> DVector<f64> {
    let z = gaussian_vec(r, d);
    let rad = radius * r.random::<f64>().powf(1.0 / d as f64);
    z.normalize() * rad
}

/// Random direction scaled to a norm drawn from [lo, hi].
pub fn with_norm(r: &mut impl Rng, d: usize, lo: f64, hi: f64) -> DVector<f64> {
    let n = lo + (hi - lo) * r.random::<f64>();
    gaussian_vec(r, d).normalize() * n
}

/// Symmetric positive definite with eigenvalues in [lo, hi].
pub fn random_spd(r: &mut impl Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let qr = gaussian_mat(r, d, d).qr();
    let u = qr.q();
    let eig = DVector::from_fn(d, |_, _| lo + (hi - lo) * r.random::<f64>());
    let q = &u * DMatrix::from_diagonal(&eig) * u.transpose();
    (&q + q.transpose()) * 0.5
}

pub fn uniform(r: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

/// Scenario from the synthetic generator with randomized knobs.
pub fn random_scenario(r: &mut impl Rng, d: usize) -> Scenario {
    let mut o = SynthOptions::new(d, r.random());
    o.cost_case = [CostCase::Uniform, CostCase::Scaled, CostCase::Random][r.random_range(0..3)];
    o.subspace_dims = [r.random_range(1..=d), r.random_range(1..=d)];
    o.k = r.random_range(1..=d);
    o.n_per_group = 3 * d + 5;
    let k = r.random_range(1..=d);
    o.desirable = rand::seq::index::sample(r, d, k).into_vec();
    synth_generate(&o).expect("synthetic scenario").scenario
}

pub fn targets(r: &mut impl Rng, d: usize, w_norm: (f64, f64), c_norm: (f64, f64)) -> Targets {
    Targets::new(
        with_norm(r, d, w_norm.0, w_norm.1),
        SwCoefficient::new(with_norm(r, d, c_norm.0, c_norm.1)),
    )
}

/// ℓ2 spec with Q = MᵀM ≻ 0 and β ≤ λ_d(Q) (ellipsoid inside the ball).
pub fn internal_l2(r: &mut impl Rng, d: usize) -> FairnessSpec {
    let q = random_spd(r, d, 0.2, 3.0);
    let m = q.clone().cholesky().expect("spd").l().transpose();
    let lmin = linalg::min_eigenvalue(&(m.transpose() * &m));
    let beta = lmin * uniform(r, 0.01, 1.0);
    FairnessSpec::l2(m, beta).expect("spec")
}

/// d = 2 asymmetric spec in class 𝓕: Q = M_privᵀM_priv with β ≤ λ_d(Q).
pub fn class_f_asym(r: &mut impl Rng) -> FairnessSpec {
    loop {
        let q = random_spd(r, 2, 0.3, 2.0);
        let m_priv = q.cholesky().expect("spd").l().transpose();
        let m_other = gaussian_mat(r, 2, 2) * uniform(r, 0.05, 0.5);
        let lmin = linalg::min_eigenvalue(&(m_priv.transpose() * &m_priv));
        let beta = lmin * uniform(r, 0.02, 0.9);
        let spec = FairnessSpec::asym(m_priv, m_other, beta).expect("spec");
        if fairstack::fairness::check_class_f(&spec).core.is_some() {
            return spec;
        }
    }
}

/// d = 2 custom quadratic-minus-f spec with f = a·|w₁| + b·|w₂|, L = a + b.
pub fn class_f_custom(r: &mut impl Rng) -> FairnessSpec {
    let q = random_spd(r, 2, 0.3, 2.0);
    let lmin = linalg::min_eigenvalue(&q);
    let a = uniform(r, 0.0, 0.2);
    let b = uniform(r, 0.0, 0.2);
    let beta = lmin * uniform(r, 0.02, 0.9);
    let f = fairstack::fairness::expr::Expr::parse(&format!("{a:.17e} * abs(w1) + {b:.17e} * abs(w2)")).expect("expr");
    FairnessSpec::custom(q, f, a + b, beta).expect("spec")
}

/// Dense grid maximum of ⟨c, w⟩ over the boundary of {wᵀQw ≤ β} in 2d.
pub fn ellipse_grid_max(q: &DMatrix<f64>, beta: f64, c: &DVector<f64>, n: usize) -> f64 {
    // w(θ) = √β L⁻ᵀ u(θ) where Q = L Lᵀ
    let l = q.clone().cholesky().expect("spd").l();
    let linv_t = l.try_inverse().expect("invertible").transpose();
    let g = linv_t.transpose() * c * beta.sqrt();
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        let t = std::f64::consts::TAU * i as f64 / n as f64;
        best = best.max(g[0] * t.cos() + g[1] * t.sin());
    }
    best
}

/// √(cᵀQ⁻¹c) by a Cholesky solve.
pub fn dual_norm(q: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
    let ch = q.clone().cholesky().expect("spd");
    c.dot(&ch.solve(c)).sqrt()
}
