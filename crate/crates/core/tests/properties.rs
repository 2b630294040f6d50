//! Property tests over randomly generated instances.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use fairstack::agent;
use fairstack::bounds;
use fairstack::experiments::{self, SweepMeta, SweepOptions};
use fairstack::fairness::{self, FairnessKind, FairnessSpec};
use fairstack::linalg;
use fairstack::model::{self, CausalGraph};
use fairstack::objectives::{self, Objective, SwCoefficient};
use fairstack::solvers::{self, project, Targets};

use common::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn forward_edges() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (2usize..8).prop_flat_map(|d| {
        let edge = (0..d, 0..d, 0.01f64..1.0).prop_filter_map("forward edges", |(a, b, w)| {
            (a < b).then_some((a, b, w))
        });
        (Just(d), proptest::collection::vec(edge, 0..12))
    })
}

fn dedup(mut t: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    t.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    t
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn contribution_matrix_is_unit_triangular((d, edges) in forward_edges()) {
        let g = CausalGraph::from_triples(d, &dedup(edges)).unwrap();
        let c = model::build_contribution_matrix(&g).unwrap();
        let m = c.matrix();
        for i in 0..d {
            prop_assert_eq!(m[(i, i)], 1.0);
            // edges run a → b with a < b and land in C[(b, a)]: the upper part is empty
            for j in 0..i {
                prop_assert!(m[(i, j)] >= 0.0);
                prop_assert_eq!(m[(j, i)], 0.0);
            }
        }
        prop_assert!(m.clone().try_inverse().is_some());
    }

    #[test]
    fn relabeling_conjugates_contribution((d, edges) in forward_edges(), seed in any::<u64>()) {
        let g = CausalGraph::from_triples(d, &dedup(edges)).unwrap();
        let mut r = rng(seed, 1);
        let perm = rand::seq::index::sample(&mut r, d, d).into_vec();
        let c = model::build_contribution_matrix(&g).unwrap();
        let cp = model::build_contribution_matrix(&g.relabeled(&perm).unwrap()).unwrap();
        for i in 0..d {
            for j in 0..d {
                prop_assert!((cp.matrix()[(perm[i], perm[j])] - c.matrix()[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projector_is_symmetric_idempotent(seed in any::<u64>(), d in 2usize..7, n in 1usize..12) {
        let mut r = rng(seed, 2);
        let rows = gaussian_mat(&mut r, n, d);
        let k = r.random_range(1..=d);
        let est = model::projector_from_samples(&rows, k).unwrap();
        let p = &est.projector;
        prop_assert!((p * p - p).amax() < 1e-10);
        prop_assert!((p - p.transpose()).amax() < 1e-12);
        prop_assert_eq!(est.rank, k.min(n.min(d)));
        if k >= n.min(d) {
            // full row space: every sample row is fixed
            for i in 0..n {
                let x = rows.row(i).transpose();
                prop_assert!((p * &x - &x).amax() < 1e-9 * (1.0 + x.norm()));
            }
        }
    }

    #[test]
    fn erm_matches_rowspace_projection(seed in any::<u64>(), d in 2usize..7) {
        let mut r = rng(seed, 3);
        let s = random_scenario(&mut r, d);
        for g in 0..2 {
            let sampler = s.group(g).sampler.clone().unwrap();
            let w = in_ball(&mut r, d, 1.0);
            let peers = agent::sample_peers(&sampler, &w, 2 * d + 1, r.random(), 0.0).unwrap();
            let rowspace = model::projector_from_samples(peers.features(), d).unwrap().projector;
            let erm = agent::peer_estimate_erm(&peers);
            let closed = agent::peer_estimate_closed_form(&rowspace, &w).unwrap();
            prop_assert!((erm - closed).amax() < 1e-8);
        }
    }

    #[test]
    fn best_response_is_stationary_and_linear(seed in any::<u64>(), d in 2usize..7, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut r = rng(seed, 4);
        let s = random_scenario(&mut r, d);
        let (u, v) = (in_ball(&mut r, d, 1.0), in_ball(&mut r, d, 1.0));
        for g in 0..2 {
            let grp = s.group(g);
            let br = |w: &DVector<f64>| agent::best_response_effort(w, grp, &s.contribution).unwrap();
            let xu = br(&u);
            prop_assert!(agent::utility_gradient(&xu, grp, &s.contribution, &u).amax() < 1e-10);
            let mix = br(&(&u * a + &v * b));
            prop_assert!((mix - (xu * a + br(&v) * b)).amax() < 1e-10);
        }
    }

    #[test]
    fn best_response_maximizes_utility(seed in any::<u64>(), d in 2usize..6) {
        let mut r = rng(seed, 5);
        let s = random_scenario(&mut r, d);
        let w = in_ball(&mut r, d, 1.0);
        let x = gaussian_vec(&mut r, d);
        for g in 0..2 {
            let grp = s.group(g);
            let xe = agent::best_response_effort(&w, grp, &s.contribution).unwrap();
            let best = agent::agent_utility(&x, &xe, grp, &s.contribution, &w);
            for _ in 0..20 {
                let pert = &xe + gaussian_vec(&mut r, d) * 0.1;
                prop_assert!(agent::agent_utility(&x, &pert, grp, &s.contribution, &w) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn objectives_basic_shape(seed in any::<u64>(), d in 2usize..7, a in -3.0f64..3.0) {
        let mut r = rng(seed, 6);
        let s = random_scenario(&mut r, d);
        let coeff = objectives::sw_coefficient(&s).unwrap();
        let (u, v) = (in_ball(&mut r, d, 1.0), in_ball(&mut r, d, 1.0));
        prop_assert!(objectives::accuracy_value(&u, &s.ground_truth) <= 0.0);
        prop_assert_eq!(objectives::accuracy_value(&s.ground_truth, &s.ground_truth), 0.0);
        let lhs = objectives::sw_value(&(&u * a + &v), &coeff);
        let rhs = a * objectives::sw_value(&u, &coeff) + objectives::sw_value(&v, &coeff);
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn delta_matrix_form_matches_best_responses(seed in any::<u64>(), d in 2usize..7) {
        let mut r = rng(seed, 7);
        let s = random_scenario(&mut r, d);
        let w = in_ball(&mut r, d, 1.0);
        for kind in [FairnessKind::L1, FairnessKind::L2, FairnessKind::Asym] {
            for privileged in [1, 2] {
                let spec = FairnessSpec::from_scenario(&s, kind, 0.0, privileged).unwrap();
                let direct = fairness::delta_from_best_responses(&s, kind, &w, privileged).unwrap();
                prop_assert!((spec.delta(&w) - direct).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn delta_scaling_and_beta_monotone(seed in any::<u64>(), d in 2usize..7, t in -3.0f64..3.0, b1 in 0.0f64..2.0, b2 in 0.0f64..2.0) {
        let mut r = rng(seed, 8);
        let m = gaussian_mat(&mut r, d, d);
        let w = in_ball(&mut r, d, 1.0);
        let tw = &w * t;
        let l1 = fairness::delta_l1(&w, &m);
        let l2 = fairness::delta_l2(&w, &m);
        prop_assert!((fairness::delta_l1(&tw, &m) - t.abs() * l1).abs() < 1e-12 * (1.0 + l1));
        prop_assert!((fairness::delta_l2(&tw, &m) - t * t * l2).abs() < 1e-12 * (1.0 + l2));
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        for spec in [FairnessSpec::l1(m.clone(), lo).unwrap(), FairnessSpec::l2(m.clone(), lo).unwrap()] {
            if fairness::is_beta_fair(&w, &spec) {
                prop_assert!(fairness::is_beta_fair(&w, &spec.with_beta(hi).unwrap()));
            }
        }
    }

    #[test]
    fn class_f_sets_are_nested(seed in any::<u64>(), custom in any::<bool>()) {
        let mut r = rng(seed, 9);
        let spec = if custom { class_f_custom(&mut r) } else { class_f_asym(&mut r) };
        let core = fairness::check_class_f(&spec).core.unwrap();
        for _ in 0..200 {
            let w = in_ball(&mut r, 2, 1.0);
            let q = linalg::quad_form(&core.q, &w);
            if q <= core.beta {
                prop_assert!(spec.delta(&w) <= core.beta + 1e-12);
            }
            if spec.delta(&w) <= core.beta {
                prop_assert!(q <= core.envelope_level() + 1e-12);
                prop_assert!(w.norm() <= core.diameter + 1e-9);
            }
        }
    }
}

fn convex_instance(r: &mut impl Rng, d: usize, l1: bool) -> (FairnessSpec, Targets) {
    let m = gaussian_mat(r, d, d);
    let beta = uniform(r, 0.0, 1.5);
    let spec = if l1 {
        FairnessSpec::l1(m, beta).unwrap()
    } else {
        FairnessSpec::l2(m, beta).unwrap()
    };
    (spec, targets(r, d, (0.0, 1.5), (0.0, 2.0)))
}

/// Best objective over random feasible points, a lower bound on the optimum.
fn sampled_best(obj: Objective, spec: &FairnessSpec, t: &Targets, r: &mut impl Rng, n: usize) -> f64 {
    let d = spec.dim();
    let mut best = t.value(obj, &DVector::zeros(d));
    for _ in 0..n {
        let w = in_ball(r, d, 1.0);
        // shrink toward the origin until fair (Δ is homogeneous)
        let dl = spec.delta(&w);
        let w = if dl <= spec.beta {
            w
        } else {
            let s = match spec.kind() {
                FairnessKind::L1 => spec.beta / dl,
                _ => (spec.beta / dl).sqrt(),
            };
            w * s
        };
        best = best.max(t.value(obj, &w));
    }
    best
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn constrained_solutions_are_feasible_and_optimal(seed in any::<u64>(), d in 2usize..5, l1 in any::<bool>(), acc in any::<bool>()) {
        let mut r = rng(seed, 10);
        let (spec, t) = convex_instance(&mut r, d, l1);
        let obj = if acc { Objective::Accuracy } else { Objective::SocialWelfare };
        let res = solvers::solve_constrained(obj, &spec, &t).unwrap();
        prop_assert!(res.is_feasible());
        prop_assert!(res.converged);
        let unc = solvers::solve_unconstrained(obj, &t);
        prop_assert!(res.objective_value <= unc.objective_value + 1e-12);
        prop_assert!(sampled_best(obj, &spec, &t, &mut r, 500) <= res.objective_value + 1e-9);
    }

    #[test]
    fn constrained_value_is_monotone_in_beta(seed in any::<u64>(), d in 2usize..5, l1 in any::<bool>(), acc in any::<bool>(), b1 in 0.0f64..1.5, b2 in 0.0f64..1.5) {
        let mut r = rng(seed, 11);
        let (spec, t) = convex_instance(&mut r, d, l1);
        let obj = if acc { Objective::Accuracy } else { Objective::SocialWelfare };
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let v_lo = solvers::solve_constrained(obj, &spec.with_beta(lo).unwrap(), &t).unwrap().objective_value;
        let v_hi = solvers::solve_constrained(obj, &spec.with_beta(hi).unwrap(), &t).unwrap().objective_value;
        prop_assert!(v_lo <= v_hi + 1e-9);
        // recovery: once the unconstrained optimum is fair, nothing is lost
        let unc = solvers::solve_unconstrained(obj, &t);
        let thr = spec.delta(unc.weights());
        let at = solvers::solve_constrained(obj, &spec.with_beta(thr).unwrap(), &t).unwrap();
        prop_assert!((unc.objective_value - at.objective_value).abs() < 1e-9);
    }

    #[test]
    fn projections_satisfy_variational_inequality(seed in any::<u64>(), d in 2usize..5) {
        let mut r = rng(seed, 12);
        let m = gaussian_mat(&mut r, d, d);
        let beta = uniform(&mut r, 0.05, 1.0);
        let v = gaussian_vec(&mut r, d) * 2.0;
        let poly = fairness::polyhedron_rows(&m, beta).unwrap();
        let pp = project::project_onto_polyhedron(&v, &poly.rows, &poly.rhs).point;
        let q = m.transpose() * &m;
        let pe = project::project_onto_ellipsoid(&v, &q, beta).unwrap();
        prop_assert!(fairness::delta_l1(&pp, &m) <= beta + 1e-9);
        prop_assert!(linalg::quad_form(&q, &pe) <= beta * (1.0 + 1e-9) + 1e-12);
        for _ in 0..200 {
            let z = gaussian_vec(&mut r, d);
            let zp = {
                let dl = fairness::delta_l1(&z, &m);
                if dl > beta { z.clone() * (beta / dl) } else { z.clone() }
            };
            prop_assert!((&v - &pp).dot(&(&zp - &pp)) <= 1e-8);
            let ze = {
                let dl = linalg::quad_form(&q, &z);
                if dl > beta { z.clone() * (beta / dl).sqrt() } else { z.clone() }
            };
            prop_assert!((&v - &pe).dot(&(&ze - &pe)) <= 1e-8);
        }
    }

    #[test]
    fn sw_closed_form_matches_numeric(seed in any::<u64>(), d in 2usize..6, l1 in any::<bool>()) {
        let mut r = rng(seed, 13);
        let (spec, t) = convex_instance(&mut r, d, l1);
        let closed = solvers::solve_constrained(Objective::SocialWelfare, &spec, &t).unwrap();
        let numeric = solvers::solve_sw_numeric(&spec, &t.coeff).unwrap();
        prop_assert!((closed.objective_value - numeric.objective_value).abs() < 1e-6);
    }

    #[test]
    fn internal_ellipsoid_sw_bound_is_equality(seed in any::<u64>(), d in 2usize..6) {
        let mut r = rng(seed, 14);
        let spec = internal_l2(&mut r, d);
        let t = targets(&mut r, d, (0.0, 1.0), (0.05, 3.0));
        let q = spec.quadratic().unwrap();
        let (_, sw_bound) = bounds::internal_ellipsoid_bounds(&q, spec.beta, &t.w_star, &t.coeff).unwrap();
        let unc = solvers::solve_unconstrained(Objective::SocialWelfare, &t).objective_value;
        let con = solvers::solve_constrained(Objective::SocialWelfare, &spec, &t).unwrap().objective_value;
        prop_assert!((unc - con - sw_bound).abs() < 1e-9);
    }

    #[test]
    fn hoffman_inequality_holds(seed in any::<u64>(), d in 2usize..4) {
        let mut r = rng(seed, 15);
        let m = gaussian_mat(&mut r, d, d);
        let beta = uniform(&mut r, 0.05, 1.0);
        let poly = fairness::polyhedron_rows(&m, beta).unwrap();
        let h = bounds::hoffman_constant(&poly.rows).unwrap();
        let sets: Vec<project::ConvexSet> = (0..poly.rows.nrows())
            .map(|i| project::ConvexSet::Halfspace { a: poly.rows.row(i).transpose(), b: poly.rhs[i] })
            .collect();
        for _ in 0..50 {
            let z = gaussian_vec(&mut r, d) * 2.0;
            let res = (&poly.rows * &z - &poly.rhs).map(|x| x.max(0.0)).norm();
            let p = project::project_intersection_dykstra(&z, &sets).unwrap().point;
            prop_assert!((&z - p).norm() <= h * res + 1e-8);
        }
    }

    #[test]
    fn hoffman_sampled_bound_is_below_exact(seed in any::<u64>(), d in 2usize..4) {
        let mut r = rng(seed, 16);
        let m = gaussian_mat(&mut r, d, d);
        let poly = fairness::polyhedron_rows(&m, 1.0).unwrap();
        let h = bounds::hoffman_constant(&poly.rows).unwrap();
        let lb = bounds::hoffman::sampled_lower_bound(&poly.rows, 200, seed);
        prop_assert!(lb <= h * (1.0 + 1e-12));
    }

    #[test]
    fn class_f_sandwich_and_tightness(seed in any::<u64>(), custom in any::<bool>(), acc in any::<bool>()) {
        let mut r = rng(seed, 17);
        let spec = if custom { class_f_custom(&mut r) } else { class_f_asym(&mut r) };
        let t = targets(&mut r, 2, (0.0, 1.5), (0.05, 2.0));
        let obj = if acc { Objective::Accuracy } else { Objective::SocialWelfare };
        let sw = solvers::solve_nonconvex_sandwich(obj, &spec, &t, 8, seed).unwrap();
        prop_assert!(sw.ordered());
        prop_assert!(sw.restricted.is_feasible() && sw.multistart.is_feasible());
        let v = bounds::restriction_tightness_check(&sw.core, &t.w_star, &t.coeff).unwrap();
        prop_assert!(v.holds(!t.coeff.is_zero()));
    }

    #[test]
    fn sweeps_are_monotone(seed in any::<u64>(), d in 2usize..5, l1 in any::<bool>(), acc in any::<bool>()) {
        let mut r = rng(seed, 18);
        let s = random_scenario(&mut r, d);
        let kind = if l1 { FairnessKind::L1 } else { FairnessKind::L2 };
        let spec = FairnessSpec::from_scenario(&s, kind, 0.0, 1).unwrap();
        let t = Targets::from_scenario(&s).unwrap();
        let obj = if acc { Objective::Accuracy } else { Objective::SocialWelfare };
        let grid = experiments::BetaGrid::new(1e-4, 2.0, 12, experiments::Spacing::Geometric).unwrap().values();
        let res = experiments::beta_sweep(&spec, &t, &grid, obj, &SweepOptions::default(), SweepMeta::default()).unwrap();
        prop_assert!(res.is_monotone());
    }
}

#[test]
fn monte_carlo_welfare_converges() {
    for i in 0..5u64 {
        let mut r = rng(19, i);
        let d = 2 + i as usize;
        let s = random_scenario(&mut r, d);
        let coeff = objectives::sw_coefficient(&s).unwrap();
        let w = in_ball(&mut r, d, 1.0);
        let mc = objectives::monte_carlo_sw(&s, &w, 100_000, i).unwrap();
        let baseline: f64 = (0..2)
            .map(|g| s.group(g).sampler.as_ref().unwrap().mean.dot(&s.ground_truth))
            .sum();
        let exact = baseline + objectives::sw_value(&w, &coeff);
        assert!(
            (mc.mean - exact).abs() <= 5.0 * mc.std_error + 1e-12,
            "mc {} vs {exact} (se {})",
            mc.mean,
            mc.std_error
        );
    }
}

#[test]
fn dykstra_agrees_with_active_set_projection() {
    for i in 0..50u64 {
        let mut r = rng(20, i);
        let d = 2 + (i as usize % 3);
        let m = gaussian_mat(&mut r, d, d);
        let poly = fairness::polyhedron_rows(&m, uniform(&mut r, 0.1, 1.0)).unwrap();
        let v = gaussian_vec(&mut r, d) * 2.0;
        let sets: Vec<project::ConvexSet> = (0..poly.rows.nrows())
            .map(|k| project::ConvexSet::Halfspace {
                a: poly.rows.row(k).transpose(),
                b: poly.rhs[k],
            })
            .collect();
        let a = project::project_onto_polyhedron(&v, &poly.rows, &poly.rhs).point;
        let b = project::project_intersection_dykstra(&v, &sets).unwrap().point;
        assert!((a - b).amax() < 1e-7, "instance {i}");
    }
}

#[test]
fn zero_coefficient_gives_zero_policy() {
    let m = DMatrix::<f64>::identity(3, 3);
    let spec = FairnessSpec::l2(m, 0.3).unwrap();
    let t = Targets::new(DVector::zeros(3), SwCoefficient::new(DVector::zeros(3)));
    let res = solvers::solve_constrained(Objective::SocialWelfare, &spec, &t).unwrap();
    assert_eq!(res.objective_value, 0.0);
}
