//! Hoffman constant of {x : A x ≤ b} in the Euclidean norm.
//!
//! H = max over row sets J with A_J x < 0 solvable of 1 / min{‖A_Jᵀv‖ : v ≥ 0, ‖v‖ = 1}.
//! The inner minimum is attained at a strictly positive eigenvector of
//! A_K A_Kᵀ for some linearly independent K ⊆ J, so it suffices to enumerate
//! independent row sets and their positive eigenvectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Maximum number of row subsets considered by the exact enumeration.
pub const HOFFMAN_BUDGET: u128 = 1_000_000;
const LOWER_BOUND_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoffmanEstimate {
    pub value: f64,
    /// False when the enumeration budget ran out and `value` is a sampled lower bound.
    pub certified: bool,
}

struct Search<'a> {
    rows: &'a [DVector<f64>],
    d: usize,
    best: f64,
}

impl Search<'_> {
    /// Extend `chosen` (whose rows are independent, with orthonormal basis `basis`)
    /// by rows after `next`.
    fn dfs(&mut self, chosen: &mut Vec<usize>, basis: &[DVector<f64>], next: usize) {
        for i in next..self.rows.len() {
            let r = &self.rows[i];
            let mut resid = r.clone();
            for b in basis {
                let c = b.dot(&resid);
                resid -= b * c;
            }
            let rn = resid.norm();
            if rn <= 1e-10 * r.norm() {
                continue;
            }
            chosen.push(i);
            self.evaluate(chosen);
            if chosen.len() < self.d {
                let mut nb = basis.to_vec();
                nb.push(resid / rn);
                self.dfs(chosen, &nb, i + 1);
            }
            chosen.pop();
        }
    }

    fn evaluate(&mut self, k: &[usize]) {
        let n = k.len();
        let g = DMatrix::from_fn(n, n, |a, b| self.rows[k[a]].dot(&self.rows[k[b]]));
        let (vals, vecs) = linalg::sym_eigen(&g);
        let scale = vals[n - 1].abs().max(f64::MIN_POSITIVE);
        for j in 0..n {
            let lam = vals[j];
            if lam <= 1e-14 * scale {
                continue;
            }
            let mut cands = vec![vecs.column(j).into_owned()];
            // repeated eigenvalue: a positive member of the eigenspace may not be a basis vector
            let same: Vec<usize> = (0..n).filter(|&m| (vals[m] - lam).abs() <= 1e-10 * scale).collect();
            if same.len() > 1 {
                let ones = DVector::from_element(n, 1.0);
                let mut p = DVector::zeros(n);
                for &m in &same {
                    let col = vecs.column(m);
                    p += col * col.dot(&ones);
                }
                cands.push(p);
            }
            for v in cands {
                let vmax = v.amax();
                if vmax == 0.0 {
                    continue;
                }
                let s = if v.sum() < 0.0 { -1.0 } else { 1.0 };
                if v.iter().all(|&x| s * x > 1e-12 * vmax) {
                    self.best = self.best.max(1.0 / lam.sqrt());
                }
            }
        }
    }
}

fn nonzero_rows(rows: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..rows.nrows())
        .map(|i| rows.row(i).transpose())
        .filter(|r: &DVector<f64>| r.norm() > 0.0)
        .collect()
}

/// Number of row subsets of size 1..=d out of k, saturating.
pub fn subset_count(k: usize, d: usize) -> u128 {
    let mut total: u128 = 0;
    let mut c: u128 = 1;
    for j in 1..=d.min(k) {
        c = c.saturating_mul((k - j + 1) as u128) / j as u128;
        total = total.saturating_add(c);
    }
    total
}

/// Exact Hoffman constant; errors when the subset count exceeds the budget.
pub fn hoffman_constant(rows: &DMatrix<f64>) -> Result<f64> {
    let list = nonzero_rows(rows);
    let subsets = subset_count(list.len(), rows.ncols());
    if subsets > HOFFMAN_BUDGET {
        return Err(Error::HoffmanBudget {
            subsets,
            budget: HOFFMAN_BUDGET,
            lower_bound: sampled_lower_bound(rows, LOWER_BOUND_SAMPLES, 0x40ff),
        });
    }
    let mut s = Search {
        rows: &list,
        d: rows.ncols(),
        best: 0.0,
    };
    s.dfs(&mut Vec::new(), &[], 0);
    Ok(s.best)
}

/// Exact value when affordable, otherwise a flagged sampled lower bound.
pub fn hoffman_estimate(rows: &DMatrix<f64>) -> HoffmanEstimate {
    match hoffman_constant(rows) {
        Ok(value) => HoffmanEstimate { value, certified: true },
        Err(Error::HoffmanBudget { lower_bound, .. }) => HoffmanEstimate {
            value: lower_bound,
            certified: false,
        },
        Err(_) => HoffmanEstimate {
            value: f64::NAN,
            certified: false,
        },
    }
}

/// Max of 1/√λ over randomly drawn independent row subsets. Every such subset
/// is admissible, so this never exceeds the exact constant.
pub fn sampled_lower_bound(rows: &DMatrix<f64>, samples: usize, seed: u64) -> f64 {
    let list = nonzero_rows(rows);
    let d = rows.ncols();
    let mut s = Search {
        rows: &list,
        d,
        best: 0.0,
    };
    if list.is_empty() {
        return 0.0;
    }
    for i in 0..samples {
        let mut rng = crate::rng::stream(seed, &[0x40f, i as u64]);
        let size = rng.random_range(1..=d.min(list.len()));
        let mut k = rand::seq::index::sample(&mut rng, list.len(), size).into_vec();
        k.sort_unstable();
        let g = DMatrix::from_fn(size, size, |a, b| list[k[a]].dot(&list[k[b]]));
        let (vals, _) = linalg::sym_eigen(&g);
        if vals[0] > 1e-10 * vals[size - 1] {
            s.evaluate(&k);
        }
    }
    s.best
}
