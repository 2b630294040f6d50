//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Threshold below which singular values / eigenvalues count as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Absolute Frobenius tolerance for matrix identities.
pub const MATRIX_TOL: f64 = 1e-8;

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    // the matrices here are tiny; sequential kernels keep results schedule-independent
    static SEQ: std::sync::Once = std::sync::Once::new();
    SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
/// Decompositions go through faer; nalgebra's SVD loses accuracy on
/// rank-deficient inputs.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = to_faer(&sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("symmetric eigendecomposition converges");
    let s = eig.S().column_vector();
    let vals = DVector::from_fn(s.nrows(), |i, _| s[i]);
    (vals, from_faer(eig.U()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).0[0]
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let (vals, _) = sym_eigen(m);
    vals[vals.len() - 1]
}

/// Thin SVD: (U, σ descending, V).
fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = to_faer(m).thin_svd().expect("SVD converges");
    let s = svd.S().column_vector();
    let sv = (0..s.nrows()).map(|i| s[i]).collect();
    (from_faer(svd.U()), sv, from_faer(svd.V()))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    to_faer(m).singular_values().expect("SVD converges")
}

/// σ_d for a square matrix: the smallest of its d singular values.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Right singular vectors sorted by descending singular value, as columns.
pub fn right_singular_vectors(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (_, s, v) = thin_svd(m);
    (s, v)
}

/// Moore-Penrose pseudoinverse; singular values below `RANK_TOL * σ_max` are dropped.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let (u, s, v) = thin_svd(m);
    let cutoff = RANK_TOL * s[0];
    let mut out = DMatrix::zeros(c, r);
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff && sk > 0.0 {
            out += (v.column(k) / sk) * u.column(k).transpose();
        }
    }
    out
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= tol
}

/// Symmetric with smallest eigenvalue above `RANK_TOL`.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && is_symmetric(m, MATRIX_TOL) && min_eigenvalue(m) > RANK_TOL
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn dot_comp(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    compensated_sum(a.iter().zip(b.iter()).map(|(x, y)| x * y))
}

pub fn norm_comp(a: &DVector<f64>) -> f64 {
    compensated_sum(a.iter().map(|x| x * x)).sqrt()
}

/// Quadratic form vᵀ Q v with compensated accumulation.
pub fn quad_form(q: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let qv = q * v;
    dot_comp(v, &qv)
}

/// Solve `a x = b` for a symmetric positive-definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
