//! Euclidean projections and linear maximization over the feasible regions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub const NEWTON_MAX_ITER: usize = 200;
pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Ellipsoid {wᵀQw ≤ β} in Q's eigenbasis.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub beta: f64,
    vals: DVector<f64>,
    vecs: DMatrix<f64>,
}

impl Ellipsoid {
    /// Q must be symmetric PSD; zero eigen-directions are unbounded (a cylinder).
    pub fn new(q: &DMatrix<f64>, beta: f64) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::Input("Q must be square".into()));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::Input(format!("beta must be finite and >= 0, got {beta}")));
        }
        let (vals, vecs) = linalg::sym_eigen(q);
        let scale = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
        if vals[0] < -1e-10 * scale {
            return Err(Error::Input("Q must be positive semidefinite".into()));
        }
        let vals = vals.map(|x| x.max(0.0));
        Ok(Ellipsoid { beta, vals, vecs })
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let y = self.vecs.transpose() * w;
        linalg::compensated_sum(y.iter().zip(self.vals.iter()).map(|(a, l)| l * a * a))
    }

    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        self.value(w) <= self.beta + tol
    }

    /// Nearest point of the ellipsoid to `v`.
    pub fn project(&self, v: &DVector<f64>) -> Result<Projection> {
        let y = self.vecs.transpose() * v;
        let d = y.len();
        let phi0 = linalg::compensated_sum((0..d).map(|i| self.vals[i] * y[i] * y[i]));
        if phi0 <= self.beta {
            return Ok(Projection {
                point: v.clone(),
                iterations: 0,
                converged: true,
            });
        }
        let lscale = self.vals.iter().fold(0.0f64, |a, &b| a.max(b));
        let zero_tol = 1e-14 * lscale;
        if self.beta == 0.0 {
            let z = DVector::from_fn(d, |i, _| if self.vals[i] > zero_tol { 0.0 } else { y[i] });
            return Ok(Projection {
                point: &self.vecs * z,
                iterations: 0,
                converged: true,
            });
        }
        // φ(λ) = Σ q_i y_i² / (1 + λ q_i)² − β is convex and decreasing; Newton
        // from λ = 0 increases monotonically to the root.
        let phi = |lam: f64| -> (f64, f64) {
            let mut f = Vec::with_capacity(d);
            let mut g = Vec::with_capacity(d);
            for i in 0..d {
                let q = self.vals[i];
                let den = 1.0 + lam * q;
                let t = q * y[i] * y[i] / (den * den);
                f.push(t);
                g.push(-2.0 * q * t / den);
            }
            (
                linalg::compensated_sum(f) - self.beta,
                linalg::compensated_sum(g),
            )
        };
        let mut lam = 0.0f64;
        let mut iters = 0;
        let mut converged = false;
        let mut resid = f64::INFINITY;
        while iters < NEWTON_MAX_ITER {
            iters += 1;
            let (f, g) = phi(lam);
            resid = f;
            if f.abs() <= 1e-15 * self.beta || g == 0.0 {
                converged = true;
                break;
            }
            let step = -f / g;
            let next = lam + step;
            if !(next > lam) || (next - lam) <= 1e-16 * next.abs() {
                // root bracketed at machine precision
                converged = f.abs() <= 1e-9 * self.beta.max(1e-300) || f <= 0.0;
                if f > 0.0 {
                    lam = next.max(lam);
                }
                break;
            }
            lam = next;
        }
        if !converged {
            return Err(Error::Numeric {
                msg: format!("ellipsoid projection did not converge in {NEWTON_MAX_ITER} Newton steps"),
                residual: resid,
            });
        }
        let z = DVector::from_fn(d, |i, _| y[i] / (1.0 + lam * self.vals[i]));
        let mut point = &self.vecs * z;
        // guard against last-bit overshoot
        let val = self.value(&point);
        if val > self.beta {
            point *= (self.beta / val).sqrt();
        }
        Ok(Projection {
            point,
            iterations: iters,
            converged: true,
        })
    }
}

/// argmin ‖v − w‖ s.t. wᵀQw ≤ β.
pub fn project_onto_ellipsoid(v: &DVector<f64>, q: &DMatrix<f64>, beta: f64) -> Result<DVector<f64>> {
    if q.nrows() != v.len() {
        return Err(Error::Input("dimension mismatch between Q and v".into()));
    }
    Ok(Ellipsoid::new(q, beta)?.project(v)?.point)
}

/// Projection onto {w : rows · w ≤ rhs} by the Goldfarb–Idnani dual active-set
/// method specialized to an identity Hessian. Finite and exact up to rounding.
pub fn project_onto_polyhedron(v: &DVector<f64>, rows: &DMatrix<f64>, rhs: &DVector<f64>) -> Projection {
    let m = rows.nrows();
    let d = v.len();
    let norms: Vec<f64> = (0..m).map(|i| rows.row(i).norm()).collect();
    let mut x = v.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let cap = 20 * m + 1000;
    let mut iters = 0usize;
    let violation = |x: &DVector<f64>, i: usize| -> f64 {
        let a = rows.row(i);
        (a * x)[0] - rhs[i]
    };
    loop {
        iters += 1;
        if iters > cap {
            return Projection {
                point: x,
                iterations: iters,
                converged: false,
            };
        }
        let tol = 1e-13 * (1.0 + x.norm());
        let mut p = None;
        let mut worst = tol;
        for i in 0..m {
            if norms[i] == 0.0 || active.contains(&i) {
                continue;
            }
            let s = violation(&x, i) / norms[i];
            if s > worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return Projection {
                point: x,
                iterations: iters,
                converged: true,
            };
        };
        // In G–I form the constraint is n_pᵀx ≥ c_p with n_p = −a_p.
        let np: DVector<f64> = -rows.row(p).transpose();
        let mut u_plus = u.clone();
        u_plus.push(0.0);
        loop {
            iters += 1;
            if iters > cap {
                return Projection {
                    point: x,
                    iterations: iters,
                    converged: false,
                };
            }
            let q = active.len();
            let (z, r) = if q == 0 {
                (np.clone(), DVector::zeros(0))
            } else {
                let n = DMatrix::from_fn(d, q, |i, j| -rows[(active[j], i)]);
                let ntn = n.transpose() * &n;
                let rhs_v = n.transpose() * &np;
                let r = match ntn.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs_v),
                    None => linalg::pinv(&ntn) * rhs_v,
                };
                (&np - &n * &r, r)
            };
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for j in 0..q {
                if r[j] > 0.0 {
                    let ratio = u_plus[j] / r[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(j);
                    }
                }
            }
            let znorm2 = z.norm_squared();
            let t2 = if znorm2 > 1e-24 * np.norm_squared() {
                let s_p = -violation(&x, p);
                (-s_p / z.dot(&np)).max(0.0)
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                // infeasible system; cannot happen when 0 is feasible
                return Projection {
                    point: x,
                    iterations: iters,
                    converged: false,
                };
            }
            for j in 0..q {
                u_plus[j] -= t * r[j];
            }
            u_plus[q] += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t2 <= t1 {
                active.push(p);
                u = u_plus;
                break;
            }
            let l = drop_at.expect("t1 finite implies a blocking constraint");
            active.remove(l);
            u_plus.remove(l);
        }
    }
}

/// Closed convex sets for Dykstra's algorithm.
#[derive(Debug, Clone)]
pub enum ConvexSet {
    Ball { radius: f64 },
    Ellipsoid(Ellipsoid),
    Halfspace { a: DVector<f64>, b: f64 },
}

impl ConvexSet {
    pub fn ellipsoid(q: &DMatrix<f64>, beta: f64) -> Result<Self> {
        Ok(ConvexSet::Ellipsoid(Ellipsoid::new(q, beta)?))
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(match self {
            ConvexSet::Ball { radius } => {
                let n = v.norm();
                if n <= *radius {
                    v.clone()
                } else {
                    v * (radius / n)
                }
            }
            ConvexSet::Ellipsoid(e) => e.project(v)?.point,
            ConvexSet::Halfspace { a, b } => {
                let s = a.dot(v) - b;
                let an = a.norm_squared();
                if s <= 0.0 || an == 0.0 {
                    v.clone()
                } else {
                    v - a * (s / an)
                }
            }
        })
    }

    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        match self {
            ConvexSet::Ball { radius } => (v.norm() - radius).max(0.0),
            ConvexSet::Ellipsoid(e) => (e.value(v) - e.beta).max(0.0),
            ConvexSet::Halfspace { a, b } => {
                let an = a.norm();
                if an == 0.0 {
                    0.0
                } else {
                    ((a.dot(v) - b) / an).max(0.0)
                }
            }
        }
    }
}

/// Dykstra's alternating projections. Stops when a full sweep moves the iterate
/// by less than 1e-10 while every set is satisfied to 1e-10, or after 10⁴ sweeps.
pub fn project_intersection_dykstra(v: &DVector<f64>, sets: &[ConvexSet]) -> Result<Projection> {
    if sets.is_empty() {
        return Ok(Projection {
            point: v.clone(),
            iterations: 0,
            converged: true,
        });
    }
    let mut x = v.clone();
    let mut incr: Vec<DVector<f64>> = vec![DVector::zeros(v.len()); sets.len()];
    for sweep in 1..=DYKSTRA_MAX_SWEEPS {
        let start = x.clone();
        for (set, p) in sets.iter().zip(incr.iter_mut()) {
            let y = set.project(&(&x + &*p))?;
            *p = &x + &*p - &y;
            x = y;
        }
        let moved = (&x - &start).norm();
        if moved < DYKSTRA_TOL && sets.iter().all(|s| s.violation(&x) <= DYKSTRA_TOL) {
            return Ok(Projection {
                point: x,
                iterations: sweep,
                converged: true,
            });
        }
    }
    Ok(Projection {
        point: x,
        iterations: DYKSTRA_MAX_SWEEPS,
        converged: false,
    })
}

/// Projection onto S ∩ B(1) given a projector onto S (convex, containing 0).
///
/// The minimizer is P_S(v / (1 + μ)) for the ball multiplier μ ≥ 0, found by
/// bisection on ‖P_S(v/(1+μ))‖ = 1.
pub fn project_with_ball<F>(v: &DVector<f64>, proj: F) -> Result<Projection>
where
    F: Fn(&DVector<f64>) -> Result<Projection>,
{
    let first = proj(v)?;
    if first.point.norm() <= 1.0 {
        return Ok(first);
    }
    let mut lo = 0.0f64;
    let mut hi = v.norm();
    let mut best = proj(&(v / (1.0 + hi)))?;
    let mut iters = first.iterations + best.iterations;
    let mut converged = first.converged && best.converged;
    for _ in 0..200 {
        if hi - lo <= 1e-16 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let p = proj(&(v / (1.0 + mid)))?;
        iters += p.iterations;
        converged &= p.converged;
        if p.point.norm() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
            best = p;
        }
    }
    Ok(Projection {
        point: best.point,
        iterations: iters,
        converged,
    })
}

/// Linear maximization of ⟨c, w⟩ over S ∩ B(1).
///
/// `member` tests S, `proj` projects onto S and `unbounded_opt` is an optional
/// maximizer of ⟨c, ·⟩ over S alone. With the ball active, the maximizer is
/// P_S(c/μ) at the multiplier μ where its norm reaches 1.
pub fn maximize_linear_with_ball<F, M>(
    c: &DVector<f64>,
    member: M,
    proj: F,
    unbounded_opt: Option<DVector<f64>>,
) -> Result<Projection>
where
    F: Fn(&DVector<f64>) -> Result<Projection>,
    M: Fn(&DVector<f64>) -> bool,
{
    let cn = c.norm();
    if cn == 0.0 {
        return Ok(Projection {
            point: DVector::zeros(c.len()),
            iterations: 0,
            converged: true,
        });
    }
    let u = c / cn;
    if member(&u) {
        return Ok(Projection {
            point: u,
            iterations: 0,
            converged: true,
        });
    }
    if let Some(w) = unbounded_opt {
        if w.norm() <= 1.0 {
            return Ok(Projection {
                point: w,
                iterations: 0,
                converged: true,
            });
        }
    }
    // ‖P_S(c/μ)‖ ≤ 1 at μ = ‖c‖ by nonexpansiveness.
    let mut hi = cn;
    let mut best = proj(&u)?;
    let mut iters = best.iterations;
    let mut converged = best.converged;
    let floor = 1e-9 * cn;
    let mut lo = hi;
    loop {
        lo *= 0.1;
        let p = proj(&(c / lo))?;
        iters += p.iterations;
        converged &= p.converged;
        if p.point.norm() > 1.0 {
            break;
        }
        hi = lo;
        // On polyhedra the path reaches the maximizing vertex at a finite
        // multiplier and further steps only add rounding from huge inputs. Stop
        // once the point is stable and c lies in its normal cone, i.e. a long
        // step along c projects back onto it.
        let mut settled = (&p.point - &best.point).norm() <= 1e-13 * (1.0 + p.point.norm());
        if settled {
            let back = proj(&(&p.point + c * (1e3 / cn)))?;
            iters += back.iterations;
            settled = (&back.point - &p.point).norm() <= 1e-10;
        }
        best = p;
        if settled || lo < floor {
            // ball inactive: the best point is the (approximate) maximizer over S
            return Ok(Projection {
                point: best.point,
                iterations: iters,
                converged,
            });
        }
    }
    for _ in 0..200 {
        if hi / lo - 1.0 <= 1e-15 {
            break;
        }
        let mid = (lo * hi).sqrt();
        let p = proj(&(c / mid))?;
        iters += p.iterations;
        converged &= p.converged;
        if p.point.norm() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
            best = p;
        }
    }
    Ok(Projection {
        point: best.point,
        iterations: iters,
        converged,
    })
}
