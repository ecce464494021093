//! Slow, independent reference solvers used to certify the fast paths.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure, Result};
use crate::linalg::{self, dot, mat_t_vec, mat_vec, norm2, project_ball, project_box_simplex};
use crate::matgames::{MatrixGame, PrimalDomain};
use crate::setups::softmax;

/// Bounds certified by a primal-dual reference run.
#[derive(Clone, Debug)]
pub struct SaddleReference {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// A primal value attained, so an upper bound on the saddle value.
    pub upper: f64,
    /// A dual value attained, so a lower bound on the saddle value.
    pub lower: f64,
    pub iterations: usize,
}

impl SaddleReference {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Mirror-prox (extragradient) on the unregularized matrix game.
///
/// Entropy prox on every simplex coordinate block, Euclidean prox on the
/// ball. Unit step: the operator is 1-Lipschitz for normalized games.
pub fn mirror_prox_matgame(game: &MatrixGame, tol: f64, max_iters: usize) -> SaddleReference {
    let a = game.matrix();
    let (d, n) = (game.d(), game.n());
    let prox_x = |x: &[f64], g: &[f64]| -> Vec<f64> {
        match game.domain() {
            PrimalDomain::UnitBall => {
                let z: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - gi).collect();
                project_ball(&z, &vec![0.0; d], 1.0)
            }
            PrimalDomain::Simplex => {
                let t: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi.ln() - gi).collect();
                softmax(&t).expect("finite")
            }
        }
    };
    let prox_y = |y: &[f64], g: &[f64]| -> Vec<f64> {
        let t: Vec<f64> = y.iter().zip(g).map(|(yi, gi)| yi.ln() + gi).collect();
        softmax(&t).expect("finite")
    };
    let mut x = match game.domain() {
        PrimalDomain::UnitBall => vec![0.0; d],
        PrimalDomain::Simplex => vec![1.0 / d as f64; d],
    };
    let mut y = vec![1.0 / n as f64; n];
    let mut sx = vec![0.0; d];
    let mut sy = vec![0.0; n];
    let mut best = SaddleReference {
        x: x.clone(),
        y: y.clone(),
        upper: f64::INFINITY,
        lower: f64::NEG_INFINITY,
        iterations: 0,
    };
    let value_f = |x: &[f64]| linalg::max(&mat_t_vec(a, x));
    let value_phi = |y: &[f64]| game.dual_value(y).expect("simplex point");
    for t in 1..=max_iters {
        let xh = prox_x(&x, &mat_vec(a, &y));
        let yh = prox_y(&y, &mat_t_vec(a, &x));
        x = prox_x(&x, &mat_vec(a, &yh));
        y = prox_y(&y, &mat_t_vec(a, &xh));
        linalg::axpy(&mut sx, 1.0, &xh);
        linalg::axpy(&mut sy, 1.0, &yh);
        if t % 64 == 0 || t == max_iters {
            let xb = linalg::scale(&sx, 1.0 / t as f64);
            let yb = linalg::scale(&sy, 1.0 / t as f64);
            for cand in [xb, x.clone()] {
                let v = value_f(&cand);
                if v < best.upper {
                    best.upper = v;
                    best.x = cand;
                }
            }
            for cand in [yb, y.clone()] {
                let v = value_phi(&cand);
                if v > best.lower {
                    best.lower = v;
                    best.y = cand;
                }
            }
            best.iterations = t;
            if best.gap() <= tol {
                break;
            }
        }
    }
    best
}

/// Maximize a concave `f` over `{y in simplex : lo <= y_i <= hi}` by nested
/// golden-section search, one level per free coordinate. Meant for n <= 4.
pub fn golden_max_box_simplex<F: Fn(&[f64]) -> f64>(
    n: usize,
    lo: f64,
    hi: f64,
    iters: usize,
    f: &F,
) -> (Vec<f64>, f64) {
    let mut y = vec![0.0; n];
    let v = golden_level(0, 1.0, n, lo, hi, iters, f, &mut y);
    (y, v)
}

#[allow(clippy::too_many_arguments)]
fn golden_level<F: Fn(&[f64]) -> f64>(
    j: usize,
    rem: f64,
    n: usize,
    lo: f64,
    hi: f64,
    iters: usize,
    f: &F,
    y: &mut Vec<f64>,
) -> f64 {
    let left = n - j;
    if left == 1 {
        y[j] = rem;
        return f(y);
    }
    let a0 = lo.max(rem - (left - 1) as f64 * hi);
    let b0 = hi.min(rem - (left - 1) as f64 * lo);
    let eval = |t: f64, y: &mut Vec<f64>| -> f64 {
        y[j] = t;
        golden_level(j + 1, rem - t, n, lo, hi, iters, f, y)
    };
    if b0 <= a0 {
        return eval(a0.min(b0).max(lo), y);
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a0, b0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = eval(c, y);
    let mut fd = eval(d, y);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c, y);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d, y);
        }
    }
    // also compare the interval ends, where a boundary optimum sits
    let mut best_t = if fc >= fd { c } else { d };
    let mut best_v = fc.max(fd);
    for t in [a0, b0] {
        let v = eval(t, y);
        if v > best_v {
            best_v = v;
            best_t = t;
        }
    }
    eval(best_t, y)
}

/// Golden-section maximization of a concave function on `[a, b]`.
pub fn golden_max_interval<F: Fn(f64) -> f64>(a: f64, b: f64, iters: usize, f: F) -> (f64, f64) {
    let (p, v) = golden_max_box_simplex(2, 0.0, 1.0, iters, &|u: &[f64]| f(a + (b - a) * u[0]));
    (a + (b - a) * p[0], v)
}

/// Exact minimizer of `½xᵀQx + cᵀx` over the ball `‖x − w‖ ≤ ζ` for
/// symmetric positive semidefinite `Q` (secular equation on the eigenbasis).
pub fn trust_region(q: &DMatrix<f64>, c: &[f64], w: &[f64], zeta: f64) -> Result<Vec<f64>> {
    let d = c.len();
    ensure(q.nrows() == d && q.ncols() == d && w.len() == d, || "dimension mismatch".into())?;
    let eig = SymmetricEigen::new(q.clone());
    let v = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    // shifted linear term: Q w + c
    let g = DVector::from_column_slice(&linalg::add(&mat_vec(q, w), c));
    let b = v.transpose() * g;
    let step = |nu: f64| -> Vec<f64> {
        (0..d)
            .map(|i| {
                let den = lam[i] + nu;
                if den <= 0.0 {
                    0.0
                } else {
                    -b[i] / den
                }
            })
            .collect()
    };
    let lam_min = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let nu_floor = (-lam_min).max(0.0);
    let s0 = step(nu_floor.max(1e-300));
    let s = if lam_min > 0.0 && norm2(&s0) <= zeta {
        s0
    } else {
        let mut a = nu_floor;
        let mut hi = nu_floor + 1.0;
        while norm2(&step(hi)) > zeta {
            hi = 2.0 * hi + 1.0;
        }
        for _ in 0..300 {
            let mid = 0.5 * (a + hi);
            if norm2(&step(mid)) > zeta {
                a = mid;
            } else {
                hi = mid;
            }
        }
        step(hi)
    };
    let sv = v * DVector::from_column_slice(&s);
    Ok(w.iter().zip(sv.iter()).map(|(wi, si)| wi + si).collect())
}

/// Euclidean extragradient on `min_{x ∈ ball} max_{y ∈ C} Σ y_i(⟨a_i,x⟩ + b_i)`
/// with `C = {y in simplex : lo <= y_i <= hi}`.
pub fn cvar_affine_saddle(
    a: &[Vec<f64>],
    b: &[f64],
    center: &[f64],
    radius: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iters: usize,
) -> SaddleReference {
    let n = a.len();
    let d = center.len();
    let mat = DMatrix::from_fn(n, d, |i, j| a[i][j]);
    let spec = linalg::spectral_norm_sq_estimate(&mat.transpose(), 200).sqrt();
    let eta = 0.9 / spec.max(1e-12);
    let values = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| dot(&a[i], x) + b[i]).collect() };
    let combo = |y: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; d];
        for (yi, ai) in y.iter().zip(a) {
            linalg::axpy(&mut g, *yi, ai);
        }
        g
    };
    let f_bar = |x: &[f64]| linalg::max_linear_box_simplex(&values(x), lo, hi).1;
    let phi = |y: &[f64]| {
        let g = combo(y);
        dot(y, b) + dot(&g, center) - radius * norm2(&g)
    };
    let mut x = center.to_vec();
    let mut y = vec![1.0 / n as f64; n];
    let mut sx = vec![0.0; d];
    let mut sy = vec![0.0; n];
    let mut best = SaddleReference {
        x: x.clone(),
        y: y.clone(),
        upper: f64::INFINITY,
        lower: f64::NEG_INFINITY,
        iterations: 0,
    };
    for t in 1..=max_iters {
        let gx = combo(&y);
        let gy = values(&x);
        let xh = project_ball(&linalg::sub(&x, &linalg::scale(&gx, eta)), center, radius);
        let yh = project_box_simplex(&linalg::add(&y, &linalg::scale(&gy, eta)), lo, hi);
        let gx = combo(&yh);
        let gy = values(&xh);
        x = project_ball(&linalg::sub(&x, &linalg::scale(&gx, eta)), center, radius);
        y = project_box_simplex(&linalg::add(&y, &linalg::scale(&gy, eta)), lo, hi);
        linalg::axpy(&mut sx, 1.0, &xh);
        linalg::axpy(&mut sy, 1.0, &yh);
        if t % 64 == 0 || t == max_iters {
            let xb = linalg::scale(&sx, 1.0 / t as f64);
            let yb = linalg::scale(&sy, 1.0 / t as f64);
            for cand in [xb, x.clone()] {
                let v = f_bar(&cand);
                if v < best.upper {
                    best.upper = v;
                    best.x = cand;
                }
            }
            for cand in [yb, y.clone()] {
                let v = phi(&cand);
                if v > best.lower {
                    best.lower = v;
                    best.y = cand;
                }
            }
            best.iterations = t;
            if best.gap() <= tol {
                break;
            }
        }
    }
    best
}
