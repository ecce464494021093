//! Seeded random instance generators.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::cvar::{AffineLosses, CvarProblem, PrimalSet};
use crate::error::{ensure, Result};
use crate::exec::Rng;
use crate::linalg::{self, norm2};
use crate::matgames::{MatrixGame, PrimalDomain};

fn gaussian_vec(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gaussian `d×n` matrix scaled to unit max column norm (ball) or entries
/// clamped to `[-1, 1]` after scaling by the largest magnitude (simplex).
pub fn random_matrix_game(d: usize, n: usize, domain: PrimalDomain, rng: &mut Rng) -> Result<MatrixGame> {
    ensure(d >= 1 && n >= 1, || "matrix dimensions must be positive".into())?;
    let raw: DMatrix<f64> = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(rng));
    let a = match domain {
        PrimalDomain::UnitBall => {
            let mut a = raw;
            for mut col in a.column_iter_mut() {
                let c = col.norm();
                if c > 0.0 {
                    col /= c;
                }
            }
            a
        }
        PrimalDomain::Simplex => {
            let m = raw.amax();
            raw.map(|v| (v / m).clamp(-1.0, 1.0))
        }
    };
    MatrixGame::new(a, domain)
}

/// Affine losses `⟨a_i, x⟩ + b_i` over `ball(0, radius)` with
/// `‖a_i‖ ≤ g` and offsets drawn so that every loss stays in `[0, m]` on the ball.
pub fn random_affine_losses(n: usize, d: usize, radius: f64, g: f64, m: f64, rng: &mut Rng) -> Result<AffineLosses> {
    ensure(n >= 1 && d >= 1, || "need at least one loss and one dimension".into())?;
    ensure(2.0 * g * radius <= m, || "losses cannot fit in [0, M] with this G and R".into())?;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let dir = gaussian_vec(d, rng);
        let len = g * rng.gen::<f64>();
        let nd = norm2(&dir).max(1e-300);
        let ai = linalg::scale(&dir, len / nd);
        let span = norm2(&ai) * radius;
        b.push(rng.gen_range(span..=m - span));
        a.push(ai);
    }
    AffineLosses::new(a, b)
}

/// CVaR instance over the Euclidean ball with affine losses and `G = ‖a_i‖` max.
pub fn random_cvar_problem(
    n: usize,
    d: usize,
    alpha: f64,
    eps: f64,
    radius: f64,
    g: f64,
    rng: &mut Rng,
) -> Result<CvarProblem<AffineLosses>> {
    let losses = random_affine_losses(n, d, radius, g, 1.0, rng)?;
    let set = PrimalSet::Ball {
        center: vec![0.0; d],
        radius,
    };
    CvarProblem::new(losses, alpha, set, 1.0, g, eps)
}

/// Symmetric positive definite matrix with eigenvalues spread log-uniformly
/// over `[max_eig / condition, max_eig]`, both ends included.
pub fn random_spd(d: usize, condition: f64, max_eig: f64, rng: &mut Rng) -> Result<DMatrix<f64>> {
    ensure(d >= 1 && condition >= 1.0 && max_eig > 0.0, || "invalid spd parameters".into())?;
    let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let eig: Vec<f64> = (0..d)
        .map(|i| {
            let t = if d == 1 { 1.0 } else { i as f64 / (d - 1) as f64 };
            max_eig * condition.powf(t - 1.0)
        })
        .collect();
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig));
    let m: DMatrix<f64> = &q * diag * q.transpose();
    Ok((&m + m.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::stream_rng;

    #[test]
    fn ball_game_columns_are_unit() {
        let g = random_matrix_game(5, 7, PrimalDomain::UnitBall, &mut stream_rng(1, 0)).unwrap();
        assert!(linalg::max_column_norm(g.matrix()) <= 1.0);
    }

    #[test]
    fn affine_losses_stay_in_range() {
        let mut rng = stream_rng(2, 0);
        let l = random_affine_losses(20, 5, 1.0, 0.5, 1.0, &mut rng).unwrap();
        for _ in 0..1000 {
            let x = linalg::project_ball(&gaussian_vec(5, &mut rng), &[0.0; 5], 1.0);
            for i in 0..20 {
                let v = linalg::dot(&l.a[i], &x) + l.b[i];
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn spd_has_requested_spectrum() {
        let m = random_spd(6, 100.0, 2.0, &mut stream_rng(3, 0)).unwrap();
        let e = m.symmetric_eigen().eigenvalues;
        let (lo, hi) = (e.min(), e.max());
        assert!((hi - 2.0).abs() < 1e-10 && (lo - 0.02).abs() < 1e-10);
    }
}
