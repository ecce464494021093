//! Dense vector helpers and Euclidean projections.

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn dist1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// y += s * x
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// (1 - t) a + t b
pub fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(a: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in a.iter().enumerate() {
        if v > a[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry, lowest index on ties.
pub fn argmin(a: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in a.iter().enumerate() {
        if v < a[best] {
            best = i;
        }
    }
    best
}

pub fn max(a: &[f64]) -> f64 {
    a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn min(a: &[f64]) -> f64 {
    a.iter().copied().fold(f64::INFINITY, f64::min)
}

/// A x for a d-by-n matrix and x of length n.
pub fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(a.column(j).iter()) {
            *o += v * xj;
        }
    }
    out
}

/// A^T x for a d-by-n matrix and x of length d.
pub fn mat_t_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.ncols()).map(|j| dot(a.column(j).as_slice(), x)).collect()
}

pub fn max_column_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).norm())
        .fold(0.0, f64::max)
}

/// Estimate of the squared spectral norm by power iteration on A^T A.
pub fn spectral_norm_sq_estimate(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 1e-3).collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let nv = norm2(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = mat_t_vec(a, &mat_vec(a, &v));
        est = dot(&w, &v);
        v = w;
    }
    est
}

/// Euclidean projection onto the ball of the given center and radius.
pub fn project_ball(x: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let d = dist2(x, center);
    if d <= radius {
        x.to_vec()
    } else {
        lerp(center, x, radius / d)
    }
}

pub fn project_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect()
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Euclidean projection onto {y in simplex : y_i <= cap}; needs n * cap >= 1.
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Vec<f64> {
    project_box_simplex(v, 0.0, cap)
}

/// Euclidean projection onto {y in simplex : lo <= y_i <= hi}; needs
/// n * lo <= 1 <= n * hi.
pub fn project_box_simplex(v: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let total = |tau: f64| -> f64 { v.iter().map(|x| (x - tau).clamp(lo, hi)).sum() };
    let mut a = min(v) - hi - 1.0;
    let mut b = max(v) - lo + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if total(mid) > 1.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-15 * (1.0 + b.abs()) {
            break;
        }
    }
    let tau = 0.5 * (a + b);
    let mut y: Vec<f64> = v.iter().map(|x| (x - tau).clamp(lo, hi)).collect();
    // distribute the residual over the free coordinates
    let s: f64 = y.iter().sum();
    let free: Vec<usize> = (0..y.len()).filter(|&i| y[i] > lo && y[i] < hi).collect();
    if !free.is_empty() {
        let r = (1.0 - s) / free.len() as f64;
        for i in free {
            y[i] = (y[i] + r).clamp(lo, hi);
        }
    }
    y
}

/// Maximizer of ⟨v, y⟩ over {y in simplex : lo <= y_i <= hi}, filling the
/// largest entries first (lowest index on ties).
pub fn max_linear_box_simplex(v: &[f64], lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let n = v.len();
    let mut y = vec![lo; n];
    let mut rem = 1.0 - n as f64 * lo;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| v[j].partial_cmp(&v[i]).unwrap().then(i.cmp(&j)));
    for i in order {
        if rem <= 0.0 {
            break;
        }
        let add = (hi - lo).min(rem);
        y[i] += add;
        rem -= add;
    }
    let val = dot(&y, v);
    (y, val)
}

pub fn is_on_simplex(y: &[f64], tol: f64) -> bool {
    y.iter().all(|&v| v >= -tol) && (y.iter().sum::<f64>() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_of_point_on_simplex_is_identity() {
        let y = [0.2, 0.3, 0.5];
        let p = project_simplex(&y);
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn simplex_projection_clips() {
        let p = project_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn capped_projection_respects_cap() {
        let p = project_capped_simplex(&[5.0, 0.0, 0.0, 0.0], 0.4);
        assert!((p[0] - 0.4).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ball_projection() {
        let p = project_ball(&[3.0, 4.0], &[0.0, 0.0], 1.0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        assert!((spectral_norm_sq_estimate(&a, 50) - 9.0).abs() < 1e-9);
        assert_eq!(max_column_norm(&a), 3.0);
    }
}
