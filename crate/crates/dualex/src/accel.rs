//! Accelerated first-order minimization with a certified optimality gap.
//!
//! Similar-triangles form of Nesterov's method. Every gradient contributes a
//! linear (or μ-quadratic) lower model of the objective; minimizing the
//! aggregated model over the feasible set gives a lower bound on the optimum,
//! so the returned gap is a certificate rather than an estimate.

use crate::error::{Error, Result};
use crate::linalg::{dist1, dist2, dot, norm2, project_ball};
use crate::setups::softmax;

/// Feasible set plus the prox geometry used on it.
#[derive(Clone, Debug)]
pub enum Geometry {
    /// Euclidean ball with the squared-distance prox.
    Ball { center: Vec<f64>, radius: f64 },
    /// Probability simplex with the entropy prox (ℓ1 norm).
    Simplex { dim: usize },
    /// Axis-aligned box with the squared-distance prox.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Geometry {
    pub fn dim(&self) -> usize {
        match self {
            Geometry::Ball { center, .. } => center.len(),
            Geometry::Simplex { dim } => *dim,
            Geometry::Box { lo, .. } => lo.len(),
        }
    }

    fn default_start(&self) -> Vec<f64> {
        match self {
            Geometry::Ball { center, .. } => center.clone(),
            Geometry::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
            Geometry::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Geometry::Ball { .. } | Geometry::Box { .. } => dist2(a, b),
            Geometry::Simplex { .. } => dist1(a, b),
        }
    }
}

/// Objective with value and gradient access.
pub trait SmoothObjective {
    fn value(&mut self, x: &[f64]) -> f64;
    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>);
}

impl<V, G> SmoothObjective for (V, G)
where
    V: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    fn value(&mut self, x: &[f64]) -> f64 {
        (self.0)(x)
    }

    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.1)(x)
    }
}

#[derive(Clone, Debug)]
pub struct AccelOptions {
    /// Initial smoothness estimate; doubled whenever the descent test fails.
    pub smoothness: f64,
    /// Strong convexity modulus (ball geometry only).
    pub strong_convexity: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Hard cap on gradient evaluations.
    pub max_grads: Option<u64>,
    pub start: Option<Vec<f64>>,
}

impl AccelOptions {
    pub fn new(smoothness: f64, tol: f64) -> Self {
        AccelOptions {
            smoothness,
            strong_convexity: 0.0,
            tol,
            max_iters: 1_000_000,
            max_grads: None,
            start: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AccelOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub grads: u64,
}

/// Aggregated lower model `S + ⟨G, z⟩ + (μA/2)‖z‖²`, divided by `A`.
struct Model {
    s: f64,
    g: Vec<f64>,
    a: f64,
}

impl Model {
    fn lower_bound(&self, geom: &Geometry, mu: f64) -> f64 {
        let v = match geom {
            Geometry::Simplex { .. } => self.s + crate::linalg::min(&self.g),
            Geometry::Ball { center, radius } => {
                if mu > 0.0 {
                    let c: Vec<f64> = self.g.iter().map(|gi| -gi / (mu * self.a)).collect();
                    let z = project_ball(&c, center, *radius);
                    self.s + dot(&self.g, &z) + 0.5 * mu * self.a * dot(&z, &z)
                } else {
                    self.s + dot(&self.g, center) - radius * norm2(&self.g)
                }
            }
            Geometry::Box { lo, hi } => {
                let mut v = self.s;
                for ((g, l), h) in self.g.iter().zip(lo).zip(hi) {
                    v += if mu > 0.0 {
                        let z = (-g / (mu * self.a)).clamp(*l, *h);
                        g * z + 0.5 * mu * self.a * z * z
                    } else {
                        (g * l).min(g * h)
                    };
                }
                v
            }
        };
        v / self.a
    }
}

fn prox_step(geom: &Geometry, z0: &[f64], model: &Model, mu: f64) -> Vec<f64> {
    match geom {
        Geometry::Ball { center, radius } => {
            let s = 1.0 + mu * model.a;
            let z: Vec<f64> = z0.iter().zip(&model.g).map(|(c, g)| (c - g) / s).collect();
            project_ball(&z, center, *radius)
        }
        Geometry::Box { lo, hi } => {
            let s = 1.0 + mu * model.a;
            z0.iter()
                .zip(&model.g)
                .zip(lo.iter().zip(hi))
                .map(|((c, g), (l, h))| ((c - g) / s).clamp(*l, *h))
                .collect()
        }
        Geometry::Simplex { .. } => {
            let theta: Vec<f64> = z0.iter().zip(&model.g).map(|(c, g)| c.ln() - g).collect();
            softmax(&theta).expect("finite simplex prox argument")
        }
    }
}

/// Minimize `obj` over `geom` until the certified gap is at most `opts.tol`.
pub fn minimize<O: SmoothObjective + ?Sized>(
    obj: &mut O,
    geom: &Geometry,
    opts: &AccelOptions,
) -> Result<AccelOutcome> {
    let mu = match geom {
        Geometry::Ball { .. } | Geometry::Box { .. } => opts.strong_convexity.max(0.0),
        Geometry::Simplex { .. } => 0.0,
    };
    let z0 = opts.start.clone().unwrap_or_else(|| geom.default_start());
    let mut l = opts.smoothness.max(1e-300);
    let mut model = Model {
        s: 0.0,
        g: vec![0.0; geom.dim()],
        a: 0.0,
    };
    let mut x = z0.clone();
    let mut u = z0.clone();
    let mut best_x = z0.clone();
    let mut best_f = obj.value(&z0);
    let mut best_lb = f64::NEG_INFINITY;
    let mut grads = 0u64;
    for it in 1..=opts.max_iters {
        loop {
            if let Some(cap) = opts.max_grads {
                if grads >= cap {
                    return Err(Error::Budget {
                        what: "accelerated solver",
                        budget: cap,
                        best_gap: best_f - best_lb,
                        best_point: best_x,
                    });
                }
            }
            let m = 1.0 + mu * model.a;
            let a = (m + (m * m + 4.0 * l * m * model.a).sqrt()) / (2.0 * l);
            let a_next = model.a + a;
            let y: Vec<f64> = x
                .iter()
                .zip(&u)
                .map(|(xi, ui)| (model.a * xi + a * ui) / a_next)
                .collect();
            let (fy, g) = obj.value_grad(&y);
            grads += 1;
            let mut trial = Model {
                s: model.s + a * (fy - dot(&g, &y) + 0.5 * mu * dot(&y, &y)),
                g: model.g.clone(),
                a: a_next,
            };
            for ((tg, gi), yi) in trial.g.iter_mut().zip(&g).zip(&y) {
                *tg += a * (gi - mu * yi);
            }
            let u_next = prox_step(geom, &z0, &trial, mu);
            let x_next: Vec<f64> = x
                .iter()
                .zip(&u_next)
                .map(|(xi, ui)| (model.a * xi + a * ui) / a_next)
                .collect();
            let fx = obj.value(&x_next);
            let step = geom.dist(&x_next, &y);
            let upper = fy + dot(&g, &crate::linalg::sub(&x_next, &y)) + 0.5 * l * step * step;
            if fx > upper + 1e-12 * (1.0 + fx.abs()) && l < 1e300 {
                l *= 2.0;
                continue;
            }
            model = trial;
            u = u_next;
            x = x_next;
            if fx < best_f {
                best_f = fx;
                best_x = x.clone();
            }
            if fy < best_f {
                best_f = fy;
                best_x = y;
            }
            break;
        }
        best_lb = best_lb.max(model.lower_bound(geom, mu));
        let gap = best_f - best_lb;
        if gap <= opts.tol {
            return Ok(AccelOutcome {
                x: best_x,
                value: best_f,
                lower_bound: best_lb,
                gap: gap.max(0.0),
                iterations: it,
                grads,
            });
        }
    }
    Err(Error::Convergence {
        what: "accelerated solver",
        iterations: opts.max_iters,
        best_gap: best_f - best_lb,
    })
}
