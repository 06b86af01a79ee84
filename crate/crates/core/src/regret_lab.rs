//! Delayed projected SGD on strongly convex quadratics, with the measured
//! regret compared against three closed-form bounds.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Vector};

/// Step-size scale `σ` used by the experiments.
pub const DEFAULT_LR_SCALE: f64 = 1.0;
/// Radius `r_c` of the ball the centers are drawn from.
pub const DEFAULT_CENTER_RADIUS: f64 = 1.0;

/// Objectives `f_t(x) = (λ/2)‖x − c_t‖²` over the ball of radius `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProblem {
    pub lambda: f64,
    pub radius: f64,
    pub center_radius: f64,
    pub centers: Vec<Vector>,
    pub start: Vector,
}

fn gaussian_direction(rng: &mut Rng, dim: usize) -> Vector {
    loop {
        let v: Vector = (0..dim).map(|_| StandardNormal.sample(rng.inner_mut())).collect();
        let n = v.norm_sq().sqrt();
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

impl ConvexProblem {
    /// `rounds` centers drawn uniformly from the ball of radius
    /// `center_radius`; the start point lies on the sphere of radius `radius`.
    pub fn generate(dim: usize, lambda: f64, radius: f64, center_radius: f64, rounds: usize, seed: u64) -> Result<Self> {
        if dim == 0 || rounds == 0 {
            return Err(Error::Config("dimension and round count must be positive".into()));
        }
        if !(lambda > 0.0 && radius > 0.0 && center_radius >= 0.0 && center_radius <= radius) {
            return Err(Error::Config(format!(
                "need λ > 0 and 0 ≤ r_c ≤ R, got λ={lambda}, R={radius}, r_c={center_radius}"
            )));
        }
        let mut rng = Rng::new(seed);
        let start: Vector = gaussian_direction(&mut rng, dim).iter().map(|x| x * radius).collect();
        let centers = (0..rounds)
            .map(|_| {
                let dir = gaussian_direction(&mut rng, dim);
                let r = center_radius * rng.unit().powf(1.0 / dim as f64);
                dir.iter().map(|x| x * r).collect()
            })
            .collect();
        Ok(Self {
            lambda,
            radius,
            center_radius,
            centers,
            start,
        })
    }

    pub fn from_centers(lambda: f64, radius: f64, centers: Vec<Vector>, start: Vector) -> Result<Self> {
        if centers.is_empty() || centers.iter().any(|c| c.len() != start.len()) {
            return Err(Error::Shape("centers and start must share one dimension".into()));
        }
        let center_radius = centers.iter().map(|c| c.norm_sq().sqrt()).fold(0.0, f64::max);
        Ok(Self {
            lambda,
            radius,
            center_radius,
            centers,
            start: project(&start, radius),
        })
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn rounds(&self) -> usize {
        self.centers.len()
    }

    pub fn value(&self, t: usize, x: &[f64]) -> f64 {
        0.5 * self.lambda * sq_dist(x, &self.centers[t])
    }

    pub fn gradient(&self, t: usize, x: &[f64]) -> Vector {
        x.iter().zip(self.centers[t].iter()).map(|(a, c)| self.lambda * (a - c)).collect()
    }

    /// Best fixed point in hindsight over the first `rounds` objectives.
    pub fn comparator(&self, rounds: usize) -> Vector {
        let mut mean = Vector::zeros(self.dim());
        for c in &self.centers[..rounds] {
            for (m, x) in mean.iter_mut().zip(c.iter()) {
                *m += x;
            }
        }
        let n = rounds as f64;
        project(&mean.iter().map(|m| m / n).collect::<Vector>(), self.radius)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean projection onto the ball of radius `radius`.
pub fn project(x: &[f64], radius: f64) -> Vector {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n <= radius {
        Vector::from(x)
    } else {
        x.iter().map(|v| v * (radius / n)).collect()
    }
}

/// Forward and backward delays with their weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Weighted mean delay, rounded to the nearest integer with ties going up.
pub fn tau_effective(cfg: &DelayConfig) -> Result<usize> {
    let DelayConfig {
        tau1,
        tau2,
        alpha1,
        alpha2,
    } = *cfg;
    if alpha1 < 0.0 || alpha2 < 0.0 || alpha1 + alpha2 <= 0.0 {
        return Err(Error::Config("delay weights must be non-negative and not both zero".into()));
    }
    if tau1 < 0.0 || tau2 < 0.0 {
        return Err(Error::Config("delays must be non-negative".into()));
    }
    let tau = (alpha1 * tau1 + alpha2 * tau2) / (alpha1 + alpha2);
    Ok((tau + 0.5).floor() as usize)
}

/// Step size at round `t` (1-based): zero through round `τ`, then `σ/√(t−τ)`.
pub fn lr_at(t: usize, tau: usize, lr_scale: f64) -> f64 {
    if t <= tau {
        0.0
    } else {
        lr_scale / ((t - tau) as f64).sqrt()
    }
}

pub fn bregman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    Ok(0.5 * sq_dist(x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub tau: usize,
    /// Iterates `x_1..x_T`.
    pub trajectory: Vec<Vector>,
    /// `η_1..η_T`.
    pub etas: Vec<f64>,
    pub regret: f64,
}

impl RegretReport {
    /// Regret over the first `rounds` rounds of the same run.
    pub fn regret_prefix(&self, problem: &ConvexProblem, rounds: usize) -> Result<f64> {
        regret_of(&self.trajectory[..rounds], problem)
    }
}

/// Projected SGD where the gradient of round `t − τ`, evaluated at that
/// round's iterate, is applied at round `t`.
pub fn run_delayed_sgd(problem: &ConvexProblem, tau: usize, lr_scale: f64, rounds: usize) -> Result<RegretReport> {
    if rounds <= tau {
        return Err(Error::Config(format!("need more than τ = {tau} rounds, got {rounds}")));
    }
    if rounds > problem.rounds() {
        return Err(Error::Config(format!(
            "problem has {} objectives, {rounds} requested",
            problem.rounds()
        )));
    }
    let mut x = problem.start.clone();
    let mut queue: std::collections::VecDeque<Vector> = std::collections::VecDeque::with_capacity(tau + 1);
    let mut trajectory = Vec::with_capacity(rounds);
    let mut etas = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        trajectory.push(x.clone());
        queue.push_back(problem.gradient(t - 1, &x));
        let eta = lr_at(t, tau, lr_scale);
        etas.push(eta);
        if queue.len() > tau {
            let g = queue.pop_front().expect("non-empty");
            let stepped: Vec<f64> = x.iter().zip(g.iter()).map(|(a, b)| a - eta * b).collect();
            x = project(&stepped, problem.radius);
        }
    }
    let regret = regret_of(&trajectory, problem)?;
    Ok(RegretReport {
        tau,
        trajectory,
        etas,
        regret,
    })
}

/// `Σ f_t(x_t) − Σ f_t(x*)` over the first `trajectory.len()` objectives.
pub fn regret_of(trajectory: &[Vector], problem: &ConvexProblem) -> Result<f64> {
    let rounds = trajectory.len();
    if rounds == 0 || rounds > problem.rounds() {
        return Err(Error::Shape(format!(
            "trajectory of {rounds} iterates for {} objectives",
            problem.rounds()
        )));
    }
    if trajectory.iter().any(|x| x.len() != problem.dim()) {
        return Err(Error::Shape("iterate dimension differs from the problem".into()));
    }
    let best = problem.comparator(rounds);
    let mut total = 0.0;
    for (t, x) in trajectory.iter().enumerate() {
        total += problem.value(t, x) - problem.value(t, &best);
    }
    Ok(total)
}

/// Constants entering the bounds. `diam_bound` is `F` in `D(x‖x′) ≤ F²`;
/// `lr_scale` is `σ` in `η_t = σ/√(t−τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub l: f64,
    pub lambda: f64,
    pub h: f64,
    pub diam_bound: f64,
    pub lr_scale: f64,
}

impl BoundParams {
    /// Analytic constants of the quadratic family on the ball of radius `R`.
    pub fn quadratic(lambda: f64, radius: f64, center_radius: f64, lr_scale: f64) -> Self {
        Self {
            l: lambda * (radius + center_radius),
            lambda,
            h: lambda,
            diam_bound: (2.0 * radius * radius).sqrt(),
            lr_scale,
        }
    }
}

pub fn bound_thm1(p: &BoundParams, tau: usize, rounds: usize) -> f64 {
    let (t, tau) = ((rounds as f64).sqrt(), tau as f64);
    let (l2, s, f2) = (p.l * p.l, p.lr_scale, p.diam_bound * p.diam_bound);
    s * l2 * t + f2 * t / s + l2 * s * tau * tau / 2.0 + 2.0 * l2 * s * tau * t
}

pub fn bound_thm2(p: &BoundParams, tau: usize, rounds: usize) -> f64 {
    let tau = tau as f64;
    let (l2, f2) = (p.l * p.l, p.diam_bound * p.diam_bound);
    p.lambda * tau * f2 + (0.5 + tau) * (l2 / p.lambda) * (1.0 + tau + (rounds as f64).ln())
}

fn thm3_with(p: &BoundParams, tau: usize, rounds: usize, coeff: f64) -> Result<f64> {
    if tau == 0 {
        return Err(Error::BoundUndefined(
            "the expected-regret bound takes log(3τ + Hτ/λ), undefined at τ = 0".into(),
        ));
    }
    let tau = tau as f64;
    let (l2, f2, lam, h) = (p.l * p.l, p.diam_bound * p.diam_bound, p.lambda, p.h);
    let inner = lam * tau * f2
        + coeff * (l2 / lam) * (1.0 + tau + (3.0 * tau + h * tau / lam).ln())
        + (l2 / (2.0 * lam)) * (1.0 + (rounds as f64).ln())
        + std::f64::consts::PI.powi(2) * tau * tau * h * l2 / (6.0 * lam * lam);
    Ok(10.0 / 9.0 * inner)
}

/// Expected-regret bound with the `(½ + τ)` coefficient.
pub fn bound_thm3(p: &BoundParams, tau: usize, rounds: usize) -> Result<f64> {
    thm3_with(p, tau, rounds, 0.5 + tau as f64)
}

/// The same bound with the coefficient as printed, `½τ`.
pub fn bound_thm3_printed(p: &BoundParams, tau: usize, rounds: usize) -> Result<f64> {
    thm3_with(p, tau, rounds, 0.5 * tau as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub thm1: f64,
    pub thm2: f64,
    /// `None` when `τ = 0`.
    pub thm3: Option<f64>,
    pub thm3_printed: Option<f64>,
}

pub fn bounds(p: &BoundParams, tau: usize, rounds: usize) -> Bounds {
    Bounds {
        thm1: bound_thm1(p, tau, rounds),
        thm2: bound_thm2(p, tau, rounds),
        thm3: bound_thm3(p, tau, rounds).ok(),
        thm3_printed: bound_thm3_printed(p, tau, rounds).ok(),
    }
}
