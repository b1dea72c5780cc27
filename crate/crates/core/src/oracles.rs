//! Independent reference computations used to validate the closed-form steps
//! and to produce the optima that rate certificates compare against.
//!
//! Nothing here calls the closed-form updates of [`crate::mirror_descent`],
//! [`crate::sinkhorn`] or [`crate::em`]; every oracle uses its own solver and
//! compensated accumulation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::divergences::{bregman, BregmanPotential, ExtendedReal, Functional};
use crate::em::{first_order_residual, LatentProblem};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::measures::{Coupling, DiscreteMeasure};
use crate::mirror_descent::Constraint;
use crate::sinkhorn::EotProblem;

/// Neumaier's compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = CompensatedSum::default();
    xs.into_iter().for_each(|x| s.add(x));
    s.value()
}

/// `KL(a|b)` with compensated accumulation.
pub fn kl_compensated(a: &[f64], b: &[f64]) -> ExtendedReal {
    let mut s = CompensatedSum::default();
    for (&x, &y) in a.iter().zip(b) {
        if x == 0.0 {
            continue;
        }
        if y == 0.0 {
            return ExtendedReal::Infinity;
        }
        s.add(x * (x / y).ln());
    }
    ExtendedReal::Finite(s.value())
}

/// `ln Σ exp(x_i)` with compensated accumulation of the shifted terms.
pub fn logsumexp_compensated(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + compensated_sum(xs.iter().map(|&x| (x - max).exp())).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FdNorm {
    Absolute,
    Relative,
}

/// Step sizes for one-sided difference quotients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdSchedule {
    h_values: Vec<f64>,
    pub norm: FdNorm,
}

impl Default for FdSchedule {
    fn default() -> Self {
        Self { h_values: vec![1e-2, 1e-3, 1e-4, 1e-5], norm: FdNorm::Absolute }
    }
}

impl FdSchedule {
    pub fn new(h_values: Vec<f64>, norm: FdNorm) -> Result<Self> {
        if h_values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if h_values.iter().any(|&h| !(h > 0.0 && h.is_finite())) || h_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("step sizes must be positive and strictly decreasing".into()));
        }
        Ok(Self { h_values, norm })
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h_values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub h_values: Vec<f64>,
    /// `(F(μ + hξ) − F(μ))/h` per step size.
    pub quotients: Vec<f64>,
    /// `⟨∇F(μ), ξ⟩`.
    pub analytic: f64,
    /// Gap between each quotient and `analytic`, in the schedule's norm.
    pub gaps: Vec<f64>,
    /// Richardson extrapolation of the last two quotients, assuming an
    /// `O(h)` error.
    pub extrapolated: f64,
}

impl FdReport {
    pub fn gaps_shrink(&self) -> bool {
        self.gaps.windows(2).all(|w| w[1] <= w[0])
    }

    /// Difference quotients of a convex function are nondecreasing in `h`.
    pub fn quotients_monotone(&self, tol: f64) -> bool {
        self.quotients.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

/// One-sided difference quotients of `f` at `mu` along `xi`.
pub fn fd_directional_derivative(
    f: &dyn Functional,
    mu: &[f64],
    xi: &[f64],
    sched: &FdSchedule,
) -> Result<FdReport> {
    if mu.len() != xi.len() {
        return Err(Error::SupportMismatch { left: mu.len(), right: xi.len() });
    }
    let f0 = f.value(mu)?.require_finite("F(μ)")?;
    let analytic = compensated_sum(f.first_variation(mu)?.iter().zip(xi).map(|(g, x)| g * x));
    if !analytic.is_finite() {
        return Err(Error::DomainViolation("first variation paired with ξ is not finite".into()));
    }
    let mut quotients = Vec::with_capacity(sched.h_values.len());
    for &h in &sched.h_values {
        let moved: Vec<f64> = mu.iter().zip(xi).map(|(m, x)| m + h * x).collect();
        let fh = match f.value(&moved) {
            Ok(ExtendedReal::Finite(v)) => v,
            _ => return Err(Error::DomainViolation(format!("μ + hξ leaves the domain at h = {h}"))),
        };
        quotients.push((fh - f0) / h);
    }
    let gaps = quotients
        .iter()
        .map(|q| {
            let gap = (q - analytic).abs();
            match sched.norm {
                FdNorm::Absolute => gap,
                FdNorm::Relative => gap / analytic.abs().max(f64::MIN_POSITIVE),
            }
        })
        .collect();
    let extrapolated = match sched.h_values.len() {
        1 => quotients[0],
        k => {
            let (h1, h2) = (sched.h_values[k - 2], sched.h_values[k - 1]);
            let (q1, q2) = (quotients[k - 2], quotients[k - 1]);
            (h1 * q2 - h2 * q1) / (h1 - h2)
        }
    };
    Ok(FdReport { h_values: sched.h_values.clone(), quotients, analytic, gaps, extrapolated })
}

/// `min_t (1−t)F(μ) + tF(ν) − F(μ + t(ν − μ))` over `grid_size` evenly
/// spaced `t ∈ [0, 1]`. Nonnegative for convex `F`.
pub fn convexity_probe(f: &dyn Functional, mu: &[f64], nu: &[f64], grid_size: usize) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::SupportMismatch { left: mu.len(), right: nu.len() });
    }
    if grid_size < 2 {
        return Err(Error::InvalidParameter("convexity grid needs at least two points".into()));
    }
    let f_mu = f.value(mu)?.require_finite("F(μ)")?;
    let f_nu = f.value(nu)?.require_finite("F(ν)")?;
    let mut worst = f64::INFINITY;
    for k in 0..grid_size {
        let t = k as f64 / (grid_size - 1) as f64;
        let x: Vec<f64> = mu.iter().zip(nu).map(|(a, b)| a + t * (b - a)).collect();
        let fx = f.value(&x)?.require_finite("F on the segment")?;
        worst = worst.min((1.0 - t) * f_mu + t * f_nu - fx);
    }
    Ok(worst)
}

/// Size cap of the subproblem oracle.
pub const SUBPROBLEM_MAX_SIZE: usize = 64;

/// `⟨g, ν − μ⟩ + L · D_φ(ν|μ)`, the mirror descent subproblem objective.
pub fn subproblem_value(g: &[f64], phi: &BregmanPotential, mu: &[f64], smooth: f64, nu: &[f64]) -> Result<f64> {
    let lin = compensated_sum(g.iter().zip(nu.iter().zip(mu)).map(|(gi, (a, b))| gi * (a - b)));
    Ok(lin + smooth * bregman(phi, nu, mu)?.require_finite("D_φ(ν|μ)")?)
}

/// Minimizes `⟨g, ν − μ⟩ + L · D_φ(ν|μ)` over the constraint set by an
/// iterative method: Newton with a fraction-to-boundary rule for the entropy
/// potential, projected gradient for the squared norm.
pub fn subproblem_argmin_oracle(
    g: &[f64],
    phi: &BregmanPotential,
    mu: &DiscreteMeasure,
    smooth: f64,
    constraint: &Constraint,
) -> Result<DiscreteMeasure> {
    let n = mu.len();
    if n > SUBPROBLEM_MAX_SIZE {
        return Err(Error::SizeTooLarge { size: n, max: SUBPROBLEM_MAX_SIZE });
    }
    if g.len() != n {
        return Err(Error::SupportMismatch { left: g.len(), right: n });
    }
    if !(smooth > 0.0 && smooth.is_finite()) {
        return Err(Error::InvalidConstants { l: 0.0, big_l: smooth });
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::DomainViolation(format!("linear term is not finite at index {i}")));
    }
    match (phi, constraint) {
        (BregmanPotential::NegEntropy { .. }, c) => entropy_subproblem(g, mu.weights(), smooth, c),
        (BregmanPotential::SquaredNorm, Constraint::Unconstrained) => squared_norm_subproblem(g, mu.weights(), smooth),
        (_, c) => Err(Error::UnsupportedCombination(format!("subproblem oracle has no solver for {c:?}"))),
    }
}

fn entropy_subproblem(g: &[f64], mu: &[f64], smooth: f64, constraint: &Constraint) -> Result<DiscreteMeasure> {
    let n = mu.len();
    let support: Vec<usize> = (0..n).filter(|&i| mu[i] > 0.0).collect();
    // Index groups that share an equality constraint `Σ ν_i = mass`.
    let groups: Vec<(Vec<usize>, f64)> = match constraint {
        Constraint::Unconstrained => Vec::new(),
        Constraint::Simplex => vec![(support.clone(), 1.0)],
        Constraint::FixedMarginalY(target) => {
            let m = target.len();
            if n % m != 0 {
                return Err(Error::ShapeMismatch {
                    expected: format!("a coupling with {m} columns"),
                    got: format!("{n} entries"),
                });
            }
            (0..m).map(|j| (support.iter().copied().filter(|i| i % m == j).collect(), target.weights()[j])).collect()
        }
    };
    let mut nu = vec![0.0; n];
    match constraint {
        Constraint::Unconstrained => support.iter().for_each(|&i| nu[i] = mu[i]),
        _ => {
            for (j, (idx, mass)) in groups.iter().enumerate() {
                if idx.is_empty() {
                    if *mass > 0.0 {
                        return Err(Error::ColumnOfZeroMass { col: j });
                    }
                    continue;
                }
                idx.iter().for_each(|&i| nu[i] = mass / idx.len() as f64);
            }
        }
    }
    let objective = |x: &[f64]| -> f64 {
        compensated_sum(support.iter().map(|&i| g[i] * x[i] + smooth * (xlogx_ratio(x[i], mu[i]) - x[i])))
    };
    let grad = |x: &[f64], i: usize| g[i] + smooth * (x[i] / mu[i]).ln();
    let residual = |x: &[f64]| -> f64 {
        if groups.is_empty() {
            support.iter().map(|&i| grad(x, i).abs()).fold(0.0, f64::max)
        } else {
            groups
                .iter()
                .filter(|(idx, _)| !idx.is_empty())
                .map(|(idx, _)| {
                    let vals = idx.iter().map(|&i| grad(x, i));
                    vals.clone().fold(f64::NEG_INFINITY, f64::max) - vals.fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        }
    };
    let tol = 1e-12 * smooth.max(1.0);
    let mut d = vec![0.0; n];
    for _ in 0..500 {
        let res = residual(&nu);
        if res <= tol {
            return DiscreteMeasure::new(nu);
        }
        // Newton direction with diagonal Hessian L/ν_i, projected onto each
        // group's zero-sum subspace.
        if groups.is_empty() {
            for &i in &support {
                d[i] = -grad(&nu, i) * nu[i] / smooth;
            }
        } else {
            for (idx, _) in &groups {
                let w: f64 = compensated_sum(idx.iter().map(|&i| nu[i]));
                let lam = -compensated_sum(idx.iter().map(|&i| grad(&nu, i) * nu[i])) / w;
                for &i in idx {
                    d[i] = -(grad(&nu, i) + lam) * nu[i] / smooth;
                }
            }
        }
        let slope: f64 = compensated_sum(support.iter().map(|&i| grad(&nu, i) * d[i]));
        let mut t = 1.0f64;
        for &i in &support {
            if d[i] < 0.0 {
                t = t.min(-0.95 * nu[i] / d[i]);
            }
        }
        let f0 = objective(&nu);
        // Rounding floor of the objective: the sum can cancel to far below
        // the size of its terms.
        let noise = 8.0
            * f64::EPSILON
            * compensated_sum(
                support.iter().map(|&i| (g[i] * nu[i]).abs() + smooth * (xlogx_ratio(nu[i], mu[i]).abs() + nu[i])),
            );
        let mut trial = nu.clone();
        let mut accepted = false;
        for _ in 0..60 {
            for &i in &support {
                trial[i] = nu[i] + t * d[i];
            }
            let f1 = objective(&trial);
            if f1 <= f0 + 1e-4 * t * slope + noise {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NotConverged { what: "entropy subproblem line search".into(), residual: res });
        }
        std::mem::swap(&mut nu, &mut trial);
    }
    Err(Error::NotConverged { what: "entropy subproblem".into(), residual: residual(&nu) })
}

fn xlogx_ratio(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / m).ln()
    }
}

fn squared_norm_subproblem(g: &[f64], mu: &[f64], smooth: f64) -> Result<DiscreteMeasure> {
    let step = 0.25 / smooth;
    let scale = g.iter().chain(mu).fold(1.0f64, |a, &b| a.max(b.abs()));
    let mut nu = mu.to_vec();
    let mut res = f64::INFINITY;
    for _ in 0..20_000 {
        res = 0.0;
        for i in 0..nu.len() {
            let grad = g[i] + 2.0 * smooth * (nu[i] - mu[i]);
            let next = (nu[i] - step * grad).max(0.0);
            res = res.max((next - nu[i]).abs());
            nu[i] = next;
        }
        if res <= 1e-15 * scale {
            return DiscreteMeasure::new(nu);
        }
    }
    Err(Error::NotConverged { what: "squared-norm subproblem".into(), residual: res })
}

/// High-precision entropic OT optimum.
#[derive(Debug, Clone, Serialize)]
pub struct EotReference {
    pub coupling: Coupling,
    /// ℓ1 marginal residual, both marginals, compensated sums.
    pub residual: f64,
    pub newton_iterations: usize,
    pub sinkhorn_iterations: usize,
}

struct LogCoupling<'a> {
    p: &'a EotProblem,
    log_ref: Vec<f64>,
}

impl<'a> LogCoupling<'a> {
    fn new(p: &'a EotProblem) -> Self {
        let (n, m) = (p.rows(), p.cols());
        let log_ref = (0..n * m).map(|k| p.log_ref(k / m, k % m)).collect();
        Self { p, log_ref }
    }

    fn entries(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let m = b.len();
        self.log_ref.iter().enumerate().map(|(k, &l)| (a[k / m] + b[k % m] + l).exp()).collect()
    }

    fn sums(&self, pi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.p.rows(), self.p.cols());
        let rows = (0..n).map(|i| compensated_sum(pi[i * m..(i + 1) * m].iter().copied())).collect();
        let cols = (0..m).map(|j| compensated_sum((0..n).map(|i| pi[i * m + j]))).collect();
        (rows, cols)
    }

    fn residual(&self, pi: &[f64]) -> f64 {
        let (r, c) = self.sums(pi);
        compensated_sum(
            r.iter()
                .zip(self.p.mu().weights())
                .chain(c.iter().zip(self.p.nu().weights()))
                .map(|(x, y)| (x - y).abs()),
        )
    }

    /// Convex dual objective `Σ π − ⟨a, μ⟩ − ⟨b, ν⟩`.
    fn dual(&self, a: &[f64], b: &[f64]) -> f64 {
        let pi = self.entries(a, b);
        compensated_sum(
            pi.iter()
                .copied()
                .chain(a.iter().zip(self.p.mu().weights()).map(|(x, w)| -x * w))
                .chain(b.iter().zip(self.p.nu().weights()).map(|(x, w)| -x * w)),
        )
    }

    fn sinkhorn_sweep(&self, a: &mut [f64], b: &mut [f64]) {
        let (n, m) = (a.len(), b.len());
        let mut buf = vec![0.0; n.max(m)];
        for i in 0..n {
            for j in 0..m {
                buf[j] = b[j] + self.log_ref[i * m + j];
            }
            a[i] = self.p.mu().weights()[i].ln() - logsumexp_compensated(&buf[..m]);
        }
        for j in 0..m {
            for i in 0..n {
                buf[i] = a[i] + self.log_ref[i * m + j];
            }
            b[j] = self.p.nu().weights()[j].ln() - logsumexp_compensated(&buf[..n]);
        }
    }
}

/// Entropic OT optimum by damped Newton on the dual log-scalings (gauge: last
/// column scaling fixed), warm-started and backed up by Sinkhorn sweeps.
pub fn reference_eot(p: &EotProblem, tol: f64) -> Result<EotReference> {
    let (n, m) = (p.rows(), p.cols());
    let lc = LogCoupling::new(p);
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; m];
    let mut sinkhorn_iterations = 0;
    for _ in 0..20 {
        lc.sinkhorn_sweep(&mut a, &mut b);
        sinkhorn_iterations += 1;
    }
    let shift = b[m - 1];
    a.iter_mut().for_each(|x| *x += shift);
    b.iter_mut().for_each(|x| *x -= shift);
    let dim = n + m - 1;
    let mut newton_iterations = 0;
    let mut residual = lc.residual(&lc.entries(&a, &b));
    while residual > tol && newton_iterations < 200 {
        newton_iterations += 1;
        let pi = lc.entries(&a, &b);
        let (r, c) = lc.sums(&pi);
        let mut grad = DVector::zeros(dim);
        for i in 0..n {
            grad[i] = r[i] - p.mu().weights()[i];
        }
        for j in 0..m - 1 {
            grad[n + j] = c[j] - p.nu().weights()[j];
        }
        let mut h = DMatrix::zeros(dim, dim);
        for i in 0..n {
            h[(i, i)] = r[i];
            for j in 0..m - 1 {
                h[(i, n + j)] = pi[i * m + j];
                h[(n + j, i)] = pi[i * m + j];
            }
        }
        for j in 0..m - 1 {
            h[(n + j, n + j)] = c[j];
        }
        let step = h.lu().solve(&(-&grad));
        let accepted = step.and_then(|d| {
            let slope = grad.dot(&d);
            if !(slope < 0.0) {
                return None;
            }
            let phi0 = lc.dual(&a, &b);
            let mut t = 1.0;
            for _ in 0..40 {
                let ta: Vec<f64> = (0..n).map(|i| a[i] + t * d[i]).collect();
                let tb: Vec<f64> = (0..m).map(|j| if j < m - 1 { b[j] + t * d[n + j] } else { b[j] }).collect();
                let phi1 = lc.dual(&ta, &tb);
                if phi1 <= phi0 + 1e-4 * t * slope + 8.0 * f64::EPSILON * phi0.abs() {
                    return Some((ta, tb));
                }
                t *= 0.5;
            }
            None
        });
        match accepted {
            Some((ta, tb)) => {
                let r_new = lc.residual(&lc.entries(&ta, &tb));
                if r_new < residual || r_new <= tol {
                    a = ta;
                    b = tb;
                    residual = r_new;
                    continue;
                }
                lc.sinkhorn_sweep(&mut a, &mut b);
                sinkhorn_iterations += 1;
            }
            None => {
                lc.sinkhorn_sweep(&mut a, &mut b);
                sinkhorn_iterations += 1;
            }
        }
        residual = lc.residual(&lc.entries(&a, &b));
    }
    if residual > tol {
        return Err(Error::NotConverged { what: "entropic OT reference".into(), residual });
    }
    let coupling = Coupling::new(Matrix::from_flat(n, m, lc.entries(&a, &b))?)?;
    Ok(EotReference { coupling, residual, newton_iterations, sinkhorn_iterations })
}

/// High-precision minimizer of `μ ↦ KL(ν | T_K μ)` over probability vectors.
#[derive(Debug, Clone, Serialize)]
pub struct LatentReference {
    pub mu_star: DiscreteMeasure,
    pub objective: f64,
    /// First-order stationarity residual of `mu_star`.
    pub residual: f64,
    pub newton_iterations: usize,
    /// Objective reached by the Richardson–Lucy cross-check.
    pub cross_check_objective: f64,
    /// Frank–Wolfe gap of the cross-check iterate, an upper bound on its
    /// suboptimality.
    pub cross_check_gap: f64,
    pub cross_check_iterations: usize,
    /// `|objective − cross_check_objective|`.
    pub disagreement: f64,
}

/// Iteration budget of the Richardson–Lucy cross-check.
pub const CROSS_CHECK_MAX_ITERS: usize = 500_000;

struct LatentEval<'a> {
    k: &'a Matrix,
    nu: &'a [f64],
}

impl LatentEval<'_> {
    fn pushed(&self, mu: &[f64]) -> Vec<f64> {
        (0..self.k.cols()).map(|j| compensated_sum((0..mu.len()).map(|i| mu[i] * self.k.get(i, j)))).collect()
    }

    fn objective(&self, mu: &[f64]) -> f64 {
        let t = self.pushed(mu);
        compensated_sum(self.nu.iter().zip(&t).filter(|(v, _)| **v > 0.0).map(|(v, ti)| v * (v / ti).ln()))
    }

    /// `r_i = Σ_j K_ij ν_j / (T_K μ)_j`, the negated gradient.
    fn ratio(&self, mu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = self.pushed(mu);
        let q: Vec<f64> = self.nu.iter().zip(&t).map(|(v, ti)| if *v > 0.0 { v / ti } else { 0.0 }).collect();
        let r = (0..mu.len()).map(|i| compensated_sum((0..q.len()).map(|j| self.k.get(i, j) * q[j]))).collect();
        (r, t)
    }

    fn residual(&self, mu: &[f64], r: &[f64]) -> f64 {
        mu.iter().zip(r).map(|(&m, &ri)| (m * (ri - 1.0).abs()).max(ri - 1.0)).fold(0.0, f64::max)
    }
}

/// Latent minimizer by an active-set projected Newton method on the simplex,
/// driven to stationarity residual `min(tol, 1e-12)`, then cross-checked
/// against Richardson–Lucy iterations run until their Frank–Wolfe gap is at
/// most `tol`. The two must agree in objective within `10 · tol`.
pub fn reference_latent(p: &LatentProblem, tol: f64) -> Result<LatentReference> {
    let newton_tol = tol.min(1e-12);
    let k = p.kernel().matrix();
    let ev = LatentEval { k, nu: p.nu().weights() };
    let n = k.rows();
    let mut mu = vec![1.0 / n as f64; n];
    let mut newton_iterations = 0;
    let (mut r, _) = ev.ratio(&mu);
    let mut res = ev.residual(&mu, &r);
    while res > newton_tol {
        if newton_iterations == 1000 {
            return Err(Error::NotConverged { what: "latent Newton reference".into(), residual: res });
        }
        newton_iterations += 1;
        let mut free: Vec<usize> = (0..n).filter(|&i| mu[i] > 0.0 || r[i] > 1.0).collect();
        let (d, t) = loop {
            let d = latent_newton_direction(&ev, &mu, &r, &free);
            let blocked: Vec<usize> = free.iter().copied().filter(|&i| mu[i] == 0.0 && d[i] < 0.0).collect();
            if blocked.is_empty() || free.len() <= 1 {
                let mut t_max = f64::INFINITY;
                for &i in &free {
                    if d[i] < 0.0 {
                        t_max = t_max.min(-mu[i] / d[i]);
                    }
                }
                break (d, t_max);
            }
            free.retain(|i| !blocked.contains(i));
        };
        let slope = -compensated_sum((0..n).map(|i| r[i] * d[i]));
        let f0 = ev.objective(&mu);
        let mut step = t.min(1.0);
        let mut next = mu.clone();
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                next[i] = (mu[i] + step * d[i]).max(0.0);
                if step == t && d[i] < 0.0 && (mu[i] + t * d[i]) <= 1e-300 {
                    next[i] = 0.0;
                }
            }
            if ev.objective(&next) <= f0 + 1e-4 * step * slope + 8.0 * f64::EPSILON * f0.abs() {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Fall back to a multiplicative step, which always descends.
            for i in 0..n {
                next[i] = mu[i] * r[i];
            }
        }
        let mass = compensated_sum(next.iter().copied());
        next.iter_mut().for_each(|x| *x /= mass);
        mu = next;
        r = ev.ratio(&mu).0;
        res = ev.residual(&mu, &r);
    }
    let objective = ev.objective(&mu);

    // Cross-check: plain multiplicative iterations from μ0 until the
    // Frank–Wolfe gap certifies the objective to within tol.
    let mut x = p.mu0().weights().to_vec();
    let mut cross_check_iterations = 0;
    let mut gap;
    loop {
        let (rx, _) = ev.ratio(&x);
        gap = rx.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 1.0;
        if gap <= tol || cross_check_iterations == CROSS_CHECK_MAX_ITERS {
            break;
        }
        for i in 0..n {
            x[i] *= rx[i];
        }
        cross_check_iterations += 1;
    }
    let cross_check_objective = ev.objective(&x);
    let disagreement = (objective - cross_check_objective).abs();
    if disagreement > 10.0 * tol {
        return Err(Error::OracleDisagreement { what: "latent reference objectives".into(), gap: disagreement });
    }
    let mu_star = DiscreteMeasure::new(mu)?;
    let residual = first_order_residual(&mu_star, p)?;
    Ok(LatentReference {
        mu_star,
        objective,
        residual,
        newton_iterations,
        cross_check_objective,
        cross_check_gap: gap,
        cross_check_iterations,
        disagreement,
    })
}

/// Newton direction for `−Σ ν_j ln (T_K μ)_j` restricted to `free` and to
/// zero total mass change.
fn latent_newton_direction(ev: &LatentEval<'_>, mu: &[f64], r: &[f64], free: &[usize]) -> Vec<f64> {
    let n = mu.len();
    let f = free.len();
    let t = ev.pushed(mu);
    let w: Vec<f64> = ev.nu.iter().zip(&t).map(|(v, ti)| v / (ti * ti)).collect();
    let mut kkt = DMatrix::zeros(f + 1, f + 1);
    let mut rhs = DVector::zeros(f + 1);
    let mut max_diag = 0.0f64;
    for (a, &i) in free.iter().enumerate() {
        for (b, &l) in free.iter().enumerate() {
            let h = compensated_sum((0..w.len()).map(|j| w[j] * ev.k.get(i, j) * ev.k.get(l, j)));
            kkt[(a, b)] = h;
        }
        max_diag = max_diag.max(kkt[(a, a)]);
        kkt[(a, f)] = 1.0;
        kkt[(f, a)] = 1.0;
        rhs[a] = r[i];
    }
    for a in 0..f {
        kkt[(a, a)] += 1e-13 * max_diag;
    }
    let mut d = vec![0.0; n];
    match kkt.lu().solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => {
            for (a, &i) in free.iter().enumerate() {
                d[i] = sol[a];
            }
        }
        _ => {
            let mean = compensated_sum(free.iter().map(|&i| r[i])) / f as f64;
            for &i in free {
                d[i] = r[i] - mean;
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::{Objective, Scaled};
    use crate::measures::{product, ConditionalKernel};

    fn m(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        assert_eq!(compensated_sum([1.0, 1e100, 1.0, -1e100]), 2.0);
    }

    #[test]
    fn fd_of_linear_is_flat() {
        let f = Objective::Linear { coefficients: vec![1.0, -2.0, 0.5] };
        let rep = fd_directional_derivative(&f, &[0.2, 0.3, 0.5], &[1.0, 1.0, -1.0], &FdSchedule::default()).unwrap();
        for q in &rep.quotients {
            assert!((q - rep.analytic).abs() < 1e-10);
        }
    }

    #[test]
    fn fd_of_kl_converges() {
        let f = Objective::KlToTarget { target: m(&[0.2, 0.5, 0.3]) };
        let rep = fd_directional_derivative(&f, &[0.4, 0.4, 0.2], &[0.1, -0.3, 0.2], &FdSchedule::default()).unwrap();
        assert!(rep.gaps[3] < 1e-4, "{:?}", rep.gaps);
        assert!(rep.gaps_shrink());
        assert!(rep.quotients_monotone(1e-12));
    }

    #[test]
    fn convexity_probe_flags_concave_control() {
        let f = Objective::KlToTarget { target: m(&[0.5, 0.5]) };
        let (a, b) = ([0.9, 0.1], [0.2, 0.8]);
        assert!(convexity_probe(&f, &a, &b, 101).unwrap() >= -1e-12);
        assert!(convexity_probe(&Scaled(-1.0, &f), &a, &b, 101).unwrap() < -1e-3);
        let lin = Objective::Linear { coefficients: vec![2.0, 3.0] };
        assert!(convexity_probe(&lin, &a, &b, 11).unwrap().abs() < 1e-15);
    }

    #[test]
    fn subproblem_with_zero_gradient_returns_mu() {
        let mu = m(&[0.2, 0.3, 0.5]);
        let nu = subproblem_argmin_oracle(&[0.0; 3], &BregmanPotential::entropy(3), &mu, 1.0, &Constraint::Simplex)
            .unwrap();
        for (a, b) in nu.weights().iter().zip(mu.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_cost_eot_reference_is_the_product() {
        let (mu, nu) = (m(&[0.3, 0.7]), m(&[0.2, 0.2, 0.6]));
        let p = EotProblem::new(Matrix::filled(2, 3, 0.0).unwrap(), 1.0, mu.clone(), nu.clone()).unwrap();
        let r = reference_eot(&p, 1e-14).unwrap();
        let prod = product(&mu, &nu);
        for (a, b) in r.coupling.as_slice().iter().zip(prod.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn eot_reference_of_two_by_two() {
        let cost = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = EotProblem::new(cost, 1.0, m(&[0.5, 0.5]), m(&[0.5, 0.5])).unwrap();
        let r = reference_eot(&p, 1e-14).unwrap();
        // Symmetric optimum: diagonal mass d with d²/(½−d)² = e², so d = e/(2(1+e)).
        let e = std::f64::consts::E;
        let d = e / (2.0 * (1.0 + e));
        assert!((r.coupling.get(0, 0) - d).abs() < 1e-14);
        assert!((r.coupling.get(0, 1) - (0.5 - d)).abs() < 1e-14);
    }

    #[test]
    fn latent_reference_of_near_identity_kernel_is_nu() {
        let k = ConditionalKernel::row_normalized(
            Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 1e-3 }).unwrap(),
        )
        .unwrap();
        let nu = m(&[0.2, 0.3, 0.5]);
        let p = LatentProblem::new(k.clone(), nu.clone(), DiscreteMeasure::uniform(3).unwrap()).unwrap();
        let r = reference_latent(&p, 1e-12).unwrap();
        assert!(r.objective.abs() < 1e-12);
        let pushed = crate::em::forward(&k, &r.mu_star).unwrap();
        assert!(crate::measures::tv_slices(pushed.weights(), nu.weights()) < 1e-9);
    }
}
