//! The mirror descent scheme with step `1/L`,
//!
//! ```text
//! μ_{n+1} = argmin_{ν ∈ C} ⟨∇F(μ_n), ν − μ_n⟩ + L · D_φ(ν | μ_n),
//! ```
//!
//! restricted to the `(φ, C)` pairs whose subproblem has a closed form:
//!
//! | potential      | constraint              | update                                          |
//! |----------------|-------------------------|-------------------------------------------------|
//! | negative entropy | none (nonnegative cone) | `μ · exp(−∇F(μ)/L)`                          |
//! | negative entropy | probability simplex     | same, renormalized to mass 1                  |
//! | negative entropy | fixed second marginal   | same, then each column rescaled to `ν_j`      |
//! | squared norm   | none (nonnegative cone) | `max(0, μ − ∇F(μ)/(2L))`                        |
//!
//! The "none" constraint still keeps iterates in the cone of nonnegative
//! measures; for the squared norm the clamp is the exact projection since the
//! subproblem is separable.

use serde::Serialize;

use crate::divergences::{bregman, finite_gradient, finite_value, BregmanPotential, ExtendedReal, Functional};
use crate::error::{Error, Result};
use crate::measures::{tv_slices, variation_seminorm, DiscreteMeasure};
use crate::numeric::{ln_weight, logsumexp};

/// Feasible set of the subproblem.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// Nonnegative measures, no further constraint.
    Unconstrained,
    /// Probability vectors.
    Simplex,
    /// Couplings (flattened row-major, `target.len()` columns) whose second
    /// marginal equals `target`.
    FixedMarginalY(DiscreteMeasure),
}

impl Constraint {
    /// Distance of `x` to the constraint set, measured on the constrained
    /// quantity (total mass, or ℓ1 gap of the column sums).
    pub fn residual(&self, x: &[f64]) -> f64 {
        match self {
            Self::Unconstrained => x.iter().map(|&v| (-v).max(0.0)).sum(),
            Self::Simplex => (x.iter().sum::<f64>() - 1.0).abs(),
            Self::FixedMarginalY(target) => {
                let m = target.len();
                let mut cols = vec![0.0; m];
                for row in x.chunks(m) {
                    for (c, &v) in cols.iter_mut().zip(row) {
                        *c += v;
                    }
                }
                tv_slices(&cols, target.weights())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdConfig {
    /// Relative smoothness constant `L`; the step is `1/L`.
    pub smooth: f64,
    /// Relative strong convexity constant `l`, used only by rate bounds.
    pub strongly_convex: f64,
    pub max_iters: usize,
    pub constraint: Constraint,
    /// Stop once the objective decreases by less than this. Zero runs every
    /// iteration.
    pub stop_tol: f64,
}

impl MdConfig {
    pub fn new(smooth: f64, strongly_convex: f64, max_iters: usize, constraint: Constraint) -> Result<Self> {
        validate_constants(strongly_convex, smooth)?;
        Ok(Self { smooth, strongly_convex, max_iters, constraint, stop_tol: 0.0 })
    }

    pub fn with_stop_tol(mut self, stop_tol: f64) -> Self {
        self.stop_tol = stop_tol;
        self
    }
}

fn validate_constants(l: f64, big_l: f64) -> Result<()> {
    if !(big_l > 0.0 && big_l.is_finite() && l >= 0.0 && l <= big_l) {
        return Err(Error::InvalidConstants { l, big_l });
    }
    Ok(())
}

/// One mirror descent step.
pub fn md_step(
    f: &dyn Functional,
    phi: &BregmanPotential,
    mu: &DiscreteMeasure,
    cfg: &MdConfig,
) -> Result<DiscreteMeasure> {
    validate_constants(cfg.strongly_convex, cfg.smooth)?;
    let x = mu.weights();
    let grad = f.first_variation(x)?;
    if grad.len() != x.len() {
        return Err(Error::SupportMismatch { left: grad.len(), right: x.len() });
    }
    let step = 1.0 / cfg.smooth;
    match (phi, &cfg.constraint) {
        (BregmanPotential::NegEntropy { reference }, constraint) => {
            if reference.len() != x.len() {
                return Err(Error::SupportMismatch { left: reference.len(), right: x.len() });
            }
            // ν ≪ μ is forced by D_φ(ν|μ) < ∞, so zero weights stay put and
            // their gradient entries never matter.
            let mut log_w = Vec::with_capacity(x.len());
            for (i, (&w, &g)) in x.iter().zip(&grad).enumerate() {
                if w == 0.0 {
                    log_w.push(f64::NEG_INFINITY);
                } else if !g.is_finite() {
                    return Err(Error::DomainViolation(format!("first variation is {g} at index {i}")));
                } else {
                    log_w.push(w.ln() - step * g);
                }
            }
            match constraint {
                Constraint::Unconstrained => DiscreteMeasure::new(log_w.into_iter().map(f64::exp).collect()),
                Constraint::Simplex => {
                    let lse = logsumexp(log_w.iter().copied());
                    if lse == f64::NEG_INFINITY {
                        return Err(Error::DomainViolation("zero measure cannot be normalized".into()));
                    }
                    DiscreteMeasure::new(log_w.into_iter().map(|v| (v - lse).exp()).collect())
                }
                Constraint::FixedMarginalY(target) => {
                    let m = target.len();
                    if x.len() % m != 0 {
                        return Err(Error::ShapeMismatch {
                            expected: format!("a coupling with {m} columns"),
                            got: format!("{} entries", x.len()),
                        });
                    }
                    let n = x.len() / m;
                    let mut out = vec![0.0; x.len()];
                    for j in 0..m {
                        let lse = logsumexp((0..n).map(|i| log_w[i * m + j]));
                        if lse == f64::NEG_INFINITY {
                            return Err(Error::ColumnOfZeroMass { col: j });
                        }
                        let shift = ln_weight(target.weights()[j]) - lse;
                        for i in 0..n {
                            out[i * m + j] = (log_w[i * m + j] + shift).exp();
                        }
                    }
                    DiscreteMeasure::new(out)
                }
            }
        }
        (BregmanPotential::SquaredNorm, Constraint::Unconstrained) => {
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::DomainViolation(format!("first variation is not finite at index {i}")));
            }
            let half_step = 0.5 * step;
            DiscreteMeasure::new(x.iter().zip(&grad).map(|(&w, &g)| (w - half_step * g).max(0.0)).collect())
        }
        (phi, c) => Err(Error::UnsupportedCombination(format!(
            "no closed-form step for potential {} with constraint {c:?}",
            potential_name(phi)
        ))),
    }
}

fn potential_name(phi: &BregmanPotential) -> &'static str {
    match phi {
        BregmanPotential::NegEntropy { .. } => "neg_entropy",
        BregmanPotential::SquaredNorm => "squared_norm",
        BregmanPotential::MmdKernel { .. } => "mmd_kernel",
    }
}

/// Upper bound on `F(μ_n) − F(ν)` after `n ≥ 1` steps,
///
/// ```text
/// l·D0 / ((1 + l/(L − l))^n − 1)   for 0 < l < L,
/// L·D0 / n                          for l = 0 (the limit),
/// 0                                 for l = L (the limit),
/// ```
///
/// where `D0 = D_φ(ν|μ_0)`. The power is evaluated as `expm1(n·ln1p(·))`,
/// which stays accurate when `l/(L − l)` is tiny.
pub fn rate_bound(l: f64, big_l: f64, d0: f64, n: usize) -> Result<f64> {
    validate_constants(l, big_l)?;
    if n == 0 {
        return Err(Error::InvalidParameter("rate bound needs n >= 1".into()));
    }
    if !(d0 >= -1e-12) || d0.is_nan() {
        return Err(Error::InvalidParameter(format!("initial divergence {d0} is negative")));
    }
    let d0 = d0.max(0.0);
    if d0 == 0.0 || l == big_l {
        return Ok(0.0);
    }
    if l == 0.0 {
        return Ok(big_l * d0 / n as f64);
    }
    if d0.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let growth = (n as f64 * (l / (big_l - l)).ln_1p()).exp_m1();
    Ok(l * d0 / growth)
}

/// `G(ν) + D_φ(ν|μ) − G(ν̄) − D_φ(ν̄|μ) − D_φ(ν|ν̄)` where `ν̄` minimizes
/// `G + D_φ(·|μ)`. Nonnegative whenever `ν̄` is the true minimizer.
pub fn three_point_residual(
    g: &dyn Functional,
    phi: &dyn Functional,
    mu: &[f64],
    nu: &[f64],
    nu_bar: &[f64],
) -> Result<f64> {
    let d = |a: &[f64], b: &[f64], what: &str| bregman(phi, a, b)?.require_finite(what);
    Ok(finite_value(g, nu, "G(ν)")? + d(nu, mu, "D(ν|μ)")?
        - finite_value(g, nu_bar, "G(ν̄)")?
        - d(nu_bar, mu, "D(ν̄|μ)")?
        - d(nu, nu_bar, "D(ν|ν̄)")?)
}

/// Oscillation of `∇φ(μ_{n+1}) − ∇φ(μ_n) + ∇F(μ_n)/L`. Zero (up to rounding)
/// when the step satisfies the dual iteration; the seminorm absorbs the
/// constant offset a mass constraint introduces.
pub fn dual_iteration_residual(
    f: &dyn Functional,
    phi: &dyn Functional,
    mu: &[f64],
    mu_next: &[f64],
    smooth: f64,
) -> Result<f64> {
    let g_next = finite_gradient(phi, mu_next)?;
    let g_cur = finite_gradient(phi, mu)?;
    let g_f = finite_gradient(f, mu)?;
    let v: Vec<f64> = (0..mu.len()).map(|i| g_next[i] - g_cur[i] + g_f[i] / smooth).collect();
    variation_seminorm(&v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub n: usize,
    pub objective: f64,
    /// `D_φ(ν_ref | μ_n)`, when a reference point was given.
    pub bregman_to_ref: Option<ExtendedReal>,
    /// Certified bound on `F(μ_n) − F(ν_ref)`; absent at `n = 0`.
    pub rate_bound: Option<f64>,
    pub constraint_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    MaxIters,
    Stalled,
}

/// Per-iteration history of a mirror descent run.
#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    #[serde(skip)]
    pub iterates: Vec<DiscreteMeasure>,
    pub status: TraceStatus,
}

pub const TRACE_CSV_HEADER: &str = "n,objective,bregman_to_ref,rate_bound,constraint_residual";

fn csv_ext(v: Option<ExtendedReal>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl Trace {
    pub fn last(&self) -> &DiscreteMeasure {
        self.iterates.last().expect("a trace always holds μ0")
    }

    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.objective)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},{},{},{:e}\n",
                r.n,
                r.objective,
                csv_ext(r.bregman_to_ref),
                csv_ext(r.rate_bound.map(ExtendedReal::Finite)),
                r.constraint_residual
            ));
        }
        out
    }
}

/// Runs `cfg.max_iters` mirror descent steps from `mu0`, recording the
/// objective, the divergence to `reference` and the certified rate bound.
pub fn run_md(
    f: &dyn Functional,
    phi: &BregmanPotential,
    mu0: &DiscreteMeasure,
    reference: Option<&DiscreteMeasure>,
    cfg: &MdConfig,
) -> Result<Trace> {
    validate_constants(cfg.strongly_convex, cfg.smooth)?;
    let d0 = match reference {
        Some(r) => Some(bregman(phi, r.weights(), mu0.weights())?),
        None => None,
    };
    let record = |n: usize, mu: &DiscreteMeasure, objective: f64| -> Result<TraceRecord> {
        let bregman_to_ref = match reference {
            Some(r) => Some(bregman(phi, r.weights(), mu.weights())?),
            None => None,
        };
        let rate = match d0 {
            Some(ExtendedReal::Finite(d)) if n > 0 => Some(rate_bound(cfg.strongly_convex, cfg.smooth, d, n)?),
            _ => None,
        };
        Ok(TraceRecord {
            n,
            objective,
            bregman_to_ref,
            rate_bound: rate,
            constraint_residual: cfg.constraint.residual(mu.weights()),
        })
    };

    let mut objective = finite_value(f, mu0.weights(), "F(μ0)")?;
    let mut records = vec![record(0, mu0, objective)?];
    let mut iterates = vec![mu0.clone()];
    let mut status = TraceStatus::MaxIters;
    for n in 1..=cfg.max_iters {
        let next = md_step(f, phi, iterates.last().expect("nonempty"), cfg)?;
        let next_objective = finite_value(f, next.weights(), "F(μ_n)")?;
        records.push(record(n, &next, next_objective)?);
        iterates.push(next);
        let decrease = objective - next_objective;
        objective = next_objective;
        if cfg.stop_tol > 0.0 && decrease < cfg.stop_tol {
            status = TraceStatus::Stalled;
            break;
        }
    }
    Ok(Trace { records, iterates, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::Objective;
    use crate::matrix::Matrix;

    fn m(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    #[test]
    fn kl_objective_reaches_target_in_one_step() {
        let tau = m(&[0.1, 0.6, 0.3]);
        let f = Objective::KlToTarget { target: tau.clone() };
        let phi = BregmanPotential::neg_entropy(tau.clone());
        let cfg = MdConfig::new(1.0, 1.0, 1, Constraint::Simplex).unwrap();
        let next = md_step(&f, &phi, &m(&[0.5, 0.25, 0.25]), &cfg).unwrap();
        for (a, b) in next.weights().iter().zip(tau.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_is_a_fixed_point_on_the_simplex() {
        let f = Objective::Linear { coefficients: vec![3.0; 4] };
        let phi = BregmanPotential::entropy(4);
        let mu = m(&[0.1, 0.2, 0.3, 0.4]);
        let cfg = MdConfig::new(2.0, 0.0, 1, Constraint::Simplex).unwrap();
        let next = md_step(&f, &phi, &mu, &cfg).unwrap();
        for (a, b) in next.weights().iter().zip(mu.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn squared_norm_step_is_a_clamped_gradient_step() {
        let f = Objective::Linear { coefficients: vec![1.0, -1.0, 10.0] };
        let cfg = MdConfig::new(1.0, 0.0, 1, Constraint::Unconstrained).unwrap();
        let next = md_step(&f, &BregmanPotential::SquaredNorm, &m(&[1.0, 1.0, 1.0]), &cfg).unwrap();
        assert_eq!(next.weights(), &[0.5, 1.5, 0.0]);
    }

    #[test]
    fn unsupported_pairs_are_rejected() {
        let f = Objective::Linear { coefficients: vec![1.0, 1.0] };
        let cfg = MdConfig::new(1.0, 0.0, 1, Constraint::Simplex).unwrap();
        let err = md_step(&f, &BregmanPotential::SquaredNorm, &m(&[0.5, 0.5]), &cfg).unwrap_err();
        assert!(matches!(err, Error::UnsupportedCombination(_)));
        let gram = BregmanPotential::mmd_kernel(Matrix::identity(2).unwrap()).unwrap();
        assert!(md_step(&f, &gram, &m(&[0.5, 0.5]), &cfg).is_err());
    }

    #[test]
    fn rate_bound_examples() {
        assert_eq!(rate_bound(0.0, 1.0, 1.0, 4).unwrap(), 0.25);
        assert!((rate_bound(0.5, 1.0, 1.0, 1).unwrap() - 0.5).abs() < 1e-15);
        for n in 1..20 {
            assert_eq!(rate_bound(0.3, 1.0, 0.0, n).unwrap(), 0.0);
        }
        assert_eq!(rate_bound(1.0, 1.0, 2.0, 3).unwrap(), 0.0);
        assert!(matches!(rate_bound(2.0, 1.0, 1.0, 1), Err(Error::InvalidConstants { .. })));
        assert!(matches!(rate_bound(0.0, 0.0, 1.0, 1), Err(Error::InvalidConstants { .. })));
        assert!(rate_bound(0.0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn rate_bound_is_continuous_at_zero() {
        for n in [1, 5, 100] {
            let limit = rate_bound(0.0, 2.0, 3.0, n).unwrap();
            let near = rate_bound(1e-9, 2.0, 3.0, n).unwrap();
            assert!((near - limit).abs() <= 1e-6 * limit, "{near} vs {limit}");
        }
    }

    #[test]
    fn zero_iterations_give_one_record() {
        let f = Objective::KlToTarget { target: m(&[0.5, 0.5]) };
        let cfg = MdConfig::new(1.0, 1.0, 0, Constraint::Simplex).unwrap();
        let tr = run_md(&f, &BregmanPotential::entropy(2), &m(&[0.2, 0.8]), None, &cfg).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.iterates.len(), 1);
        assert!(tr.to_csv().starts_with(TRACE_CSV_HEADER));
    }

    #[test]
    fn stop_tol_ends_a_converged_run() {
        let tau = m(&[0.3, 0.7]);
        let f = Objective::KlToTarget { target: tau.clone() };
        let cfg = MdConfig::new(1.0, 1.0, 50, Constraint::Simplex).unwrap().with_stop_tol(1e-14);
        let tr = run_md(&f, &BregmanPotential::neg_entropy(tau), &m(&[0.9, 0.1]), None, &cfg).unwrap();
        assert_eq!(tr.status, TraceStatus::Stalled);
        assert!(tr.records.len() < 5);
        assert!(tr.records[1].objective <= 1e-12);
    }

    #[test]
    fn dual_iteration_on_unconstrained_branch() {
        let tau = m(&[0.2, 0.5, 0.3]);
        let f = Objective::KlToTarget { target: tau };
        let phi = BregmanPotential::entropy(3);
        let mu = m(&[0.6, 0.9, 0.1]);
        let cfg = MdConfig::new(3.0, 0.0, 1, Constraint::Unconstrained).unwrap();
        let next = md_step(&f, &phi, &mu, &cfg).unwrap();
        let r = dual_iteration_residual(&f, &phi, mu.weights(), next.weights(), 3.0).unwrap();
        assert!(r <= 1e-10, "{r}");
    }
}
