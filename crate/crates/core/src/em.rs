//! Latent EM with a fixed conditional kernel `K`, which is Richardson–Lucy
//! deconvolution:
//!
//! ```text
//! μ_{n+1}(x) = μ_n(x) Σ_y K(x,y) ν(y) / (T_K μ_n)(y),    (T_K μ)(y) = Σ_x μ(x) K(x,y).
//! ```
//!
//! As mirror descent it runs on couplings `π_n ∈ Π(*,ν)` with objective
//! `F_EM^K(π) = KL(π | p_Xπ ⊗ K)`; the latent iterate is `μ_n = p_X π_n`.

use serde::Serialize;

use crate::divergences::{kl_weights, ExtendedReal};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::measures::{marginal_x, marginal_y, tv_slices, ConditionalKernel, Coupling, DiscreteMeasure};
use crate::mirror_descent::TRACE_CSV_HEADER;
use crate::numeric::xlogxy;

/// Largest first-order residual accepted for a certified minimizer.
pub const STATIONARY_TOL: f64 = 1e-10;

/// Slack of the latent EM rate certificate, absolute and relative.
pub const EM_CERT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentProblem {
    kernel: ConditionalKernel,
    nu: DiscreteMeasure,
    mu0: DiscreteMeasure,
}

impl LatentProblem {
    pub fn new(kernel: ConditionalKernel, nu: DiscreteMeasure, mu0: DiscreteMeasure) -> Result<Self> {
        if !kernel.is_strictly_positive() {
            return Err(Error::DomainViolation("kernel entries must be strictly positive".into()));
        }
        Self::with_degenerate_kernel(kernel, nu, mu0)
    }

    /// Like [`LatentProblem::new`] but lets `K` have zero entries, as the
    /// identity kernel does. Every observed `y` must still be reachable from
    /// `μ0`. Rate certificates assume a strictly positive kernel.
    pub fn with_degenerate_kernel(kernel: ConditionalKernel, nu: DiscreteMeasure, mu0: DiscreteMeasure) -> Result<Self> {
        if kernel.rows() != mu0.len() || kernel.cols() != nu.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} kernel", mu0.len(), nu.len()),
                got: format!("{}x{}", kernel.rows(), kernel.cols()),
            });
        }
        for m in [&nu, &mu0] {
            if !m.is_probability() {
                return Err(Error::NotNormalized { mass: m.mass() });
            }
        }
        if !mu0.is_strictly_positive() {
            return Err(Error::DomainViolation("initial latent measure must be strictly positive".into()));
        }
        let pushed = forward(&kernel, &mu0)?;
        if let Some(index) = (0..nu.len()).find(|&j| nu.weights()[j] > 0.0 && pushed.weights()[j] == 0.0) {
            return Err(Error::UnreachableObservation { index });
        }
        Ok(Self { kernel, nu, mu0 })
    }

    /// Gibbs kernel `K[i,j] ∝ e^{−c[i,j]/ε} ν[j]`, rows normalized.
    pub fn from_gibbs(cost: &Matrix, epsilon: f64, nu: DiscreteMeasure, mu0: DiscreteMeasure) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if cost.cols() != nu.len() {
            return Err(Error::SupportMismatch { left: cost.cols(), right: nu.len() });
        }
        // Shift each row by its minimum cost so the largest factor is e^0.
        let w = Matrix::from_fn(cost.rows(), cost.cols(), |i, j| {
            let min = cost.row(i).iter().copied().fold(f64::INFINITY, f64::min);
            (-(cost.get(i, j) - min) / epsilon).exp() * nu.weights()[j]
        })?;
        Self::new(ConditionalKernel::row_normalized(w)?, nu, mu0)
    }

    pub fn kernel(&self) -> &ConditionalKernel {
        &self.kernel
    }

    pub fn nu(&self) -> &DiscreteMeasure {
        &self.nu
    }

    pub fn mu0(&self) -> &DiscreteMeasure {
        &self.mu0
    }

    /// `KL(ν | T_K μ)`.
    pub fn objective(&self, mu: &DiscreteMeasure) -> Result<f64> {
        let pushed = forward(&self.kernel, mu)?;
        kl_weights(self.nu.weights(), pushed.weights()).require_finite("KL(ν|T_K μ)")
    }
}

/// `(T_K μ)[j] = Σ_i μ[i] K[i,j]`.
pub fn forward(kernel: &ConditionalKernel, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    if kernel.rows() != mu.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("a measure of length {}", kernel.rows()),
            got: format!("length {}", mu.len()),
        });
    }
    DiscreteMeasure::new(kernel.matrix().vec_mat(mu.weights())?)
}

/// `ν[j] / (T_K μ)[j]`, zero where `ν[j] = 0`.
fn likelihood_ratio(mu: &DiscreteMeasure, p: &LatentProblem) -> Result<Vec<f64>> {
    let pushed = forward(p.kernel(), mu)?;
    p.nu()
        .weights()
        .iter()
        .zip(pushed.weights())
        .enumerate()
        .map(|(index, (&v, &t))| match (v > 0.0, t > 0.0) {
            (false, _) => Ok(0.0),
            (true, true) => Ok(v / t),
            (true, false) => Err(Error::UnreachableObservation { index }),
        })
        .collect()
}

/// One Richardson–Lucy step.
pub fn rl_step(mu: &DiscreteMeasure, p: &LatentProblem) -> Result<DiscreteMeasure> {
    let ratio = likelihood_ratio(mu, p)?;
    let back = p.kernel().matrix().mat_vec(&ratio)?;
    DiscreteMeasure::new(mu.weights().iter().zip(&back).map(|(m, b)| m * b).collect())
}

/// The E-step coupling `π[i,j] = μ[i] K[i,j] ν[j] / (T_K μ)[j]`, the unique
/// minimizer of `KL(π | μ⊗K)` over `Π(*,ν)`.
pub fn e_step(mu: &DiscreteMeasure, p: &LatentProblem) -> Result<Coupling> {
    let ratio = likelihood_ratio(mu, p)?;
    let k = p.kernel();
    Coupling::new(Matrix::from_fn(k.rows(), k.cols(), |i, j| mu.weights()[i] * k.get(i, j) * ratio[j])?)
}

/// `F_EM^K(π) = KL(π | p_Xπ ⊗ K)`.
pub fn femk(pi: &Coupling, kernel: &ConditionalKernel) -> Result<f64> {
    if pi.shape() != (kernel.rows(), kernel.cols()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", kernel.rows(), kernel.cols()),
            got: format!("{}x{}", pi.rows(), pi.cols()),
        });
    }
    let px = marginal_x(pi);
    let mut acc = 0.0;
    for i in 0..pi.rows() {
        for j in 0..pi.cols() {
            let t = xlogxy(pi.get(i, j), px.weights()[i] * kernel.get(i, j));
            if t == f64::INFINITY {
                return Err(Error::DomainViolation(format!("π is not dominated by p_Xπ ⊗ K at ({i}, {j})")));
            }
            acc += t;
        }
    }
    Ok(acc)
}

/// First-order stationarity of `μ ↦ KL(ν|T_K μ)` on the simplex:
/// `max_i max(μ_i |r_i − 1|, (r_i − 1)₊)` with `r = K (ν / T_K μ)`.
pub fn first_order_residual(mu: &DiscreteMeasure, p: &LatentProblem) -> Result<f64> {
    let ratio = likelihood_ratio(mu, p)?;
    let r = p.kernel().matrix().mat_vec(&ratio)?;
    Ok(mu.weights().iter().zip(&r).map(|(&m, &ri)| (m * (ri - 1.0).abs()).max(ri - 1.0)).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmRecord {
    pub n: usize,
    /// `KL(ν | T_K μ_n)`.
    pub objective: f64,
    /// `F_EM^K(π_n)` for the coupling `π_n = e_step(μ_{n−1})` whose first
    /// marginal is `μ_n`; absent at `n = 0`.
    pub femk: Option<f64>,
    /// `|Σ μ_n − 1|`.
    pub mass_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmTrace {
    pub records: Vec<EmRecord>,
    #[serde(skip)]
    pub iterates: Vec<DiscreteMeasure>,
}

impl EmTrace {
    pub fn last(&self) -> &DiscreteMeasure {
        self.iterates.last().expect("a trace always holds μ0")
    }

    /// Trace CSV. `certificate` fills `bregman_to_ref` with `KL(μ_*|μ_n)` and
    /// `rate_bound` with the certified bound on the objective.
    pub fn to_csv(&self, certificate: Option<&EmRateReport>) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let (to_ref, bound) = match certificate {
                Some(c) => (
                    c.kl_to_optimum.get(r.n).map(|v| format!("{v:e}")).unwrap_or_default(),
                    c.rows.iter().find(|row| row.n == r.n).map(|row| format!("{:e}", row.bound)).unwrap_or_default(),
                ),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!("{},{:e},{},{},{:e}\n", r.n, r.objective, to_ref, bound, r.mass_residual));
        }
        out
    }
}

/// Runs `n_iters` Richardson–Lucy steps from the problem's `μ0`.
pub fn run_latent_em(p: &LatentProblem, n_iters: usize) -> Result<EmTrace> {
    let mut iterates = vec![p.mu0().clone()];
    let mut records = vec![EmRecord {
        n: 0,
        objective: p.objective(p.mu0())?,
        femk: None,
        mass_residual: (p.mu0().mass() - 1.0).abs(),
    }];
    for n in 1..=n_iters {
        let prev = iterates.last().expect("nonempty");
        let pi = e_step(prev, p)?;
        let next = marginal_x(&pi);
        records.push(EmRecord {
            n,
            objective: p.objective(&next)?,
            femk: Some(femk(&pi, p.kernel())?),
            mass_residual: (next.mass() - 1.0).abs(),
        });
        iterates.push(next);
    }
    Ok(EmTrace { records, iterates })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmRateRow {
    pub n: usize,
    /// `KL(ν | T_K μ_n)`.
    pub lhs: f64,
    /// `KL(ν | T_K μ_*) + numerator / n`.
    pub bound: f64,
    pub ok: bool,
    /// `KL(ν | T_K μ_{n+1})` against the same bound: the statement for the
    /// coupling iterates started at `π_0 = e_step(μ_0)`, whose first marginals
    /// run one step ahead of the latent sequence.
    pub shifted_lhs: Option<f64>,
    pub shifted_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmRateReport {
    /// `KL(ν | T_K μ_*)`.
    pub optimum: f64,
    pub stationarity_residual: f64,
    /// `KL(μ_*|μ_0) + KL(ν|T_K μ_*) − KL(ν|T_K μ_0)`.
    pub numerator: f64,
    /// `KL(π_*|π_0)` with `π_* = e_step(μ_*)`, `π_0 = e_step(μ_0)`; equals
    /// `numerator` up to rounding.
    pub coupling_divergence: f64,
    /// `KL(μ_*|μ_n)` for every `n` in the trace.
    pub kl_to_optimum: Vec<ExtendedReal>,
    pub rows: Vec<EmRateRow>,
    pub ok: bool,
    pub shifted_ok: bool,
}

fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + EM_CERT_TOL + EM_CERT_TOL * lhs.abs()
}

/// Checks the `O(1/n)` rate of latent EM along `trace` against a stationary
/// point `mu_star` of `KL(ν | T_K ·)`.
pub fn em_rate_certificate(trace: &EmTrace, mu_star: &DiscreteMeasure, p: &LatentProblem) -> Result<EmRateReport> {
    let stationarity_residual = first_order_residual(mu_star, p)?;
    if !(stationarity_residual <= STATIONARY_TOL) {
        return Err(Error::NotConverged { what: "latent minimizer".into(), residual: stationarity_residual });
    }
    let mu0 = trace.iterates.first().expect("nonempty trace");
    let optimum = p.objective(mu_star)?;
    let numerator = kl_weights(mu_star.weights(), mu0.weights()).require_finite("KL(μ_*|μ_0)")? + optimum
        - p.objective(mu0)?;
    let coupling_divergence =
        kl_weights(e_step(mu_star, p)?.as_slice(), e_step(mu0, p)?.as_slice()).require_finite("KL(π_*|π_0)")?;
    let kl_to_optimum = trace.iterates.iter().map(|mu| kl_weights(mu_star.weights(), mu.weights())).collect();
    let rows: Vec<EmRateRow> = (1..trace.records.len())
        .map(|n| {
            let lhs = trace.records[n].objective;
            let bound = optimum + numerator / n as f64;
            let shifted_lhs = trace.records.get(n + 1).map(|r| r.objective);
            EmRateRow { n, lhs, bound, ok: within(lhs, bound), shifted_lhs, shifted_ok: shifted_lhs.map(|s| within(s, bound)) }
        })
        .collect();
    Ok(EmRateReport {
        optimum,
        stationarity_residual,
        numerator,
        coupling_divergence,
        kl_to_optimum,
        ok: rows.iter().all(|r| r.ok),
        shifted_ok: rows.iter().all(|r| r.shifted_ok != Some(false)),
        rows,
    })
}

/// `TV(p_Yπ, ν)`, the E-step feasibility residual.
pub fn e_step_residual(pi: &Coupling, nu: &DiscreteMeasure) -> f64 {
    tv_slices(marginal_y(pi).weights(), nu.weights())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    fn hand_problem() -> LatentProblem {
        let k = ConditionalKernel::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        LatentProblem::new(k, m(&[0.7, 0.3]), m(&[0.5, 0.5])).unwrap()
    }

    #[test]
    fn forward_by_hand() {
        let p = hand_problem();
        let t = forward(p.kernel(), p.mu0()).unwrap();
        assert!((t.weights()[0] - 0.55).abs() < 1e-15);
        assert!((t.weights()[1] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn rl_step_by_hand() {
        let p = hand_problem();
        let mu1 = rl_step(p.mu0(), &p).unwrap();
        let want = [0.5 * (0.9 * 0.7 / 0.55 + 0.1 * 0.3 / 0.45), 0.5 * (0.2 * 0.7 / 0.55 + 0.8 * 0.3 / 0.45)];
        for (a, b) in mu1.weights().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let via_e = marginal_x(&e_step(p.mu0(), &p).unwrap());
        for (a, b) in mu1.weights().iter().zip(via_e.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_kernel_recovers_observations() {
        let k = ConditionalKernel::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = LatentProblem::with_degenerate_kernel(k, m(&[0.3, 0.7]), m(&[0.5, 0.5])).unwrap();
        let mu1 = rl_step(p.mu0(), &p).unwrap();
        assert!(tv_slices(mu1.weights(), p.nu().weights()) <= 1e-15);
        let pi = e_step(p.mu0(), &p).unwrap();
        assert_eq!(pi.get(0, 1), 0.0);
        assert!((pi.get(1, 1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn product_coupling_has_zero_femk() {
        let p = hand_problem();
        let k = p.kernel();
        let pi = Coupling::new(Matrix::from_fn(2, 2, |i, j| [0.3, 0.7][i] * k.get(i, j)).unwrap()).unwrap();
        assert!(femk(&pi, k).unwrap().abs() < 1e-15);
    }

    #[test]
    fn unreachable_observation_is_reported() {
        let k = ConditionalKernel::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let p = LatentProblem { kernel: k, nu: m(&[0.5, 0.5]), mu0: m(&[0.5, 0.5]) };
        assert_eq!(rl_step(p.mu0(), &p).unwrap_err(), Error::UnreachableObservation { index: 1 });
    }

    #[test]
    fn descent_and_data_processing_on_hand_instance() {
        let p = hand_problem();
        let tr = run_latent_em(&p, 50).unwrap();
        for w in tr.records.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-15);
            assert!(w[1].objective <= w[1].femk.unwrap() + 1e-15);
            assert!(w[1].mass_residual < 1e-14);
        }
    }
}
