//! Entropic optimal transport
//!
//! ```text
//! OT_ε(μ, ν) = min_{π ∈ Π(μ, ν)} KL(π | e^{−c/ε} μ⊗ν)
//! ```
//!
//! solved by primal Sinkhorn: alternate exact KL projections onto `Π(μ,*)`
//! (row rescaling) and `Π(*,ν)` (column rescaling). The solver keeps the
//! iterate as log-scalings `π = exp(a ⊕ b + ln R)` over the normalized
//! reference coupling `R`, so small `ε` never underflows.
//!
//! Potentials follow the convention `π = exp((f ⊕ g − c)/ε) · μ⊗ν` with the
//! original, unshifted cost, and the gauge `⟨f, μ⟩ = 0`.

use serde::Serialize;

use crate::divergences::{kl_weights, ExtendedReal, CERT_ABS_TOL, CERT_REL_TOL};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::measures::{marginal_x, marginal_y, tv_slices, variation_seminorm, Coupling, DiscreteMeasure};
use crate::mirror_descent::{rate_bound, TRACE_CSV_HEADER};
use crate::numeric::{dot, ln_weight, logsumexp};

/// Largest extraction residual (in units of `ε`, i.e. in log space) accepted
/// when reading potentials off a coupling.
pub const EXP_FORM_TOL: f64 = 1e-8;

/// Marginal residual (ℓ1) below which a coupling counts as the optimum.
pub const OPTIMUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EotProblem {
    cost: Matrix,
    epsilon: f64,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    /// `ln Σ e^{−c/ε} μ⊗ν`. Subtracting it makes the reference coupling a
    /// probability, which is the same as shifting `c` by `ε · log_shift`.
    log_shift: f64,
}

impl EotProblem {
    pub fn new(cost: Matrix, epsilon: f64, mu: DiscreteMeasure, nu: DiscreteMeasure) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if cost.rows() != mu.len() || cost.cols() != nu.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} cost", mu.len(), nu.len()),
                got: format!("{}x{}", cost.rows(), cost.cols()),
            });
        }
        for m in [&mu, &nu] {
            if !m.is_probability() {
                return Err(Error::NotNormalized { mass: m.mass() });
            }
            if let Some(index) = m.weights().iter().position(|&w| w <= 0.0) {
                return Err(Error::DomainViolation(format!("marginal weight at index {index} is not positive")));
            }
        }
        let mut p = Self { cost, epsilon, mu, nu, log_shift: 0.0 };
        p.log_shift = logsumexp((0..p.rows()).flat_map(|i| (0..p.cols()).map(move |j| (i, j))).map(|(i, j)| p.raw_log_ref(i, j)));
        Ok(p)
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mu(&self) -> &DiscreteMeasure {
        &self.mu
    }

    pub fn nu(&self) -> &DiscreteMeasure {
        &self.nu
    }

    pub fn log_shift(&self) -> f64 {
        self.log_shift
    }

    pub fn rows(&self) -> usize {
        self.cost.rows()
    }

    pub fn cols(&self) -> usize {
        self.cost.cols()
    }

    fn raw_log_ref(&self, i: usize, j: usize) -> f64 {
        -self.cost.get(i, j) / self.epsilon + self.mu.weights()[i].ln() + self.nu.weights()[j].ln()
    }

    /// `ln R[i,j]` for the normalized reference coupling.
    pub fn log_ref(&self, i: usize, j: usize) -> f64 {
        self.raw_log_ref(i, j) - self.log_shift
    }

    /// `(1 + 4 e^{3 D_c/ε})`, the inverse strong convexity constant.
    pub fn stability_constant(&self) -> f64 {
        1.0 + 4.0 * (3.0 * dc(&self.cost) / self.epsilon).exp()
    }
}

/// `e^{−c/ε} μ⊗ν` normalized to mass 1.
pub fn reference_coupling(p: &EotProblem) -> Coupling {
    let data = Matrix::from_fn(p.rows(), p.cols(), |i, j| p.log_ref(i, j).exp()).expect("finite reference");
    Coupling::new(data).expect("nonnegative reference")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Potentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl Potentials {
    /// `exp((f_i + g_j − c_ij)/ε) μ_i ν_j`.
    pub fn coupling(&self, p: &EotProblem) -> Coupling {
        let eps = p.epsilon();
        let (mu, nu) = (p.mu().weights(), p.nu().weights());
        let data = Matrix::from_fn(p.rows(), p.cols(), |i, j| {
            ((self.f[i] + self.g[j] - p.cost().get(i, j)) / eps + mu[i].ln() + nu[j].ln()).exp()
        })
        .expect("finite potentials");
        Coupling::new(data).expect("nonnegative")
    }

    fn from_scalings(a: &[f64], b: &[f64], p: &EotProblem) -> Self {
        let eps = p.epsilon();
        let mut f: Vec<f64> = a.iter().map(|&x| eps * (x - p.log_shift())).collect();
        let mut g: Vec<f64> = b.iter().map(|&x| eps * x).collect();
        let s = dot(&f, p.mu().weights());
        f.iter_mut().for_each(|v| *v -= s);
        g.iter_mut().for_each(|v| *v += s);
        Self { f, g }
    }
}

/// Least-squares split `h[i,j] ≈ a_i + b_j`, returning the largest residual.
fn fit_additive(h: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let a: Vec<f64> = (0..rows).map(|i| h[i * cols..(i + 1) * cols].iter().sum::<f64>() / cols as f64).collect();
    let mean_a = a.iter().sum::<f64>() / rows as f64;
    let b: Vec<f64> =
        (0..cols).map(|j| (0..rows).map(|i| h[i * cols + j]).sum::<f64>() / rows as f64 - mean_a).collect();
    let mut residual = 0.0f64;
    for i in 0..rows {
        for j in 0..cols {
            let r = (h[i * cols + j] - a[i] - b[j]).abs();
            residual = if r.is_nan() { f64::INFINITY } else { residual.max(r) };
        }
    }
    (a, b, residual)
}

/// Potentials of `π` relative to its own marginals:
/// `π = exp((f ⊕ g − c)/ε) · p_Xπ ⊗ p_Yπ`.
pub fn extract_potentials(pi: &Coupling, cost: &Matrix, epsilon: f64) -> Result<Potentials> {
    if pi.shape() != cost.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", cost.rows(), cost.cols()),
            got: format!("{}x{}", pi.rows(), pi.cols()),
        });
    }
    let (n, m) = pi.shape();
    let (px, py) = (marginal_x(pi), marginal_y(pi));
    let mut h = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            h.push(
                ln_weight(pi.get(i, j)) - ln_weight(px.weights()[i]) - ln_weight(py.weights()[j])
                    + cost.get(i, j) / epsilon,
            );
        }
    }
    let (a, b, residual) = fit_additive(&h, n, m);
    if residual > EXP_FORM_TOL {
        return Err(Error::NotExponentialForm { residual });
    }
    Ok(Potentials { f: a.iter().map(|v| epsilon * v).collect(), g: b.iter().map(|v| epsilon * v).collect() })
}

/// Row rescaling onto `Π(μ,*)`: `π[i,·] · μ_i / (p_Xπ)_i`.
pub fn half_step_rows(pi: &Coupling, mu: &DiscreteMeasure) -> Result<Coupling> {
    if mu.len() != pi.rows() {
        return Err(Error::SupportMismatch { left: mu.len(), right: pi.rows() });
    }
    let px = marginal_x(pi);
    if let Some(row) = px.weights().iter().position(|&w| w == 0.0) {
        return Err(Error::RowOfZeroMass { row });
    }
    let (n, m) = pi.shape();
    let data = Matrix::from_fn(n, m, |i, j| pi.get(i, j) * (mu.weights()[i] / px.weights()[i]))?;
    Coupling::new(data)
}

/// Column rescaling onto `Π(*,ν)`.
pub fn step_cols(pi: &Coupling, nu: &DiscreteMeasure) -> Result<Coupling> {
    if nu.len() != pi.cols() {
        return Err(Error::SupportMismatch { left: nu.len(), right: pi.cols() });
    }
    let py = marginal_y(pi);
    if let Some(col) = py.weights().iter().position(|&w| w == 0.0) {
        return Err(Error::ColumnOfZeroMass { col });
    }
    let (n, m) = pi.shape();
    let data = Matrix::from_fn(n, m, |i, j| pi.get(i, j) * (nu.weights()[j] / py.weights()[j]))?;
    Coupling::new(data)
}

/// One full iteration `π ↦ step_cols(half_step_rows(π, μ), ν)` on a
/// materialized coupling.
pub fn sinkhorn_iteration(pi: &Coupling, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Coupling> {
    step_cols(&half_step_rows(pi, mu)?, nu)
}

/// `½ max_{y,y'} [max_x (c[x,y] − c[x,y']) + max_x' (c[x',y'] − c[x',y])]`,
/// equal to `½ sup [c(x,y) + c(x',y') − c(x,y') − c(x',y)]`.
pub fn dc(cost: &Matrix) -> f64 {
    let (n, m) = cost.shape();
    let mut best = 0.0f64;
    for y in 0..m {
        for y2 in (y + 1)..m {
            let mut up = f64::NEG_INFINITY;
            let mut down = f64::NEG_INFINITY;
            for x in 0..n {
                let d = cost.get(x, y) - cost.get(x, y2);
                up = up.max(d);
                down = down.max(-d);
            }
            best = best.max(up + down);
        }
    }
    0.5 * best
}

/// `λ = (e^{D_c/ε} − 1)/(e^{D_c/ε} + 1) = tanh(D_c/(2ε))`.
pub fn contraction_factor(cost: &Matrix, epsilon: f64) -> f64 {
    (dc(cost) / (2.0 * epsilon)).tanh()
}

fn check_transform_shapes(len: usize, weights: usize, cost_dim: usize) -> Result<()> {
    if len != weights || len != cost_dim {
        return Err(Error::SupportMismatch { left: len, right: weights.min(cost_dim) });
    }
    Ok(())
}

/// `T_μ(f)_j = −ε ln Σ_i exp((f_i − c_ij)/ε) μ_i`, a function on `Y`.
pub fn soft_c_transform_x(f: &[f64], mu: &DiscreteMeasure, cost: &Matrix, epsilon: f64) -> Result<Vec<f64>> {
    check_transform_shapes(f.len(), mu.len(), cost.rows())?;
    let w = mu.weights();
    Ok((0..cost.cols())
        .map(|j| -epsilon * logsumexp((0..f.len()).map(|i| (f[i] - cost.get(i, j)) / epsilon + ln_weight(w[i]))))
        .collect())
}

/// `T_ν(g)_i = −ε ln Σ_j exp((g_j − c_ij)/ε) ν_j`, a function on `X`.
pub fn soft_c_transform_y(g: &[f64], nu: &DiscreteMeasure, cost: &Matrix, epsilon: f64) -> Result<Vec<f64>> {
    check_transform_shapes(g.len(), nu.len(), cost.cols())?;
    let w = nu.weights();
    Ok((0..cost.rows())
        .map(|i| -epsilon * logsumexp((0..g.len()).map(|j| (g[j] - cost.get(i, j)) / epsilon + ln_weight(w[j]))))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Compares `‖T_μ(f̃) − T_μ(f)‖_var` with `λ ‖f̃ − f‖_var`.
pub fn contraction_check(
    f: &[f64],
    f_tilde: &[f64],
    mu: &DiscreteMeasure,
    cost: &Matrix,
    epsilon: f64,
) -> Result<ContractionReport> {
    let t = soft_c_transform_x(f, mu, cost, epsilon)?;
    let t_tilde = soft_c_transform_x(f_tilde, mu, cost, epsilon)?;
    let diff_out: Vec<f64> = t_tilde.iter().zip(&t).map(|(a, b)| a - b).collect();
    let diff_in: Vec<f64> = f_tilde.iter().zip(f).map(|(a, b)| a - b).collect();
    let lhs = variation_seminorm(&diff_out)?;
    let rhs = contraction_factor(cost, epsilon) * variation_seminorm(&diff_in)?;
    Ok(ContractionReport { lhs, rhs, ok: lhs <= rhs + CERT_ABS_TOL })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, ok: lhs <= rhs + CERT_ABS_TOL + CERT_REL_TOL * lhs.abs() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `KL(π̃|π)` against `(1 + 4e^{3D_c/ε}) KL(p_Xπ̃|p_Xπ)`.
    pub strong_convexity: BoundCheck,
    /// `‖f − f̃‖_var + ‖g − g̃‖_var` against
    /// `2ε e^{3D_c/ε} (‖p_Xπ − p_Xπ̃‖_TV + ‖p_Yπ − p_Yπ̃‖_TV)`.
    pub potentials: BoundCheck,
}

impl StabilityReport {
    pub fn ok(&self) -> bool {
        self.strong_convexity.ok && self.potentials.ok
    }
}

/// `KL(a|b)` for weights of equal total mass, summed as the nonnegative
/// terms `b·((1 + r) ln(1 + r) − r)` with `r = a/b − 1`. The constant in the
/// strong convexity bound reaches `e^{30}` at small ε, so the rounding of the
/// plain sum, which cancels to about `1e-17`, would dominate the bound.
fn kl_equal_mass(a: &[f64], b: &[f64]) -> ExtendedReal {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if x == 0.0 {
            acc += y;
        } else if y == 0.0 {
            return ExtendedReal::Infinity;
        } else {
            let r = (x - y) / y;
            acc += y * ((1.0 + r) * r.ln_1p() - r);
        }
    }
    ExtendedReal::Finite(acc)
}

/// Tolerance on equality of second marginals in [`stability_check`].
pub const SAME_MARGINAL_TOL: f64 = 1e-9;

/// Checks the strong convexity and potential stability bounds for two
/// couplings in exponential form sharing their second marginal.
pub fn stability_check(pi: &Coupling, pi_tilde: &Coupling, p: &EotProblem) -> Result<StabilityReport> {
    let eps = p.epsilon();
    let pot = extract_potentials(pi, p.cost(), eps)?;
    let pot_tilde = extract_potentials(pi_tilde, p.cost(), eps)?;
    let (px, px_t) = (marginal_x(pi), marginal_x(pi_tilde));
    let (py, py_t) = (marginal_y(pi), marginal_y(pi_tilde));
    let tv_y = tv_slices(py.weights(), py_t.weights());
    if tv_y > SAME_MARGINAL_TOL {
        return Err(Error::DomainViolation(format!("second marginals differ by {tv_y:e} in TV")));
    }
    let kl_joint = kl_equal_mass(pi_tilde.as_slice(), pi.as_slice()).require_finite("KL(π̃|π)")?;
    let kl_marg = kl_equal_mass(px_t.weights(), px.weights()).require_finite("KL(p_Xπ̃|p_Xπ)")?;
    let strong_convexity = BoundCheck::new(kl_joint, p.stability_constant() * kl_marg);

    let df: Vec<f64> = pot.f.iter().zip(&pot_tilde.f).map(|(a, b)| a - b).collect();
    let dg: Vec<f64> = pot.g.iter().zip(&pot_tilde.g).map(|(a, b)| a - b).collect();
    let lhs = variation_seminorm(&df)? + variation_seminorm(&dg)?;
    let tv_x = tv_slices(px.weights(), px_t.weights());
    let rhs = 2.0 * eps * (3.0 * dc(p.cost()) / eps).exp() * (tv_x + tv_y);
    Ok(StabilityReport { strong_convexity, potentials: BoundCheck::new(lhs, rhs) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornRecord {
    pub n: usize,
    /// `KL(p_Xπ_n | μ)`, the Sinkhorn objective.
    pub kl_gap: f64,
    pub tv_x: f64,
    pub tv_y: f64,
}

/// History of a Sinkhorn run. Couplings are kept as potentials and
/// materialized on demand with [`SinkhornTrace::coupling`].
#[derive(Debug, Clone, Serialize)]
pub struct SinkhornTrace {
    pub records: Vec<SinkhornRecord>,
    pub potentials: Vec<Potentials>,
}

impl SinkhornTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn coupling(&self, n: usize, p: &EotProblem) -> Coupling {
        self.potentials[n].coupling(p)
    }

    pub fn last_coupling(&self, p: &EotProblem) -> Coupling {
        self.coupling(self.len() - 1, p)
    }

    /// Trace CSV. `certificate` fills the reference columns with `KL(π_*|π_n)`
    /// and the certified linear rate bound.
    pub fn to_csv(&self, certificate: Option<&SinkhornRateReport>) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let (to_ref, bound) = match certificate {
                Some(c) => {
                    let to_ref = c.kl_to_optimum.get(r.n).map(|v| format!("{v:e}")).unwrap_or_default();
                    let bound = c.rows.iter().find(|row| row.n == r.n).map(|row| format!("{:e}", row.linear.rhs));
                    (to_ref, bound.unwrap_or_default())
                }
                None => (String::new(), String::new()),
            };
            out.push_str(&format!("{},{:e},{},{},{:e}\n", r.n, r.kl_gap, to_ref, bound, r.tv_y));
        }
        out
    }
}

fn row_step(a: &mut [f64], b: &[f64], p: &EotProblem) {
    let mu = p.mu().weights();
    for (i, ai) in a.iter_mut().enumerate() {
        *ai = mu[i].ln() - logsumexp((0..b.len()).map(|j| b[j] + p.log_ref(i, j)));
    }
}

fn col_step(a: &[f64], b: &mut [f64], p: &EotProblem) {
    let nu = p.nu().weights();
    for (j, bj) in b.iter_mut().enumerate() {
        *bj = nu[j].ln() - logsumexp((0..a.len()).map(|i| a[i] + p.log_ref(i, j)));
    }
}

fn record(n: usize, a: &[f64], b: &[f64], p: &EotProblem) -> SinkhornRecord {
    let px: Vec<f64> = (0..a.len())
        .map(|i| (a[i] + logsumexp((0..b.len()).map(|j| b[j] + p.log_ref(i, j)))).exp())
        .collect();
    let py: Vec<f64> = (0..b.len())
        .map(|j| (b[j] + logsumexp((0..a.len()).map(|i| a[i] + p.log_ref(i, j)))).exp())
        .collect();
    let kl_gap = kl_weights(&px, p.mu().weights()).finite().unwrap_or(f64::INFINITY);
    SinkhornRecord {
        n,
        kl_gap,
        tv_x: tv_slices(&px, p.mu().weights()),
        tv_y: tv_slices(&py, p.nu().weights()),
    }
}

/// Runs `n_iters` full Sinkhorn iterations from `pi0`, or from the
/// column-rescaled reference coupling when `pi0` is `None`.
pub fn run_sinkhorn(p: &EotProblem, pi0: Option<&Coupling>, n_iters: usize) -> Result<SinkhornTrace> {
    let (n, m) = (p.rows(), p.cols());
    let (mut a, mut b) = match pi0 {
        None => {
            let mut b = vec![0.0; m];
            let a = vec![0.0; n];
            col_step(&a, &mut b, p);
            (a, b)
        }
        Some(pi0) => {
            if pi0.shape() != (n, m) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{n}x{m}"),
                    got: format!("{}x{}", pi0.rows(), pi0.cols()),
                });
            }
            let h: Vec<f64> = (0..n)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| ln_weight(pi0.get(i, j)) - p.log_ref(i, j))
                .collect();
            let (a, b, residual) = fit_additive(&h, n, m);
            if residual > EXP_FORM_TOL {
                return Err(Error::NotExponentialForm { residual });
            }
            (a, b)
        }
    };
    let mut records = vec![record(0, &a, &b, p)];
    let mut potentials = vec![Potentials::from_scalings(&a, &b, p)];
    for it in 1..=n_iters {
        row_step(&mut a, &b, p);
        col_step(&a, &mut b, p);
        records.push(record(it, &a, &b, p));
        potentials.push(Potentials::from_scalings(&a, &b, p));
    }
    Ok(SinkhornTrace { records, potentials })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    /// `KL(μ_n | μ_*)`.
    pub lhs: f64,
    /// `KL(π_*|π_0)/n`.
    pub sublinear: BoundCheck,
    /// The mirror descent rate with `l = (1 + 4e^{3D_c/ε})⁻¹`, `L = 1`.
    pub linear: BoundCheck,
    /// `KL(π_*|π_0) / ((1 + 4e^{3D_c/ε}) ((1 + 4e^{−3D_c/ε})^n − 1))`, the
    /// typeset form of the linear rate. Not implied by the proof; reported
    /// only.
    pub displayed: BoundCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornRateReport {
    pub dc: f64,
    pub strong_convexity: f64,
    /// `KL(π_*|π_0)`.
    pub numerator: f64,
    /// `KL(π_*|π_n)` for every `n` in the trace.
    pub kl_to_optimum: Vec<ExtendedReal>,
    pub rows: Vec<RateRow>,
    pub sublinear_ok: bool,
    pub linear_ok: bool,
    pub displayed_ok: bool,
}

/// Checks both rates of Sinkhorn convergence along `trace` against the
/// optimum `pi_star`.
pub fn rate_certificate(trace: &SinkhornTrace, pi_star: &Coupling, p: &EotProblem) -> Result<SinkhornRateReport> {
    let residual = tv_slices(marginal_x(pi_star).weights(), p.mu().weights())
        + tv_slices(marginal_y(pi_star).weights(), p.nu().weights());
    if !(residual < OPTIMUM_TOL) {
        return Err(Error::NotConverged { what: "optimal coupling".into(), residual });
    }
    let mu_star = marginal_x(pi_star);
    let d = dc(p.cost());
    let c = p.stability_constant();
    let l = 1.0 / c;
    let kl_to_optimum: Vec<ExtendedReal> =
        (0..trace.len()).map(|n| kl_weights(pi_star.as_slice(), trace.coupling(n, p).as_slice())).collect();
    let numerator = kl_to_optimum[0].require_finite("KL(π_*|π_0)")?;
    let displayed_base = 4.0 * (-3.0 * d / p.epsilon()).exp();
    let mut rows = Vec::with_capacity(trace.len().saturating_sub(1));
    for n in 1..trace.len() {
        let mu_n = marginal_x(&trace.coupling(n, p));
        let lhs = kl_weights(mu_n.weights(), mu_star.weights()).require_finite("KL(μ_n|μ_*)")?;
        let displayed = numerator / (c * (n as f64 * displayed_base.ln_1p()).exp_m1());
        rows.push(RateRow {
            n,
            lhs,
            sublinear: BoundCheck::new(lhs, numerator / n as f64),
            linear: BoundCheck::new(lhs, rate_bound(l, 1.0, numerator, n)?),
            displayed: BoundCheck::new(lhs, displayed),
        });
    }
    Ok(SinkhornRateReport {
        dc: d,
        strong_convexity: l,
        numerator,
        kl_to_optimum,
        sublinear_ok: rows.iter().all(|r| r.sublinear.ok),
        linear_ok: rows.iter().all(|r| r.linear.ok),
        displayed_ok: rows.iter().all(|r| r.displayed.ok),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::product;

    fn m(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    fn anti_diag() -> Matrix {
        Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn dc_examples() {
        assert_eq!(dc(&Matrix::filled(3, 4, 2.5).unwrap()), 0.0);
        let sep = Matrix::from_fn(3, 4, |i, j| i as f64 * 0.7 + (j as f64).sqrt()).unwrap();
        assert!(dc(&sep) < 1e-15);
        assert_eq!(dc(&anti_diag()), 1.0);
    }

    #[test]
    fn reference_coupling_of_two_by_two() {
        let p = EotProblem::new(anti_diag(), 1.0, m(&[0.5, 0.5]), m(&[0.5, 0.5])).unwrap();
        let r = reference_coupling(&p);
        let e = (-1.0f64).exp();
        let z = 2.0 + 2.0 * e;
        assert!((r.get(0, 0) - 1.0 / z).abs() < 1e-15);
        assert!((r.get(0, 1) - e / z).abs() < 1e-15);
    }

    #[test]
    fn zero_cost_reference_is_the_product() {
        let (mu, nu) = (m(&[0.2, 0.8]), m(&[0.1, 0.3, 0.6]));
        let p = EotProblem::new(Matrix::filled(2, 3, 0.0).unwrap(), 0.3, mu.clone(), nu.clone()).unwrap();
        let r = reference_coupling(&p);
        let prod = product(&mu, &nu);
        for (a, b) in r.as_slice().iter().zip(prod.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn row_and_column_steps() {
        let pi = Coupling::from_rows(vec![vec![0.1, 0.3], vec![0.2, 0.4]]).unwrap();
        let r = half_step_rows(&pi, &m(&[0.5, 0.5])).unwrap();
        let want = [0.125, 0.375, 1.0 / 6.0, 1.0 / 3.0];
        for (a, b) in r.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let c = step_cols(&pi.transpose(), &m(&[0.5, 0.5])).unwrap();
        for (a, b) in c.transpose().as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn transforms_of_constants() {
        let cost = Matrix::filled(3, 2, 0.0).unwrap();
        let mu = m(&[0.2, 0.3, 0.5]);
        let g = soft_c_transform_x(&[1.5; 3], &mu, &cost, 0.7).unwrap();
        for v in g {
            assert!((v + 1.5).abs() < 1e-14);
        }
        let f = soft_c_transform_y(&[-2.0; 2], &m(&[0.5, 0.5]), &cost, 3.0).unwrap();
        for v in f {
            assert!((v - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_by_two_converges() {
        let p = EotProblem::new(anti_diag(), 1.0, m(&[0.5, 0.5]), m(&[0.5, 0.5])).unwrap();
        let tr = run_sinkhorn(&p, None, 50).unwrap();
        for w in tr.records.windows(2) {
            assert!(w[1].kl_gap <= w[0].kl_gap + 1e-15);
        }
        assert!(tr.records.last().unwrap().kl_gap < 1e-12);
    }

    #[test]
    fn potentials_reconstruct_the_coupling() {
        let cost = Matrix::from_rows(vec![vec![0.3, 0.9, 0.1], vec![0.5, 0.2, 0.8]]).unwrap();
        let p = EotProblem::new(cost, 0.2, m(&[0.4, 0.6]), m(&[0.2, 0.3, 0.5])).unwrap();
        let tr = run_sinkhorn(&p, None, 3).unwrap();
        let pot = &tr.potentials[3];
        assert!(dot(&pot.f, p.mu().weights()).abs() < 1e-14);
        let pi = tr.coupling(3, &p);
        let direct = sinkhorn_iteration(&tr.coupling(2, &p), p.mu(), p.nu()).unwrap();
        for (a, b) in pi.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }
}
