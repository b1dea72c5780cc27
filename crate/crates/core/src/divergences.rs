//! Divergences, Bregman potentials and relative smoothness certificates.
//!
//! Everything here acts on plain weight vectors. A coupling on `X × Y` is
//! handled as a measure on the flattened, row-major product support, so the
//! same potentials serve measures and couplings alike.
//!
//! The Bregman divergence of a convex functional `φ` is always computed from
//! its definition,
//!
//! ```text
//! D_φ(ν|μ) = φ(ν) − φ(μ) − ⟨∇φ(μ), ν − μ⟩,
//! ```
//!
//! where `∇φ(μ)` is the first variation (the vector representing the
//! one-sided directional derivative). Closed forms such as
//! `D_{φ_ne}(ν|μ) = KL(ν|μ)` are properties to be checked, not shortcuts.

use serde::{Serialize, Serializer};

use crate::error::{ensure_same_len, Error, Result};
use crate::matrix::Matrix;
use crate::measures::{ConditionalKernel, DiscreteMeasure};
use crate::numeric::{dot, ln_weight, xlogxy};

/// Absolute slack on every inequality certificate.
pub const CERT_ABS_TOL: f64 = 1e-9;
/// Relative slack on every inequality certificate.
pub const CERT_REL_TOL: f64 = 1e-9;

/// A value in `ℝ ∪ {+∞}`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum ExtendedReal {
    Finite(f64),
    Infinity,
}

impl ExtendedReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Infinity => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Self::Finite(_))
    }

    /// The finite value, or a domain error naming `what`.
    pub fn require_finite(self, what: &str) -> Result<f64> {
        self.finite().ok_or_else(|| Error::DomainViolation(format!("{what} is +inf")))
    }

    fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            Self::Infinity
        } else {
            Self::Finite(v)
        }
    }
}

impl std::fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(v) => std::fmt::Display::fmt(v, f),
            Self::Infinity => f.write_str("inf"),
        }
    }
}

impl std::fmt::LowerExp for ExtendedReal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(v) => std::fmt::LowerExp::fmt(v, f),
            Self::Infinity => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(v) => s.serialize_f64(*v),
            Self::Infinity => s.serialize_str("+inf"),
        }
    }
}

/// `Σ a_i ln(a_i / b_i)` on raw weights; `+∞` when `a ≪ b` fails.
pub fn kl_weights(a: &[f64], b: &[f64]) -> ExtendedReal {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let t = xlogxy(x, y);
        if t == f64::INFINITY {
            return ExtendedReal::Infinity;
        }
        acc += t;
    }
    ExtendedReal::Finite(acc)
}

/// Kullback–Leibler divergence `KL(μ|ν)`.
pub fn kl(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<ExtendedReal> {
    ensure_same_len(mu.len(), nu.len())?;
    Ok(kl_weights(mu.weights(), nu.weights()))
}

/// Negative entropy `φ_ne(μ) = ∫ ln(dμ/dρ) dμ` relative to a reference `ρ`.
/// Numerically identical to `KL(μ|ρ)`; `ρ` need not be a probability.
pub fn neg_entropy(mu: &DiscreteMeasure, reference: &DiscreteMeasure) -> Result<ExtendedReal> {
    kl(mu, reference)
}

/// Squared maximum mean discrepancy `(μ − ν)ᵀ G (μ − ν)` for a PSD Gram matrix.
///
/// Values in `[-1e-8, 0)` are rounding and clamp to zero; anything more
/// negative means `G` is not PSD.
pub fn mmd_sq(mu: &DiscreteMeasure, nu: &DiscreteMeasure, gram: &Matrix) -> Result<f64> {
    ensure_same_len(mu.len(), nu.len())?;
    ensure_same_len(gram.rows(), mu.len())?;
    ensure_same_len(gram.cols(), mu.len())?;
    let diff: Vec<f64> = mu.weights().iter().zip(nu.weights()).map(|(a, b)| a - b).collect();
    let q = gram.quadratic_form(&diff)?;
    if q < -1e-8 {
        return Err(Error::NotPsd { value: q });
    }
    Ok(q.max(0.0))
}

/// A convex functional on weight vectors with a first variation.
///
/// `first_variation` may contain `-∞` entries where a weight sits on the
/// boundary of the domain (e.g. `ln 0` for entropies); callers that need a
/// genuine vector check finiteness.
pub trait Functional {
    fn value(&self, x: &[f64]) -> Result<ExtendedReal>;
    fn first_variation(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<F: Functional + ?Sized> Functional for &F {
    fn value(&self, x: &[f64]) -> Result<ExtendedReal> {
        (**self).value(x)
    }
    fn first_variation(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).first_variation(x)
    }
}

pub(crate) fn finite_value(f: &dyn Functional, x: &[f64], what: &str) -> Result<f64> {
    f.value(x)?.require_finite(what)
}

pub(crate) fn finite_gradient(f: &dyn Functional, x: &[f64]) -> Result<Vec<f64>> {
    let g = f.first_variation(x)?;
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::DomainViolation(format!("first variation does not exist at index {i}")));
    }
    Ok(g)
}

/// `D_F(ν|μ) = F(ν) − F(μ) − ⟨∇F(μ), ν − μ⟩`.
///
/// Directions with `ν_i = μ_i` contribute nothing even where the first
/// variation is infinite; any other infinite component is a domain error.
pub fn bregman(f: &dyn Functional, nu: &[f64], mu: &[f64]) -> Result<ExtendedReal> {
    ensure_same_len(nu.len(), mu.len())?;
    let f_mu = finite_value(f, mu, "F(μ)")?;
    let f_nu = match f.value(nu)? {
        ExtendedReal::Finite(v) => v,
        ExtendedReal::Infinity => return Ok(ExtendedReal::Infinity),
    };
    let grad = f.first_variation(mu)?;
    ensure_same_len(grad.len(), mu.len())?;
    let mut lin = 0.0;
    for (i, ((&g, &a), &b)) in grad.iter().zip(nu).zip(mu).enumerate() {
        let d = a - b;
        if d == 0.0 {
            continue;
        }
        if !g.is_finite() {
            return Err(Error::DomainViolation(format!(
                "first variation at μ is infinite at index {i} where ν moves"
            )));
        }
        lin += g * d;
    }
    Ok(ExtendedReal::from_f64(f_nu - f_mu - lin))
}

fn check_nonnegative(x: &[f64]) -> Result<()> {
    match x.iter().position(|&v| !(v >= 0.0)) {
        Some(i) => Err(Error::DomainViolation(format!("negative or NaN weight {} at index {i}", x[i]))),
        None => Ok(()),
    }
}

/// Bregman potentials.
#[derive(Debug, Clone, PartialEq)]
pub enum BregmanPotential {
    /// `φ(μ) = Σ μ_i ln(μ_i / ρ_i)`, first variation `ln(μ/ρ) + 1`.
    NegEntropy { reference: DiscreteMeasure },
    /// `φ(μ) = Σ μ_i²`, first variation `2μ`. With this convention
    /// `D_φ(ν|μ) = ‖ν − μ‖²` (no factor ½).
    SquaredNorm,
    /// `φ(μ) = μᵀ G μ = ‖m_μ‖²` for a symmetric PSD Gram matrix `G`.
    MmdKernel { gram: Matrix },
}

impl BregmanPotential {
    pub fn neg_entropy(reference: DiscreteMeasure) -> Self {
        Self::NegEntropy { reference }
    }

    /// Negative entropy relative to the counting measure on `n` points.
    pub fn entropy(n: usize) -> Self {
        Self::NegEntropy { reference: DiscreteMeasure::counting(n).expect("n > 0") }
    }

    pub fn mmd_kernel(gram: Matrix) -> Result<Self> {
        if !gram.is_symmetric(1e-12) {
            return Err(Error::InvalidParameter("gram matrix must be symmetric".into()));
        }
        Ok(Self::MmdKernel { gram })
    }

    pub fn divergence(&self, nu: &[f64], mu: &[f64]) -> Result<ExtendedReal> {
        bregman(self, nu, mu)
    }
}

impl Functional for BregmanPotential {
    fn value(&self, x: &[f64]) -> Result<ExtendedReal> {
        match self {
            Self::NegEntropy { reference } => {
                ensure_same_len(x.len(), reference.len())?;
                check_nonnegative(x)?;
                Ok(kl_weights(x, reference.weights()))
            }
            Self::SquaredNorm => Ok(ExtendedReal::Finite(dot(x, x))),
            Self::MmdKernel { gram } => {
                ensure_same_len(x.len(), gram.rows())?;
                Ok(ExtendedReal::Finite(gram.quadratic_form(x)?))
            }
        }
    }

    fn first_variation(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::NegEntropy { reference } => {
                ensure_same_len(x.len(), reference.len())?;
                check_nonnegative(x)?;
                x.iter()
                    .zip(reference.weights())
                    .enumerate()
                    .map(|(i, (&a, &r))| {
                        if r == 0.0 {
                            Err(Error::DomainViolation(format!("reference vanishes at index {i}")))
                        } else {
                            Ok(ln_weight(a) - r.ln() + 1.0)
                        }
                    })
                    .collect()
            }
            Self::SquaredNorm => Ok(x.iter().map(|v| 2.0 * v).collect()),
            Self::MmdKernel { gram } => Ok(gram.mat_vec(x)?.into_iter().map(|v| 2.0 * v).collect()),
        }
    }
}

/// Relative smoothness `L` and strong convexity `l` constants, relative to
/// the negative entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeConstants {
    pub smooth: f64,
    pub strongly_convex: f64,
}

/// Objectives minimized by the mirror descent schemes.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `KL(μ|τ)`.
    KlToTarget { target: DiscreteMeasure },
    /// `MMD²(μ, τ) = (μ − τ)ᵀ G (μ − τ)`.
    MmdToTarget { gram: Matrix, target: DiscreteMeasure },
    /// `KL(p_X π | μ)` on couplings with `cols` columns.
    SinkhornMarginal { target_x: DiscreteMeasure, cols: usize },
    /// `KL(π | p_X π ⊗ K)` on couplings.
    Femk { kernel: ConditionalKernel },
    /// `⟨c, μ⟩`.
    Linear { coefficients: Vec<f64> },
}

impl Objective {
    /// Constants known in closed form, relative to the negative entropy on
    /// probability vectors (or couplings).
    pub fn declared_constants(&self) -> Option<RelativeConstants> {
        match self {
            Self::KlToTarget { .. } => Some(RelativeConstants { smooth: 1.0, strongly_convex: 1.0 }),
            Self::MmdToTarget { gram, .. } => {
                Some(RelativeConstants { smooth: 4.0 * gram.max_diagonal(), strongly_convex: 0.0 })
            }
            Self::SinkhornMarginal { .. } | Self::Femk { .. } => {
                Some(RelativeConstants { smooth: 1.0, strongly_convex: 0.0 })
            }
            Self::Linear { .. } => Some(RelativeConstants { smooth: 0.0, strongly_convex: 0.0 }),
        }
    }
}

fn row_sums(x: &[f64], cols: usize) -> Vec<f64> {
    x.chunks(cols).map(|r| r.iter().sum()).collect()
}

fn check_flat_shape(x: &[f64], rows: usize, cols: usize) -> Result<()> {
    if x.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            expected: format!("{rows}x{cols} coupling"),
            got: format!("{} entries", x.len()),
        });
    }
    Ok(())
}

impl Functional for Objective {
    fn value(&self, x: &[f64]) -> Result<ExtendedReal> {
        check_nonnegative(x)?;
        match self {
            Self::KlToTarget { target } => {
                ensure_same_len(x.len(), target.len())?;
                Ok(kl_weights(x, target.weights()))
            }
            Self::MmdToTarget { gram, target } => {
                ensure_same_len(x.len(), target.len())?;
                let d: Vec<f64> = x.iter().zip(target.weights()).map(|(a, b)| a - b).collect();
                Ok(ExtendedReal::Finite(gram.quadratic_form(&d)?))
            }
            Self::SinkhornMarginal { target_x, cols } => {
                check_flat_shape(x, target_x.len(), *cols)?;
                Ok(kl_weights(&row_sums(x, *cols), target_x.weights()))
            }
            Self::Femk { kernel } => {
                let (n, m) = (kernel.rows(), kernel.cols());
                check_flat_shape(x, n, m)?;
                let r = row_sums(x, m);
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..m {
                        let t = xlogxy(x[i * m + j], r[i] * kernel.get(i, j));
                        if t == f64::INFINITY {
                            return Ok(ExtendedReal::Infinity);
                        }
                        acc += t;
                    }
                }
                Ok(ExtendedReal::Finite(acc))
            }
            Self::Linear { coefficients } => {
                ensure_same_len(x.len(), coefficients.len())?;
                Ok(ExtendedReal::Finite(dot(coefficients, x)))
            }
        }
    }

    fn first_variation(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_nonnegative(x)?;
        match self {
            Self::KlToTarget { target } => {
                ensure_same_len(x.len(), target.len())?;
                Ok(x.iter().zip(target.weights()).map(|(&a, &t)| ln_weight(a) - ln_weight(t) + 1.0).collect())
            }
            Self::MmdToTarget { gram, target } => {
                ensure_same_len(x.len(), target.len())?;
                let d: Vec<f64> = x.iter().zip(target.weights()).map(|(a, b)| a - b).collect();
                Ok(gram.mat_vec(&d)?.into_iter().map(|v| 2.0 * v).collect())
            }
            Self::SinkhornMarginal { target_x, cols } => {
                check_flat_shape(x, target_x.len(), *cols)?;
                let r = row_sums(x, *cols);
                Ok(r.iter()
                    .zip(target_x.weights())
                    .flat_map(|(&ri, &ti)| std::iter::repeat(ln_weight(ri) - ln_weight(ti) + 1.0).take(*cols))
                    .collect())
            }
            Self::Femk { kernel } => {
                let (n, m) = (kernel.rows(), kernel.cols());
                check_flat_shape(x, n, m)?;
                let r = row_sums(x, m);
                let mut g = Vec::with_capacity(n * m);
                for i in 0..n {
                    for j in 0..m {
                        g.push(ln_weight(x[i * m + j]) - ln_weight(r[i] * kernel.get(i, j)));
                    }
                }
                Ok(g)
            }
            Self::Linear { coefficients } => {
                ensure_same_len(x.len(), coefficients.len())?;
                Ok(coefficients.clone())
            }
        }
    }
}

/// `F + G`.
#[derive(Debug, Clone)]
pub struct Sum<A, B>(pub A, pub B);

impl<A: Functional, B: Functional> Functional for Sum<A, B> {
    fn value(&self, x: &[f64]) -> Result<ExtendedReal> {
        Ok(match (self.0.value(x)?, self.1.value(x)?) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::Infinity,
        })
    }
    fn first_variation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let a = self.0.first_variation(x)?;
        let b = self.1.first_variation(x)?;
        Ok(a.iter().zip(&b).map(|(p, q)| p + q).collect())
    }
}

/// `s · F` for a scalar `s`. Negative scales make the result concave and
/// are only meaningful where `F` is finite.
#[derive(Debug, Clone)]
pub struct Scaled<F>(pub f64, pub F);

impl<F: Functional> Functional for Scaled<F> {
    fn value(&self, x: &[f64]) -> Result<ExtendedReal> {
        match self.1.value(x)? {
            ExtendedReal::Finite(v) => Ok(ExtendedReal::Finite(self.0 * v)),
            ExtendedReal::Infinity if self.0 > 0.0 => Ok(ExtendedReal::Infinity),
            ExtendedReal::Infinity if self.0 == 0.0 => Ok(ExtendedReal::Finite(0.0)),
            ExtendedReal::Infinity => Err(Error::DomainViolation("negatively scaled +inf".into())),
        }
    }
    fn first_variation(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.1.first_variation(x)?.into_iter().map(|g| self.0 * g).collect())
    }
}

/// The shifted potential `D_φ(·|ξ)`, itself a convex functional.
#[derive(Debug, Clone)]
pub struct BregmanFrom<F> {
    pub base: F,
    pub anchor: Vec<f64>,
}

impl<F: Functional> Functional for BregmanFrom<F> {
    fn value(&self, x: &[f64]) -> Result<ExtendedReal> {
        bregman(&self.base, x, &self.anchor)
    }
    fn first_variation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let gx = self.base.first_variation(x)?;
        let ga = finite_gradient(&self.base, &self.anchor)?;
        Ok(gx.iter().zip(&ga).map(|(a, b)| a - b).collect())
    }
}

fn cert_slack(scale: f64) -> f64 {
    CERT_ABS_TOL + CERT_REL_TOL * scale.abs()
}

/// One pair `(ν, μ)` of a relative-bounds certificate.
#[derive(Debug, Clone, Serialize)]
pub struct PairCertificate {
    #[serde(rename = "d_F")]
    pub d_f: ExtendedReal,
    pub d_phi: ExtendedReal,
    pub smooth_ok: bool,
    pub convex_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    #[serde(rename = "L")]
    pub smooth: f64,
    #[serde(rename = "l")]
    pub strongly_convex: f64,
    pub pairs: Vec<PairCertificate>,
    pub smooth_ok: bool,
    pub convex_ok: bool,
}

/// Checks `l·D_φ(ν|μ) ≤ D_F(ν|μ) ≤ L·D_φ(ν|μ)` on each `(ν, μ)` pair, with
/// slack `1e-9 + 1e-9·|scale|`.
pub fn certify_relative_bounds(
    f: &dyn Functional,
    phi: &dyn Functional,
    pairs: &[(DiscreteMeasure, DiscreteMeasure)],
    smooth: f64,
    strongly_convex: f64,
) -> Result<CertificateReport> {
    let mut out = Vec::with_capacity(pairs.len());
    for (nu, mu) in pairs {
        let d_f = bregman(f, nu.weights(), mu.weights())?;
        let d_phi = bregman(phi, nu.weights(), mu.weights())?;
        let (smooth_ok, convex_ok) = match (d_f, d_phi) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => {
                let scale = a.abs().max((smooth * b).abs());
                (
                    a <= smooth * b + cert_slack(scale),
                    a >= strongly_convex * b - cert_slack(a.abs().max((strongly_convex * b).abs())),
                )
            }
            (ExtendedReal::Finite(_), ExtendedReal::Infinity) => (true, strongly_convex == 0.0),
            (ExtendedReal::Infinity, ExtendedReal::Finite(_)) => (false, true),
            (ExtendedReal::Infinity, ExtendedReal::Infinity) => (smooth > 0.0, true),
        };
        out.push(PairCertificate { d_f, d_phi, smooth_ok, convex_ok });
    }
    Ok(CertificateReport {
        smooth,
        strongly_convex,
        smooth_ok: out.iter().all(|p| p.smooth_ok),
        convex_ok: out.iter().all(|p| p.convex_ok),
        pairs: out,
    })
}

/// `L⟨∇φ(μ) − ∇φ(ν), μ − ν⟩ − ⟨∇F(μ) − ∇F(ν), μ − ν⟩`, nonnegative exactly
/// when the monotone-gradient form of `L`-relative smoothness holds at the pair.
pub fn equivalence_check_iii(
    f: &dyn Functional,
    phi: &dyn Functional,
    mu: &[f64],
    nu: &[f64],
    smooth: f64,
) -> Result<f64> {
    ensure_same_len(mu.len(), nu.len())?;
    let gf_mu = finite_gradient(f, mu)?;
    let gf_nu = finite_gradient(f, nu)?;
    let gp_mu = finite_gradient(phi, mu)?;
    let gp_nu = finite_gradient(phi, nu)?;
    let mut phi_term = 0.0;
    let mut f_term = 0.0;
    for i in 0..mu.len() {
        let d = mu[i] - nu[i];
        phi_term += (gp_mu[i] - gp_nu[i]) * d;
        f_term += (gf_mu[i] - gf_nu[i]) * d;
    }
    Ok(smooth * phi_term - f_term)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let mu = m(&[0.2, 0.8]);
        assert_eq!(kl(&mu, &mu).unwrap(), ExtendedReal::Finite(0.0));
        let v = kl(&m(&[1.0, 0.0]), &m(&[0.5, 0.5])).unwrap().finite().unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl(&m(&[0.5, 0.5]), &m(&[1.0, 0.0])).unwrap(), ExtendedReal::Infinity);
        assert!(matches!(kl(&m(&[1.0]), &mu), Err(Error::SupportMismatch { .. })));
    }

    #[test]
    fn neg_entropy_examples() {
        let mu = m(&[0.3, 0.7]);
        assert_eq!(neg_entropy(&mu, &mu).unwrap(), ExtendedReal::Finite(0.0));
        let counting = DiscreteMeasure::counting(2).unwrap();
        let v = neg_entropy(&m(&[0.5, 0.5]), &counting).unwrap().finite().unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-15);
        assert_eq!(neg_entropy(&m(&[1.0, 0.0]), &counting).unwrap(), ExtendedReal::Finite(0.0));
    }

    #[test]
    fn bregman_examples() {
        let rho = m(&[0.5, 1.0, 2.0]);
        let phi = BregmanPotential::neg_entropy(rho);
        let mu = [0.2, 0.5, 0.3];
        let tau = [0.4, 0.4, 0.2];
        let d = phi.divergence(&mu, &tau).unwrap().finite().unwrap();
        let k = kl_weights(&mu, &tau).finite().unwrap();
        assert!((d - k).abs() < 1e-12);
        assert!(phi.divergence(&mu, &mu).unwrap().finite().unwrap().abs() < 1e-15);
        let sq = BregmanPotential::SquaredNorm.divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(sq, ExtendedReal::Finite(2.0));
    }

    #[test]
    fn bregman_domain_violation_where_mu_vanishes() {
        let phi = BregmanPotential::entropy(2);
        let err = phi.divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DomainViolation(_)));
        // ν = μ on the zero coordinate: well defined
        let d = phi.divergence(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(d, ExtendedReal::Finite(0.0));
    }

    #[test]
    fn mmd_examples() {
        let id = Matrix::identity(2).unwrap();
        let a = m(&[1.0, 0.0]);
        let b = m(&[0.0, 1.0]);
        assert_eq!(mmd_sq(&a, &a, &id).unwrap(), 0.0);
        assert_eq!(mmd_sq(&a, &b, &id).unwrap(), 2.0);
        let ones = Matrix::filled(2, 2, 1.0).unwrap();
        assert!(mmd_sq(&m(&[0.3, 0.7]), &m(&[0.9, 0.1]), &ones).unwrap().abs() < 1e-15);
        let bad = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(mmd_sq(&a, &b, &bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn kl_objective_is_one_relatively_smooth_and_convex() {
        let tau = m(&[0.1, 0.2, 0.3, 0.4]);
        let f = Objective::KlToTarget { target: tau.clone() };
        let phi = BregmanPotential::neg_entropy(tau);
        let pairs = vec![
            (m(&[0.25, 0.25, 0.25, 0.25]), m(&[0.4, 0.3, 0.2, 0.1])),
            (m(&[0.7, 0.1, 0.1, 0.1]), m(&[0.1, 0.1, 0.1, 0.7])),
        ];
        let rep = certify_relative_bounds(&f, &phi, &pairs, 1.0, 1.0).unwrap();
        assert!(rep.smooth_ok && rep.convex_ok);
        let json = serde_json::to_value(&rep).unwrap();
        assert!(json["pairs"][0]["d_F"].is_number());
        // a too-small L must be caught
        let rep = certify_relative_bounds(&f, &phi, &pairs, 0.5, 0.0).unwrap();
        assert!(!rep.smooth_ok);
    }

    #[test]
    fn equivalence_trivial_cases() {
        let phi = BregmanPotential::entropy(3);
        let mu = [0.2, 0.3, 0.5];
        let nu = [0.6, 0.3, 0.1];
        assert!(equivalence_check_iii(&phi, &phi, &mu, &nu, 1.0).unwrap().abs() < 1e-15);
        assert_eq!(equivalence_check_iii(&phi, &phi, &mu, &mu, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn femk_first_variation_has_no_constant() {
        let k = ConditionalKernel::from_rows(vec![vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let f = Objective::Femk { kernel: k };
        // π = μ ⊗ K has zero gradient and zero value
        let pi = [0.15, 0.15, 0.14, 0.56];
        assert!(f.value(&pi).unwrap().finite().unwrap().abs() < 1e-15);
        assert!(f.first_variation(&pi).unwrap().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn extended_real_orders_and_serializes() {
        assert!(ExtendedReal::Finite(1e300) < ExtendedReal::Infinity);
        assert_eq!(serde_json::to_string(&ExtendedReal::Infinity).unwrap(), "\"+inf\"");
    }
}
