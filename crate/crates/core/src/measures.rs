//! Finitely supported measures, couplings and conditional kernels.
//!
//! A measure is a nonnegative weight vector on an implicit ordered support
//! `0..n`. No geometry is attached to the support points: everything the
//! algorithms need is carried by cost or Gram matrices.
//!
//! Total variation uses the ℓ1 convention `‖μ − ν‖_TV = Σ |μ_i − ν_i|`, so two
//! disjoint Diracs are at distance 2 and Pinsker reads `‖μ − ν‖² ≤ 2 KL(μ|ν)`.
//! Beware that the ½-normalized convention is also common.
//!
//! All sums run in ascending index order.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};
use crate::matrix::Matrix;

/// Tolerance on total mass for anything flagged as a probability.
pub const PROBABILITY_TOL: f64 = 1e-12;

fn validate_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::EmptyVector);
    }
    for (index, &value) in w.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        if value < 0.0 {
            return Err(Error::NegativeWeight { index, value });
        }
    }
    Ok(())
}

/// Nonnegative weights over an ordered finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    weights: Vec<f64>,
}

impl TryFrom<MeasureRepr> for DiscreteMeasure {
    type Error = Error;
    fn try_from(r: MeasureRepr) -> Result<Self> {
        Self::new(r.weights)
    }
}

impl From<DiscreteMeasure> for MeasureRepr {
    fn from(m: DiscreteMeasure) -> Self {
        Self { weights: m.weights }
    }
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        Ok(Self { weights })
    }

    /// Like [`DiscreteMeasure::new`] but also requires total mass 1 within
    /// [`PROBABILITY_TOL`].
    pub fn probability(weights: Vec<f64>) -> Result<Self> {
        let m = Self::new(weights)?;
        if !m.is_probability() {
            return Err(Error::NotNormalized { mass: m.mass() });
        }
        Ok(m)
    }

    /// Rescales arbitrary nonnegative weights to mass 1.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let m = Self::new(weights)?;
        let mass = m.mass();
        if mass <= 0.0 {
            return Err(Error::NotNormalized { mass });
        }
        Ok(Self { weights: m.weights.into_iter().map(|w| w / mass).collect() })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    /// All weights equal to one.
    pub fn counting(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn dirac(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::InvalidParameter(format!("dirac at {at} outside support of size {n}")));
        }
        let mut w = vec![0.0; n];
        w[at] = 1.0;
        Self::new(w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.mass() - 1.0).abs() <= PROBABILITY_TOL
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    /// `self ≪ other`: every index charged by `self` is charged by `other`.
    pub fn is_absolutely_continuous_wrt(&self, other: &Self) -> bool {
        self.weights.iter().zip(&other.weights).all(|(&a, &b)| a == 0.0 || b > 0.0)
    }
}

/// A nonnegative joint measure on `X × Y`, stored row-major (rows index `X`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Coupling {
    weights: Matrix,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    weights: Matrix,
}

impl TryFrom<MatrixRepr> for Coupling {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        Self::new(r.weights)
    }
}

impl From<Coupling> for MatrixRepr {
    fn from(c: Coupling) -> Self {
        Self { weights: c.weights }
    }
}

impl Coupling {
    pub fn new(weights: Matrix) -> Result<Self> {
        validate_weights(weights.as_slice())?;
        Ok(Self { weights })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Matrix::from_flat(rows, cols, data)?)
    }

    /// Views a measure on the product support `X × Y` (row-major) as a coupling.
    pub fn from_measure(rows: usize, cols: usize, m: DiscreteMeasure) -> Result<Self> {
        Self::from_flat(rows, cols, m.into_weights())
    }

    /// The same weights seen as a measure on the flattened product support.
    pub fn to_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure { weights: self.weights.as_slice().to_vec() }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn rows(&self) -> usize {
        self.weights.rows()
    }

    pub fn cols(&self) -> usize {
        self.weights.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.shape()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.weights.as_slice()
    }

    pub fn mass(&self) -> f64 {
        self.weights.as_slice().iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.mass() - 1.0).abs() <= PROBABILITY_TOL
    }

    pub fn transpose(&self) -> Self {
        Self { weights: self.weights.transpose() }
    }
}

/// A row-stochastic matrix `K(x, dy)`: each row is a probability vector over `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct ConditionalKernel {
    weights: Matrix,
}

impl TryFrom<MatrixRepr> for ConditionalKernel {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        Self::new(r.weights)
    }
}

impl From<ConditionalKernel> for MatrixRepr {
    fn from(k: ConditionalKernel) -> Self {
        Self { weights: k.weights }
    }
}

impl ConditionalKernel {
    pub fn new(weights: Matrix) -> Result<Self> {
        validate_weights(weights.as_slice())?;
        for row in 0..weights.rows() {
            let sum: f64 = weights.row(row).iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_TOL {
                return Err(Error::NotRowStochastic { row, sum });
            }
        }
        Ok(Self { weights })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Normalizes each row of a nonnegative matrix to sum to one.
    pub fn row_normalized(weights: Matrix) -> Result<Self> {
        validate_weights(weights.as_slice())?;
        let (n, m) = weights.shape();
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = weights.row(i);
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::RowOfZeroMass { row: i });
            }
            data.extend(row.iter().map(|w| w / sum));
        }
        Ok(Self { weights: Matrix::from_flat(n, m, data)? })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn rows(&self) -> usize {
        self.weights.rows()
    }

    pub fn cols(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.weights.as_slice().iter().all(|&w| w > 0.0)
    }
}

/// Row sums of `π`.
pub fn marginal_x(pi: &Coupling) -> DiscreteMeasure {
    let w = (0..pi.rows()).map(|i| pi.weights.row(i).iter().sum()).collect();
    DiscreteMeasure { weights: w }
}

/// Column sums of `π`.
pub fn marginal_y(pi: &Coupling) -> DiscreteMeasure {
    let mut w = vec![0.0; pi.cols()];
    for i in 0..pi.rows() {
        for (acc, &p) in w.iter_mut().zip(pi.weights.row(i)) {
            *acc += p;
        }
    }
    DiscreteMeasure { weights: w }
}

/// The product measure `μ ⊗ ν`.
pub fn product(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Coupling {
    let data = mu
        .weights
        .iter()
        .flat_map(|&a| nu.weights.iter().map(move |&b| a * b))
        .collect();
    Coupling { weights: Matrix::from_flat(mu.len(), nu.len(), data).expect("nonempty factors") }
}

/// `μ ⊗ K`: the joint measure with first marginal `μ` and conditional `K`.
pub fn compose(mu: &DiscreteMeasure, kernel: &ConditionalKernel) -> Result<Coupling> {
    ensure_same_len(mu.len(), kernel.rows())?;
    let m = kernel.cols();
    let mut data = Vec::with_capacity(mu.len() * m);
    for (i, &a) in mu.weights.iter().enumerate() {
        data.extend(kernel.weights.row(i).iter().map(|&k| a * k));
    }
    Coupling::from_flat(mu.len(), m, data)
}

/// Splits `π` into its first marginal and the conditional kernel `π(x, ·)/μ(x)`.
pub fn disintegrate(pi: &Coupling) -> Result<(DiscreteMeasure, ConditionalKernel)> {
    let mu = marginal_x(pi);
    let (n, m) = pi.shape();
    let mut data = Vec::with_capacity(n * m);
    for (i, &mass) in mu.weights.iter().enumerate() {
        if mass <= 0.0 {
            return Err(Error::RowOfZeroMass { row: i });
        }
        data.extend(pi.weights.row(i).iter().map(|&p| p / mass));
    }
    // Row sums of the normalized rows are 1 up to rounding, which the
    // stochasticity check tolerates.
    let kernel = ConditionalKernel { weights: Matrix::from_flat(n, m, data)? };
    Ok((mu, kernel))
}

/// ℓ1 total variation `Σ |μ_i − ν_i|`.
pub fn tv_norm(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    ensure_same_len(mu.len(), nu.len())?;
    Ok(tv_slices(mu.weights(), nu.weights()))
}

pub(crate) fn tv_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `max f − min f`, the oscillation seminorm.
pub fn variation_seminorm(f: &[f64]) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::EmptyVector);
    }
    let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok(hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn marginals_by_hand() {
        let pi = Coupling::from_rows(vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        close(marginal_x(&pi).weights(), &[0.3, 0.7], 1e-15);
        close(marginal_y(&pi).weights(), &[0.4, 0.6], 1e-15);
        assert_eq!(marginal_y(&pi), marginal_x(&pi.transpose()));
    }

    #[test]
    fn marginals_of_product() {
        let mu = m(&[0.3, 0.7]);
        let nu = m(&[0.2, 0.5, 0.3]);
        let pi = product(&mu, &nu);
        close(marginal_x(&pi).weights(), mu.weights(), 1e-15);
        close(marginal_y(&pi).weights(), nu.weights(), 1e-15);
        let uniform = Coupling::from_rows(vec![vec![0.25; 2]; 2]).unwrap();
        assert_eq!(marginal_x(&uniform).weights(), &[0.5, 0.5]);
    }

    #[test]
    fn product_by_hand() {
        let pi = product(&m(&[0.3, 0.7]), &m(&[0.4, 0.6]));
        close(pi.as_slice(), &[0.12, 0.18, 0.28, 0.42], 1e-15);
        let d = product(&DiscreteMeasure::dirac(1, 0).unwrap(), &DiscreteMeasure::dirac(1, 0).unwrap());
        assert_eq!(d.as_slice(), &[1.0]);
        let u = product(&DiscreteMeasure::uniform(2).unwrap(), &DiscreteMeasure::uniform(3).unwrap());
        close(u.as_slice(), &[1.0 / 6.0; 6], 1e-16);
    }

    #[test]
    fn disintegration_by_hand() {
        let pi = Coupling::from_rows(vec![vec![0.1, 0.3], vec![0.2, 0.4]]).unwrap();
        let (mu, k) = disintegrate(&pi).unwrap();
        close(mu.weights(), &[0.4, 0.6], 1e-15);
        close(k.matrix().as_slice(), &[0.25, 0.75, 1.0 / 3.0, 2.0 / 3.0], 1e-15);
        let back = compose(&mu, &k).unwrap();
        for (a, b) in back.as_slice().iter().zip(pi.as_slice()) {
            assert!((a - b).abs() <= 1e-14 * b.abs());
        }
    }

    #[test]
    fn disintegration_of_product_repeats_second_factor() {
        let nu = m(&[0.2, 0.8]);
        let (_, k) = disintegrate(&product(&m(&[0.5, 0.5]), &nu)).unwrap();
        close(k.matrix().row(0), nu.weights(), 1e-15);
        close(k.matrix().row(1), nu.weights(), 1e-15);
    }

    #[test]
    fn disintegration_rejects_empty_rows() {
        let pi = Coupling::from_rows(vec![vec![0.5, 0.5], vec![0.0, 0.0]]).unwrap();
        assert_eq!(disintegrate(&pi).unwrap_err(), Error::RowOfZeroMass { row: 1 });
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_norm(&m(&[0.3, 0.7]), &m(&[0.3, 0.7])).unwrap(), 0.0);
        assert_eq!(tv_norm(&m(&[1.0, 0.0]), &m(&[0.0, 1.0])).unwrap(), 2.0);
        assert!((tv_norm(&m(&[0.3, 0.7]), &m(&[0.5, 0.5])).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(tv_norm(&m(&[1.0]), &m(&[0.5, 0.5])), Err(Error::SupportMismatch { .. })));
    }

    #[test]
    fn variation_examples() {
        assert_eq!(variation_seminorm(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(variation_seminorm(&[0.0, 3.0]).unwrap(), 3.0);
        assert_eq!(variation_seminorm(&[-1.0, 2.0, 0.5]).unwrap(), 3.0);
        assert_eq!(variation_seminorm(&[]).unwrap_err(), Error::EmptyVector);
    }

    #[test]
    fn validation() {
        assert!(matches!(DiscreteMeasure::new(vec![0.5, -0.1]), Err(Error::NegativeWeight { index: 1, .. })));
        assert!(matches!(DiscreteMeasure::probability(vec![0.5, 0.4]), Err(Error::NotNormalized { .. })));
        assert!(ConditionalKernel::from_rows(vec![vec![0.5, 0.4]]).is_err());
        let k = ConditionalKernel::row_normalized(Matrix::from_rows(vec![vec![1.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(k.matrix().row(0), &[0.25, 0.75]);
    }

    #[test]
    fn json_shapes() {
        let mu = m(&[0.25, 0.75]);
        assert_eq!(serde_json::to_string(&mu).unwrap(), r#"{"weights":[0.25,0.75]}"#);
        let pi = Coupling::from_rows(vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let s = serde_json::to_string(&pi).unwrap();
        assert_eq!(s, r#"{"weights":[[0.1,0.2],[0.3,0.4]]}"#);
        assert_eq!(serde_json::from_str::<Coupling>(&s).unwrap(), pi);
        assert!(serde_json::from_str::<DiscreteMeasure>(r#"{"weights":[-1.0]}"#).is_err());
    }
}
