//! Reproducible random instances.
//!
//! All generators draw from [`InstanceRng`], ChaCha with 8 rounds seeded by
//! `seed_from_u64`. The stream is fixed by the algorithm, so files generated
//! from a seed stay byte-identical across platforms and library upgrades.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::em::LatentProblem;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::measures::{ConditionalKernel, Coupling, DiscreteMeasure};
use crate::sinkhorn::EotProblem;

pub type InstanceRng = ChaCha8Rng;

/// Name recorded in run manifests.
pub const PRNG_NAME: &str = "chacha8/rand_chacha-0.3/seed_from_u64";

/// Largest side length accepted by the generators.
pub const MAX_SIZE: usize = 500;

pub fn rng(seed: u64) -> InstanceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_size(size: usize) -> Result<()> {
    if size > MAX_SIZE {
        return Err(Error::SizeTooLarge { size, max: MAX_SIZE });
    }
    if size == 0 {
        return Err(Error::EmptyVector);
    }
    Ok(())
}

/// Standard exponential draw, strictly positive.
fn exp1(rng: &mut InstanceRng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        let e = -(1.0 - u).ln();
        if e > 0.0 {
            return e;
        }
    }
}

/// Dirichlet(1, …, 1) weights: normalized standard exponentials.
pub fn dirichlet(rng: &mut InstanceRng, n: usize) -> Result<DiscreteMeasure> {
    check_size(n)?;
    let w: Vec<f64> = (0..n).map(|_| exp1(rng)).collect();
    DiscreteMeasure::normalized(w)
}

/// Strictly positive measure with total mass drawn from `[0.5, 2)`.
pub fn positive_measure(rng: &mut InstanceRng, n: usize) -> Result<DiscreteMeasure> {
    let mass = rng.gen_range(0.5..2.0);
    DiscreteMeasure::new(dirichlet(rng, n)?.weights().iter().map(|w| w * mass).collect())
}

/// Costs i.i.d. uniform on `[0, 1)`.
pub fn uniform_cost(rng: &mut InstanceRng, n: usize, m: usize) -> Result<Matrix> {
    check_size(n)?;
    check_size(m)?;
    Matrix::from_fn(n, m, |_, _| rng.gen::<f64>())
}

/// Row-stochastic kernel with Dirichlet(1) rows.
pub fn dirichlet_kernel(rng: &mut InstanceRng, n: usize, m: usize) -> Result<ConditionalKernel> {
    check_size(n)?;
    check_size(m)?;
    let rows = (0..n).map(|_| dirichlet(rng, m).map(DiscreteMeasure::into_weights)).collect::<Result<_>>()?;
    ConditionalKernel::from_rows(rows)
}

/// Probability coupling with Dirichlet(1) entries.
pub fn dirichlet_coupling(rng: &mut InstanceRng, n: usize, m: usize) -> Result<Coupling> {
    check_size(n)?;
    check_size(m)?;
    Coupling::from_measure(n, m, dirichlet(rng, n * m)?)
}

/// Gram matrix of a Gaussian kernel `a · exp(−|x − x'|²/(2σ²))` on `n`
/// uniform points of the unit square, with `a ∈ [0.5, 2)` and
/// `σ ∈ [0.1, 1)`.
pub fn gaussian_gram(rng: &mut InstanceRng, n: usize) -> Result<Matrix> {
    check_size(n)?;
    let amplitude = rng.gen_range(0.5..2.0);
    let sigma: f64 = rng.gen_range(0.1..1.0);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    Matrix::from_fn(n, n, |i, j| {
        let d2 = (pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2);
        amplitude * (-d2 / (2.0 * sigma * sigma)).exp()
    })
}

/// Entropic OT instance with uniform costs and Dirichlet marginals.
pub fn eot_problem(rng: &mut InstanceRng, n: usize, m: usize, epsilon: f64) -> Result<EotProblem> {
    let cost = uniform_cost(rng, n, m)?;
    let mu = dirichlet(rng, n)?;
    let nu = dirichlet(rng, m)?;
    EotProblem::new(cost, epsilon, mu, nu)
}

/// Latent EM instance with a Dirichlet kernel, Dirichlet observations and a
/// Dirichlet initial latent measure.
pub fn latent_problem(rng: &mut InstanceRng, n: usize, m: usize) -> Result<LatentProblem> {
    let kernel = dirichlet_kernel(rng, n, m)?;
    let nu = dirichlet(rng, m)?;
    let mu0 = dirichlet(rng, n)?;
    LatentProblem::new(kernel, nu, mu0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = dirichlet(&mut rng(7), 20).unwrap();
        let b = dirichlet(&mut rng(7), 20).unwrap();
        assert_eq!(a, b);
        assert!(a.is_probability() && a.is_strictly_positive());
    }

    #[test]
    fn sizes_are_capped() {
        assert_eq!(uniform_cost(&mut rng(0), 501, 2).unwrap_err(), Error::SizeTooLarge { size: 501, max: 500 });
    }

    #[test]
    fn gram_is_symmetric_with_bounded_diagonal() {
        let g = gaussian_gram(&mut rng(3), 12).unwrap();
        assert!(g.is_symmetric(0.0));
        assert!(g.max_diagonal() < 2.0);
    }
}
