//! Random test-instance generators shared by the verification suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::gauss::GaussianLaw;

/// Random symmetric positive-definite matrix with a bounded condition number.
pub fn random_spd<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    // G G' + small ridge keeps the spectrum away from zero.
    &g * g.transpose() + DMatrix::identity(d, d) * 0.3
}

/// Random Gaussian law with moderate anisotropy.
pub fn random_gaussian_law<R: Rng>(d: usize, rng: &mut R) -> GaussianLaw {
    let mean = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
    let cov = random_spd(d, rng);
    GaussianLaw::new(mean, cov).expect("random covariance is SPD")
}
