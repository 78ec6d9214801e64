//! Exact Gaussian law calculus: KL, entropy, marginals, conditionals, one-step
//! Gibbs propagation and the Gaussian spectral gap.
//!
//! Determinants and inverses go through Cholesky factors throughout so the
//! identities stay tight at large condition numbers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::blocks::BlockStructure;
use crate::error::{Error, Result};
use crate::targets::{condition_numbers_gaussian, GaussianTarget};

const LN_2PI: f64 = 1.8378770664093453;

/// Gaussian distribution in covariance parametrization.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension("covariance does not match mean".into()));
        }
        let scale = cov.norm().max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::Numerical("covariance is not symmetric".into()));
                }
            }
        }
        // Symmetrize before factoring; callers may carry 1e-15 asymmetries.
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        Ok(Self { mean, cov: sym, chol })
    }

    /// Law of the Gaussian target itself, N(x*, Q^{-1}).
    pub fn from_target(target: &GaussianTarget) -> Result<Self> {
        let chol = target
            .precision()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("precision is not positive definite".into()))?;
        let cov = chol.inverse();
        Self::new(target.mean().clone(), cov)
    }

    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_det_cov(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.chol.l_dirty()[(i, i)].ln()).sum::<f64>()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        let z = self.chol.solve(&r);
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov() + r.dot(&z))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.chol.l_dirty().lower_triangle() * z
    }

    /// H(mu) = E[log mu] = -(d/2) ln(2 pi e) - (1/2) ln det(Sigma).
    pub fn entropy(&self) -> f64 {
        -0.5 * (self.dim() as f64 * (LN_2PI + 1.0) + self.log_det_cov())
    }

    /// Keep the listed coordinates, in the given order.
    pub fn marginal_keep(&self, keep: &[usize]) -> Result<GaussianLaw> {
        if keep.iter().any(|&i| i >= self.dim()) {
            return Err(Error::Dimension("marginal index out of range".into()));
        }
        let mean = DVector::from_fn(keep.len(), |i, _| self.mean[keep[i]]);
        let cov = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.cov[(keep[i], keep[j])]);
        GaussianLaw::new(mean, cov)
    }

    /// Drop block m of the given block structure.
    pub fn marginal_drop_block(&self, blocks: &BlockStructure, m: usize) -> Result<GaussianLaw> {
        if m >= blocks.num_blocks() {
            return Err(Error::Dimension("block index out of range".into()));
        }
        self.marginal_keep(&blocks.complement_indices(&[m]))
    }

    /// Conditional law of the `kept` coordinates given the `given` coordinates,
    /// returned as (offset a, matrix B, covariance): mean = a + B x_given.
    pub fn conditional(&self, kept: &[usize], given: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let s_kk = DMatrix::from_fn(kept.len(), kept.len(), |i, j| self.cov[(kept[i], kept[j])]);
        let s_kg = DMatrix::from_fn(kept.len(), given.len(), |i, j| self.cov[(kept[i], given[j])]);
        let s_gg = DMatrix::from_fn(given.len(), given.len(), |i, j| self.cov[(given[i], given[j])]);
        let chol = s_gg
            .cholesky()
            .ok_or_else(|| Error::Numerical("singular conditioning block".into()))?;
        let b = &s_kg * chol.inverse();
        let m_k = DVector::from_fn(kept.len(), |i, _| self.mean[kept[i]]);
        let m_g = DVector::from_fn(given.len(), |i, _| self.mean[given[i]]);
        let a = &m_k - &b * m_g;
        let cov = &s_kk - &b * s_kg.transpose();
        Ok((a, b, cov))
    }

    /// Law of V' X for an orthonormal frame V (d x l).
    pub fn project(&self, frame: &DMatrix<f64>) -> Result<GaussianLaw> {
        if frame.nrows() != self.dim() {
            return Err(Error::Dimension("frame rows do not match dimension".into()));
        }
        let mean = frame.transpose() * &self.mean;
        let cov = frame.transpose() * &self.cov * frame;
        GaussianLaw::new(mean, cov)
    }

    /// Law of b + A X for a square matrix A, plus optional extra noise covariance.
    pub fn affine(&self, a: &DMatrix<f64>, b: &DVector<f64>, noise: Option<&DMatrix<f64>>) -> Result<GaussianLaw> {
        let mean = a * &self.mean + b;
        let mut cov = a * &self.cov * a.transpose();
        if let Some(n) = noise {
            cov += n;
        }
        GaussianLaw::new(mean, cov)
    }
}

/// KL(mu | nu) between Gaussians in closed form.
pub fn kl_gaussian(mu: &GaussianLaw, nu: &GaussianLaw) -> Result<f64> {
    let d = mu.dim();
    if nu.dim() != d {
        return Err(Error::Dimension("KL between different dimensions".into()));
    }
    let inv_nu = nu.chol.inverse();
    let trace = (&inv_nu * &mu.cov).trace();
    let dm = nu.mean() - mu.mean();
    let quad = dm.dot(&(&inv_nu * &dm));
    let kl = 0.5 * (trace + quad - d as f64 + nu.log_det_cov() - mu.log_det_cov());
    Ok(kl.max(0.0))
}

/// Potential energy of a Gaussian law under a Gaussian target, normalized so
/// that U(pi) + H(pi) = 0 and therefore U(mu) + H(mu) = KL(mu | pi).
pub fn potential_energy_gaussian(law: &GaussianLaw, target: &GaussianTarget) -> Result<f64> {
    let d = law.dim();
    if target.dim() != d {
        return Err(Error::Dimension("law and target dimensions differ".into()));
    }
    let q = target.precision();
    let dm = law.mean() - target.mean();
    let quad = 0.5 * ((q * law.cov()).trace() + dm.dot(&(q * &dm)));
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("precision not positive definite".into()))?;
    let log_det_q = 2.0 * (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
    // log of the Gaussian normalizing constant, absorbed so the KL
    // decomposition holds exactly.
    let offset = 0.5 * (d as f64 * LN_2PI - log_det_q);
    Ok(quad + offset)
}

/// Finite mixture of Gaussian laws.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<GaussianLaw>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianLaw>) -> Result<Self> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(Error::Construction("weights and components must match and be non-empty".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Construction("weights must be non-negative and sum to one".into()));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::Dimension("mixture components of unequal dimension".into()));
        }
        Ok(Self { weights, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianLaw] {
        &self.components
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (w, c) in self.weights.iter().zip(&self.components) {
            acc += w;
            if u <= acc {
                return c.sample(rng);
            }
        }
        self.components.last().unwrap().sample(rng)
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Exact law of one random-scan Gibbs step applied to a Gaussian law: an
/// equally-weighted mixture whose m-th component replaces block m with the
/// target's conditional draw.
pub fn gs_one_step_law(mu: &GaussianLaw, target: &GaussianTarget) -> Result<GaussianMixture> {
    let d = target.dim();
    if mu.dim() != d {
        return Err(Error::Dimension("law and target dimensions differ".into()));
    }
    let big_m = target.blocks().num_blocks();
    let mut components = Vec::with_capacity(big_m);
    for m in 0..big_m {
        let (a_mat, b_vec, noise) = gs_block_affine(target, m)?;
        components.push(mu.affine(&a_mat, &b_vec, Some(&noise))?);
    }
    GaussianMixture::new(vec![1.0 / big_m as f64; big_m], components)
}

/// The full-dimensional affine representation of one Gibbs block update:
/// x <- A x + b + xi with xi ~ N(0, C), where only the rows of block m act
/// (x_S <- conditional mean + conditional noise, x_{-S} unchanged).
pub fn gs_block_affine(
    target: &GaussianTarget,
    m: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let d = target.dim();
    let blocks = target.blocks();
    let (cond_offset, cond_b, cond_cov) = crate::samplers::gaussian_conditional_affine(target, &[m])?;
    let sel = blocks.indices_of(&[m]);
    let rest = blocks.complement_indices(&[m]);
    let mut a_mat = DMatrix::identity(d, d);
    let mut b_vec = DVector::zeros(d);
    let mut noise = DMatrix::zeros(d, d);
    for (row_local, &i) in sel.iter().enumerate() {
        for j in 0..d {
            a_mat[(i, j)] = 0.0;
        }
        for (col_local, &j) in rest.iter().enumerate() {
            a_mat[(i, j)] = cond_b[(row_local, col_local)];
        }
        b_vec[i] = cond_offset[row_local];
        for (col_local, &j) in sel.iter().enumerate() {
            noise[(i, j)] = cond_cov[(row_local, col_local)];
        }
    }
    Ok((a_mat, b_vec, noise))
}

/// Exact spectral gap of random-scan Gibbs on a Gaussian target with scalar
/// blocks: lambda_min(D^{-1/2} Q D^{-1/2}) / d.
pub fn amit_gap(q: &DMatrix<f64>, blocks: &BlockStructure) -> Result<f64> {
    if !blocks.all_scalar() {
        return Err(Error::Unsupported("gap formula requires scalar blocks".into()));
    }
    let cn = condition_numbers_gaussian(q, blocks)?;
    Ok(cn.lambda_star / blocks.total_dim() as f64)
}

/// For X ~ N(x*, Q^{-1}) with scalar blocks and f(x) = v'x, returns
/// (sum_m E[Var(f | X_{-m})], Var f) = (sum_m v_m^2 / Q_mm, v' Q^{-1} v).
pub fn conditional_variance_sum(q: &DMatrix<f64>, v: &DVector<f64>) -> Result<(f64, f64)> {
    let d = q.nrows();
    if v.len() != d {
        return Err(Error::Dimension("functional does not match dimension".into()));
    }
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular precision".into()))?;
    let sum = (0..d).map(|i| v[i] * v[i] / q[(i, i)]).sum();
    let var = v.dot(&chol.solve(v));
    Ok((sum, var))
}
