//! Markov transition kernels: random-scan Gibbs (single and multi-block),
//! Hit-and-Run along random frames, and Metropolis-within-Gibbs.
//!
//! Kernels are pure functions of (target, state): each call advances the
//! state by exactly one step using the RNG substream owned by the chain, so
//! replicas with distinct substreams are independent and reproducible.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ars::ArsSampler;
use crate::error::{Error, Result};
use crate::rng::{chain_stream, Stream};
use crate::targets::{ConditionNumbers, GaussianTarget, Target};

/// Position of one chain plus its private RNG substream.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: DVector<f64>,
    pub step: u64,
    pub rng: Stream,
}

impl ChainState {
    pub fn new(x: DVector<f64>, rng: Stream) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("chain state must be finite".into()));
        }
        Ok(Self { x, step: 0, rng })
    }

    pub fn from_seed(x: DVector<f64>, seed: u64, chain_id: u64) -> Result<Self> {
        Self::new(x, chain_stream(seed, chain_id))
    }
}

/// What a single kernel application did, for trace output.
#[derive(Debug, Clone, Copy)]
pub struct StepMeta {
    /// Updated block (or first block of the subset; 0 for Hit-and-Run frames).
    pub id: usize,
    /// Acceptance outcome; None for exact (rejection-free) kernels.
    pub accepted: Option<bool>,
}

/// Orthonormal ell-frame in R^d.
#[derive(Debug, Clone)]
pub struct StiefelFrame {
    cols: DMatrix<f64>,
}

impl StiefelFrame {
    pub fn new(cols: DMatrix<f64>) -> Result<Self> {
        let ell = cols.ncols();
        for i in 0..ell {
            let ci = cols.column(i);
            if (ci.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::Construction("frame column is not unit length".into()));
            }
            for j in 0..i {
                if ci.dot(&cols.column(j)).abs() > 1e-10 {
                    return Err(Error::Construction("frame columns are not orthogonal".into()));
                }
            }
        }
        Ok(Self { cols })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.cols
    }

    pub fn dim(&self) -> usize {
        self.cols.nrows()
    }

    pub fn ell(&self) -> usize {
        self.cols.ncols()
    }
}

/// Haar-distributed orthonormal ell-frame: i.i.d. Gaussian matrix followed by
/// thin QR, with column signs fixed so the triangular factor has positive
/// diagonal.
pub fn sample_stiefel_frame<R: Rng>(d: usize, ell: usize, rng: &mut R) -> Result<StiefelFrame> {
    if ell == 0 || ell > d {
        return Err(Error::Config(format!("frame size {ell} out of range 1..={d}")));
    }
    let g = DMatrix::from_fn(d, ell, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..ell {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    StiefelFrame::new(q)
}

/// Proposal family used inside Metropolis-within-Gibbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    /// Random-walk proposal centred at the current block value.
    Rwm,
    /// Independence proposal centred at the conditional mode.
    Imh,
    /// Exact conditional draw (always accepted); the Gibbs special case.
    ExactGibbs,
}

/// Configuration of the within-block update.
#[derive(Debug, Clone)]
pub struct MwGConfig {
    pub proposal_kind: ProposalKind,
    /// Known lower bound on the conditional contraction, if any.
    pub beta_hint: Option<f64>,
    /// Per-block proposal variances.
    pub step_scales: Vec<f64>,
}

impl MwGConfig {
    pub fn new(proposal_kind: ProposalKind, beta_hint: Option<f64>, step_scales: Vec<f64>) -> Result<Self> {
        if step_scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("step scales must be positive and finite".into()));
        }
        if let Some(b) = beta_hint {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Config("beta hint must lie in (0, 1]".into()));
            }
        }
        Ok(Self { proposal_kind, beta_hint, step_scales })
    }

    /// Random-walk scales 1/(L_m d_m).
    pub fn rwm(cn: &ConditionNumbers, block_dims: &[usize]) -> Result<Self> {
        let scales = cn
            .block_l
            .iter()
            .zip(block_dims)
            .map(|(&l, &dm)| 1.0 / (l * dm as f64))
            .collect();
        Self::new(ProposalKind::Rwm, None, scales)
    }

    /// Independence-proposal scales 1/L_m.
    pub fn imh(cn: &ConditionNumbers) -> Result<Self> {
        let scales = cn.block_l.iter().map(|&l| 1.0 / l).collect();
        Self::new(ProposalKind::Imh, None, scales)
    }
}

/// Conditional law of the selected blocks given the rest, as an affine map of
/// the complement: mean = offset + B x_rest, covariance = Q_SS^{-1}.
pub fn gaussian_conditional_affine(
    target: &GaussianTarget,
    sel_blocks: &[usize],
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let blocks = target.blocks();
    let sel = blocks.indices_of(sel_blocks);
    let rest = blocks.complement_indices(sel_blocks);
    let q = target.precision();
    let q_ss = DMatrix::from_fn(sel.len(), sel.len(), |i, j| q[(sel[i], sel[j])]);
    let q_sr = DMatrix::from_fn(sel.len(), rest.len(), |i, j| q[(sel[i], rest[j])]);
    let chol = q_ss
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular conditional precision block".into()))?;
    let b = -chol.solve(&q_sr);
    let cov = chol.inverse();
    let xs = DVector::from_fn(sel.len(), |i, _| target.mean()[sel[i]]);
    let xr = DVector::from_fn(rest.len(), |i, _| target.mean()[rest[i]]);
    let offset = &xs - &b * xr;
    Ok((offset, b, cov))
}

/// Conditional mean and precision of the selected blocks at a concrete value
/// of the complement: mean = x*_S - Q_SS^{-1} Q_{S,-S} (x_{-S} - x*_{-S}).
pub fn gaussian_conditional(
    target: &GaussianTarget,
    sel_blocks: &[usize],
    x_rest: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let blocks = target.blocks();
    let rest = blocks.complement_indices(sel_blocks);
    if x_rest.len() != rest.len() {
        return Err(Error::Dimension("complement value has wrong length".into()));
    }
    let (offset, b, _cov) = gaussian_conditional_affine(target, sel_blocks)?;
    let sel = blocks.indices_of(sel_blocks);
    let q = target.precision();
    let prec = DMatrix::from_fn(sel.len(), sel.len(), |i, j| q[(sel[i], sel[j])]);
    Ok((offset + b * x_rest, prec))
}

/// Draw from N(mean, P^{-1}) given the precision P.
fn sample_from_precision<R: Rng>(mean: &DVector<f64>, precision: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular precision in conditional draw".into()))?;
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    // P = L L' => covariance factor is L^{-T}.
    let w = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(mean + w)
}

/// Redraw the listed blocks of `x` jointly from the exact Gaussian conditional.
fn gaussian_block_update(target: &GaussianTarget, x: &mut DVector<f64>, sel_blocks: &[usize], rng: &mut Stream) -> Result<()> {
    let blocks = target.blocks();
    let sel = blocks.indices_of(sel_blocks);
    let rest = blocks.complement_indices(sel_blocks);
    let x_rest = DVector::from_fn(rest.len(), |i, _| x[rest[i]]);
    let (mean, prec) = gaussian_conditional(target, sel_blocks, &x_rest)?;
    let draw = sample_from_precision(&mean, &prec, rng)?;
    for (k, &i) in sel.iter().enumerate() {
        x[i] = draw[k];
    }
    Ok(())
}

/// Redraw scalar coordinate `i` from its exact conditional by adaptive
/// rejection; the conditional log-density is concave for log-concave targets.
fn composite_coordinate_update(
    target: &crate::targets::CompositeTarget,
    x: &mut DVector<f64>,
    i: usize,
    rng: &mut Stream,
) -> Result<()> {
    let scale = 1.0 / target.block_l()[i].sqrt();
    let center = x[i];
    let log_density = |t: f64| -target.conditional_neg_log_density(x, i, t);
    let mut sampler = ArsSampler::new(log_density, (center - scale, center + scale), scale)
        .map_err(|e| Error::ConditionalSampling(format!("coordinate {i}: {e}")))?;
    let t = sampler
        .draw(rng)
        .map_err(|e| Error::ConditionalSampling(format!("coordinate {i}: {e}")))?;
    x[i] = t;
    Ok(())
}

fn check_dims(target: &Target, state: &ChainState) -> Result<()> {
    if target.dim() != state.x.len() {
        return Err(Error::Dimension("target and state dimensions differ".into()));
    }
    Ok(())
}

/// One random-scan Gibbs step: a uniformly chosen block is replaced by an
/// exact conditional draw; every other coordinate is untouched.
pub fn gs_step(target: &Target, state: &mut ChainState) -> Result<StepMeta> {
    check_dims(target, state)?;
    let big_m = target.blocks().num_blocks();
    let m = state.rng.gen_range(0..big_m);
    match target {
        Target::Gaussian(g) => gaussian_block_update(g, &mut state.x, &[m], &mut state.rng)?,
        Target::Composite(c) => {
            if c.blocks().block_dim(m) != 1 {
                return Err(Error::Unsupported("composite conditionals require scalar blocks".into()));
            }
            let i = c.blocks().offset(m);
            let mut x = state.x.clone();
            composite_coordinate_update(c, &mut x, i, &mut state.rng)?;
            state.x = x;
        }
    }
    state.step += 1;
    Ok(StepMeta { id: m, accepted: None })
}

/// Multi-block Gibbs: a uniform size-ell subset of blocks is redrawn jointly
/// from its exact conditional.
pub fn gs_ell_step(target: &Target, state: &mut ChainState, ell: usize) -> Result<StepMeta> {
    check_dims(target, state)?;
    let big_m = target.blocks().num_blocks();
    if ell == 0 || ell > big_m {
        return Err(Error::Config(format!("subset size {ell} out of range 1..={big_m}")));
    }
    let mut sel: Vec<usize> = index_sample(&mut state.rng, big_m, ell).into_vec();
    sel.sort_unstable();
    match target {
        Target::Gaussian(g) => gaussian_block_update(g, &mut state.x, &sel, &mut state.rng)?,
        Target::Composite(c) => {
            if ell > 1 {
                return Err(Error::Unsupported(
                    "joint multi-block conditionals are only available for Gaussian targets".into(),
                ));
            }
            let m = sel[0];
            if c.blocks().block_dim(m) != 1 {
                return Err(Error::Unsupported("composite conditionals require scalar blocks".into()));
            }
            let i = c.blocks().offset(m);
            let mut x = state.x.clone();
            composite_coordinate_update(c, &mut x, i, &mut state.rng)?;
            state.x = x;
        }
    }
    state.step += 1;
    Ok(StepMeta { id: sel[0], accepted: None })
}

/// Mean and precision of the restriction of a Gaussian target to the affine
/// subspace x + span(frame).
pub fn hr_restricted_law(
    target: &GaussianTarget,
    x: &DVector<f64>,
    frame: &StiefelFrame,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if frame.dim() != target.dim() {
        return Err(Error::Dimension("frame does not match target dimension".into()));
    }
    let v = frame.matrix();
    let q = target.precision();
    let prec = v.transpose() * q * v;
    let rhs = -(v.transpose() * (q * (x - target.mean())));
    let chol = prec
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular restricted precision".into()))?;
    Ok((chol.solve(&rhs), prec))
}

/// Hit-and-Run: draw a Haar frame, then resample the coefficients of x along
/// that frame from the exact restriction of the target.
pub fn hr_ell_step(target: &Target, state: &mut ChainState, ell: usize) -> Result<StepMeta> {
    check_dims(target, state)?;
    let d = target.dim();
    if ell == 0 || ell > d {
        return Err(Error::Config(format!("frame size {ell} out of range 1..={d}")));
    }
    let frame = sample_stiefel_frame(d, ell, &mut state.rng)?;
    match target {
        Target::Gaussian(g) => {
            let (mean, prec) = hr_restricted_law(g, &state.x, &frame)?;
            let s = sample_from_precision(&mean, &prec, &mut state.rng)?;
            state.x += frame.matrix() * s;
        }
        Target::Composite(c) => {
            if ell > 1 {
                return Err(Error::Unsupported("multi-dimensional line sampling requires a Gaussian target".into()));
            }
            let v = frame.matrix().column(0).clone_owned();
            let x0 = state.x.clone();
            let log_density = |s: f64| -c.potential(&(&x0 + &v * s)).unwrap_or(f64::INFINITY);
            let lmax = c.block_l().iter().cloned().fold(1.0f64, f64::max);
            let scale = 1.0 / lmax.sqrt();
            let mut sampler = ArsSampler::new(log_density, (-scale, scale), scale)
                .map_err(|e| Error::ConditionalSampling(format!("line sampling: {e}")))?;
            let s = sampler
                .draw(&mut state.rng)
                .map_err(|e| Error::ConditionalSampling(format!("line sampling: {e}")))?;
            state.x += v * s;
        }
    }
    state.step += 1;
    Ok(StepMeta { id: 0, accepted: None })
}

/// Metropolis accept/reject with probability min{1, exp(log_target_ratio +
/// log_proposal_ratio)}. -inf ratios always reject; NaN is an error.
pub fn mh_accept<R: Rng>(log_target_ratio: f64, log_proposal_ratio: f64, rng: &mut R) -> Result<bool> {
    let total = log_target_ratio + log_proposal_ratio;
    if total.is_nan() {
        return Err(Error::Numerical("NaN acceptance ratio".into()));
    }
    if total >= 0.0 {
        return Ok(true);
    }
    let u: f64 = rng.gen_range(1e-300..1.0);
    Ok(u.ln() < total)
}

/// Mode of the conditional of block m given the rest: exact for Gaussians,
/// gradient bisection (|U'| <= 1e-10) for scalar composite blocks.
pub fn conditional_mode(target: &Target, x: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
    match target {
        Target::Gaussian(g) => {
            let blocks = g.blocks();
            let rest = blocks.complement_indices(&[m]);
            let x_rest = DVector::from_fn(rest.len(), |i, _| x[rest[i]]);
            let (mean, _prec) = gaussian_conditional(g, &[m], &x_rest)?;
            Ok(mean)
        }
        Target::Composite(c) => {
            if c.blocks().block_dim(m) != 1 {
                return Err(Error::Mode("mode search requires a scalar block".into()));
            }
            let i = c.blocks().offset(m);
            let slope = |t: f64| -> Result<f64> {
                let mut y = x.clone();
                y[i] = t;
                Ok(c.gradient(&y)?[i])
            };
            // U is convex in x_i, so U' is increasing: bracket a sign change
            // geometrically, then bisect.
            let scale = 1.0 / c.block_l()[i].sqrt();
            let mut lo = x[i] - scale;
            let mut hi = x[i] + scale;
            let mut k = 0;
            while slope(lo)? > 0.0 {
                let w = hi - lo;
                lo -= w;
                k += 1;
                if k > 60 {
                    return Err(Error::Mode("no sign change to the left".into()));
                }
            }
            while slope(hi)? < 0.0 {
                let w = hi - lo;
                hi += w;
                k += 1;
                if k > 60 {
                    return Err(Error::Mode("no sign change to the right".into()));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let s = slope(mid)?;
                if s.abs() <= 1e-10 {
                    return Ok(DVector::from_element(1, mid));
                }
                if s > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok(DVector::from_element(1, 0.5 * (lo + hi)))
        }
    }
}

/// One Metropolis-within-Gibbs step: a uniformly chosen block is moved by the
/// configured conditional-invariant kernel.
pub fn mwg_step(
    target: &Target,
    cn: &ConditionNumbers,
    cfg: &MwGConfig,
    state: &mut ChainState,
) -> Result<StepMeta> {
    check_dims(target, state)?;
    let blocks = target.blocks();
    let big_m = blocks.num_blocks();
    if cfg.step_scales.len() != big_m {
        return Err(Error::Config("step scales do not match block count".into()));
    }
    if cn.block_l.len() != big_m {
        return Err(Error::Config("condition numbers do not match block count".into()));
    }
    let m = state.rng.gen_range(0..big_m);
    if cfg.proposal_kind == ProposalKind::ExactGibbs {
        // Exact conditional draw: the always-accepted special case.
        match target {
            Target::Gaussian(g) => gaussian_block_update(g, &mut state.x, &[m], &mut state.rng)?,
            Target::Composite(c) => {
                if blocks.block_dim(m) != 1 {
                    return Err(Error::Unsupported("composite conditionals require scalar blocks".into()));
                }
                let i = blocks.offset(m);
                let mut x = state.x.clone();
                composite_coordinate_update(c, &mut x, i, &mut state.rng)?;
                state.x = x;
            }
        }
        state.step += 1;
        return Ok(StepMeta { id: m, accepted: Some(true) });
    }

    let range = blocks.range(m);
    let scale = cfg.step_scales[m];
    let sd = scale.sqrt();
    let u_x = target.potential(&state.x)?;
    let mut y = state.x.clone();
    let log_proposal_ratio;
    match cfg.proposal_kind {
        ProposalKind::Rwm => {
            for i in range.clone() {
                y[i] += sd * state.rng.sample::<f64, _>(StandardNormal);
            }
            log_proposal_ratio = 0.0;
        }
        ProposalKind::Imh => {
            let mode = conditional_mode(target, &state.x, m)?;
            let mut sq_old = 0.0;
            let mut sq_new = 0.0;
            for (k, i) in range.clone().enumerate() {
                let prop = mode[k] + sd * state.rng.sample::<f64, _>(StandardNormal);
                sq_old += (state.x[i] - mode[k]).powi(2);
                sq_new += (prop - mode[k]).powi(2);
                y[i] = prop;
            }
            // q(current)/q(proposal) for the mode-centred Gaussian proposal.
            log_proposal_ratio = (sq_new - sq_old) / (2.0 * scale);
        }
        ProposalKind::ExactGibbs => unreachable!(),
    }
    let u_y = target.potential(&y)?;
    let accepted = mh_accept(u_x - u_y, log_proposal_ratio, &mut state.rng)?;
    if accepted {
        state.x = y;
    }
    state.step += 1;
    Ok(StepMeta { id: m, accepted: Some(accepted) })
}
