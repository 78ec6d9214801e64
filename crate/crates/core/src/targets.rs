//! Target distributions pi = exp(-U) and their condition numbers.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::blocks::BlockStructure;
use crate::error::{Error, Result};

/// Gaussian target N(x*, Q^{-1}) stored through its precision matrix.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    blocks: BlockStructure,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>, blocks: BlockStructure) -> Result<Self> {
        let d = mean.len();
        if precision.nrows() != d || precision.ncols() != d {
            return Err(Error::Dimension(format!(
                "precision is {}x{}, mean has length {d}",
                precision.nrows(),
                precision.ncols()
            )));
        }
        if blocks.total_dim() != d {
            return Err(Error::Dimension(format!(
                "blocks cover {} coordinates, target has {d}",
                blocks.total_dim()
            )));
        }
        let scale = precision.norm().max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (precision[(i, j)] - precision[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Construction("precision matrix is not symmetric".into()));
                }
            }
        }
        if precision.clone().cholesky().is_none() {
            return Err(Error::Construction("precision matrix is not positive definite".into()));
        }
        Ok(Self { mean, precision, blocks })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d), BlockStructure::scalar(d)).unwrap()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// U(x) = (x - x*)' Q (x - x*) / 2, with U(x*) = 0.
    pub fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        check_finite(x)?;
        let r = x - &self.mean;
        Ok(0.5 * (&self.precision * &r).dot(&r))
    }

    /// grad U(x) = Q (x - x*).
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite(x)?;
        Ok(&self.precision * (x - &self.mean))
    }
}

fn check_finite(x: &DVector<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite coordinate".into()));
    }
    Ok(())
}

/// Smooth coupling part U_0 of a composite potential.
#[derive(Debug, Clone)]
pub enum SmoothPart {
    /// U_0(x) = sum_i log(1 + exp((A x)_i)).
    Logistic { a: DMatrix<f64> },
    /// One-dimensional U_0(x) = log cosh(x). Smooth, convex, lambda* = 0.
    LogCosh,
    /// U_0(x) = x' Q x / 2 around zero.
    Quadratic { q: DMatrix<f64> },
}

/// Convex separable term U_m acting on a single block.
#[derive(Debug, Clone)]
pub enum SeparablePart {
    Zero,
    /// c * ||x_m||^2 / 2 with c >= 0.
    Quadratic { coeff: f64 },
}

impl SeparablePart {
    fn value(&self, xm: &[f64]) -> f64 {
        match self {
            SeparablePart::Zero => 0.0,
            SeparablePart::Quadratic { coeff } => {
                0.5 * coeff * xm.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    fn add_gradient(&self, xm: &[f64], out: &mut [f64]) {
        if let SeparablePart::Quadratic { coeff } = self {
            for (g, v) in out.iter_mut().zip(xm) {
                *g += coeff * v;
            }
        }
    }
}

/// Composite target exp(-U) with U = U_0 + sum_m U_m(x_m).
///
/// The block smoothness constants L_m and the convexity constant lambda* are
/// caller-supplied metadata; they are not estimated from the evaluators.
#[derive(Debug, Clone)]
pub struct CompositeTarget {
    smooth: SmoothPart,
    separable: Vec<SeparablePart>,
    blocks: BlockStructure,
    block_l: Vec<f64>,
    lambda_star: f64,
}

impl CompositeTarget {
    pub fn new(
        smooth: SmoothPart,
        separable: Vec<SeparablePart>,
        blocks: BlockStructure,
        block_l: Vec<f64>,
        lambda_star: f64,
    ) -> Result<Self> {
        if separable.len() != blocks.num_blocks() || block_l.len() != blocks.num_blocks() {
            return Err(Error::Dimension("one separable term and one L_m per block".into()));
        }
        if block_l.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Construction("block smoothness constants must be positive".into()));
        }
        if lambda_star < 0.0 {
            return Err(Error::Construction("lambda* must be non-negative".into()));
        }
        Ok(Self { smooth, separable, blocks, block_l, lambda_star })
    }

    /// Bayesian logistic-type posterior potential: Gaussian prior of scale s on
    /// each coordinate plus logistic losses on the rows of A.
    pub fn logistic(a: DMatrix<f64>, prior_scale: f64) -> Result<Self> {
        let d = a.ncols();
        if d == 0 || !(prior_scale > 0.0) {
            return Err(Error::Construction("logistic target needs columns and a positive prior scale".into()));
        }
        let blocks = BlockStructure::scalar(d);
        let prior_coeff = 1.0 / (prior_scale * prior_scale);
        // Hessian of U_0 is A' diag(p(1-p)) A with p(1-p) <= 1/4.
        let block_l: Vec<f64> = (0..d)
            .map(|j| (0.25 * a.column(j).norm_squared() + prior_coeff).max(prior_coeff))
            .collect();
        let separable = vec![SeparablePart::Quadratic { coeff: prior_coeff }; d];
        Ok(Self {
            smooth: SmoothPart::Logistic { a },
            separable,
            blocks,
            block_l,
            lambda_star: 0.0,
        })
    }

    /// One-dimensional log cosh target; smooth and convex but not strongly convex.
    pub fn log_cosh() -> Self {
        Self {
            smooth: SmoothPart::LogCosh,
            separable: vec![SeparablePart::Zero],
            blocks: BlockStructure::scalar(1),
            block_l: vec![1.0],
            lambda_star: 0.0,
        }
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.total_dim()
    }

    pub fn block_l(&self) -> &[f64] {
        &self.block_l
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    fn smooth_value(&self, x: &DVector<f64>) -> f64 {
        match &self.smooth {
            SmoothPart::Logistic { a } => {
                let z = a * x;
                z.iter().map(|&t| softplus(t)).sum()
            }
            SmoothPart::LogCosh => x[0].abs() + (-2.0 * x[0].abs()).exp().ln_1p() - std::f64::consts::LN_2,
            SmoothPart::Quadratic { q } => 0.5 * (q * x).dot(x),
        }
    }

    fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.smooth {
            SmoothPart::Logistic { a } => {
                let z = a * x;
                let s = DVector::from_iterator(z.len(), z.iter().map(|&t| sigmoid(t)));
                a.transpose() * s
            }
            SmoothPart::LogCosh => DVector::from_element(1, x[0].tanh()),
            SmoothPart::Quadratic { q } => q * x,
        }
    }

    pub fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        check_finite(x)?;
        let mut u = self.smooth_value(x);
        for (m, sep) in self.separable.iter().enumerate() {
            u += sep.value(x.as_slice().get(self.blocks.range(m)).unwrap());
        }
        Ok(u)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite(x)?;
        let mut g = self.smooth_gradient(x);
        for (m, sep) in self.separable.iter().enumerate() {
            let r = self.blocks.range(m);
            let xm: Vec<f64> = x.as_slice()[r.clone()].to_vec();
            sep.add_gradient(&xm, &mut g.as_mut_slice()[r]);
        }
        Ok(g)
    }

    /// Negative log density of the full conditional of scalar coordinate `i`
    /// at value `t`, all other coordinates held at `x` (up to an additive constant).
    pub fn conditional_neg_log_density(&self, x: &DVector<f64>, i: usize, t: f64) -> f64 {
        let mut y = x.clone();
        y[i] = t;
        self.potential(&y).unwrap_or(f64::INFINITY)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Either flavor of target behind a single dispatch point.
#[derive(Debug, Clone)]
pub enum Target {
    Gaussian(GaussianTarget),
    Composite(CompositeTarget),
}

impl Target {
    pub fn dim(&self) -> usize {
        match self {
            Target::Gaussian(g) => g.dim(),
            Target::Composite(c) => c.dim(),
        }
    }

    pub fn blocks(&self) -> &BlockStructure {
        match self {
            Target::Gaussian(g) => g.blocks(),
            Target::Composite(c) => c.blocks(),
        }
    }

    pub fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            Target::Gaussian(g) => g.potential(x),
            Target::Composite(c) => c.potential(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Target::Gaussian(g) => g.gradient(x),
            Target::Composite(c) => c.gradient(x),
        }
    }
}

/// Smoothness and convexity constants of a potential, globally and per block.
#[derive(Debug, Clone)]
pub struct ConditionNumbers {
    /// Strong convexity constant lambda >= 0.
    pub lambda: f64,
    /// Smoothness constant L.
    pub l_smooth: f64,
    /// kappa = L / lambda (infinite when lambda = 0).
    pub kappa: f64,
    /// Per-block smoothness constants (L_1, ..., L_M).
    pub block_l: Vec<f64>,
    /// Convexity constant of U_0 in the ||.||_L metric.
    pub lambda_star: f64,
    /// kappa* = 1 / lambda* (infinite when lambda* = 0).
    pub kappa_star: f64,
    /// Diagonal of the block scaling matrix D (L_m repeated d_m times).
    pub d_diag: DVector<f64>,
}

impl ConditionNumbers {
    pub fn strongly_convex(&self) -> bool {
        self.lambda_star > 0.0
    }
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Eigen-decomposition of a symmetric matrix with pairs sorted ascending by eigenvalue.
pub fn symmetric_eigen_sorted(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let se = a.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..se.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(&idx.iter().map(|&i| se.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (vals, vecs)
}

/// Condition numbers of a Gaussian target with precision Q.
///
/// lambda and L are the extreme eigenvalues of Q, L_m the largest eigenvalue
/// of the m-th diagonal block and lambda* the smallest eigenvalue of
/// D^{-1/2} Q D^{-1/2}.
pub fn condition_numbers_gaussian(q: &DMatrix<f64>, blocks: &BlockStructure) -> Result<ConditionNumbers> {
    let d = blocks.total_dim();
    if q.nrows() != d || q.ncols() != d {
        return Err(Error::Dimension(format!("precision is {}x{}, blocks cover {d}", q.nrows(), q.ncols())));
    }
    let scale = q.norm().max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Construction("precision matrix is not symmetric".into()));
            }
        }
    }
    let ev = symmetric_eigenvalues(q);
    let lambda = ev[0];
    let l_smooth = ev[d - 1];
    if lambda <= 1e-12 * scale {
        return Err(Error::Construction("precision matrix is not positive definite".into()));
    }

    let block_l: Vec<f64> = (0..blocks.num_blocks())
        .map(|m| {
            let r = blocks.range(m);
            let qmm = q.view((r.start, r.start), (r.len(), r.len())).into_owned();
            *symmetric_eigenvalues(&qmm).last().unwrap()
        })
        .collect();

    let mut d_diag = DVector::zeros(d);
    for m in 0..blocks.num_blocks() {
        for i in blocks.range(m) {
            d_diag[i] = block_l[m];
        }
    }
    let mut scaled = q.clone();
    for i in 0..d {
        for j in 0..d {
            scaled[(i, j)] /= (d_diag[i] * d_diag[j]).sqrt();
        }
    }
    let lambda_star = symmetric_eigenvalues(&scaled)[0];

    Ok(ConditionNumbers {
        lambda,
        l_smooth,
        kappa: l_smooth / lambda,
        block_l,
        lambda_star,
        kappa_star: if lambda_star > 0.0 { 1.0 / lambda_star } else { f64::INFINITY },
        d_diag,
    })
}

/// Condition numbers of a composite target from its caller-supplied metadata.
pub fn condition_numbers_composite(target: &CompositeTarget) -> ConditionNumbers {
    let blocks = target.blocks();
    let mut d_diag = DVector::zeros(blocks.total_dim());
    for m in 0..blocks.num_blocks() {
        for i in blocks.range(m) {
            d_diag[i] = target.block_l()[m];
        }
    }
    let lambda_star = target.lambda_star();
    let l_max = target.block_l().iter().cloned().fold(f64::MIN, f64::max);
    ConditionNumbers {
        lambda: 0.0,
        l_smooth: l_max,
        kappa: f64::INFINITY,
        block_l: target.block_l().to_vec(),
        lambda_star,
        kappa_star: if lambda_star > 0.0 { 1.0 / lambda_star } else { f64::INFINITY },
        d_diag,
    }
}

/// ||x||_L = sqrt(sum_m L_m ||x_m||^2).
pub fn weighted_norm_l(x: &DVector<f64>, cn: &ConditionNumbers) -> Result<f64> {
    if x.len() != cn.d_diag.len() {
        return Err(Error::Dimension(format!("vector has length {}, expected {}", x.len(), cn.d_diag.len())));
    }
    Ok(x.iter().zip(cn.d_diag.iter()).map(|(v, l)| l * v * v).sum::<f64>().sqrt())
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TargetFile {
    Gaussian {
        mean: Vec<f64>,
        precision: Vec<Vec<f64>>,
        blocks: Vec<usize>,
    },
    Logistic {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        prior_scale: f64,
    },
    Logcosh {},
}

/// Parse a target from its JSON description.
pub fn target_from_json(text: &str) -> Result<Target> {
    let parsed: TargetFile = serde_json::from_str(text)?;
    match parsed {
        TargetFile::Gaussian { mean, precision, blocks } => {
            let d = mean.len();
            if precision.len() != d || precision.iter().any(|row| row.len() != d) {
                return Err(Error::Dimension("precision rows do not match mean length".into()));
            }
            let q = DMatrix::from_fn(d, d, |i, j| precision[i][j]);
            let target = GaussianTarget::new(DVector::from_vec(mean), q, BlockStructure::new(blocks)?)?;
            Ok(Target::Gaussian(target))
        }
        TargetFile::Logistic { a, prior_scale } => {
            let rows = a.len();
            if rows == 0 {
                return Err(Error::Construction("logistic target needs at least one row".into()));
            }
            let cols = a[0].len();
            if a.iter().any(|r| r.len() != cols) {
                return Err(Error::Dimension("ragged matrix A".into()));
            }
            let a = DMatrix::from_fn(rows, cols, |i, j| a[i][j]);
            Ok(Target::Composite(CompositeTarget::logistic(a, prior_scale)?))
        }
        TargetFile::Logcosh {} => Ok(Target::Composite(CompositeTarget::log_cosh())),
    }
}

pub fn load_target(path: &std::path::Path) -> Result<Target> {
    target_from_json(&std::fs::read_to_string(path)?)
}
