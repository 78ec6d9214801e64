//! Triangular (Knothe–Rosenblatt) transport maps and the entropy calculus
//! along them.
//!
//! For Gaussian laws the KR map is affine with A = L_nu L_mu^{-1} built from
//! lower Cholesky factors, so pushforwards, entropies and partial
//! (single-block) interpolations are all available in closed form. A grid
//! construction by conditional-CDF inversion covers general 2-D densities.

use nalgebra::{DMatrix, DVector};

use crate::blocks::BlockStructure;
use crate::error::{Error, Result};
use crate::gauss::GaussianLaw;

/// Increasing triangular affine map T(x) = shift + matrix · x.
#[derive(Debug, Clone)]
pub struct AffineTriangularMap {
    matrix: DMatrix<f64>,
    shift: DVector<f64>,
}

impl AffineTriangularMap {
    pub fn new(matrix: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let d = shift.len();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Dimension("matrix does not match shift".into()));
        }
        for i in 0..d {
            if matrix[(i, i)] <= 0.0 {
                return Err(Error::Construction("triangular map needs a positive diagonal".into()));
            }
            for j in (i + 1)..d {
                if matrix[(i, j)] != 0.0 {
                    return Err(Error::Construction("map matrix must be lower triangular".into()));
                }
            }
        }
        Ok(Self { matrix, shift })
    }

    pub fn identity(d: usize) -> Self {
        Self { matrix: DMatrix::identity(d, d), shift: DVector::zeros(d) }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.shift
    }

    /// log det DT = sum of log diagonal entries.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)].ln()).sum()
    }

    /// self ∘ other (apply `other` first).
    pub fn compose(&self, other: &AffineTriangularMap) -> Result<AffineTriangularMap> {
        AffineTriangularMap::new(&self.matrix * &other.matrix, &self.matrix * &other.shift + &self.shift)
    }

    /// Closed-form pushforward of a Gaussian law.
    pub fn push(&self, mu: &GaussianLaw) -> Result<GaussianLaw> {
        mu.affine(&self.matrix, &self.shift, None)
    }
}

/// Knothe–Rosenblatt map between Gaussian laws: A = L_nu L_mu^{-1}, b = m_nu -
/// A m_mu, with L the lower Cholesky factors. Triangular, increasing, and
/// pushes mu to nu exactly.
pub fn kr_map_gaussian(mu: &GaussianLaw, nu: &GaussianLaw) -> Result<AffineTriangularMap> {
    let d = mu.dim();
    if nu.dim() != d {
        return Err(Error::Dimension("laws have different dimensions".into()));
    }
    let l_mu = mu
        .cov()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("source covariance is singular".into()))?
        .l();
    let l_nu = nu
        .cov()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("destination covariance is singular".into()))?
        .l();
    // A = L_nu L_mu^{-1} via a triangular solve on the right:
    // A L_mu = L_nu  <=>  L_mu' A' = L_nu'.
    let a_t = l_mu
        .transpose()
        .solve_upper_triangular(&l_nu.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let mut a = a_t.transpose();
    // The solve can leave -0.0 dust in the upper triangle; clear it so the
    // triangularity invariant holds exactly.
    for i in 0..d {
        for j in (i + 1)..d {
            a[(i, j)] = 0.0;
        }
    }
    let b = nu.mean() - &a * mu.mean();
    AffineTriangularMap::new(a, b)
}

/// H(T#mu) = H(mu) - log det DT for a Gaussian mu and affine T.
pub fn pushforward_entropy(map: &AffineTriangularMap, mu: &GaussianLaw) -> Result<f64> {
    if map.dim() != mu.dim() {
        return Err(Error::Dimension("map does not match law".into()));
    }
    Ok(mu.entropy() - map.log_det())
}

/// Partial interpolation: identity outside block m, (1-t)·Id + t·T on block m.
pub fn partial_map(
    t_map: &AffineTriangularMap,
    blocks: &BlockStructure,
    m: usize,
    t: f64,
) -> Result<AffineTriangularMap> {
    if blocks.total_dim() != t_map.dim() {
        return Err(Error::Dimension("blocks do not match map dimension".into()));
    }
    if m >= blocks.num_blocks() {
        return Err(Error::Dimension("block index out of range".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Input("interpolation parameter must lie in [0, 1]".into()));
    }
    let d = t_map.dim();
    let mut a = DMatrix::identity(d, d);
    let mut b = DVector::zeros(d);
    for i in blocks.range(m) {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            a[(i, j)] = (1.0 - t) * id + t * t_map.matrix()[(i, j)];
        }
        b[i] = t * t_map.shift()[i];
    }
    AffineTriangularMap::new(a, b)
}

/// Entropy of [(1-t)Id + tT]#mu along a grid of t values, via the log-det of
/// the interpolated diagonal. Convex in t for increasing triangular T.
pub fn entropy_along_path(t_map: &AffineTriangularMap, mu: &GaussianLaw, t_grid: &[f64]) -> Result<Vec<f64>> {
    if t_map.dim() != mu.dim() {
        return Err(Error::Dimension("map does not match law".into()));
    }
    let h0 = mu.entropy();
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Input("path parameter must lie in [0, 1]".into()));
        }
        let mut log_det = 0.0;
        for i in 0..t_map.dim() {
            let di = (1.0 - t) + t * t_map.matrix()[(i, i)];
            if di <= 0.0 {
                return Err(Error::Numerical("interpolated diagonal is not positive".into()));
            }
            log_det += di.ln();
        }
        out.push(h0 - log_det);
    }
    Ok(out)
}

/// Bounding box [lo1, hi1] x [lo2, hi2].
#[derive(Debug, Clone, Copy)]
pub struct Box2D {
    pub lo1: f64,
    pub hi1: f64,
    pub lo2: f64,
    pub hi2: f64,
}

/// Triangular transport between two 2-D densities, built by conditional-CDF
/// inversion on a regular grid with monotone piecewise-linear interpolation.
#[derive(Debug, Clone)]
pub struct GridMap2D {
    bbox: Box2D,
    n: usize,
    /// First-coordinate map at the n+1 cell edges.
    t1_edges: Vec<f64>,
    /// Conditional second-coordinate map per first-coordinate cell, at edges.
    t2_edges: Vec<Vec<f64>>,
}

/// Monotone piecewise-linear inverse of a CDF given at edges.
fn invert_cdf(cdf: &[f64], edges: &[f64], p: f64) -> f64 {
    let n = cdf.len() - 1;
    let p = p.clamp(0.0, 1.0);
    let mut j = cdf.partition_point(|&c| c < p);
    if j == 0 {
        j = 1;
    }
    if j > n {
        j = n;
    }
    let (c0, c1) = (cdf[j - 1], cdf[j]);
    let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.5 };
    edges[j - 1] + w * (edges[j] - edges[j - 1])
}

/// Map values must increase strictly. In regions carrying no source mass the
/// CDF inversion is ill-conditioned and may wiggle; there the values are
/// clamped monotone. A decrease across an interval with real mass is an error.
fn enforce_strict_increase(values: &mut [f64], source_cdf: &[f64], width: f64) -> Result<()> {
    let tiny = 1e-12 * width;
    for k in 1..values.len() {
        let mass = source_cdf[k] - source_cdf[k - 1];
        if values[k] <= values[k - 1] {
            if mass > 1e-12 {
                return Err(Error::Numerical("transport map is not increasing".into()));
            }
            values[k] = values[k - 1] + tiny;
        }
    }
    Ok(())
}

fn interp_edges(edges_x: &[f64], values: &[f64], x: f64) -> f64 {
    let n = values.len() - 1;
    let lo = edges_x[0];
    let hi = edges_x[n];
    let x = x.clamp(lo, hi);
    let h = (hi - lo) / n as f64;
    let j = (((x - lo) / h) as usize).min(n - 1);
    let w = ((x - (lo + j as f64 * h)) / h).clamp(0.0, 1.0);
    (1.0 - w) * values[j] + w * values[j + 1]
}

impl GridMap2D {
    pub fn bbox(&self) -> Box2D {
        self.bbox
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Evaluate the transport at a point (clamped into the box).
    pub fn map(&self, x: [f64; 2]) -> [f64; 2] {
        let n = self.n;
        let h1 = (self.bbox.hi1 - self.bbox.lo1) / n as f64;
        let edges1: Vec<f64> = (0..=n).map(|j| self.bbox.lo1 + j as f64 * h1).collect();
        let y1 = interp_edges(&edges1, &self.t1_edges, x[0]);
        // Blend the two nearest rows' conditional maps linearly in x1.
        let x1 = x[0].clamp(self.bbox.lo1, self.bbox.hi1);
        let pos = (x1 - self.bbox.lo1) / h1 - 0.5;
        let i0 = pos.floor().clamp(0.0, (n - 1) as f64) as usize;
        let i1 = (i0 + 1).min(n - 1);
        let w = (pos - i0 as f64).clamp(0.0, 1.0);
        let h2 = (self.bbox.hi2 - self.bbox.lo2) / n as f64;
        let edges2: Vec<f64> = (0..=n).map(|j| self.bbox.lo2 + j as f64 * h2).collect();
        let a = interp_edges(&edges2, &self.t2_edges[i0], x[1]);
        let b = interp_edges(&edges2, &self.t2_edges[i1], x[1]);
        [y1, (1.0 - w) * a + w * b]
    }
}

/// Build the KR map between two strictly positive 2-D densities on a common
/// box. Densities may be unnormalized; the box must capture essentially all
/// of both masses.
pub fn kr_map_grid_2d<F, G>(density_mu: F, density_nu: G, bbox: Box2D, n: usize) -> Result<GridMap2D>
where
    F: Fn(f64, f64) -> f64,
    G: Fn(f64, f64) -> f64,
{
    if n < 8 {
        return Err(Error::Config("grid resolution too small".into()));
    }
    if !(bbox.hi1 > bbox.lo1 && bbox.hi2 > bbox.lo2) {
        return Err(Error::Input("degenerate bounding box".into()));
    }
    let h1 = (bbox.hi1 - bbox.lo1) / n as f64;
    let h2 = (bbox.hi2 - bbox.lo2) / n as f64;
    let c1: Vec<f64> = (0..n).map(|i| bbox.lo1 + (i as f64 + 0.5) * h1).collect();
    let c2: Vec<f64> = (0..n).map(|j| bbox.lo2 + (j as f64 + 0.5) * h2).collect();

    // Cell masses for mu; also the boundary-ring leak check for both inputs.
    let mut mu_cells = vec![vec![0.0f64; n]; n];
    let mut mu_total = 0.0;
    let mut mu_ring = 0.0;
    let mut nu_ring = 0.0;
    let mut nu_total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let m = density_mu(c1[i], c2[j]) * h1 * h2;
            let v = density_nu(c1[i], c2[j]) * h1 * h2;
            if !(m.is_finite() && v.is_finite()) || m < 0.0 || v < 0.0 {
                return Err(Error::Input("density returned an invalid value".into()));
            }
            mu_cells[i][j] = m;
            mu_total += m;
            nu_total += v;
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                mu_ring += m;
                nu_ring += v;
            }
        }
    }
    if mu_total <= 0.0 || nu_total <= 0.0 {
        return Err(Error::Input("density vanishes on the whole box".into()));
    }
    // Mass visible in the outermost cells bounds the leakage outside the box.
    if mu_ring / mu_total > 1e-6 || nu_ring / nu_total > 1e-6 {
        return Err(Error::Domain("bounding box does not capture the distribution mass".into()));
    }

    // First-marginal CDFs of both measures at the cell edges.
    let marginal1 = |cells: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        (0..n).map(|i| (0..n).map(|j| cells(i, j)).sum()).collect()
    };
    let mu_m1 = marginal1(&|i, j| mu_cells[i][j]);
    let nu_m1: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| density_nu(c1[i], c2[j]) * h1 * h2).sum())
        .collect();
    let cdf = |masses: &[f64]| -> Vec<f64> {
        let total: f64 = masses.iter().sum();
        let mut acc = 0.0;
        let mut out = vec![0.0; masses.len() + 1];
        for (k, &m) in masses.iter().enumerate() {
            acc += m;
            out[k + 1] = acc / total;
        }
        out[masses.len()] = 1.0;
        out
    };
    let mu_f1 = cdf(&mu_m1);
    let nu_f1 = cdf(&nu_m1);
    let edges1: Vec<f64> = (0..=n).map(|j| bbox.lo1 + j as f64 * h1).collect();
    let edges2: Vec<f64> = (0..=n).map(|j| bbox.lo2 + j as f64 * h2).collect();
    let mut t1_edges: Vec<f64> = mu_f1.iter().map(|&p| invert_cdf(&nu_f1, &edges1, p)).collect();
    enforce_strict_increase(&mut t1_edges, &mu_f1, bbox.hi1 - bbox.lo1)?;

    // Conditional maps: row i pushes mu(.|c1_i) to nu(.|t1(c1_i)).
    let mut t2_edges = Vec::with_capacity(n);
    for i in 0..n {
        let y1 = interp_edges(&edges1, &t1_edges, c1[i]);
        let mu_row: Vec<f64> = (0..n).map(|j| mu_cells[i][j]).collect();
        let nu_row: Vec<f64> = (0..n).map(|j| density_nu(y1, c2[j]) * h2).collect();
        if nu_row.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Numerical("destination conditional vanishes".into()));
        }
        let f_mu = cdf(&mu_row);
        let f_nu = cdf(&nu_row);
        let mut row: Vec<f64> = f_mu.iter().map(|&p| invert_cdf(&f_nu, &edges2, p)).collect();
        enforce_strict_increase(&mut row, &f_mu, bbox.hi2 - bbox.lo2)?;
        t2_edges.push(row);
    }

    Ok(GridMap2D { bbox, n, t1_edges, t2_edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{kl_gaussian, potential_energy_gaussian};
    use crate::randmat::random_gaussian_law;
    use crate::rng::chain_stream;
    use crate::targets::{condition_numbers_gaussian, GaussianTarget};
    use approx::assert_relative_eq;

    #[test]
    fn identity_transport_between_equal_laws() {
        let mut rng = chain_stream(41, 0);
        let mu = random_gaussian_law(3, &mut rng);
        let t = kr_map_gaussian(&mu, &mu).unwrap();
        assert!((t.matrix() - DMatrix::identity(3, 3)).norm() < 1e-10);
        assert!(t.shift().norm() < 1e-10);
    }

    #[test]
    fn standard_to_sigma_is_cholesky() {
        let mut rng = chain_stream(42, 0);
        let nu = random_gaussian_law(4, &mut rng);
        let mu = GaussianLaw::standard(4);
        let t = kr_map_gaussian(&mu, &nu).unwrap();
        assert!((t.matrix() * t.matrix().transpose() - nu.cov()).norm() < 1e-10);
    }

    #[test]
    fn scalar_map_is_shift_and_scale() {
        let mu = GaussianLaw::standard(1);
        let nu = GaussianLaw::new(DVector::from_vec(vec![3.0]), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let t = kr_map_gaussian(&mu, &nu).unwrap();
        assert_relative_eq!(t.matrix()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(t.shift()[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn kr_map_pushes_source_to_destination() {
        let mut rng = chain_stream(43, 0);
        for _ in 0..50 {
            let d = rand::Rng::gen_range(&mut rng, 1..=6);
            let mu = random_gaussian_law(d, &mut rng);
            let nu = random_gaussian_law(d, &mut rng);
            let t = kr_map_gaussian(&mu, &nu).unwrap();
            let pushed = t.push(&mu).unwrap();
            let scale = nu.cov().norm();
            assert!((pushed.cov() - nu.cov()).norm() < 1e-10 * scale.max(1.0));
            assert!((pushed.mean() - nu.mean()).norm() < 1e-10);
            assert!(kl_gaussian(&pushed, &nu).unwrap() < 1e-12);
        }
    }

    #[test]
    fn pushforward_entropy_examples() {
        let mu = GaussianLaw::standard(1);
        let double = AffineTriangularMap::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1)).unwrap();
        assert_relative_eq!(
            pushforward_entropy(&double, &mu).unwrap(),
            mu.entropy() - 2.0f64.ln(),
            epsilon = 1e-12
        );
        let id = AffineTriangularMap::identity(1);
        assert_relative_eq!(pushforward_entropy(&id, &mu).unwrap(), mu.entropy(), epsilon = 1e-12);
        // Log-det formula agrees with the entropy of the pushed Gaussian.
        let mut rng = chain_stream(44, 0);
        let mu = random_gaussian_law(3, &mut rng);
        let nu = random_gaussian_law(3, &mut rng);
        let t = kr_map_gaussian(&mu, &nu).unwrap();
        assert_relative_eq!(
            pushforward_entropy(&t, &mu).unwrap(),
            t.push(&mu).unwrap().entropy(),
            epsilon = 1e-10
        );
        // Composition adds entropy changes (log-det additivity).
        let t2 = kr_map_gaussian(&nu, &mu).unwrap();
        let comp = t2.compose(&t).unwrap();
        assert_relative_eq!(comp.log_det(), t.log_det() + t2.log_det(), epsilon = 1e-10);
    }

    #[test]
    fn partial_map_construction() {
        let mut rng = chain_stream(45, 0);
        let mu = random_gaussian_law(2, &mut rng);
        let nu = random_gaussian_law(2, &mut rng);
        let t = kr_map_gaussian(&mu, &nu).unwrap();
        let blocks = BlockStructure::scalar(2);
        let p0 = partial_map(&t, &blocks, 0, 0.0).unwrap();
        assert!((p0.matrix() - DMatrix::identity(2, 2)).norm() < 1e-14);
        // Single full block at t = 1 is the map itself.
        let whole = BlockStructure::new(vec![2]).unwrap();
        let p1 = partial_map(&t, &whole, 0, 1.0).unwrap();
        assert!((p1.matrix() - t.matrix()).norm() < 1e-14);
        assert!((p1.shift() - t.shift()).norm() < 1e-14);
        // Interpolated diagonal on block 0, identity elsewhere.
        let tmid = partial_map(&t, &blocks, 0, 0.3).unwrap();
        assert_relative_eq!(tmid.matrix()[(0, 0)], 0.7 + 0.3 * t.matrix()[(0, 0)], epsilon = 1e-14);
        assert_relative_eq!(tmid.matrix()[(1, 1)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn entropy_path_is_convex_with_matching_endpoints() {
        let mut rng = chain_stream(46, 0);
        for _ in 0..100 {
            let d = rand::Rng::gen_range(&mut rng, 1..=6);
            let mu = random_gaussian_law(d, &mut rng);
            let nu = random_gaussian_law(d, &mut rng);
            let t = kr_map_gaussian(&mu, &nu).unwrap();
            let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
            let path = entropy_along_path(&t, &mu, &grid).unwrap();
            assert_relative_eq!(path[0], mu.entropy(), epsilon = 1e-10);
            assert_relative_eq!(path[10], pushforward_entropy(&t, &mu).unwrap(), epsilon = 1e-10);
            for k in 1..10 {
                let second = path[k + 1] - 2.0 * path[k] + path[k - 1];
                assert!(second >= -1e-10, "path not convex: {second}");
            }
        }
        // Identity map: flat path.
        let mu = random_gaussian_law(2, &mut rng);
        let path = entropy_along_path(&AffineTriangularMap::identity(2), &mu, &[0.0, 0.5, 1.0]).unwrap();
        assert_relative_eq!(path[0], path[2], epsilon = 1e-12);
    }

    #[test]
    fn block_entropy_average_identity() {
        // (1/M) sum_m H(partial_m # mu) = ((M-1)/M) H(mu) + (1/M) H(T # mu),
        // with each entropy evaluated on the actual pushed Gaussian law.
        let mut rng = chain_stream(47, 0);
        for _ in 0..100 {
            let d = rand::Rng::gen_range(&mut rng, 2..=8);
            let mu = random_gaussian_law(d, &mut rng);
            let nu = random_gaussian_law(d, &mut rng);
            let t = kr_map_gaussian(&mu, &nu).unwrap();
            let blocks = BlockStructure::scalar(d);
            let m_count = blocks.num_blocks() as f64;
            let mut avg = 0.0;
            for m in 0..blocks.num_blocks() {
                let pm = partial_map(&t, &blocks, m, 1.0).unwrap();
                avg += pm.push(&mu).unwrap().entropy() / m_count;
            }
            let rhs = (m_count - 1.0) / m_count * mu.entropy() + t.push(&mu).unwrap().entropy() / m_count;
            assert_relative_eq!(avg, rhs, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn block_entropy_average_interpolation_bound() {
        // (1/M) sum_m H(partial_m(t) # mu) <= (1 - t/M) H(mu) + (t/M) H(T # mu).
        let mut rng = chain_stream(48, 0);
        for _ in 0..50 {
            let d = rand::Rng::gen_range(&mut rng, 2..=6);
            let mu = random_gaussian_law(d, &mut rng);
            let nu = random_gaussian_law(d, &mut rng);
            let t = kr_map_gaussian(&mu, &nu).unwrap();
            let blocks = BlockStructure::scalar(d);
            let m_count = d as f64;
            for &tt in &[0.0, 0.25, 0.5, 0.75, 1.0] {
                let mut avg = 0.0;
                for m in 0..d {
                    let pm = partial_map(&t, &blocks, m, tt).unwrap();
                    avg += pm.push(&mu).unwrap().entropy() / m_count;
                }
                let rhs = (1.0 - tt / m_count) * mu.entropy()
                    + (tt / m_count) * t.push(&mu).unwrap().entropy();
                assert!(avg <= rhs + 1e-9, "t={tt}: {avg} > {rhs}");
            }
        }
    }

    #[test]
    fn block_potential_average_contraction() {
        // With the convexity constant lambda* of the rescaled potential, the
        // lambda*-partial maps towards pi contract the average potential
        // energy: (1/M) sum_m U(partial_m(lambda*) # mu)
        //           <= (1 - lambda*/M) U(mu) + (lambda*/M) U(pi).
        let mut rng = chain_stream(49, 0);
        for _ in 0..100 {
            let d = rand::Rng::gen_range(&mut rng, 2..=6);
            let q = crate::randmat::random_spd(d, &mut rng);
            let blocks = BlockStructure::scalar(d);
            let target = GaussianTarget::new(
                DVector::from_fn(d, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0)),
                q.clone(),
                blocks.clone(),
            )
            .unwrap();
            let cn = condition_numbers_gaussian(&q, &blocks).unwrap();
            let mu = random_gaussian_law(d, &mut rng);
            let pi_law = GaussianLaw::from_target(&target).unwrap();
            let t = kr_map_gaussian(&mu, &pi_law).unwrap();
            let ls = cn.lambda_star;
            let m_count = d as f64;
            let mut avg = 0.0;
            for m in 0..d {
                let pm = partial_map(&t, &blocks, m, ls).unwrap();
                avg += potential_energy_gaussian(&pm.push(&mu).unwrap(), &target).unwrap() / m_count;
            }
            let u_mu = potential_energy_gaussian(&mu, &target).unwrap();
            let u_pi = potential_energy_gaussian(&pi_law, &target).unwrap();
            let rhs = (1.0 - ls / m_count) * u_mu + (ls / m_count) * u_pi;
            assert!(avg <= rhs + 1e-9, "{avg} > {rhs}");
        }
    }

    fn gaussian_density(mx: f64, my: f64, vx: f64, vy: f64, r: f64) -> impl Fn(f64, f64) -> f64 {
        move |x: f64, y: f64| {
            let dx = (x - mx) / vx.sqrt();
            let dy = (y - my) / vy.sqrt();
            let z = (dx * dx - 2.0 * r * dx * dy + dy * dy) / (1.0 - r * r);
            (-0.5 * z).exp() / (2.0 * std::f64::consts::PI * (vx * vy * (1.0 - r * r)).sqrt())
        }
    }

    #[test]
    fn grid_map_between_equal_densities_is_identity() {
        let f = gaussian_density(0.0, 0.0, 1.0, 1.0, 0.0);
        let g = gaussian_density(0.0, 0.0, 1.0, 1.0, 0.0);
        let bbox = Box2D { lo1: -8.0, hi1: 8.0, lo2: -8.0, hi2: 8.0 };
        let n = 256;
        let map = kr_map_grid_2d(f, g, bbox, n).unwrap();
        for &x in &[-2.0, -0.5, 0.0, 0.7, 1.9] {
            for &y in &[-1.5, 0.0, 2.2] {
                let out = map.map([x, y]);
                let tol = 2.0 / n as f64 + 16.0 / n as f64; // grid error in box units
                assert!((out[0] - x).abs() < tol, "x {x} -> {}", out[0]);
                assert!((out[1] - y).abs() < tol, "y {y} -> {}", out[1]);
            }
        }
    }

    #[test]
    fn grid_map_matches_affine_map_for_gaussians() {
        let mu_law = GaussianLaw::standard(2);
        let cov = DMatrix::from_row_slice(2, 2, &[1.5, 0.6, 0.6, 0.8]);
        let nu_law = GaussianLaw::new(DVector::from_vec(vec![0.5, -0.3]), cov).unwrap();
        let exact = kr_map_gaussian(&mu_law, &nu_law).unwrap();

        let f = gaussian_density(0.0, 0.0, 1.0, 1.0, 0.0);
        let r = 0.6 / (1.5f64 * 0.8).sqrt();
        let g = gaussian_density(0.5, -0.3, 1.5, 0.8, r);
        let bbox = Box2D { lo1: -10.0, hi1: 10.0, lo2: -10.0, hi2: 10.0 };
        let n = 512;
        let map = kr_map_grid_2d(f, g, bbox, n).unwrap();
        let mut sup = 0.0f64;
        for &x in &[-2.0, -1.0, -0.3, 0.0, 0.4, 1.1, 2.0] {
            for &y in &[-2.0, -0.8, 0.0, 0.9, 2.0] {
                let got = map.map([x, y]);
                let want = exact.apply(&DVector::from_vec(vec![x, y]));
                sup = sup.max((got[0] - want[0]).abs()).max((got[1] - want[1]).abs());
            }
        }
        // Sup error within a few grid cells (box width 20, n cells).
        assert!(sup < 3.0 * 20.0 / n as f64, "sup error {sup}");
    }

    #[test]
    fn grid_map_pushforward_matches_destination_masses() {
        let mu_law = GaussianLaw::standard(2);
        let f = gaussian_density(0.0, 0.0, 1.0, 1.0, 0.0);
        let r = -0.4 / (1.2f64 * 0.9).sqrt();
        let g = gaussian_density(-0.2, 0.4, 1.2, 0.9, r);
        let bbox = Box2D { lo1: -9.0, hi1: 9.0, lo2: -9.0, hi2: 9.0 };
        let map = kr_map_grid_2d(f, &g, bbox, 256).unwrap();

        // Push mu samples through the grid map and bin them coarsely.
        let mut rng = chain_stream(50, 0);
        let bins = 6usize;
        let lim = 3.0;
        let cell = 2.0 * lim / bins as f64;
        let n = 100_000usize;
        let mut counts = vec![0u64; bins * bins + 1];
        for _ in 0..n {
            let x = mu_law.sample(&mut rng);
            let y = map.map([x[0], x[1]]);
            if y[0].abs() < lim && y[1].abs() < lim {
                let i = ((y[0] + lim) / cell) as usize;
                let j = ((y[1] + lim) / cell) as usize;
                counts[i * bins + j] += 1;
            } else {
                counts[bins * bins] += 1;
            }
        }
        // Expected masses under nu on the same cells (fine midpoint rule).
        let mut expected = vec![0.0f64; bins * bins + 1];
        let sub = 8;
        for i in 0..bins {
            for j in 0..bins {
                let mut mass = 0.0;
                for a in 0..sub {
                    for b in 0..sub {
                        let x = -lim + (i as f64 + (a as f64 + 0.5) / sub as f64) * cell;
                        let y = -lim + (j as f64 + (b as f64 + 0.5) / sub as f64) * cell;
                        mass += g(x, y) * (cell / sub as f64).powi(2);
                    }
                }
                expected[i * bins + j] = mass * n as f64;
            }
        }
        expected[bins * bins] = n as f64 - expected[..bins * bins].iter().sum::<f64>();
        let chi2: f64 = counts
            .iter()
            .zip(&expected)
            .filter(|(_, &e)| e > 5.0)
            .map(|(&c, &e)| (c as f64 - e).powi(2) / e)
            .sum();
        // Generous threshold for ~37 dof at p = 0.001.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let dof = expected.iter().filter(|&&e| e > 5.0).count().saturating_sub(1);
        let crit = ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < crit, "chi-square {chi2} over {dof} dof (crit {crit})");
    }

    #[test]
    fn grid_map_rejects_leaky_boxes() {
        let f = gaussian_density(0.0, 0.0, 1.0, 1.0, 0.0);
        let g = gaussian_density(0.0, 0.0, 1.0, 1.0, 0.0);
        let bbox = Box2D { lo1: -2.0, hi1: 2.0, lo2: -2.0, hi2: 2.0 };
        assert!(matches!(kr_map_grid_2d(f, g, bbox, 64), Err(Error::Domain(_))));
    }

    #[test]
    fn triangular_map_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(AffineTriangularMap::new(bad, DVector::zeros(2)).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, -1.0]);
        assert!(AffineTriangularMap::new(neg, DVector::zeros(2)).is_err());
    }
}
