//! Adaptive rejection sampling for one-dimensional log-concave densities.
//!
//! Derivative-free variant: the upper hull over each interval between support
//! points is built from secants of the *exterior* neighbouring segments, which
//! lie above a concave function when extended. Tails are exponential; there is
//! no hard truncation of the support.
//!
//! The envelope is reusable: `ArsSampler` keeps it across draws so that after
//! a handful of refinements most proposals are accepted through the secant
//! squeeze without evaluating the density at all.

use rand::Rng;

use crate::error::{Error, Result};

const HULL_SLACK: f64 = 1e-8;
const MAX_EXPANSIONS: usize = 60;
const MAX_ABSCISSAE: usize = 64;

/// One linear piece a + b·x of the upper hull on [lo, hi] (endpoints may be
/// infinite) together with its log-integral.
#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
    log_mass: f64,
}

impl Segment {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Result<Self> {
        let log_mass = if lo.is_infinite() {
            // integral of exp(a + b x) over (-inf, hi] needs b > 0
            if b <= 0.0 {
                return Err(Error::Numerical("left hull tail is not integrable".into()));
            }
            a + b * hi - b.ln()
        } else if hi.is_infinite() {
            if b >= 0.0 {
                return Err(Error::Numerical("right hull tail is not integrable".into()));
            }
            a + b * lo - (-b).ln()
        } else {
            let w = hi - lo;
            if w <= 0.0 {
                f64::NEG_INFINITY
            } else if (b * w).abs() < 1e-12 {
                a + b * lo + w.ln()
            } else {
                a + b * lo + ((b * w).exp_m1() / b).ln()
            }
        };
        Ok(Self { lo, hi, a, b, log_mass })
    }

    fn value(&self, x: f64) -> f64 {
        self.a + self.b * x
    }

    /// Inverse-CDF draw from the truncated exponential on [lo, hi].
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen_range(1e-300..1.0);
        if self.lo.is_infinite() {
            self.hi + u.ln() / self.b
        } else if self.hi.is_infinite() {
            self.lo + (1.0 - u).ln() / self.b
        } else {
            let w = self.hi - self.lo;
            if (self.b * w).abs() < 1e-12 {
                self.lo + u * w
            } else {
                self.lo + (u * (self.b * w).exp_m1()).ln_1p() / self.b
            }
        }
    }
}

/// Piecewise-exponential upper envelope with a secant lower squeeze.
#[derive(Debug, Clone)]
pub struct Envelope {
    xs: Vec<f64>,
    hs: Vec<f64>,
    segments: Vec<Segment>,
    log_total: f64,
}

impl Envelope {
    /// Build from at least three support points (x, log-density(x)).
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = points.to_vec();
        if pts.iter().any(|(x, h)| !x.is_finite() || !h.is_finite()) {
            return Err(Error::Input("non-finite envelope support point".into()));
        }
        pts.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        pts.dedup_by(|p, q| (p.0 - q.0).abs() < 1e-14);
        if pts.len() < 3 {
            return Err(Error::Construction("envelope needs at least three distinct points".into()));
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let hs: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let segments = Self::build_segments(&xs, &hs)?;
        let log_total = log_sum(segments.iter().map(|s| s.log_mass));
        if !log_total.is_finite() {
            return Err(Error::Numerical("hull has non-finite mass".into()));
        }
        Ok(Self { xs, hs, segments, log_total })
    }

    fn build_segments(xs: &[f64], hs: &[f64]) -> Result<Vec<Segment>> {
        let n = xs.len();
        let line = |i: usize, j: usize| -> (f64, f64) {
            let b = (hs[j] - hs[i]) / (xs[j] - xs[i]);
            (hs[i] - b * xs[i], b)
        };
        let mut segs = Vec::with_capacity(2 * n);
        // Left tail: secant through the two leftmost points, extended left.
        let (a, b) = line(0, 1);
        segs.push(Segment::new(f64::NEG_INFINITY, xs[0], a, b)?);
        for i in 0..n - 1 {
            let left = if i >= 1 { Some(line(i - 1, i)) } else { None };
            let right = if i + 2 < n { Some(line(i + 1, i + 2)) } else { None };
            match (left, right) {
                (Some((la, lb)), Some((ra, rb))) => {
                    // Pointwise min of the two exterior secants; they cross at
                    // most once, so split at the intersection when it is
                    // interior.
                    let z = if (lb - rb).abs() > 1e-300 { (ra - la) / (lb - rb) } else { f64::NAN };
                    if z.is_finite() && z > xs[i] && z < xs[i + 1] {
                        segs.push(Segment::new(xs[i], z, la, lb)?);
                        segs.push(Segment::new(z, xs[i + 1], ra, rb)?);
                    } else {
                        let mid = 0.5 * (xs[i] + xs[i + 1]);
                        let (a, b) = if la + lb * mid <= ra + rb * mid { (la, lb) } else { (ra, rb) };
                        segs.push(Segment::new(xs[i], xs[i + 1], a, b)?);
                    }
                }
                (Some((a, b)), None) | (None, Some((a, b))) => {
                    segs.push(Segment::new(xs[i], xs[i + 1], a, b)?);
                }
                (None, None) => unreachable!("n >= 3"),
            }
        }
        // Right tail: secant through the two rightmost points, extended right.
        let (a, b) = line(n - 2, n - 1);
        segs.push(Segment::new(xs[n - 1], f64::INFINITY, a, b)?);
        Ok(segs)
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.xs
    }

    /// Upper hull value at x.
    pub fn hull(&self, x: f64) -> f64 {
        let idx = self
            .segments
            .partition_point(|s| s.hi < x)
            .min(self.segments.len() - 1);
        self.segments[idx].value(x)
    }

    /// Secant lower bound; -inf outside the support points.
    pub fn squeeze(&self, x: f64) -> f64 {
        if x < self.xs[0] || x > *self.xs.last().unwrap() {
            return f64::NEG_INFINITY;
        }
        let j = self.xs.partition_point(|&p| p < x).max(1).min(self.xs.len() - 1);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let t = (x - x0) / (x1 - x0);
        (1.0 - t) * self.hs[j - 1] + t * self.hs[j]
    }

    /// Normalized masses of the hull segments.
    pub fn segment_masses(&self) -> Vec<f64> {
        self.segments.iter().map(|s| (s.log_mass - self.log_total).exp()).collect()
    }

    /// log of the total hull integral; non-increasing under refinement.
    pub fn log_hull_mass(&self) -> f64 {
        self.log_total
    }

    /// Draw from the normalized piecewise-exponential hull density.
    pub fn sample_hull<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for s in &self.segments {
            acc += (s.log_mass - self.log_total).exp();
            if u <= acc {
                return s.sample(rng);
            }
        }
        self.segments.last().unwrap().sample(rng)
    }

    /// Insert a support point. Duplicate abscissae are a no-op (returns false).
    /// A value above the hull signals non-log-concavity.
    pub fn refine(&mut self, x: f64, h: f64) -> Result<bool> {
        if !x.is_finite() || !h.is_finite() {
            return Err(Error::Input("non-finite refinement point".into()));
        }
        if self.xs.iter().any(|&p| (p - x).abs() < 1e-14) {
            return Ok(false);
        }
        let excess = h - self.hull(x);
        if excess > HULL_SLACK {
            return Err(Error::HullViolation { point: x, excess });
        }
        let j = self.xs.partition_point(|&p| p < x);
        self.xs.insert(j, x);
        self.hs.insert(j, h);
        self.segments = Self::build_segments(&self.xs, &self.hs)?;
        self.log_total = log_sum(self.segments.iter().map(|s| s.log_mass));
        Ok(true)
    }
}

/// Refined copy of an envelope; duplicate points return the envelope unchanged.
pub fn envelope_refine(envelope: &Envelope, point: f64, log_density_value: f64) -> Result<Envelope> {
    let mut e = envelope.clone();
    e.refine(point, log_density_value)?;
    Ok(e)
}

fn log_sum(it: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = it.collect();
    crate::gauss::log_sum_exp(&terms)
}

/// Mode of a concave function by bisection on the symmetric finite-difference
/// slope. The bracket is expanded geometrically until it straddles the mode.
pub fn find_mode<F: Fn(f64) -> f64>(f: &F, bracket: (f64, f64), tol: f64) -> Result<f64> {
    let slope = |x: f64| {
        let eps = 1e-6 * (1.0 + x.abs());
        (f(x + eps) - f(x - eps)) / (2.0 * eps)
    };
    let (mut lo, mut hi) = (bracket.0.min(bracket.1), bracket.0.max(bracket.1));
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let mut expansions = 0;
    while slope(lo) <= 0.0 {
        let w = hi - lo;
        lo -= w;
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(Error::Bracket(MAX_EXPANSIONS));
        }
    }
    while slope(hi) >= 0.0 {
        let w = hi - lo;
        hi += w;
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(Error::Bracket(MAX_EXPANSIONS));
        }
    }
    while hi - lo > tol * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Reusable exact sampler for one log-concave density. Envelope refinements
/// persist across draws.
pub struct ArsSampler<F: Fn(f64) -> f64> {
    log_density: F,
    envelope: Envelope,
    evaluations: u64,
}

impl<F: Fn(f64) -> f64> ArsSampler<F> {
    /// `bracket` must straddle the mode (it is expanded if it does not);
    /// `scale_hint` sets the initial abscissa spread (e.g. 1/sqrt(curvature)).
    pub fn new(log_density: F, bracket: (f64, f64), scale_hint: f64) -> Result<Self> {
        let mut evaluations: u64 = 0;
        let mode = {
            let counted = |x: f64| log_density(x);
            find_mode(&counted, bracket, 1e-8)?
        };
        let mut eval = |x: f64| {
            evaluations += 1;
            log_density(x)
        };
        let h_mode = eval(mode);
        let base = if scale_hint.is_finite() && scale_hint > 0.0 { scale_hint } else { 1.0 };
        let mut pick = |side: f64| -> Result<(f64, f64)> {
            // Walk out until the log-density drops noticeably below the mode,
            // so tail secants have nonzero slope. The step factor is damped
            // whenever the search direction flips, so very steep densities
            // cannot make it oscillate.
            let mut delta = base;
            let mut factor = 2.0f64;
            let mut last_dir = 0i8;
            for _ in 0..2 * MAX_EXPANSIONS {
                let x = mode + side * delta;
                let h = eval(x);
                let drop = h_mode - h;
                let dir = if drop > 40.0 {
                    -1
                } else if drop < 0.25 {
                    1
                } else {
                    return Ok((x, h));
                };
                if last_dir != 0 && dir != last_dir {
                    factor = factor.sqrt().max(1.0 + 1e-6);
                }
                last_dir = dir;
                if dir > 0 {
                    delta *= factor;
                } else {
                    delta /= factor;
                }
            }
            Err(Error::Bracket(MAX_EXPANSIONS))
        };
        let left = pick(-1.0)?;
        let right = pick(1.0)?;
        let envelope = Envelope::from_points(&[left, (mode, h_mode), right])?;
        Ok(Self { log_density, envelope, evaluations })
    }

    pub fn envelope(&self) -> &Envelope {
        &self.envelope
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn draw<R: Rng>(&mut self, rng: &mut R) -> Result<f64> {
        for _ in 0..10_000 {
            let x = self.envelope.sample_hull(rng);
            if !x.is_finite() {
                continue;
            }
            let hull = self.envelope.hull(x);
            let log_u = rng.gen_range(1e-300..1.0f64).ln();
            if log_u <= self.envelope.squeeze(x) - hull {
                return Ok(x);
            }
            self.evaluations += 1;
            let h = (self.log_density)(x);
            let excess = h - hull;
            if excess > HULL_SLACK {
                return Err(Error::HullViolation { point: x, excess });
            }
            let accept = log_u <= h - hull;
            if self.envelope.abscissae().len() < MAX_ABSCISSAE {
                self.envelope.refine(x, h)?;
            }
            if accept {
                return Ok(x);
            }
        }
        Err(Error::Numerical("rejection sampling failed to accept".into()))
    }
}

/// One exact draw plus the number of density evaluations spent on it.
pub fn ars_sample<F: Fn(f64) -> f64, R: Rng>(
    log_density: F,
    init_bracket: (f64, f64),
    rng: &mut R,
) -> Result<(f64, u64)> {
    let mut s = ArsSampler::new(log_density, init_bracket, 1.0)?;
    let x = s.draw(rng)?;
    Ok((x, s.evaluations()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_stream;
    use approx::assert_relative_eq;

    fn std_normal(x: f64) -> f64 {
        -0.5 * x * x
    }

    #[test]
    fn mode_finding_on_shifted_quadratics() {
        for c in [-3.0, 0.0, 1.7, 25.0] {
            let m = find_mode(&|x: f64| -0.5 * (x - c) * (x - c), (-1.0, 1.0), 1e-8).unwrap();
            assert_relative_eq!(m, c, epsilon = 1e-6);
        }
        // A linear function has no interior mode.
        assert!(matches!(find_mode(&|x: f64| x, (-1.0, 1.0), 1e-8), Err(Error::Bracket(_))));
    }

    #[test]
    fn hull_dominates_and_touches_at_abscissae() {
        let pts: Vec<(f64, f64)> = [-2.0, -0.7, 0.0, 0.9, 2.3]
            .iter()
            .map(|&x| (x, std_normal(x)))
            .collect();
        let env = Envelope::from_points(&pts).unwrap();
        for i in 0..=400 {
            let x = -4.0 + i as f64 * 0.02;
            assert!(env.hull(x) >= std_normal(x) - 1e-10, "hull below density at {x}");
            assert!(env.squeeze(x) <= std_normal(x) + 1e-10, "squeeze above density at {x}");
        }
        for &(x, h) in &pts {
            assert!(env.hull(x) >= h - 1e-12);
        }
        let masses = env.segment_masses();
        assert_relative_eq!(masses.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn refinement_tightens_monotonically() {
        let pts: Vec<(f64, f64)> = [-2.0, 0.5, 2.0].iter().map(|&x| (x, std_normal(x))).collect();
        let env0 = Envelope::from_points(&pts).unwrap();
        // Refining at the mode strictly reduces hull mass.
        let env1 = envelope_refine(&env0, 0.0, std_normal(0.0)).unwrap();
        assert!(env1.log_hull_mass() < env0.log_hull_mass() - 1e-6);
        // Duplicate point: identical envelope.
        let env2 = envelope_refine(&env1, 0.5, std_normal(0.5)).unwrap();
        assert_eq!(env2.abscissae(), env1.abscissae());
        // A run of refinements never increases the mass.
        let mut env = env0;
        let mut last = env.log_hull_mass();
        for &x in &[-1.1, 0.0, 0.3, 1.4, -0.4] {
            env.refine(x, std_normal(x)).unwrap();
            assert!(env.log_hull_mass() <= last + 1e-12);
            last = env.log_hull_mass();
        }
    }

    #[test]
    fn non_concave_input_is_detected() {
        let pts: Vec<(f64, f64)> = [-2.0, 0.0, 2.0].iter().map(|&x| (x, std_normal(x))).collect();
        let mut env = Envelope::from_points(&pts).unwrap();
        // A bimodal bump pokes above the hull.
        let err = env.refine(1.0, 5.0).unwrap_err();
        assert!(matches!(err, Error::HullViolation { .. }));
    }

    #[test]
    fn normal_moments_match() {
        let mut rng = chain_stream(21, 0);
        let mut s = ArsSampler::new(std_normal, (-1.0, 1.0), 1.0).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = s.draw(&mut rng).unwrap();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn smoothed_laplace_median_near_zero() {
        // log f(x) = -sqrt(x^2 + 0.01): smooth, concave, Laplace-like tails.
        let mut rng = chain_stream(22, 0);
        let mut s = ArsSampler::new(|x: f64| -(x * x + 0.01).sqrt(), (-1.0, 1.0), 1.0).unwrap();
        let n = 50_000;
        let mut draws: Vec<f64> = (0..n).map(|_| s.draw(&mut rng).unwrap()).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[n / 2];
        // Median SE for a Laplace-like density at scale 1.
        assert!(median.abs() < 5.0 / (n as f64).sqrt() * 2.0, "median {median}");
    }

    #[test]
    fn steep_barrier_confines_samples() {
        // Near-uniform on [-1, 1] via a steep even-power barrier.
        let mut rng = chain_stream(23, 0);
        let mut s = ArsSampler::new(|x: f64| -(x.powi(2)).powi(12) * 50.0, (-0.5, 0.5), 1.0).unwrap();
        for _ in 0..2_000 {
            let x = s.draw(&mut rng).unwrap();
            assert!(x.abs() < 1.5, "sample escaped the barrier: {x}");
        }
    }

    #[test]
    fn ks_against_direct_normal_draws() {
        let mut rng = chain_stream(24, 0);
        let n = 100_000usize;
        let mut s = ArsSampler::new(std_normal, (-1.0, 1.0), 1.0).unwrap();
        let mut a: Vec<f64> = (0..n).map(|_| s.draw(&mut rng).unwrap()).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal))
            .collect();
        a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        b.sort_by(|p, q| p.partial_cmp(q).unwrap());
        // Two-sample KS statistic by merging sorted samples.
        let mut i = 0;
        let mut j = 0;
        let mut d: f64 = 0.0;
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / n as f64).abs());
        }
        // p = 0.001 threshold for equal sizes: c(alpha) sqrt(2/n), c(0.001) ~ 1.95.
        let crit = 1.95 * (2.0 / n as f64).sqrt();
        assert!(d < crit, "KS statistic {d} exceeds {crit}");
    }

    #[test]
    fn evaluation_count_scales_logarithmically() {
        // Gaussian conditionals at condition numbers 1, 10, 100: the mean
        // evaluation count per draw should fit under a·log(kappa) + b with
        // a <= 10.
        let mut rng = chain_stream(25, 0);
        let mut means = Vec::new();
        for &kappa in &[1.0f64, 10.0, 100.0] {
            let prec = kappa; // conditional variance 1/kappa
            let mut s = ArsSampler::new(move |x: f64| -0.5 * prec * x * x, (-1.0, 1.0), 1.0).unwrap();
            let n = 2_000u64;
            let before = s.evaluations();
            for _ in 0..n {
                s.draw(&mut rng).unwrap();
            }
            means.push((s.evaluations() - before) as f64 / n as f64);
        }
        // Least squares fit of mean evals against ln kappa.
        let ks: Vec<f64> = [1.0f64, 10.0, 100.0].iter().map(|k| k.ln()).collect();
        let kbar = ks.iter().sum::<f64>() / 3.0;
        let mbar = means.iter().sum::<f64>() / 3.0;
        let num: f64 = ks.iter().zip(&means).map(|(k, m)| (k - kbar) * (m - mbar)).sum();
        let den: f64 = ks.iter().map(|k| (k - kbar).powi(2)).sum();
        let slope = num / den;
        assert!(slope <= 10.0, "evaluation growth slope {slope} > 10");
    }
}
