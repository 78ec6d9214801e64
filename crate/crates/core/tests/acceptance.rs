//! Acceptance gate: one test per headline claim, each printing a single
//! pass/fail line. Tolerances are the declared ones; nothing is loosened.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use lcmc::blocks::BlockStructure;
use lcmc::gauss::{amit_gap, kl_gaussian, GaussianLaw};
use lcmc::randmat::{random_gaussian_law, random_spd};
use lcmc::rng::chain_stream;
use lcmc::samplers::MwGConfig;
use lcmc::targets::{condition_numbers_gaussian, CompositeTarget, GaussianTarget};
use lcmc::verify::{
    check_contraction_one_step, check_functional_inequality, check_gap, check_hr_projection_inequality,
    check_imh_minorization, check_mwg_contraction, check_nonconvex_rate, check_path_convexity,
    check_potential_inequality, check_rwm_stationarity, check_variance_inequality, check_entropy_identity,
    equicorrelation_precision, factorized_start_kl, run_suite, SuiteConfig,
};

fn verdict(name: &str, ok: bool) {
    println!("acceptance {name}: {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "acceptance {name} failed");
}

fn scalar_target(q: DMatrix<f64>) -> GaussianTarget {
    let d = q.nrows();
    GaussianTarget::new(DVector::zeros(d), q, BlockStructure::scalar(d)).unwrap()
}

#[test]
fn criterion_01_marginal_inequality_closed_form() {
    let mut rng = chain_stream(101, 0);
    let mut ok = true;
    for trial in 0..100 {
        let d = rng.gen_range(2..=10);
        let pi = scalar_target(random_spd(d, &mut rng));
        let mu = random_gaussian_law(d, &mut rng);
        let r = check_functional_inequality(&mu, &pi, trial).unwrap();
        ok &= r.passed;
    }
    verdict("01 marginal-KL average below contraction bound (100 random pairs, 1e-9)", ok);
}

#[test]
fn criterion_02_product_measure_equality() {
    let pi = scalar_target(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, 0.3])));
    let mu = GaussianLaw::new(
        DVector::from_vec(vec![0.4, -0.6, 1.2]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 0.2, 3.0])),
    )
    .unwrap();
    let r = check_functional_inequality(&mu, &pi, 0).unwrap();
    let total = kl_gaussian(&mu, &GaussianLaw::from_target(&pi).unwrap()).unwrap();
    let ok = (r.lhs - (1.0 - 1.0 / 3.0) * total).abs() <= 1e-12;
    verdict("02 product-measure tensorization equality (1e-12)", ok);
}

#[test]
fn criterion_03_one_step_contraction_mc() {
    // Equicorrelated d=3, rho=0.75: normalized smallest eigenvalue 0.25.
    let pi = scalar_target(equicorrelation_precision(3, 0.75).unwrap());
    let cn = condition_numbers_gaussian(pi.precision(), pi.blocks()).unwrap();
    assert!((cn.kappa_star - 4.0).abs() < 1e-12);
    let mut rng = chain_stream(103, 0);
    let mu = random_gaussian_law(3, &mut rng);
    let r = check_contraction_one_step(&mu, &pi, 1_000_000, 103).unwrap();
    verdict("03 one-step KL contraction, d=3 kappa*=4, 1e6-sample MC at 3 SE", r.passed);
}

#[test]
fn criterion_04_gap_and_variance() {
    let mut ok = true;
    // Analytic gap equals 1/(d kappa*) on random precisions.
    let mut rng = chain_stream(104, 0);
    for _ in 0..100 {
        let d = rng.gen_range(2..=8);
        let q = random_spd(d, &mut rng);
        let blocks = BlockStructure::scalar(d);
        let cn = condition_numbers_gaussian(&q, &blocks).unwrap();
        let gap = amit_gap(&q, &blocks).unwrap();
        ok &= (gap - 1.0 / (d as f64 * cn.kappa_star)).abs() <= 1e-10;
    }
    // Reference value and empirical estimate.
    let q = equicorrelation_precision(2, 0.5).unwrap();
    ok &= (amit_gap(&q, &BlockStructure::scalar(2)).unwrap() - 0.25).abs() <= 1e-12;
    ok &= check_gap(&q, 100_000, 104).unwrap().passed;
    // Conditional-variance lower bound on 200 random (Q, v).
    for trial in 0..200u64 {
        let d = rng.gen_range(2..=8);
        let q = random_spd(d, &mut rng);
        ok &= check_variance_inequality(&q, 1, trial).unwrap().passed;
    }
    verdict("04 exact gap 1/(d kappa*), empirical within 10%, variance bound on 200 (Q, v)", ok);
}

#[test]
fn criterion_05_transport_identities() {
    let mut rng = chain_stream(105, 0);
    let mut ok = true;
    for trial in 0..100 {
        let d = rng.gen_range(2..=8);
        let blocks = BlockStructure::scalar(d);
        let mu = random_gaussian_law(d, &mut rng);
        let nu = random_gaussian_law(d, &mut rng);
        ok &= check_entropy_identity(&mu, &nu, &blocks, trial).unwrap().passed;
        ok &= check_path_convexity(&mu, &nu, trial).unwrap().passed;
        let pi = scalar_target(random_spd(d, &mut rng));
        ok &= check_potential_inequality(&mu, &pi, trial).unwrap().passed;
    }
    verdict("05 entropy identity 1e-9, path convexity -1e-10, potential inequality 1e-9", ok);
}

#[test]
fn criterion_06_hr_projection() {
    let mut rng = chain_stream(106, 0);
    let pi = scalar_target(random_spd(4, &mut rng));
    let mu = random_gaussian_law(4, &mut rng);
    let mut ok = true;
    for ell in 1..=3 {
        ok &= check_hr_projection_inequality(&mu, &pi, ell, 10_000, 106 + ell as u64).unwrap().passed;
    }
    // Full frames: rotation invariance gives equality within SE.
    let r = check_hr_projection_inequality(&mu, &pi, 4, 10_000, 110).unwrap();
    let total = kl_gaussian(&mu, &GaussianLaw::from_target(&pi).unwrap()).unwrap();
    ok &= (r.lhs - total).abs() <= 1e-9 && (r.rhs - total).abs() <= 1e-9;
    verdict("06 HR projection inequality at 3 SE, ell in {1,2,3}; ell=d equality", ok);
}

#[test]
fn criterion_07_mwg_checks() {
    let mut ok = true;
    // Minorization ratio below sqrt(kappa*) for kappa* in {2, 10}.
    for rho in [0.5, 0.9] {
        let pi = scalar_target(equicorrelation_precision(2, rho).unwrap());
        ok &= check_imh_minorization(&pi, 107).unwrap().passed;
    }
    // One-step KL factor for the independence proposal.
    let pi = scalar_target(equicorrelation_precision(2, 0.5).unwrap());
    let cn = condition_numbers_gaussian(pi.precision(), pi.blocks()).unwrap();
    let mut rng = chain_stream(107, 0);
    let mu = random_gaussian_law(2, &mut rng);
    let cfg = MwGConfig::imh(&cn).unwrap();
    ok &= check_mwg_contraction(&mu, &pi, &cfg, 200_000, 107).unwrap().passed;
    // Random-walk proposals: stationarity only, at 4 SE.
    ok &= check_rwm_stationarity(&pi, 100_000, 107).unwrap().passed;
    verdict("07 IMH minorization + one-step factor; RWM stationarity at 4 SE", ok);
}

#[test]
fn criterion_08_nonconvex_rate() {
    let target = CompositeTarget::log_cosh();
    let r = check_nonconvex_rate(&target, 1.0, 200, 1_000_000, 108).unwrap();
    let mut ok = r.passed;
    for w in r.bound_trajectory.windows(2) {
        ok &= w[1] < w[0];
    }
    verdict("08 log-cosh trajectory below 2MB/(n+2M) envelope, 1e6 samples/checkpoint", ok);
}

#[test]
fn criterion_09_factorized_and_warm_start() {
    let mut rng = chain_stream(109, 0);
    let mut ok = true;
    for trial in 0..100 {
        let d = rng.gen_range(2..=10);
        let pi = scalar_target(random_spd(d, &mut rng));
        ok &= factorized_start_kl(&pi, trial).unwrap().passed;
    }
    // Warm start at n = 0: KL below log C.
    let target = CompositeTarget::log_cosh();
    let r = check_nonconvex_rate(&target, 1.0, 0, 200_000, 109).unwrap();
    ok &= r.kl_trajectory[0].1 <= r.warm_constant.ln() + 0.05;
    verdict("09 factorized-start KL below d kappa^2 (1e-9); warm-start KL0 below log C", ok);
}

#[test]
fn criterion_10_mixing_scaling() {
    let cfg = SuiteConfig { seed: 110, ..Default::default() };
    let rows = run_suite("mixing", &cfg).unwrap();
    let ok = rows.iter().all(|r| r.passed);
    for r in &rows {
        println!("  {}: lhs={:.4} rhs={:.4} {}", r.name, r.lhs, r.rhs, r.passed);
    }
    verdict("10 mixing steps below kappa* M (log 1/eps + log d + 2 log kappa); slope in [0.8, 1.3]", ok);
}

#[test]
fn criterion_11_suite_determinism() {
    let cfg = SuiteConfig { trials: 20, dim: 3, samples: 20_000, ..Default::default() };
    let mut ok = true;
    for suite in ["t31", "t32", "variance", "lemma54", "lemma56", "feasible-start"] {
        let render = |rows: &[lcmc::verify::InequalityReport]| {
            rows.iter().map(|r| r.csv_row()).collect::<String>()
        };
        let a = render(&run_suite(suite, &cfg).unwrap());
        let b = render(&run_suite(suite, &cfg).unwrap());
        ok &= a == b;
    }
    verdict("11 suites reproduce byte-identical CSV under the same seed", ok);
}
