//! Command-line front end: run sampling chains to CSV, or run a
//! verification suite and emit its report.
//!
//! Exit codes: 0 success (and all checks passed), 1 a check failed,
//! 2 configuration error, 3 numerical error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use lcmc::error::Error;
use lcmc::rng::chain_stream;
use lcmc::samplers::{gs_ell_step, gs_step, hr_ell_step, mwg_step, ChainState, MwGConfig, StepMeta};
use lcmc::targets::{
    condition_numbers_composite, condition_numbers_gaussian, load_target, ConditionNumbers, Target,
};
use lcmc::verify::{run_suite, write_reports_csv, SuiteConfig, SUITES};

#[derive(Parser)]
#[command(name = "lcmc", about = "Log-concave MCMC toolkit: samplers and verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sampling chain and write it as CSV.
    Sample {
        /// Target distribution as JSON.
        #[arg(long)]
        target: PathBuf,
        /// Kernel: gs, gs-ell, hr, mwg-rwm or mwg-imh.
        #[arg(long)]
        kernel: String,
        /// Subspace/block count per step (gs-ell and hr only).
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        seed: u64,
        /// Independent chains on distinct substreams, one output file each.
        #[arg(long, default_value_t = 1)]
        replicas: u64,
        /// Output path; `-` streams to stdout.
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Run a verification suite and write its report CSV.
    Verify {
        /// One of: t31, t32, gap, variance, hr-proj, hr-contract, mwg,
        /// nonconvex, feasible-start, lemma54, lemma56, mixing.
        suite: String,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; `-` streams the CSV to stdout.
        #[arg(long, default_value = "-")]
        out: String,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Input(_)
        | Error::Unsupported(_)
        | Error::Dimension(_)
        | Error::Construction(_)
        | Error::Parse(_) => 2,
        _ => 3,
    }
}

enum Kernel {
    Gs,
    GsEll(usize),
    Hr(usize),
    Mwg(MwGConfig),
}

fn build_kernel(name: &str, ell: Option<usize>, target: &Target) -> Result<Kernel, Error> {
    let condition_numbers = |t: &Target| -> Result<ConditionNumbers, Error> {
        match t {
            Target::Gaussian(g) => condition_numbers_gaussian(g.precision(), g.blocks()),
            Target::Composite(c) => Ok(condition_numbers_composite(c)),
        }
    };
    match name {
        "gs" | "mwg-rwm" | "mwg-imh" if ell.is_some() => {
            Err(Error::Config(format!("--ell does not apply to kernel `{name}`")))
        }
        "gs" => Ok(Kernel::Gs),
        "gs-ell" => {
            let ell = ell.ok_or_else(|| Error::Config("kernel gs-ell requires --ell".into()))?;
            Ok(Kernel::GsEll(ell))
        }
        "hr" => Ok(Kernel::Hr(ell.unwrap_or(1))),
        "mwg-rwm" => {
            let cn = condition_numbers(target)?;
            let blocks = target.blocks();
            let dims: Vec<usize> = (0..blocks.num_blocks()).map(|m| blocks.block_dim(m)).collect();
            Ok(Kernel::Mwg(MwGConfig::rwm(&cn, &dims)?))
        }
        "mwg-imh" => Ok(Kernel::Mwg(MwGConfig::imh(&condition_numbers(target)?)?)),
        other => Err(Error::Config(format!("unknown kernel `{other}`"))),
    }
}

fn initial_point(target: &Target) -> DVector<f64> {
    match target {
        Target::Gaussian(g) => g.mean().clone(),
        Target::Composite(c) => DVector::zeros(c.dim()),
    }
}

fn write_chain<W: Write>(
    target: &Target,
    kernel: &Kernel,
    steps: u64,
    seed: u64,
    replica: u64,
    w: &mut W,
) -> Result<(), Error> {
    let d = target.dim();
    let cn = match target {
        Target::Gaussian(g) => condition_numbers_gaussian(g.precision(), g.blocks())?,
        Target::Composite(c) => condition_numbers_composite(c),
    };
    let mut header = String::from("step,block_or_frame_id");
    for i in 1..=d {
        header.push_str(&format!(",x_{i}"));
    }
    header.push_str(",accepted\n");
    w.write_all(header.as_bytes())?;

    let mut state = ChainState::new(initial_point(target), chain_stream(seed, replica))?;
    for step in 1..=steps {
        let meta: StepMeta = match kernel {
            Kernel::Gs => gs_step(target, &mut state)?,
            Kernel::GsEll(ell) => gs_ell_step(target, &mut state, *ell)?,
            Kernel::Hr(ell) => hr_ell_step(target, &mut state, *ell)?,
            Kernel::Mwg(cfg) => mwg_step(target, &cn, cfg, &mut state)?,
        };
        let mut row = format!("{step},{}", meta.id);
        for i in 0..d {
            row.push_str(&format!(",{:.12e}", state.x[i]));
        }
        match meta.accepted {
            Some(a) => row.push_str(&format!(",{a}\n")),
            None => row.push_str(",\n"),
        }
        w.write_all(row.as_bytes())?;
    }
    Ok(())
}

fn replica_path(out: &str, replica: u64) -> PathBuf {
    let path = PathBuf::from(out);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("chain");
    let named = match path.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}_r{replica}.{ext}"),
        None => format!("{stem}_r{replica}"),
    };
    path.with_file_name(named)
}

fn cmd_sample(
    target: PathBuf,
    kernel: String,
    ell: Option<usize>,
    steps: u64,
    seed: u64,
    replicas: u64,
    out: String,
) -> Result<(), Error> {
    if steps == 0 {
        return Err(Error::Config("--steps must be at least 1".into()));
    }
    if replicas == 0 {
        return Err(Error::Config("--replicas must be at least 1".into()));
    }
    if out == "-" && replicas > 1 {
        return Err(Error::Config("replicas need per-replica files; `--out -` only supports one chain".into()));
    }
    let target = load_target(&target)?;
    let kernel = build_kernel(&kernel, ell, &target)?;
    if replicas == 1 {
        if out == "-" {
            let stdout = std::io::stdout();
            let mut w = std::io::BufWriter::new(stdout.lock());
            write_chain(&target, &kernel, steps, seed, 0, &mut w)?;
            w.flush()?;
        } else {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
            write_chain(&target, &kernel, steps, seed, 0, &mut w)?;
            w.flush()?;
        }
    } else {
        for r in 0..replicas {
            let mut w = std::io::BufWriter::new(std::fs::File::create(replica_path(&out, r))?);
            write_chain(&target, &kernel, steps, seed, r, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Per-suite defaults where the general defaults are a poor fit.
#[allow(clippy::too_many_arguments)]
fn suite_config(
    suite: &str,
    dim: Option<usize>,
    ell: Option<usize>,
    trials: Option<u64>,
    samples: Option<u64>,
    steps: Option<u64>,
    rho: Option<f64>,
    eps: Option<f64>,
    seed: u64,
) -> SuiteConfig {
    let base = SuiteConfig::default();
    let default_trials = match suite {
        "t32" | "hr-proj" | "hr-contract" => 1,
        "variance" => 200,
        _ => base.trials,
    };
    let default_samples = match suite {
        "t32" => 1_000_000,
        "hr-proj" => 10_000,
        "hr-contract" => 200_000,
        "mwg" => 100_000,
        "nonconvex" => 1_000_000,
        _ => base.samples,
    };
    let default_steps = match suite {
        "nonconvex" => 200,
        _ => base.steps,
    };
    SuiteConfig {
        dim: dim.unwrap_or(base.dim),
        ell: ell.unwrap_or(base.ell),
        trials: trials.unwrap_or(default_trials),
        samples: samples.unwrap_or(default_samples),
        steps: steps.unwrap_or(default_steps),
        rho,
        eps: eps.unwrap_or(base.eps),
        seed,
    }
}

fn cmd_verify(suite: &str, cfg: &SuiteConfig, out: &str) -> Result<bool, Error> {
    if !SUITES.contains(&suite) {
        return Err(Error::Config(format!("unknown suite `{suite}`")));
    }
    let reports = run_suite(suite, cfg)?;
    if out == "-" {
        let stdout = std::io::stdout();
        let mut w = std::io::BufWriter::new(stdout.lock());
        write_reports_csv(&reports, &mut w)?;
        w.flush()?;
    } else {
        let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
        write_reports_csv(&reports, &mut w)?;
        w.flush()?;
    }
    // Human-readable summary; kept off stdout whenever the CSV streams there.
    let mut summary = String::new();
    for r in &reports {
        summary.push_str(&format!(
            "{:<28} {}  lhs={:+.6e} rhs={:+.6e}{}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.lhs,
            r.rhs,
            r.standard_error.map_or(String::new(), |s| format!(" se={s:.2e}")),
        ));
    }
    let all_passed = reports.iter().all(|r| r.passed);
    summary.push_str(&format!(
        "{}: {}/{} checks passed\n",
        suite,
        reports.iter().filter(|r| r.passed).count(),
        reports.len()
    ));
    if out == "-" {
        eprint!("{summary}");
    } else {
        print!("{summary}");
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Sample { target, kernel, ell, steps, seed, replicas, out } => {
            cmd_sample(target, kernel, ell, steps, seed, replicas, out).map(|()| true)
        }
        Command::Verify { suite, dim, ell, trials, samples, steps, rho, eps, seed, out } => {
            let cfg = suite_config(&suite, dim, ell, trials, samples, steps, rho, eps, seed);
            cmd_verify(&suite, &cfg, &out)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
