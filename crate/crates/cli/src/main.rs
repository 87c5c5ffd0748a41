//! Command-line front end: solve, check, diagnose, path and experiment
//! subcommands over headerless-CSV matrices and JSON experiment configs.
//!
//! Exit codes: 0 success / positive verdict, 1 negative verdict, 2 input
//! error, 3 numerical failure.

mod io;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use slope_core::error::SlopeError;
use slope_core::experiments::{
    calibrate_alpha, compare_lasso_slope, gen_design, limit_gram, mc_recovery, ComparisonConfig,
    DesignSpec, ExperimentConfig, PiAlphaSampler,
};
use slope_core::lambda_seq::LambdaRecipe;
use slope_core::recovery::{
    check_recovery, geometric_pi_bar, irrepresentability, open_irrepresentability,
    zero_pattern_recovered, AsymptoticSpec,
};
use slope_core::solver::{solution_path, solve, Problem, SolveOptions};
use slope_core::{patt, Matrix, SlopePattern, Tolerances, TuningSequence, Vector};

use io::{fmt_full, read_matrix, read_vector, write_with_manifest, Manifest};

const EXIT_NEGATIVE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "slope",
    version,
    about = "SLOPE pattern recovery: solving, certificates, diagnostics and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Design matrix CSV (rows are observations)
    #[arg(long = "x", value_name = "FILE")]
    x: PathBuf,
    /// Response vector CSV (single column)
    #[arg(long = "y", value_name = "FILE")]
    y: PathBuf,
}

#[derive(Args)]
struct PenaltyArgs {
    /// Tuning-sequence recipe: gauss-os | oscar:a,b | const:l
    #[arg(long)]
    lambda: String,
    /// Penalty scale multiplying the sequence
    #[arg(long)]
    alpha: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator and write the solution, its pattern and a KKT report
    Solve {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        penalty: PenaltyArgs,
        /// Use a constant sequence at level alpha (ignore --lambda shape)
        #[arg(long)]
        lasso: bool,
        /// Directory for beta_hat.csv, pattern.csv, kkt_report.csv
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Test exact pattern recovery of a target vector's pattern
    Check {
        #[command(flatten)]
        data: DataArgs,
        /// Target coefficient vector CSV (its pattern is the target)
        #[arg(long, value_name = "FILE")]
        beta: PathBuf,
        #[command(flatten)]
        penalty: PenaltyArgs,
        /// Output certificate CSV
        #[arg(long, default_value = "certificate.csv")]
        out: PathBuf,
    },
    /// Irrepresentability and certificate-geometry diagnostics for a pattern
    Diagnose {
        /// Design matrix CSV
        #[arg(long = "x", value_name = "FILE")]
        x: PathBuf,
        /// Target pattern, comma separated (e.g. "2,1,0,-1")
        #[arg(long)]
        pattern: String,
        /// Tuning-sequence recipe
        #[arg(long)]
        lambda: String,
    },
    /// Solution path over a scale grid, with pattern and objective per point
    Path {
        #[command(flatten)]
        data: DataArgs,
        /// Tuning-sequence recipe
        #[arg(long)]
        lambda: String,
        /// Scale grid lo:hi:n (n points, geometric unless lo<=0)
        #[arg(long, value_name = "LO:HI:N")]
        alpha_grid: String,
        /// Output CSV
        #[arg(long, default_value = "path.csv")]
        out: PathBuf,
    },
    /// Run a JSON-configured experiment (the config's `task` field selects
    /// Monte-Carlo recovery, calibration, the LASSO comparison, or the
    /// constant-magnitude test)
    Experiment {
        /// JSON config file
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Directory for result CSVs
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let tol = Tolerances::default();
    let outcome = match cli.command {
        Command::Solve {
            data,
            penalty,
            lasso,
            out_dir,
        } => cmd_solve(&data, &penalty, lasso, &out_dir, &tol),
        Command::Check {
            data,
            beta,
            penalty,
            out,
        } => cmd_check(&data, &beta, &penalty, &out, &tol),
        Command::Diagnose { x, pattern, lambda } => cmd_diagnose(&x, &pattern, &lambda, &tol),
        Command::Path {
            data,
            lambda,
            alpha_grid,
            out,
        } => cmd_path(&data, &lambda, &alpha_grid, &out, &tol),
        Command::Experiment { config, out_dir } => cmd_experiment(&config, &out_dir, &tol),
    };
    match outcome {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.exit)
        }
    }
}

struct Failure {
    exit: u8,
    message: String,
}

impl Failure {
    fn input(message: impl std::fmt::Display) -> Self {
        Failure {
            exit: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    fn numeric(message: impl std::fmt::Display) -> Self {
        Failure {
            exit: EXIT_NUMERIC,
            message: message.to_string(),
        }
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        Failure::input(e)
    }
}

impl From<SlopeError> for Failure {
    fn from(e: SlopeError) -> Self {
        match e {
            SlopeError::NotConverged { .. } | SlopeError::CalibrationFailed { .. } => {
                Failure::numeric(e)
            }
            other => Failure::input(other),
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn parse_recipe(text: &str) -> Result<LambdaRecipe, Failure> {
    LambdaRecipe::from_str(text).map_err(Failure::input)
}

fn load_problem(data: &DataArgs) -> Result<(Matrix, Vector), Failure> {
    let x = read_matrix(&data.x)?;
    let y = read_vector(&data.y)?;
    if y.len() != x.nrows() {
        return Err(Failure::input(format!(
            "response has {} entries but the design has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    Ok((x, y))
}

fn cmd_solve(
    data: &DataArgs,
    penalty: &PenaltyArgs,
    lasso: bool,
    out_dir: &Path,
    tol: &Tolerances,
) -> CmdResult {
    let (x, y) = load_problem(data)?;
    let p = x.ncols();
    let lambda = if lasso {
        TuningSequence::constant(1.0, p)?
    } else {
        parse_recipe(&penalty.lambda)?.generate(p)?
    };
    let prob = Problem::new(x, y, lambda, penalty.alpha)?;
    let result = solve(&prob, &SolveOptions::default(), tol)?;
    let pattern = slope_core::patt_with_tol(&result.beta_hat, tol.pattern_tol)?;

    let manifest = Manifest::new("solve", tol)
        .with("x", data.x.display())
        .with("y", data.y.display())
        .with("lambda", if lasso { "lasso".into() } else { penalty.lambda.clone() })
        .with("alpha", fmt_full(penalty.alpha));

    let mut beta_body = String::new();
    for v in &result.beta_hat {
        let _ = writeln!(beta_body, "{}", fmt_full(*v));
    }
    write_with_manifest(&out_dir.join("beta_hat.csv"), &manifest, &beta_body)?;
    write_with_manifest(
        &out_dir.join("pattern.csv"),
        &manifest,
        &format!("{pattern}\n"),
    )?;
    let kkt_body = format!(
        "converged,iterations,kkt_residual,objective\n{},{},{},{}\n",
        result.converged as u8,
        result.iterations,
        fmt_full(result.kkt_residual),
        fmt_full(result.objective),
    );
    write_with_manifest(&out_dir.join("kkt_report.csv"), &manifest, &kkt_body)?;

    println!("pattern {pattern}");
    if result.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Failure::numeric(format!(
            "solver did not converge ({} iterations, kkt residual {:.3e})",
            result.iterations, result.kkt_residual
        )))
    }
}

fn cmd_check(
    data: &DataArgs,
    beta_path: &Path,
    penalty: &PenaltyArgs,
    out: &Path,
    tol: &Tolerances,
) -> CmdResult {
    let (x, y) = load_problem(data)?;
    let beta = read_vector(beta_path)?;
    if beta.len() != x.ncols() {
        return Err(Failure::input(format!(
            "target vector has {} entries but the design has {} columns",
            beta.len(),
            x.ncols()
        )));
    }
    let lambda = parse_recipe(&penalty.lambda)?.generate(x.ncols())?;
    let m = patt(beta.as_slice())?;

    let manifest = Manifest::new("check", tol)
        .with("x", data.x.display())
        .with("y", data.y.display())
        .with("beta", beta_path.display())
        .with("lambda", &penalty.lambda)
        .with("alpha", fmt_full(penalty.alpha));

    if m.is_zero() {
        let ok = zero_pattern_recovered(&x, &y, &lambda, penalty.alpha, tol)?;
        let body = format!("pattern,recovered\n\"{m}\",{}\n", ok as u8);
        write_with_manifest(out, &manifest, &body)?;
        println!("recovered {}", ok as u8);
        return Ok(if ok {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(EXIT_NEGATIVE)
        });
    }

    let cert = check_recovery(&x, &y, &m, &lambda, penalty.alpha, tol)?;
    let record = cert.record();
    let mut body = String::new();
    let _ = writeln!(
        body,
        "{}",
        record
            .iter()
            .map(|(k, _)| *k)
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(
        body,
        "{}",
        record
            .iter()
            .map(|(k, v)| if *k == "pattern" {
                format!("\"{v}\"")
            } else {
                v.clone()
            })
            .collect::<Vec<_>>()
            .join(",")
    );
    write_with_manifest(out, &manifest, &body)?;
    println!(
        "positivity {} subdiff {} recovered {}",
        cert.positivity_ok as u8,
        cert.subdiff_ok as u8,
        cert.recovered() as u8
    );
    Ok(if cert.recovered() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NEGATIVE)
    })
}

fn cmd_diagnose(x_path: &Path, pattern: &str, lambda: &str, tol: &Tolerances) -> CmdResult {
    let x = read_matrix(x_path)?;
    let m = SlopePattern::from_str(pattern).map_err(Failure::input)?;
    if m.len() != x.ncols() {
        return Err(Failure::input(format!(
            "pattern has {} entries but the design has {} columns",
            m.len(),
            x.ncols()
        )));
    }
    if m.is_zero() {
        return Err(Failure::input("pattern must be nonzero"));
    }
    let lam = parse_recipe(lambda)?.generate(x.ncols())?;
    let ir = irrepresentability(&x, &m, &lam, tol)?;
    let open = open_irrepresentability(&x, &m, &lam, tol)?;
    let geom = geometric_pi_bar(&x, &m, &lam, tol)?;

    println!("pattern {m}");
    println!("dual_value {}", fmt_full(ir.dual_value));
    println!("lambda_tilde_in_col_space {}", ir.col_ok as u8);
    println!("irrepresentability {}", ir.holds as u8);
    println!("open_irrepresentability {}", open as u8);
    println!("pi_bar_in_affine_hull {}", geom.in_affine as u8);
    println!("pi_bar_in_col_space {}", geom.in_colspace as u8);
    println!(
        "pi_bar {}",
        geom.pi_bar
            .iter()
            .map(|v| fmt_full(*v))
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(if ir.holds {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NEGATIVE)
    })
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::input(format!("bad grid '{spec}', expected lo:hi:n"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo > 0.0) || hi <= lo || n < 2 {
        return Err(Failure::input(format!(
            "grid '{spec}' needs 0 < lo < hi and n >= 2"
        )));
    }
    Ok((0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect())
}

fn cmd_path(
    data: &DataArgs,
    lambda: &str,
    alpha_grid: &str,
    out: &Path,
    tol: &Tolerances,
) -> CmdResult {
    let (x, y) = load_problem(data)?;
    let lam = parse_recipe(lambda)?.generate(x.ncols())?;
    let grid = parse_grid(alpha_grid)?;
    let points = solution_path(&x, &y, &lam, &grid, &SolveOptions::default(), tol)?;

    let manifest = Manifest::new("path", tol)
        .with("x", data.x.display())
        .with("y", data.y.display())
        .with("lambda", lambda)
        .with("alpha_grid", alpha_grid);
    let mut body = String::from("alpha,pattern,objective,converged\n");
    let mut all_converged = true;
    for pt in &points {
        all_converged &= pt.result.converged;
        let _ = writeln!(
            body,
            "{},\"{}\",{},{}",
            fmt_full(pt.alpha),
            pt.pattern,
            fmt_full(pt.result.objective),
            pt.result.converged as u8
        );
    }
    write_with_manifest(out, &manifest, &body)?;
    println!("{} path points written to {}", points.len(), out.display());
    if all_converged {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Failure::numeric("solver did not converge on every grid point"))
    }
}

/// Experiment config: the core [`ExperimentConfig`] fields plus a `task`
/// selector and task-specific extras.
#[derive(Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
enum TaskConfig {
    McRecovery(ExperimentConfig),
    Calibrate {
        eta: f64,
        design: DesignSpec,
        pattern: Vec<i64>,
        lambda: LambdaRecipe,
        sigma: f64,
        mc_reps: usize,
        seed: u64,
        /// Sample from the limiting Gaussian instead of a realized design
        #[serde(default)]
        asymptotic: bool,
    },
    CompareLassoSlope {
        #[serde(default)]
        config: ComparisonConfig,
        seeds: Vec<u64>,
    },
    MagnitudeTest {
        p: usize,
        /// Common magnitudes c to test with beta = c * ones
        magnitudes: Vec<f64>,
        lambda: LambdaRecipe,
        alpha: f64,
        sigma: f64,
        reps: usize,
        master_seed: u64,
    },
}

fn cmd_experiment(config_path: &Path, out_dir: &Path, tol: &Tolerances) -> CmdResult {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", config_path.display())))?;
    let task: TaskConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::input(format!("{}: {e}", config_path.display())))?;
    let manifest = |name: &str| Manifest::new("experiment", tol).with("config", config_path.display()).with("task", name);

    match task {
        TaskConfig::McRecovery(config) => {
            let result = mc_recovery(&config, tol)?;
            let mut reps_body = String::from("rep,alpha,positivity,subdiff,recovered,dual_value,seed\n");
            for r in &result.records {
                let _ = writeln!(
                    reps_body,
                    "{},{},{},{},{},{},{}",
                    r.rep,
                    fmt_full(r.alpha),
                    r.positivity as u8,
                    r.subdiff as u8,
                    r.recovered as u8,
                    fmt_full(r.dual_value),
                    r.seed
                );
            }
            let m = manifest("mc_recovery").with("master_seed", config.master_seed);
            write_with_manifest(&out_dir.join("reps.csv"), &m, &reps_body)?;
            let agg = format!(
                "alpha,reps,positivity_freq,subdiff_freq,recovery_freq,se,solver_checked,solver_agreed\n{},{},{},{},{},{},{},{}\n",
                fmt_full(result.alpha),
                result.reps,
                fmt_full(result.positivity_freq),
                fmt_full(result.subdiff_freq),
                fmt_full(result.recovery_freq),
                fmt_full(result.se),
                result.solver_checked,
                result.solver_agreed,
            );
            write_with_manifest(&out_dir.join("result.csv"), &m, &agg)?;
            println!(
                "recovery_freq {} (se {})",
                fmt_full(result.recovery_freq),
                fmt_full(result.se)
            );
        }
        TaskConfig::Calibrate {
            eta,
            design,
            pattern,
            lambda,
            sigma,
            mc_reps,
            seed,
            asymptotic,
        } => {
            let (_, p) = design.kind.shape();
            let m = SlopePattern::new(pattern).map_err(Failure::input)?;
            let lam = lambda.generate(p)?;
            let sampler = if asymptotic {
                let spec = AsymptoticSpec::new(limit_gram(&design.kind), m, lam, sigma, tol)?;
                PiAlphaSampler::asymptotic(&spec, tol)?
            } else {
                let x = gen_design(&design)?;
                PiAlphaSampler::finite(&x, &m, &lam, sigma, tol)?
                    .ok_or_else(|| Failure::numeric("clustered penalty outside col(X~')"))?
            };
            let alpha = calibrate_alpha(eta, &sampler, mc_reps, seed, tol)?;
            let (prob, se) = sampler.probability(alpha, mc_reps, seed)?;
            let body = format!(
                "eta,alpha,achieved_prob,se\n{},{},{},{}\n",
                fmt_full(eta),
                fmt_full(alpha),
                fmt_full(prob),
                fmt_full(se)
            );
            write_with_manifest(&out_dir.join("calibration.csv"), &manifest("calibrate"), &body)?;
            println!("alpha {}", fmt_full(alpha));
        }
        TaskConfig::CompareLassoSlope { config, seeds } => {
            if seeds.is_empty() {
                return Err(Failure::input("compare task needs at least one seed"));
            }
            let mut body = String::from(
                "seed,slope_alpha,lasso_lambda,slope_recovered,lasso_recovered,slope_sq_error,lasso_sq_error\n",
            );
            let mut scatter = String::from("seed,coef,beta,slope_hat,lasso_hat\n");
            let mut slope_wins = 0usize;
            for &seed in &seeds {
                let rec = compare_lasso_slope(&config, seed, tol)?;
                if rec.slope_sq_error < rec.lasso_sq_error {
                    slope_wins += 1;
                }
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{},{}",
                    rec.seed,
                    rec.slope_alpha.map_or("".into(), fmt_full),
                    rec.lasso_lambda.map_or("".into(), fmt_full),
                    rec.slope_recovered as u8,
                    rec.lasso_recovered as u8,
                    fmt_full(rec.slope_sq_error),
                    fmt_full(rec.lasso_sq_error)
                );
                for i in 0..rec.beta.len() {
                    let _ = writeln!(
                        scatter,
                        "{},{},{},{},{}",
                        rec.seed,
                        i,
                        fmt_full(rec.beta[i]),
                        fmt_full(rec.slope_hat[i]),
                        fmt_full(rec.lasso_hat[i])
                    );
                }
            }
            let m = manifest("compare_lasso_slope");
            write_with_manifest(&out_dir.join("comparison.csv"), &m, &body)?;
            write_with_manifest(&out_dir.join("estimates.csv"), &m, &scatter)?;
            println!("slope_wins {} of {}", slope_wins, seeds.len());
        }
        TaskConfig::MagnitudeTest {
            p,
            magnitudes,
            lambda,
            alpha,
            sigma,
            reps,
            master_seed,
        } => {
            let lam = lambda.generate(p)?;
            let mut body = String::from("magnitude,rejection_rate,se\n");
            for &c in &magnitudes {
                let beta = vec![c; p];
                let (rate, se) = slope_core::experiments::constant_magnitude_rejection_rate(
                    &beta, &lam, alpha, sigma, reps, master_seed, tol,
                )?;
                let _ = writeln!(body, "{},{},{}", fmt_full(c), fmt_full(rate), fmt_full(se));
                println!("magnitude {} rejection_rate {}", c, fmt_full(rate));
            }
            write_with_manifest(&out_dir.join("magnitude_test.csv"), &manifest("magnitude_test"), &body)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
