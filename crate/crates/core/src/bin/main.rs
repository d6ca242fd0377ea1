use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use poisson_denoise::channel::poisson_sample;
use poisson_denoise::error::{Error, Result};
use poisson_denoise::experiment::{run_experiment, run_method, write_outputs, ExperimentPlan, Method};
use poisson_denoise::fieldio::{encode_counts, encode_real, read_counts, read_real, write_atomic};
use poisson_denoise::image::{scale_to_source, CountImage};
use poisson_denoise::lbp::{Correlations, SweepTrace};
use poisson_denoise::metrics::{isnr, psnr};
use poisson_denoise::restore::{restore_traced, RestoreConfig};
use poisson_denoise::{pgm, Grid};

#[derive(Parser)]
#[command(name = "poisson-denoise", version, about = "Restore Poisson-corrupted images with a GMRF prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scale a PGM to [lambda_min, lambda_max] and draw Poisson counts.
    Corrupt(CorruptArgs),
    /// Restore an intensity field from counts.
    Restore(RestoreArgs),
    /// Score restorations against a reference field.
    Evaluate(EvaluateArgs),
    /// Run a patch sweep described by a plan file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct CorruptArgs {
    /// Clean input image (PGM).
    input: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    lambda_min: f64,
    #[arg(long)]
    lambda_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Raw counts (CSV).
    #[arg(long)]
    counts: PathBuf,
    /// Ground-truth intensity field (CSV).
    #[arg(long)]
    lambda: PathBuf,
    /// Counts clipped to 255 (PGM).
    #[arg(long)]
    preview: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Binomial trial count (default: max(256, 2 * max count)).
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    xi0: Option<f64>,
    #[arg(long)]
    lbp_tol: Option<f64>,
    #[arg(long)]
    lbp_max_sweeps: Option<usize>,
    #[arg(long)]
    em_tol: Option<f64>,
    #[arg(long)]
    em_max_iters: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    /// Drop pairwise correlations from the smoothness update.
    #[arg(long)]
    mean_field: bool,
}

impl ConfigArgs {
    fn apply(&self, cfg: &mut RestoreConfig) {
        if self.k.is_some() {
            cfg.k = self.k;
        }
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut cfg.h, self.h);
        set(&mut cfg.alpha0, self.alpha0);
        set(&mut cfg.xi0, self.xi0);
        set(&mut cfg.lbp.tol, self.lbp_tol);
        set(&mut cfg.lbp.damping, self.damping);
        set(&mut cfg.em_tol, self.em_tol);
        if let Some(n) = self.lbp_max_sweeps {
            cfg.lbp.max_sweeps = n;
        }
        if let Some(n) = self.em_max_iters {
            cfg.em_max_iter = n;
        }
        if self.mean_field {
            cfg.correlations = Correlations::MeanField;
        }
    }
}

#[derive(Args)]
struct RestoreArgs {
    /// Counts as CSV (x,y,value) or PGM.
    counts: PathBuf,
    #[arg(long, default_value = "ours", value_parser = parse_method)]
    method: Method,
    /// Restored intensities (CSV, full precision).
    #[arg(long)]
    out: PathBuf,
    /// Linear 0-255 preview of the restoration (PGM).
    #[arg(long)]
    preview: Option<PathBuf>,
    /// Per-iteration EM diagnostics (CSV).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Per-sweep LBP residuals (CSV, method `ours` only).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth intensity field (CSV).
    #[arg(long)]
    reference: PathBuf,
    /// Restoration to score (CSV).
    #[arg(long)]
    test: PathBuf,
    /// Corrupted counts; adds ISNR against the input.
    #[arg(long)]
    corrupted: Option<PathBuf>,
    /// Competing restoration; adds ISNR of `test` over it.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    plan: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_min: Option<f64>,
    /// Comma-separated contrast list.
    #[arg(long, value_delimiter = ',')]
    lambda_max: Option<Vec<f64>>,
    /// Comma-separated method list.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    method: Option<Vec<Method>>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_count_input(path: &Path) -> Result<CountImage> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("pnm"));
    if is_pgm {
        Ok(pgm::read(path)?.map(|&v| v.round() as u32))
    } else {
        read_counts(path)
    }
}

fn corrupt(args: &CorruptArgs) -> Result<()> {
    let img = pgm::read(&args.input)?;
    let source = scale_to_source(&img, args.lambda_min, args.lambda_max)?;
    let z = poisson_sample(&source, args.seed);
    write_atomic(&args.counts, &encode_counts(&z)?)?;
    write_atomic(&args.lambda, &encode_real(&source)?)?;
    if let Some(p) = &args.preview {
        write_atomic(p, &pgm::encode(&z.map(|&c| f64::from(c.min(255)))))?;
    }
    Ok(())
}

fn restore_cmd(args: &RestoreArgs) -> Result<()> {
    let z = read_count_input(&args.counts)?;
    let mut cfg = RestoreConfig::default();
    args.config.apply(&mut cfg);
    cfg.validate()?;
    let (lambda, diagnostics, trace) = if args.method == Method::Ours {
        let mut trace = SweepTrace::default();
        let r = restore_traced(&z, &cfg, args.trace.as_ref().map(|_| &mut trace))?;
        (r.lambda.into_grid(), Some(r.diagnostics), Some(trace))
    } else {
        if args.trace.is_some() {
            return Err(Error::InvalidInput("--trace is only available for --method ours".into()));
        }
        let out = run_method(args.method, &z, &cfg)?;
        (out.lambda, out.diagnostics, None)
    };
    write_atomic(&args.out, &encode_real(&lambda)?)?;
    if let Some(p) = &args.preview {
        write_atomic(p, &pgm::encode(&pgm::to_preview(&lambda)))?;
    }
    if let (Some(p), Some(d)) = (&args.diagnostics, &diagnostics) {
        write_atomic(p, d.to_csv().as_bytes())?;
        if args.method == Method::Exact {
            let trace_path = p.with_extension("trace.csv");
            write_atomic(&trace_path, d.exact_trace_csv().as_bytes())?;
        }
    }
    if let (Some(p), Some(t)) = (&args.trace, &trace) {
        write_atomic(p, t.to_csv().as_bytes())?;
    }
    if let Some(d) = &diagnostics {
        if d.has_warning() {
            log::warn!(
                "{}: EM converged={}, LBP unconverged in {} iterations, {} clamped updates",
                d.method,
                d.em_converged,
                d.lbp_unconverged,
                d.clamped_updates
            );
        }
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let reference = read_real(&args.reference)?;
    let test = read_real(&args.test)?;
    println!("psnr_db={}", psnr(&test, &reference)?);
    if let Some(p) = &args.corrupted {
        let z: Grid<f64> = read_count_input(p)?.to_real();
        println!("isnr_vs_corrupted_db={}", isnr(&z, &test, &reference)?);
    }
    if let Some(p) = &args.baseline {
        let base = read_real(p)?;
        println!("isnr_vs_baseline_db={}", isnr(&base, &test, &reference)?);
    }
    Ok(())
}

/// Returns the number of failed jobs.
fn experiment(args: &ExperimentArgs) -> Result<usize> {
    let text = std::fs::read_to_string(&args.plan).map_err(|e| Error::Io { path: args.plan.clone(), source: e })?;
    let mut plan = ExperimentPlan::parse(&text)?;
    if let Some(s) = args.seed {
        plan.seed = s;
    }
    if let Some(l) = args.lambda_min {
        plan.lambda_min = l;
    }
    if let Some(l) = &args.lambda_max {
        plan.lambda_max = l.clone();
    }
    if let Some(m) = &args.method {
        plan.methods = m.clone();
    }
    args.config.apply(&mut plan.restore);
    plan.validate()?;
    let outcome = run_experiment(&plan, args.jobs)?;
    write_outputs(&outcome, &args.out_dir)?;
    for f in &outcome.failures {
        eprintln!(
            "job failed: {} patch {} lambda_max {} {}: {}",
            f.image,
            f.patch_id,
            f.lambda_max,
            f.method.map_or("-", Method::as_str),
            f.error
        );
    }
    Ok(outcome.failures.len())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Corrupt(a) => corrupt(a).map(|_| 0),
        Command::Restore(a) => restore_cmd(a).map(|_| 0),
        Command::Evaluate(a) => evaluate(a).map(|_| 0),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_precondition() { 2 } else { 1 })
        }
    }
}
