mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use manifest::Recorder;
use ttcm::estimation::{self, FitOptions, FitResult, Gauge};
use ttcm::identifiability::{self, RichnessReport};
use ttcm::io::{self, fmt_f64, write_atomic};
use ttcm::model::{self, MixingModel, TacTable};
use ttcm::polyexp::AttenuationBiexp;
use ttcm::{oracle, Error};

const EXIT_CHECK_FAILED: i32 = 1;
const EXIT_INPUT: i32 = 2;
const EXIT_MODEL: i32 = 3;
const EXIT_SAMPLES: i32 = 4;
const EXIT_CONVERGENCE: i32 = 5;

#[derive(Parser)]
#[command(name = "ttcm", version, about = "Two-tissue compartment model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate tissue (or PET) curves for every region of a configuration.
    Simulate(SimulateArgs),
    /// Jointly fit rate constants and the input from multi-region curves.
    Fit(FitArgs),
    /// Check the identifiability hypotheses of a configuration.
    Check(CheckArgs),
    /// Fit noiseless simulated data from many random starts and compare each
    /// converged fit with the truth.
    Verify(VerifyArgs),
    /// Compare the closed form with the Runge–Kutta reference solution.
    OracleCompare(OracleArgs),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// `log:start,end,count`, `lin:start,end,count` or `list:t1,t2,...`
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    /// Fractional blood volume; needs whole-blood values from `--cwb` or
    /// `--attenuation`.
    #[arg(long)]
    vb: Option<f64>,
    /// Whole-blood CSV (`time_min,cwb`) covering the grid.
    #[arg(long)]
    cwb: Option<PathBuf>,
    /// Attenuation `a,b,c`; whole blood is synthesized as `C_P / f` on the grid.
    #[arg(long, value_parser = parse_attenuation, conflicts_with = "cwb")]
    attenuation: Option<AttenuationArg>,
    /// Gaussian noise, as a fraction of each curve's peak.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Serialize)]
struct AttenuationArg {
    a: f64,
    b: f64,
    c: f64,
}

fn parse_attenuation(s: &str) -> Result<AttenuationArg, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok(AttenuationArg { a, b, c }),
        _ => Err("expected a,b,c".into()),
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum GaugeArg {
    Leading,
    Sum,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Long-format TAC CSV; a `<stem>.wb.csv` sidecar is picked up if present.
    #[arg(long)]
    tacs: PathBuf,
    /// Number of input terms.
    #[arg(long)]
    p: usize,
    /// Result JSON; the SSE log and fitted curves go next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-16)]
    residual_tol: f64,
    #[arg(long, default_value_t = 1e-13)]
    param_tol: f64,
    #[arg(long, value_enum, default_value_t = GaugeArg::Leading)]
    gauge: GaugeArg,
    /// Configuration JSON used as an extra start (start 0).
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Remove a known blood fraction using the whole-blood sidecar first.
    #[arg(long)]
    vb: Option<f64>,
    /// Resolve the global scale from the whole-blood sidecar.
    #[arg(long)]
    resolve_scale: bool,
}

#[derive(Args, Serialize)]
struct CheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = identifiability::DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-16)]
    residual_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    equivalence_tol: f64,
    /// Bins of the ζ histogram.
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args, Serialize)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    grid: String,
    /// Runge–Kutta step in minutes.
    #[arg(long, default_value_t = oracle::DEFAULT_STEP)]
    step: f64,
    /// Per-region deviation table (CSV).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
}

fn exit_code_for(err: &Error) -> i32 {
    match err.root() {
        Error::InvalidInput(_)
        | Error::InvalidParams { .. }
        | Error::MissingWholeBlood
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_INPUT,
        Error::InsufficientSamples { .. } => EXIT_SAMPLES,
        Error::NoConvergence { .. } => EXIT_CONVERGENCE,
        Error::HypothesisUnmet(_) => EXIT_CHECK_FAILED,
        _ => EXIT_MODEL,
    }
}

/// `dir/stem.ext` → `dir/stem<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> ttcm::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_csv_with<F>(path: &Path, fill: F) -> ttcm::Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> ttcm::Result<()>,
{
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_atomic(path, &buf)
}

fn with_recorder<F>(mut rec: Recorder, manifest_path: PathBuf, body: F) -> i32
where
    F: FnOnce(&mut Recorder) -> ttcm::Result<i32>,
{
    let (code, message) = match body(&mut rec) {
        Ok(code) => (code, None),
        Err(e) => {
            eprintln!("error: {e}");
            (exit_code_for(&e), Some(e.to_string()))
        }
    };
    rec.finish(&manifest_path, code, message);
    code
}

fn cmd_simulate(args: SimulateArgs) -> i32 {
    let rec = Recorder::new("simulate", &args, Some(args.seed));
    with_recorder(rec, sibling(&args.out, ".manifest.json"), |rec| {
        rec.input(&args.config);
        let config = io::read_config_file(&args.config)?;
        let grid = io::parse_grid_spec(&args.grid)?;
        let cwb: Option<Vec<(f64, f64)>> = match (&args.cwb, args.attenuation) {
            (Some(path), _) => {
                rec.input(path);
                Some(io::read_wb(fs::File::open(path)?)?)
            }
            (None, Some(AttenuationArg { a, b, c })) => {
                let f = AttenuationBiexp::new(a, b, c)?;
                let wb = grid
                    .iter()
                    .map(|&t| (t, config.input().eval(t) / f.eval(t)))
                    .collect::<Vec<_>>();
                if let Some(&(t, _)) = wb.iter().find(|(_, w)| !w.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "attenuation vanishes at t={t}"
                    )));
                }
                Some(wb)
            }
            (None, None) => None,
        };
        let mixing = args.vb.map(MixingModel::new).transpose()?;
        let mut tacs = model::simulate_tacs(&config, &grid, mixing.as_ref(), cwb.as_deref())?;
        if let Some(frac) = args.noise {
            tacs = estimation::add_gaussian_noise(&tacs, frac, args.seed)?;
        }
        write_csv_with(&args.out, |buf| io::write_tacs(&tacs, buf))?;
        rec.output(&args.out);
        if let Some(wb) = tacs.wb_samples() {
            let path = io::wb_sidecar_path(&args.out);
            write_csv_with(&path, |buf| io::write_wb(wb, buf))?;
            rec.output(&path);
        }
        Ok(0)
    })
}

fn write_fit_outputs(rec: &mut Recorder, out: &Path, fit: &FitResult, tacs: &TacTable) -> ttcm::Result<()> {
    write_json(out, fit)?;
    rec.output(out);

    let log = sibling(out, ".log.csv");
    write_csv_with(&log, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["start", "iter", "sse"])?;
        for e in &fit.trace {
            w.write_record([e.start.to_string(), e.iter.to_string(), fmt_f64(e.sse)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    rec.output(&log);

    let curves = sibling(out, ".curves.csv");
    let fitted = model::simulate_tacs(&fit.config, tacs.time_grid(), None, None)?;
    write_csv_with(&curves, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["region_id", "time_min", "observed", "fitted"])?;
        for (id, observed) in tacs.curves() {
            let model = fitted.curve(id).expect("fitted config covers every region");
            for (l, t) in tacs.time_grid().iter().enumerate() {
                w.write_record([id.as_str(), &fmt_f64(*t), &fmt_f64(observed[l]), &fmt_f64(model[l])])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    rec.output(&curves);
    Ok(())
}

fn cmd_fit(args: FitArgs) -> i32 {
    let rec = Recorder::new("fit", &args, Some(args.seed));
    with_recorder(rec, sibling(&args.out, ".manifest.json"), |rec| {
        rec.input(&args.tacs);
        let mut tacs = io::read_tacs_file(&args.tacs)?;
        if tacs.wb_samples().is_some() {
            rec.input(&io::wb_sidecar_path(&args.tacs));
        }
        if let Some(vb) = args.vb {
            tacs = tacs.unmix(&MixingModel::new(vb)?)?;
        }
        let warm_start = match &args.warm_start {
            Some(path) => {
                rec.input(path);
                Some(io::read_config_file(path)?)
            }
            None => None,
        };
        let options = FitOptions {
            p: args.p,
            n_starts: args.starts,
            max_iters: args.max_iters,
            residual_tol: args.residual_tol,
            param_tol: args.param_tol,
            seed: args.seed,
            gauge: match args.gauge {
                GaugeArg::Leading => Gauge::LeadingAmplitude,
                GaugeArg::Sum => Gauge::AmplitudeSum,
            },
            warm_start,
            ..FitOptions::default()
        };
        let (fit, code) = match estimation::fit_joint(&tacs, &options) {
            Ok(fit) => (fit, 0),
            Err(Error::NoConvergence { best }) => {
                eprintln!(
                    "error: no start reached the residual tolerance (best relative sse {:e})",
                    best.relative_sse
                );
                (*best, EXIT_CONVERGENCE)
            }
            Err(e) => return Err(e),
        };
        write_fit_outputs(rec, &args.out, &fit, &tacs)?;
        if args.resolve_scale {
            let wb = tacs.wb_samples().ok_or(Error::MissingWholeBlood)?;
            let scale = estimation::resolve_scale(&fit, wb)?;
            let path = sibling(&args.out, ".scale.json");
            write_json(&path, &scale)?;
            rec.output(&path);
        }
        Ok(code)
    })
}

#[derive(Serialize)]
struct CheckReport {
    assumption_a: RichnessReport,
    region_richness: RichnessReport,
}

fn cmd_check(args: CheckArgs) -> i32 {
    let rec = Recorder::new("check", &args, None);
    with_recorder(rec, sibling(&args.out, ".manifest.json"), |rec| {
        rec.input(&args.config);
        let config = io::read_config_file(&args.config)?;
        let report = CheckReport {
            assumption_a: identifiability::check_assumption_a(&config, args.tol)?,
            region_richness: identifiability::check_region_richness(&config, args.tol)?,
        };
        write_json(&args.out, &report)?;
        rec.output(&args.out);
        for v in report
            .assumption_a
            .violations
            .iter()
            .chain(&report.region_richness.violations)
        {
            eprintln!("{v}");
        }
        Ok(if report.assumption_a.satisfied { 0 } else { EXIT_CHECK_FAILED })
    })
}

/// Equal-width bins over `[min, max]` of the values.
fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, n)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, n))
        .collect()
}

fn cmd_verify(args: VerifyArgs) -> i32 {
    let rec = Recorder::new("verify", &args, Some(args.seed));
    with_recorder(rec, sibling(&args.out, ".manifest.json"), |rec| {
        rec.input(&args.config);
        let truth = io::read_config_file(&args.config)?;
        let grid = io::parse_grid_spec(&args.grid)?;
        let options = FitOptions {
            p: truth.input().degree(),
            n_starts: args.starts,
            max_iters: args.max_iters,
            residual_tol: args.residual_tol,
            seed: args.seed,
            equivalence_tol: args.equivalence_tol,
            ..FitOptions::default()
        };
        let report = estimation::verify_uniqueness(&truth, &grid, &options)?;
        write_json(&args.out, &report)?;
        rec.output(&args.out);
        let hist = sibling(&args.out, ".zeta.csv");
        write_csv_with(&hist, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["bin_lo", "bin_hi", "count"])?;
            for (lo, hi, n) in histogram(&report.zeta_values, args.bins) {
                w.write_record([fmt_f64(lo), fmt_f64(hi), n.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })?;
        rec.output(&hist);
        println!(
            "{} of {} starts converged, {} equivalent, worst deviation {:.3e}",
            report.n_converged, report.n_starts, report.n_equivalent, report.worst_deviation
        );
        Ok(if report.passed {
            0
        } else if report.n_converged == 0 {
            EXIT_CONVERGENCE
        } else {
            EXIT_CHECK_FAILED
        })
    })
}

fn cmd_oracle_compare(args: OracleArgs) -> i32 {
    let rec = Recorder::new("oracle-compare", &args, None);
    with_recorder(rec, sibling(&args.out, ".manifest.json"), |rec| {
        rec.input(&args.config);
        let config = io::read_config_file(&args.config)?;
        let grid = io::parse_grid_spec(&args.grid)?;
        let exact = model::simulate_tacs(&config, &grid, None, None)?;
        let mut rows = Vec::with_capacity(config.n_regions());
        for region in config.regions() {
            let cp = |t: f64| config.input().eval(t);
            let traj = oracle::integrate_at(&region.params, cp, &grid, args.step)
                .map_err(|e| e.in_region(&region.id))?;
            let dev = oracle::max_relative_deviation(
                exact.curve(&region.id).expect("simulated region"),
                &traj.ct(),
            );
            rows.push((region.id.clone(), dev));
        }
        write_csv_with(&args.out, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["region_id", "max_rel_dev"])?;
            for (id, dev) in &rows {
                w.write_record([id.as_str(), &fmt_f64(*dev)])?;
            }
            w.flush()?;
            Ok(())
        })?;
        rec.output(&args.out);
        let mut breach = false;
        for (id, dev) in &rows {
            let ok = *dev <= args.threshold;
            breach |= !ok;
            println!("{id:>12}  {dev:.3e}  {}", if ok { "ok" } else { "EXCEEDS" });
        }
        Ok(if breach { EXIT_CHECK_FAILED } else { 0 })
    })
}

fn configure_threads() {
    if let Some(n) = std::env::var("TTCM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let code = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Check(a) => cmd_check(a),
        Command::Verify(a) => cmd_verify(a),
        Command::OracleCompare(a) => cmd_oracle_compare(a),
    };
    ExitCode::from(code as u8)
}
