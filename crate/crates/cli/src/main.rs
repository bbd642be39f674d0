use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use qvar_core::experiments::*;
use qvar_core::halfint::{verify_eisenstein_grid, verify_gauss_grid, QuadPoly};
use qvar_core::hecke::{make_source, HeckeSource, SourceSpec, SyntheticSpec};
use qvar_core::ideals::IdealTable;
use qvar_core::lfun::{constants, AfeConfig};
use qvar_core::quadfield::{make_field, FieldParams, QuadInt};

/// Window sizes above this need --allow-large-k.
const LARGE_K: i64 = 300;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] qvar_core::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "qvar", version, about = "Quantum variance experiments for dihedral forms over real quadratic fields")]
#[command(args_override_self = true)]
struct Cli {
    /// JSON object presetting any flag by its long name; flags on the command line win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// append reports to this file instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// replaces the headline tolerance of every report
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
struct SourceArgs {
    /// prime eigenvalue table of psi: a "# D=.. t_psi=.. eta=.. parity=.." header, then "p lambda(p)" lines
    #[arg(long, conflicts_with = "seed")]
    table: Option<PathBuf>,
    /// seed of the synthetic eigenvalue model
    #[arg(long)]
    seed: Option<u64>,
    /// root number of the synthetic model
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    eta: i32,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Field data: primes, fundamental unit, regulator.
    FieldInfo {
        #[arg(long = "D")]
        d: i64,
    },
    /// CSV of lambda_2k(n) for 0 <= k <= kmax and 1 <= n <= nmax.
    LambdaTable {
        #[arg(long = "D")]
        d: i64,
        #[arg(long)]
        kmax: i64,
        #[arg(long)]
        nmax: u64,
    },
    /// Lattice identities for all ideals up to a norm bound.
    VerifyLattice {
        #[arg(long = "D")]
        d: i64,
        #[arg(long, default_value_t = 10_000)]
        norm_bound: u64,
    },
    /// Closed Gauss sums against brute force.
    VerifyGauss {
        #[arg(long = "M")]
        m: u64,
        #[arg(long, default_value_t = 10_000)]
        nmax: u64,
        #[arg(long, default_value_t = 8)]
        kmax: u32,
    },
    /// Eisenstein coefficient series against their closed forms.
    #[command(name = "verify-appendixB")]
    VerifyAppendixB {
        #[arg(long = "M")]
        m: u64,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        #[arg(long, default_value_t = 10_000)]
        nmax: u64,
        #[arg(long, default_value_t = 1 << 24)]
        bound: u64,
    },
    /// Poisson summation for the off-diagonal sum of one element.
    Poisson {
        #[arg(long = "D")]
        d: i64,
        #[arg(long = "K")]
        k: i64,
        /// coordinates m,n of beta = m + n w
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        beta: Vec<i128>,
        #[arg(long, default_value_t = 20)]
        dual_terms: i64,
    },
    /// Twisted first moment of the central values.
    FirstMoment {
        #[arg(long = "D")]
        d: i64,
        #[arg(long = "K")]
        k: i64,
        #[arg(long, default_value_t = 1)]
        twist: u64,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        allow_large_k: bool,
    },
    /// Diagonal term of the second moment for a few twists.
    Diagonal {
        #[arg(long = "D")]
        d: i64,
        #[arg(long = "K")]
        k: i64,
        /// twists; default is 1 plus the four largest |vartheta(a)| for a <= 30
        #[arg(long, value_delimiter = ',')]
        a: Vec<u64>,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        allow_large_k: bool,
    },
    /// Variance of the central values against the predicted constant.
    Variance {
        #[arg(long = "D")]
        d: i64,
        #[arg(long = "K")]
        k: i64,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        allow_large_k: bool,
    },
    /// Mollifier-type Dirichlet polynomial against its limit.
    DirichletPoly {
        #[arg(long = "D")]
        d: i64,
        #[arg(long)]
        k: i64,
        #[arg(long)]
        x: u64,
    },
    /// Even moments of short prime sums against the Gaussian bound.
    MomentBound {
        #[arg(long = "D")]
        d: i64,
        #[arg(long = "K")]
        k: i64,
        #[arg(long, default_value_t = 1)]
        r: u32,
        #[arg(long)]
        x: u64,
        /// refuse x above K^(1/(10r))
        #[arg(long)]
        enforce: bool,
    },
    /// Decay of sums of lambda_psi over values of a x^2 + b x + c.
    Nonsplit {
        #[arg(long = "D")]
        d: i64,
        #[arg(long, allow_negative_numbers = true)]
        a: i64,
        #[arg(long, allow_negative_numbers = true)]
        b: i64,
        #[arg(long, allow_negative_numbers = true)]
        c: i64,
        #[arg(long = "Ymax", default_value_t = 1e6)]
        ymax: f64,
        #[arg(long, default_value_t = 0.1)]
        slack: f64,
        #[command(flatten)]
        source: SourceArgs,
    },
}

/// Splices the config file's entries in front of the command-line flags.
fn merged_args(raw: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = raw.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, s) in strs.iter().enumerate() {
        if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if s == "--config" {
            path = strs.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(raw) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
    let obj = match serde_json::from_str::<Value>(&text)? {
        Value::Object(m) => m,
        _ => return Err(CliError::Config("expected a JSON object".into())),
    };
    let cmd = Cli::command();
    let Some(pos) = strs.iter().position(|s| cmd.find_subcommand(s).is_some()) else {
        return Ok(raw);
    };
    let sub = cmd.find_subcommand(&strs[pos]).unwrap();
    let known = |k: &str| {
        sub.get_arguments().chain(cmd.get_arguments()).any(|a| a.get_long() == Some(k))
    };
    let mut spliced = Vec::new();
    for (k, v) in obj {
        if k == "config" {
            continue;
        }
        if !known(&k) {
            return Err(CliError::Config(format!("unknown key {k:?} for {}", strs[pos])));
        }
        match v {
            Value::Bool(true) => spliced.push(format!("--{k}")),
            Value::Bool(false) | Value::Null => {}
            Value::String(s) => spliced.push(format!("--{k}={s}")),
            Value::Array(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| x.to_string().trim_matches('"').to_string()).collect();
                spliced.push(format!("--{k}={}", parts.join(",")));
            }
            other => spliced.push(format!("--{k}={other}")),
        }
    }
    let mut out: Vec<OsString> = raw[..=pos].to_vec();
    out.extend(spliced.into_iter().map(OsString::from));
    out.extend(raw[pos + 1..].iter().cloned());
    Ok(out)
}

fn source(d: i64, s: &SourceArgs) -> Result<HeckeSource> {
    let spec = match &s.table {
        Some(p) => SourceSpec::Table(p.clone()),
        None => {
            let mut spec = SyntheticSpec::new(s.seed.unwrap_or(2), d as u64);
            spec.eta = s.eta;
            SourceSpec::Synthetic(spec)
        }
    };
    Ok(make_source(&spec)?)
}

fn guard_k(k: i64, allow: bool) -> Result<()> {
    if k > LARGE_K {
        if !allow {
            return Err(CliError::Usage(format!("K={k} is above {LARGE_K}; pass --allow-large-k to run it anyway")));
        }
        eprintln!("warning: K={k} needs about 3K central values and may take a long time");
    }
    Ok(())
}

fn default_weight() -> Result<SmoothWeight> {
    Ok(smooth_weight(WeightKind::BumpHalfTwo, 1.0)?)
}

fn field_info(f: &FieldParams) -> ExperimentReport {
    let start = std::time::Instant::now();
    ExperimentReport::new("field_info", f.log_eps, f.log_eps, 0.0, Tolerance::Absolute)
        .param("D", f.d)
        .param("p1", f.p1)
        .param("p2", f.p2)
        .param("unit", format!("{} + {} w", f.unit_x, f.unit_y))
        .extra("log_eps", f.log_eps)
        .extra("eps", f.eps)
        .finish(start, true)
}

fn write_lambda_table(f: &FieldParams, kmax: i64, nmax: u64, out: Option<&Path>) -> Result<()> {
    if kmax < 0 || nmax == 0 {
        return Err(CliError::Usage("need kmax >= 0 and nmax >= 1".into()));
    }
    let table = IdealTable::build(f, nmax)?;
    let cols: Vec<Vec<f64>> = (0..=kmax).map(|k| table.lambda_table(2 * k)).collect();
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["n".to_string()];
    header.extend((0..=kmax).map(|k| format!("lambda_{}", 2 * k)));
    w.write_record(&header)?;
    for n in 1..=nmax as usize {
        let mut row = vec![n.to_string()];
        row.extend(cols.iter().map(|c| format!("{:e}", c[n])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<Vec<ExperimentReport>> {
    let reports = match &cli.cmd {
        Cmd::FieldInfo { d } => vec![field_info(&make_field(*d)?)],
        Cmd::LambdaTable { d, kmax, nmax } => {
            write_lambda_table(&make_field(*d)?, *kmax, *nmax, cli.out.as_deref())?;
            vec![]
        }
        Cmd::VerifyLattice { d, norm_bound } => vec![lattice_identity_suite(&make_field(*d)?, *norm_bound)?],
        Cmd::VerifyGauss { m, nmax, kmax } => {
            let odd: Vec<u64> = qvar_core::arith::factorize(*m).into_iter().map(|(p, _)| p).filter(|&p| p > 2).collect();
            vec![verify_gauss_grid(&odd, *nmax, *kmax)?]
        }
        Cmd::VerifyAppendixB { m, tolerance, nmax, bound } => vec![verify_eisenstein_grid(*m, *nmax, *bound, *tolerance)?],
        Cmd::Poisson { d, k, beta, dual_terms } => {
            if beta.len() != 2 {
                return Err(CliError::Usage(format!("--beta takes two integers m,n, got {}", beta.len())));
            }
            let f = make_field(*d)?;
            vec![poisson_check(&f, QuadInt::new(beta[0], beta[1]), *k, *dual_terms, &default_weight()?)?]
        }
        Cmd::FirstMoment { d, k, twist, source: s, allow_large_k } => {
            guard_k(*k, *allow_large_k)?;
            let f = make_field(*d)?;
            let src = source(*d, s)?;
            let tol = if *twist == 1 { 0.25 } else { 0.3 };
            first_moments(&f, &src, *k, &[(*twist, tol)], &default_weight()?, &MomentConfig::default())?
        }
        Cmd::Diagonal { d, k, a, source: s, allow_large_k } => {
            guard_k(*k, *allow_large_k)?;
            let f = make_field(*d)?;
            let src = source(*d, s)?;
            let a = if a.is_empty() { diagonal_twists(&src, 30, 4)? } else { a.clone() };
            diagonal_checks(&f, &src, *k, &a, 1.0, &default_weight()?, &MomentConfig::default(), 0.05)?
        }
        Cmd::Variance { d, k, source: s, allow_large_k } => {
            guard_k(*k, *allow_large_k)?;
            let f = make_field(*d)?;
            let src = source(*d, s)?;
            let sw = default_weight()?;
            let cfg = MomentConfig::default();
            let consts = constants(&f, &src, cfg.central_product, cfg.sym2_pmax, cfg.cprime_pmax)?;
            let win = central_window(&f, &src, *k, &sw, &cfg.afe)?;
            vec![
                variance_from(&f, &src, &win, &sw, &cfg, &consts, 0.3)?,
                stirling_ratio_check(&f, src.t_psi, *k, 0.01)?,
            ]
        }
        Cmd::DirichletPoly { d, k, x } => vec![dirichlet_poly_check(&make_field(*d)?, *k, *x, &AfeConfig::default(), 1e-3)?],
        Cmd::MomentBound { d, k, r, x, enforce } => vec![moment_bound_check(&make_field(*d)?, *k, *r, |_| 1.0, *x, *enforce)?],
        Cmd::Nonsplit { d, a, b, c, ymax, slack, source: s } => {
            let src = source(*d, s)?;
            let q = QuadPoly::new(*a, *b, *c)?;
            let mut ys = vec![1e4];
            while ys[ys.len() - 1] * 4.0 < *ymax {
                ys.push(ys[ys.len() - 1] * 4.0);
            }
            if *ymax > ys[ys.len() - 1] {
                ys.push(*ymax);
            }
            let w = smooth_weight(WeightKind::BumpOneTwo, 1.0)?;
            vec![nonsplit_decay_scan(&src, &q, &ys, &w, *slack)?]
        }
    };
    Ok(match cli.tol {
        Some(t) => reports.into_iter().map(|r| r.with_tolerance(t)).collect(),
        None => reports,
    })
}

fn mode_name(r: &ExperimentReport) -> String {
    serde_json::to_value(r.mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn emit(reports: &[ExperimentReport], format: Format, out: Option<&Path>) -> Result<()> {
    let (sink, fresh): (Box<dyn Write>, bool) = match out {
        Some(p) => {
            let file = OpenOptions::new().create(true).append(true).open(p)?;
            let fresh = file.metadata()?.len() == 0;
            (Box::new(file), fresh)
        }
        None => (Box::new(io::stdout().lock()), true),
    };
    match format {
        Format::Json => {
            let mut sink = sink;
            for r in reports {
                serde_json::to_writer(&mut sink, r)?;
                writeln!(sink)?;
            }
            sink.flush()?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            if fresh {
                w.write_record(["name", "passed", "computed", "reference", "tolerance", "mode", "runtime_seconds", "parameters"])?;
            }
            for r in reports {
                w.write_record([
                    r.name.clone(),
                    r.passed.to_string(),
                    format!("{:e}", r.computed),
                    format!("{:e}", r.reference),
                    format!("{:e}", r.tolerance),
                    mode_name(r),
                    format!("{:.3}", r.runtime_seconds),
                    serde_json::to_string(&r.parameters)?,
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match merged_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let reports = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = if matches!(cli.cmd, Cmd::LambdaTable { .. }) { None } else { cli.out.as_deref() };
    if let Err(e) = emit(&reports, cli.format, out) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    for r in &reports {
        eprintln!("{}", r.summary_line());
    }
    if reports.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
