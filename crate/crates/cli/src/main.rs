//! `iosnoma` command-line tool: run sweeps, validate sweep files and query
//! the closed-form rate bounds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iosnoma_core::analytic::{
    hardening_rate_r, hardening_rate_t, jensen_rate_r, jensen_rate_t, large_snr_limit,
    multiuser_bounds, oma_rates, LinkFactors, OmaKind,
};
use iosnoma_core::channel::db_to_linear;
use iosnoma_core::experiments::{run_sweep, write_csv, write_rows, BUNDLED_SPECS};
use iosnoma_core::geometry::{magnitude_moment_matrix, trace_rbar_sq, trace_rbar_sq_uncorrelated};
use iosnoma_core::{
    ArrayGeometry, Error, PhaseErrorModel, PowerCoefficients, RateBound, RateScenario, SweepSpec,
    SystemParams,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "iosnoma", version, about = "IOS-assisted NOMA rate simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write its CSV.
    Run {
        /// Sweep file, or the name of a bundled spec.
        #[arg(long)]
        spec: String,
        /// Output CSV path; `-` writes to standard output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the bundled sweep specs.
    ListSpecs,
    /// Check a sweep file without running it.
    Validate {
        #[arg(long)]
        spec: String,
    },
    /// Evaluate the closed-form bounds for one user.
    Bound(BoundArgs),
}

#[derive(Args)]
struct BoundArgs {
    /// noma_t, noma_r, oma_t, oma_r, noma_tp or noma_rp.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    qt: Option<f64>,
    #[arg(long)]
    qr: Option<f64>,
    #[arg(long)]
    qtp: Option<f64>,
    #[arg(long)]
    qrp: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 15)]
    n_h: usize,
    #[arg(long, default_value_t = 4)]
    n_v: usize,
    /// Phase-error model for both links: perfect, uniform, bits:<b>, vonmises:<κ>.
    #[arg(long, default_value = "perfect")]
    phase: String,
    #[arg(long)]
    phase_t: Option<String>,
    #[arg(long)]
    phase_r: Option<String>,
    /// Transmit SNR P/σ² in dB; defaults to 20 dBm over −50 dBm.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    d_b: Option<f64>,
    #[arg(long)]
    d_t: Option<f64>,
    #[arg(long)]
    d_r: Option<f64>,
    #[arg(long)]
    d_tp: Option<f64>,
    #[arg(long)]
    d_rp: Option<f64>,
    #[arg(long)]
    chi: Option<f64>,
    /// Pathloss intercept of every link, in dB.
    #[arg(long)]
    lambda_db: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    wavelength: f64,
    /// Element side length; defaults to half a wavelength.
    #[arg(long)]
    elem_len: Option<f64>,
    /// Treat the channels as uncorrelated.
    #[arg(long)]
    uncorrelated: bool,
    /// Report only the limit as the transmit SNR grows without bound.
    #[arg(long)]
    inf_snr: bool,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Factorization(_) => 3,
        _ if e.is_config() => 2,
        Error::Io { .. } | Error::Csv { .. } => 2,
        _ => 3,
    }
}

/// A closed stdout (e.g. piped into `head`) ends output quietly.
fn is_broken_pipe(e: &csv::Error) -> bool {
    matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            spec,
            out,
            seed,
            trials,
            threads,
        } => {
            let mut spec = load_spec(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(t) = trials {
                spec.trials = t;
            }
            spec.validate()?;
            if let Some(n) = threads {
                // Only fails if a global pool already exists, which cannot happen here.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            let rows = run_sweep(&spec)?;
            if let Some(bad) = rows.iter().find(|r| !r.value.is_finite()) {
                return Err(Error::Domain {
                    func: "run",
                    value: bad.value,
                    domain: "finite rates",
                });
            }
            if out == Path::new("-") {
                match write_rows(&rows, std::io::stdout().lock()) {
                    Err(e) if is_broken_pipe(&e) => {}
                    r => r.map_err(|source| Error::Csv {
                        path: out.clone(),
                        source,
                    })?,
                }
            } else {
                write_csv(&rows, &out)?;
                eprintln!("wrote {} rows to {}", rows.len(), out.display());
            }
            Ok(())
        }
        Command::ListSpecs => {
            for (name, text) in BUNDLED_SPECS {
                let about = text
                    .lines()
                    .next()
                    .and_then(|l| l.strip_prefix('#'))
                    .unwrap_or("")
                    .trim();
                println!("{name:<18} {about}");
            }
            Ok(())
        }
        Command::Validate { spec } => {
            let s = load_spec(&spec)?;
            println!(
                "ok: axis {} over {} values, {} scenarios, {} trials",
                s.axis,
                s.values.len(),
                s.scenarios.len(),
                s.trials
            );
            Ok(())
        }
        Command::Bound(args) => bound(&args),
    }
}

fn load_spec(spec: &str) -> Result<SweepSpec, Error> {
    let path = Path::new(spec);
    if path.exists() {
        return SweepSpec::from_path(path);
    }
    match SweepSpec::bundled(spec) {
        Some(s) => s,
        None => Err(Error::Config {
            key: "spec".into(),
            reason: format!("`{spec}` is neither a file nor a bundled spec (see list-specs)"),
        }),
    }
}

fn usage(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

fn build_params(a: &BoundArgs, four_user: bool) -> Result<SystemParams, Error> {
    let mut p = if four_user {
        SystemParams::four_user_default()
    } else {
        SystemParams::default()
    };
    for (slot, v) in [
        (&mut p.d_b, a.d_b),
        (&mut p.d_t, a.d_t),
        (&mut p.d_r, a.d_r),
        (&mut p.d_tp, a.d_tp),
        (&mut p.d_rp, a.d_rp),
        (&mut p.chi, a.chi),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if let Some(db) = a.lambda_db {
        let l = db_to_linear(db);
        (p.lambda_t, p.lambda_r, p.lambda_tp, p.lambda_rp) = (l, l, l, l);
    }
    match (a.alpha, a.beta) {
        (Some(al), Some(be)) => (p.alpha, p.beta) = (al, be),
        (Some(_), None) => return Err(usage("beta", "--beta is required with --alpha")),
        (None, Some(_)) => return Err(usage("alpha", "--alpha is required with --beta")),
        (None, None) => {}
    }
    if four_user {
        let q = p.q;
        p.q = PowerCoefficients {
            t: a.qt.unwrap_or(q.t),
            r: a.qr.unwrap_or(q.r),
            tp: a.qtp.unwrap_or(q.tp),
            rp: a.qrp.unwrap_or(q.rp),
        };
    } else {
        if a.qtp.is_some() || a.qrp.is_some() {
            return Err(usage("qtp", "--qtp/--qrp only apply to noma_tp and noma_rp"));
        }
        match (a.qt, a.qr) {
            (Some(t), Some(r)) => p.q = PowerCoefficients::two_user(t, r),
            (Some(_), None) => return Err(usage("qr", "--qr is required with --qt")),
            (None, Some(_)) => return Err(usage("qt", "--qt is required with --qr")),
            (None, None) => {}
        }
    }
    if let Some(s) = a.snr_db {
        p.set_snr_db(s);
    }
    if four_user {
        p.validate_four_user()?;
    } else {
        p.validate_two_user()?;
    }
    Ok(p)
}

fn bound(a: &BoundArgs) -> Result<(), Error> {
    let scenario = RateScenario::parse(&a.scenario)
        .ok_or_else(|| usage("scenario", format!("unknown scenario `{}`", a.scenario)))?;
    let four_user = matches!(scenario, RateScenario::NomaTp | RateScenario::NomaRp);
    let p = build_params(a, four_user)?;

    let mut bounds: Vec<RateBound> = Vec::new();
    let limit = large_snr_limit(&p, scenario);
    if !a.inf_snr {
        let model = |s: &Option<String>| -> Result<PhaseErrorModel, Error> {
            s.as_deref().unwrap_or(&a.phase).parse()
        };
        let (err_t, err_r) = (model(&a.phase_t)?, model(&a.phase_r)?);
        let (eps_t, eps_r) = (err_t.epsilon(), err_r.epsilon());
        let l = a.elem_len.unwrap_or(a.wavelength / 2.0);
        let geom = ArrayGeometry::new(a.n_h, a.n_v, l, l, 0.0, a.wavelength)?;
        let n = geom.len();
        let tr = if a.uncorrelated {
            trace_rbar_sq_uncorrelated(n)
        } else {
            trace_rbar_sq(&magnitude_moment_matrix(&geom.correlation_matrix()))
        };
        let factors = LinkFactors::compute(&p, n, tr, eps_t, eps_r)?;
        let keep = |r: Result<RateBound, Error>| match r {
            Ok(b) => Ok(Some(b)),
            Err(Error::Unsupported { .. }) => Ok(None),
            Err(e) => Err(e),
        };
        match scenario {
            RateScenario::NomaT => {
                bounds.push(jensen_rate_t(&p, n, tr, eps_t)?);
                bounds.extend(keep(hardening_rate_t(&p, n, eps_t))?);
            }
            RateScenario::NomaR => {
                bounds.push(jensen_rate_r(&p, &factors));
                bounds.extend(keep(hardening_rate_r(&p, n, eps_t, eps_r))?);
            }
            RateScenario::OmaT | RateScenario::OmaR => {
                let pick = |(t, r): (RateBound, RateBound)| {
                    if scenario == RateScenario::OmaT {
                        t
                    } else {
                        r
                    }
                };
                bounds.push(pick(oma_rates(&p, n, tr, eps_t, eps_r, OmaKind::Jensen)?));
                let hard = match oma_rates(&p, n, tr, eps_t, eps_r, OmaKind::Hardening) {
                    Ok(pair) => Some(pick(pair)),
                    Err(Error::Unsupported { .. }) => None,
                    Err(e) => return Err(e),
                };
                bounds.extend(hard);
            }
            RateScenario::NomaTp | RateScenario::NomaRp => {
                let (tp, rp) = multiuser_bounds(&p, n, &factors)?;
                bounds.push(if scenario == RateScenario::NomaTp { tp } else { rp });
            }
        }
    }
    bounds.extend(limit);

    if a.json {
        let list: Vec<_> = bounds
            .iter()
            .map(|b| {
                json!({
                    "kind": b.kind.label(),
                    "value": b.value,
                    "branch": b.branch.map(|x| x.label()),
                })
            })
            .collect();
        let limit_unbounded = limit.is_none();
        println!(
            "{}",
            json!({
                "scenario": scenario.label(),
                "bounds": list,
                "limit_unbounded": limit_unbounded,
            })
        );
    } else {
        println!("scenario   {scenario}");
        for b in &bounds {
            match b.branch {
                Some(br) => println!("{:<10} {}  (branch {})", b.kind.label(), b.value, br.label()),
                None => println!("{:<10} {}", b.kind.label(), b.value),
            }
        }
        if limit.is_none() {
            println!("limit      unbounded");
        }
    }
    Ok(())
}
