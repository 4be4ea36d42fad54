//! `bpre`: moments, simulation, intervals, tests and Monte Carlo verification
//! for pairs of branching processes in random environments.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bpre_core::env::{env_moments, pair_correlation};
use bpre_core::inference::{ci_mu_diff, ci_sigma_sq, test_mu_equal, Interval, Observation, Scales};
use bpre_core::report::{csv_preamble, simulation_csv, verify_csv};
use bpre_core::sim::{
    replicate, simulate_pair_outcome, write_trajectory_rows, TRAJECTORY_CSV_HEADER,
};
use bpre_core::statistic::model_params;
use bpre_core::suites::{SuiteOutcome, SuiteRegistry, VerifyContext};
use bpre_core::{Probability, RunConfig, FORMAT_VERSION};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "bpre",
    version,
    about = "Compare growth rates of two branching processes in random environments"
)]
struct Cli {
    /// Worker threads for replication (0 = all cores).
    #[arg(long, global = true, env = "BPRE_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print mu, sigma of both families and the induced rho as JSON.
    Moments { config: PathBuf },
    /// Simulate paired trajectories and write per-replication statistics as CSV.
    Simulate {
        config: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump every generation of every replication to this file.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Confidence interval for mu1 - mu2 or sigma1^2.
    Ci {
        #[arg(long, value_enum, default_value_t = Method::MuDiff)]
        method: Method,
        /// Attest that process 2 is an independent copy of process 1 (required for sigma-sq).
        #[arg(long)]
        independent_copies: bool,
        #[command(flatten)]
        input: ObservationArgs,
    },
    /// Two-sided test of mu1 = mu2.
    Test {
        #[command(flatten)]
        input: ObservationArgs,
    },
    /// Run verification suites and write CSV and JSON reports.
    Verify {
        config: PathBuf,
        /// Suite to run, overriding the config (clt, berry-esseen, tails, coverage, all).
        #[arg(long)]
        suite: Option<String>,
        /// Report directory, overriding the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    MuDiff,
    SigmaSq,
}

#[derive(Args)]
struct ObservationArgs {
    /// Run configuration; required with --from-sim.
    config: Option<PathBuf>,
    /// Take the observation from one simulated replication and the known
    /// parameters from quadrature.
    #[arg(long)]
    from_sim: bool,
    /// Replication index used with --from-sim.
    #[arg(long, default_value_t = 0, requires = "from_sim")]
    replication: u64,
    #[arg(long, allow_negative_numbers = true)]
    logz1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    logz2: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    /// kappa (1 - confidence level, or test level); defaults to the config
    /// value, else 0.05.
    #[arg(long)]
    kappa: Option<f64>,
}

enum CliError {
    Usage(String),
    Verification(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Verification(m) | CliError::Io(m) => m,
        }
    }
}

impl From<bpre_core::Error> for CliError {
    fn from(e: bpre_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn stamp(cfg: Option<&RunConfig>) -> Value {
    json!({
        "format_version": FORMAT_VERSION,
        "config_digest": cfg.map(RunConfig::digest),
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn print_json(v: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    let mut out = io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn cmd_moments(path: &Path) -> CliResult<()> {
    let cfg = load_config(path)?;
    let sim = cfg.sim_config()?;
    let p1 = env_moments(&sim.family1, cfg.quad_order)?;
    let p2 = env_moments(&sim.family2, cfg.quad_order)?;
    let corr = pair_correlation(&sim.family1, &sim.family2, cfg.latent_r, cfg.quad_order)?;
    print_json(&merge(
        stamp(Some(&cfg)),
        json!({
            "family1": { "spec": cfg.family1, "params": p1 },
            "family2": { "spec": cfg.family2, "params": p2 },
            "pair": corr,
        }),
    ))
}

fn cmd_simulate(
    path: &Path,
    out: Option<&Path>,
    trajectories: Option<&Path>,
    threads: usize,
) -> CliResult<()> {
    let cfg = load_config(path)?;
    let body = simulation_csv(&cfg, threads)?;
    match out {
        Some(p) => fs::write(p, &body).map_err(io_err(p))?,
        None => io::stdout()
            .lock()
            .write_all(body.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}")))?,
    }

    if let Some(tp) = trajectories {
        let pairs = replicate(&cfg.sim_config()?, threads)?;
        let mut w = BufWriter::new(fs::File::create(tp).map_err(io_err(tp))?);
        w.write_all(csv_preamble(&cfg).as_bytes())
            .map_err(io_err(tp))?;
        writeln!(w, "{TRAJECTORY_CSV_HEADER}").map_err(io_err(tp))?;
        for (i, pair) in pairs.iter().enumerate() {
            write_trajectory_rows(&mut w, i as u64, pair).map_err(io_err(tp))?;
        }
        w.flush().map_err(io_err(tp))?;
    }
    Ok(())
}

/// An observation and its known parameters, either simulated or supplied.
struct Resolved {
    cfg: Option<RunConfig>,
    obs: Observation,
    scales: Option<Scales>,
    kappa: Probability,
    inputs: Value,
}

fn resolve(input: &ObservationArgs, need_scales: bool) -> CliResult<Resolved> {
    let cfg = input.config.as_deref().map(load_config).transpose()?;
    let kappa_value = input
        .kappa
        .or(cfg.as_ref().map(|c| c.kappa))
        .unwrap_or(0.05);
    let kappa = Probability::open(kappa_value, "kappa")
        .map_err(|e| CliError::Usage(format!("--kappa: {e}")))?;

    if input.from_sim {
        let Some(cfg) = cfg else {
            return Err(CliError::Usage("--from-sim needs a config file".into()));
        };
        let sim = cfg.sim_config()?;
        let params = model_params(&sim, cfg.quad_order)?;
        let o = simulate_pair_outcome(&sim, input.replication)?;
        let obs = Observation {
            log_z1: o.log_z1,
            n: sim.n,
            log_z2: o.log_z2,
            m: sim.m,
        };
        let scales = Scales {
            sigma1: params.sigma1,
            sigma2: params.sigma2,
            rho: params.rho,
        };
        let inputs = json!({
            "source": "simulation",
            "replication": input.replication,
            "observation": obs,
            "truth": params,
        });
        return Ok(Resolved {
            cfg: Some(cfg),
            obs,
            scales: Some(scales),
            kappa,
            inputs,
        });
    }

    let require = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| CliError::Usage(format!("missing --{flag} (or use --from-sim)")))
    };
    let log_z1 = require(input.logz1, "logz1")?;
    let log_z2 = require(input.logz2, "logz2")?;
    let n = input
        .n
        .ok_or_else(|| CliError::Usage("missing --n (or use --from-sim)".into()))?;
    let m = match (input.m, need_scales) {
        (Some(m), _) => m,
        (None, false) => n,
        (None, true) => return Err(CliError::Usage("missing --m (or use --from-sim)".into())),
    };
    let obs = Observation {
        log_z1,
        n,
        log_z2,
        m,
    };
    let scales = if need_scales {
        Some(Scales {
            sigma1: require(input.sigma1, "sigma1")?,
            sigma2: require(input.sigma2, "sigma2")?,
            rho: require(input.rho, "rho")?,
        })
    } else {
        None
    };
    let inputs = json!({ "source": "explicit", "observation": obs, "scales": scales });
    Ok(Resolved {
        cfg,
        obs,
        scales,
        kappa,
        inputs,
    })
}

fn interval_record(iv: &Interval, r: &Resolved) -> Value {
    merge(
        stamp(r.cfg.as_ref()),
        json!({
            "method": iv.method,
            "lo": iv.lo,
            "hi": iv.hi,
            "level": iv.level,
            "inputs": r.inputs,
            "warnings": iv.warnings,
        }),
    )
}

fn cmd_ci(method: Method, independent_copies: bool, input: &ObservationArgs) -> CliResult<()> {
    let r = resolve(input, method == Method::MuDiff)?;
    let iv = match method {
        Method::MuDiff => ci_mu_diff(&r.obs, r.scales.as_ref().expect("scales resolved"), r.kappa)?,
        Method::SigmaSq => {
            if !independent_copies {
                return Err(CliError::Usage(
                    "sigma-sq intervals require --independent-copies: the formula is valid only \
                     when process 2 is an independent copy of process 1"
                        .into(),
                ));
            }
            if r.obs.n != r.obs.m {
                return Err(CliError::Usage(format!(
                    "sigma-sq intervals need equal horizons, got n = {} and m = {}",
                    r.obs.n, r.obs.m
                )));
            }
            ci_sigma_sq(r.obs.log_z1, r.obs.log_z2, r.obs.n, r.kappa, true)?
        }
    };
    print_json(&interval_record(&iv, &r))
}

fn cmd_test(input: &ObservationArgs) -> CliResult<()> {
    let r = resolve(input, true)?;
    let t = test_mu_equal(&r.obs, r.scales.as_ref().expect("scales resolved"), r.kappa)?;
    print_json(&merge(
        stamp(r.cfg.as_ref()),
        json!({
            "method": "test_mu_equal",
            "statistic": t.statistic,
            "p_value": t.p_value,
            "level": t.reject_at,
            "reject": t.decision,
            "inputs": r.inputs,
            "warnings": t.warnings,
        }),
    ))
}

fn write_verify_reports(dir: &Path, cfg: &RunConfig, outcomes: &[SuiteOutcome]) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join("verify.csv");
    fs::write(&csv_path, verify_csv(cfg, outcomes)).map_err(io_err(&csv_path))?;

    let summary = merge(
        stamp(Some(cfg)),
        json!({
            "suite": cfg.suite,
            "passed": outcomes.iter().all(SuiteOutcome::passed),
            "suites": outcomes.iter().map(|o| json!({
                "suite": o.suite,
                "passed": o.passed(),
                "checks": o.rows.len(),
                "metrics": o.metrics,
                "warnings": o.warnings,
                "failures": o.failures().collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        }),
    );
    let json_path = dir.join("verify.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&json_path, text + "\n").map_err(io_err(&json_path))
}

fn cmd_verify(
    path: &Path,
    suite: Option<&str>,
    out_dir: Option<&Path>,
    threads: usize,
) -> CliResult<()> {
    let mut cfg = load_config(path)?;
    if let Some(s) = suite {
        cfg.suite = s.to_string();
    }
    if let Some(d) = out_dir {
        cfg.output_dir = d.to_string_lossy().into_owned();
    }
    let registry = SuiteRegistry::builtin();
    registry.resolve(&cfg.suite)?;
    let ctx = VerifyContext::new(cfg.clone(), threads)?;
    let outcomes = registry.run(&cfg.suite, &ctx)?;
    write_verify_reports(Path::new(&cfg.output_dir), &cfg, &outcomes)?;

    let mut failing = Vec::new();
    for o in &outcomes {
        println!(
            "{:<14} {}",
            o.suite,
            if o.passed() { "PASS" } else { "FAIL" }
        );
        for row in o.rows.iter().filter(|r| r.x.is_none()) {
            println!(
                "  {:<20} {:.6} in [{:.6}, {:.6}]",
                row.diagnostic, row.value, row.envelope_lo, row.envelope_hi
            );
        }
        for w in &o.warnings {
            eprintln!("warning: {w}");
        }
        for row in o.failures() {
            failing.push(format!(
                "{}/{}{}: {} outside [{}, {}]",
                o.suite,
                row.diagnostic,
                row.x.map_or_else(String::new, |x| format!(" at {x}")),
                row.value,
                row.envelope_lo,
                row.envelope_hi
            ));
        }
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{} check(s) failed:\n  {}",
            failing.len(),
            failing.join("\n  ")
        )))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Moments { config } => cmd_moments(config),
        Command::Simulate {
            config,
            out,
            trajectories,
        } => cmd_simulate(config, out.as_deref(), trajectories.as_deref(), cli.threads),
        Command::Ci {
            method,
            independent_copies,
            input,
        } => cmd_ci(*method, *independent_copies, input),
        Command::Test { input } => cmd_test(input),
        Command::Verify {
            config,
            suite,
            out_dir,
        } => cmd_verify(config, suite.as_deref(), out_dir.as_deref(), cli.threads),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
