//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p bpre-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use bpre_core::config::RunConfig;
use bpre_core::env::EnvironmentFamily;
use bpre_core::inference::IntervalMethod;
use bpre_core::report::simulation_csv;
use bpre_core::sim::{
    par_map_indices, simulate_pair, simulate_pair_outcome, PopulationCap, SimConfig,
};
use bpre_core::special::{chi2_quantile_1df, phi_cdf, phi_quantile, Probability};
use bpre_core::statistic::{decompose, model_params};
use bpre_core::suites::{ladder_bound, LadderStep, VerifyContext};
use bpre_core::verify::{
    coverage_study, ks_distance, nonuniform_profile, profile_max, size_study, tail_ratio_curve,
    two_sample_ks, wasserstein1,
};
use bpre_core::Result;

const SEED: u64 = 20240601;
const WORKERS: usize = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn two_point(a: f64) -> EnvironmentFamily {
    EnvironmentFamily::new("two_point", a, 1.0).expect("valid family")
}

fn sim_config(
    f1: EnvironmentFamily,
    f2: EnvironmentFamily,
    n: usize,
    m: usize,
    latent_r: f64,
    reps: usize,
    seed: u64,
) -> SimConfig {
    let mut cfg = SimConfig::new(f1, f2, n, m);
    cfg.latent_r = latent_r;
    cfg.replications = reps;
    cfg.master_seed = seed;
    cfg
}

/// `x` with `Φ(x) = p` by bisection on `phi_cdf`.
fn bisect_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi_cdf(mid).unwrap().get() < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn special_functions() -> Result<Verdict> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..=2000 {
        let p = 10f64.powf(-10.0 + (10.0 + 0.5f64.log10()) * k as f64 / 2000.0);
        for q in [p, 1.0 - p] {
            if q <= 1e-10 || q >= 1.0 - 1e-10 {
                continue;
            }
            let x = phi_quantile(Probability::new(q)?)?;
            worst = worst.max((phi_cdf(x)?.get() - q).abs());
        }
    }
    let chi2 = chi2_quantile_1df(Probability::new(0.95)?)?;
    let oracle = bisect_quantile(0.975).powi(2);
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-12 && (chi2 - 3.8415).abs() <= 1e-3 && (chi2 - oracle).abs() <= 1e-3 && elapsed < Duration::from_secs(1),
        format!("max round-trip error {worst:.2e}, chi2(0.95) = {chi2:.6} (bisection oracle {oracle:.6}), {:.3} s", elapsed.as_secs_f64()),
    )
}

fn martingale_normalization() -> Result<Verdict> {
    let start = Instant::now();
    let cfg = sim_config(
        two_point(0.0),
        two_point(0.0),
        100,
        100,
        0.0,
        100_000,
        SEED + 2,
    );
    let w = par_map_indices(cfg.replications, WORKERS, |i| {
        Ok(simulate_pair_outcome(&cfg, i)?.log_w1.exp())
    })?;
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let elapsed = start.elapsed();
    verdict(
        (mean - 1.0).abs() <= 3.0 * se && elapsed < Duration::from_secs(60),
        format!(
            "mean W = {mean:.6}, SE = {se:.2e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn decomposition_identity() -> Result<Verdict> {
    let start = Instant::now();
    let cfg = sim_config(
        two_point(0.0),
        two_point(0.5),
        500,
        300,
        0.5,
        10_000,
        SEED + 3,
    );
    let params = model_params(&cfg, 64)?;
    let errors = par_map_indices(cfg.replications, WORKERS, |i| {
        Ok(decompose(&simulate_pair(&cfg, i)?, &params)?.relative_error())
    })?;
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-12 && elapsed < Duration::from_secs(60),
        format!(
            "max relative reconstruction error {worst:.2e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn main_context() -> Result<VerifyContext> {
    let cfg = RunConfig {
        latent_r: 0.5,
        n: 2000,
        m: 2000,
        master_seed: SEED,
        replications: 1_000_000,
        ladder: vec![250, 1000, 4000],
        ladder_replications: 200_000,
        delta_prime: 0.5,
        ..RunConfig::default()
    };
    VerifyContext::new(cfg, WORKERS)
}

fn clt(ctx: &VerifyContext) -> Result<Verdict> {
    let s = ctx.main_samples()?;
    let ks = ks_distance(s);
    verdict(ks <= 0.01, format!("KS = {ks:.5} over N = {}", s.len()))
}

/// Each rung is at most the previous one plus three combined standard errors.
fn non_increasing(
    steps: &[LadderStep],
    value: impl Fn(&LadderStep) -> (f64, f64),
) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, step) in steps.iter().enumerate() {
        let (v, se) = value(step);
        if k > 0 {
            let (pv, pse) = value(&steps[k - 1]);
            ok &= v <= ladder_bound(pv, pse, se);
        }
        parts.push(format!("n={}: {v:.5}", step.n));
    }
    (ok, parts.join(", "))
}

fn rate_trend(ctx: &VerifyContext) -> Result<Verdict> {
    let (ok, text) = non_increasing(ctx.ladder()?, |s| (s.ks, s.ks_se));
    verdict(ok, format!("KS {text}"))
}

fn nonuniform(ctx: &VerifyContext) -> Result<Verdict> {
    let max = profile_max(&nonuniform_profile(ctx.main_samples()?, 0.5)?);
    verdict(
        max <= 0.05,
        format!("max weighted gap {max:.5} (delta' = 0.5)"),
    )
}

fn tails(ctx: &VerifyContext) -> Result<Verdict> {
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 10.0).collect();
    let curve = tail_ratio_curve(ctx.main_samples()?, &grid)?;
    let ratios: Vec<f64> = curve
        .points
        .iter()
        .flat_map(|p| [p.upper, p.lower])
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    verdict(
        curve.excluded.is_empty() && lo >= 0.8 && hi <= 1.25,
        format!(
            "ratios on x in [0, 2] span [{lo:.4}, {hi:.4}], {} points excluded",
            curve.excluded.len()
        ),
    )
}

fn wasserstein(ctx: &VerifyContext) -> Result<Verdict> {
    let w1 = wasserstein1(ctx.main_samples()?);
    let (ok, text) = non_increasing(ctx.ladder()?, |s| (s.w1, s.w1_se));
    verdict(w1 <= 0.02 && ok, format!("w1 = {w1:.5}; ladder {text}"))
}

fn mu_diff_coverage() -> Result<Verdict> {
    let kappa = Probability::new(0.05)?;
    let cfg = sim_config(
        two_point(0.0),
        two_point(0.5),
        1000,
        1000,
        0.5,
        10_000,
        SEED + 9,
    );
    let cov = coverage_study(&cfg, kappa, IntervalMethod::MuDiff, 64, WORKERS)?;
    let null = sim_config(
        two_point(0.0),
        two_point(0.0),
        1000,
        1000,
        0.0,
        10_000,
        SEED + 90,
    );
    let size = size_study(&null, kappa, 64, WORKERS)?;
    verdict(
        (0.94..=0.96).contains(&cov.rate) && (0.04..=0.06).contains(&size.rate),
        format!("coverage {:.4}, size {:.4}", cov.rate, size.rate),
    )
}

fn sigma_sq_coverage() -> Result<Verdict> {
    let cfg = sim_config(
        two_point(0.0),
        two_point(0.0),
        1000,
        1000,
        0.0,
        10_000,
        SEED + 10,
    );
    let cov = coverage_study(
        &cfg,
        Probability::new(0.05)?,
        IntervalMethod::SigmaSq,
        64,
        WORKERS,
    )?;
    verdict(
        (0.94..=0.96).contains(&cov.rate),
        format!("coverage {:.4}", cov.rate),
    )
}

fn continuation_fidelity() -> Result<Verdict> {
    let log_z = |cap: PopulationCap, seed: u64| -> Result<(Vec<f64>, usize)> {
        let mut cfg = sim_config(two_point(0.0), two_point(0.0), 20, 20, 0.0, 100_000, seed);
        cfg.pop_cap = cap;
        let out = par_map_indices(cfg.replications, WORKERS, |i| {
            let t = simulate_pair(&cfg, i)?.traj1;
            Ok((t.log_z, t.exact_until.is_some()))
        })?;
        let frozen = out.iter().filter(|o| o.1).count();
        let mut v: Vec<f64> = out.into_iter().map(|o| o.0).collect();
        v.sort_by(f64::total_cmp);
        Ok((v, frozen))
    };
    let (capped, frozen) = log_z(PopulationCap::Frozen(10_000), SEED + 11)?;
    let (exact, _) = log_z(PopulationCap::Exact, SEED + 111)?;
    let (d, p) = two_sample_ks(&capped, &exact);
    verdict(
        p > 1e-3,
        format!(
            "D = {d:.5}, p = {p:.4}; {frozen} of {} capped runs froze",
            capped.len()
        ),
    )
}

fn reproducibility() -> Result<Verdict> {
    let cfg = RunConfig {
        n: 300,
        m: 200,
        replications: 2000,
        master_seed: SEED + 12,
        ..RunConfig::default()
    };
    let a = simulation_csv(&cfg, 1)?;
    let b = simulation_csv(&cfg, 1)?;
    let c = simulation_csv(&cfg, 8)?;
    let d = simulation_csv(&cfg, 8)?;
    verdict(
        a == b && a == c && c == d,
        format!(
            "{} bytes; runs equal: {}, workers 1 vs 8 equal: {}",
            a.len(),
            a == b && c == d,
            a == c
        ),
    )
}

fn main() -> ExitCode {
    let total = Instant::now();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, f: &dyn Fn() -> Result<Verdict>| {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {id:>2} {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    };

    report(1, "special-function accuracy", &special_functions);
    report(2, "martingale normalization", &martingale_normalization);
    report(3, "decomposition identity", &decomposition_identity);
    match main_context() {
        Ok(ctx) => {
            report(4, "CLT", &|| clt(&ctx));
            report(5, "Berry-Esseen rate trend", &|| rate_trend(&ctx));
            report(6, "non-uniform profile", &|| nonuniform(&ctx));
            report(7, "tail equivalence", &|| tails(&ctx));
            report(8, "Wasserstein-1", &|| wasserstein(&ctx));
        }
        Err(e) => {
            for (id, name) in [
                (4, "CLT"),
                (5, "Berry-Esseen rate trend"),
                (6, "non-uniform profile"),
                (7, "tail equivalence"),
                (8, "Wasserstein-1"),
            ] {
                report(id, name, &|| Err(e.clone()));
            }
        }
    }
    report(9, "mu-difference coverage and test size", &mu_diff_coverage);
    report(10, "sigma^2 coverage", &sigma_sq_coverage);
    report(11, "continuation-scheme fidelity", &continuation_fidelity);
    report(12, "reproducibility", &reproducibility);

    println!(
        "{} of 12 criteria passed in {:.1} s",
        12 - failed,
        total.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
