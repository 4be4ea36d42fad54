//! Named verification suites and the context they share.
//!
//! A suite turns diagnostics into [`CheckRow`]s, each a value with an
//! acceptance envelope. Suites are trait objects held by a [`SuiteRegistry`];
//! `all` runs every registered suite in registration order.

use std::cell::OnceCell;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inference::IntervalMethod;
use crate::rng::derive_seed;
use crate::sim::SimConfig;
use crate::special::{chi2_quantile_1df, phi_quantile, Probability};
use crate::statistic::{model_params, ModelParams};
use crate::verify::{
    comparison_samples, coverage_study, ks_distance, ks_standard_error, nonuniform_profile,
    normal_samples, size_study, tail_ratio_curve, tail_ratio_envelope, w1_standard_error,
    wasserstein1, CoverageResult, SampleSet,
};

/// Seed indices reserved for the auxiliary runs of a verification.
const MAIN_STREAM: u64 = u64::MAX;
const LADDER_STREAM: u64 = u64::MAX - 1;
const COVERAGE_STREAM: u64 = u64::MAX - 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub diagnostic: String,
    pub x: Option<f64>,
    pub value: f64,
    pub envelope_lo: f64,
    pub envelope_hi: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn new(diagnostic: &str, x: Option<f64>, value: f64, lo: f64, hi: f64) -> Self {
        CheckRow {
            diagnostic: diagnostic.to_string(),
            x,
            value,
            envelope_lo: lo,
            envelope_hi: hi,
            pass: value >= lo && value <= hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub suite: String,
    pub rows: Vec<CheckRow>,
    pub metrics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl SuiteOutcome {
    fn new(suite: &str) -> Self {
        SuiteOutcome {
            suite: suite.to_string(),
            rows: Vec::new(),
            metrics: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

/// One rung of the horizon ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderStep {
    pub n: usize,
    pub ks: f64,
    pub ks_se: f64,
    pub w1: f64,
    pub w1_se: f64,
}

/// Everything a suite needs: configuration, quadrature truths and lazily
/// simulated samples shared between suites.
pub struct VerifyContext {
    pub cfg: RunConfig,
    pub sim: SimConfig,
    pub params: ModelParams,
    pub workers: usize,
    pub digest: String,
    main: OnceCell<SampleSet>,
    ladder: OnceCell<Vec<LadderStep>>,
}

impl VerifyContext {
    pub fn new(cfg: RunConfig, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let sim = cfg.sim_config()?;
        let params = model_params(&sim, cfg.quad_order)?;
        Ok(VerifyContext {
            digest: cfg.digest(),
            cfg,
            sim,
            params,
            workers,
            main: OnceCell::new(),
            ladder: OnceCell::new(),
        })
    }

    fn samples(&self, sim: &SimConfig) -> Result<SampleSet> {
        let values = if self.cfg.inject_normal {
            normal_samples(sim.replications, sim.master_seed, self.workers)?
        } else {
            comparison_samples(sim, &self.params, self.workers)?
        };
        SampleSet::new(values, sim.n, sim.m, self.digest.clone())
    }

    /// `R` over `replications` runs at the configured horizons.
    pub fn main_samples(&self) -> Result<&SampleSet> {
        if let Some(s) = self.main.get() {
            return Ok(s);
        }
        let mut sim = self.sim.clone();
        sim.master_seed = derive_seed(self.cfg.master_seed, MAIN_STREAM);
        let s = self.samples(&sim)?;
        Ok(self.main.get_or_init(|| s))
    }

    /// KS and W1 at each `n = m` of the ladder, `ladder_replications` each.
    pub fn ladder(&self) -> Result<&[LadderStep]> {
        if let Some(l) = self.ladder.get() {
            return Ok(l);
        }
        let base = derive_seed(self.cfg.master_seed, LADDER_STREAM);
        let mut steps = Vec::with_capacity(self.cfg.ladder.len());
        for (k, &n) in self.cfg.ladder.iter().enumerate() {
            let mut sim = self.sim.clone();
            sim.n = n;
            sim.m = n;
            sim.replications = self.cfg.ladder_replications;
            sim.master_seed = derive_seed(base, k as u64);
            let s = self.samples(&sim)?;
            steps.push(LadderStep {
                n,
                ks: ks_distance(&s),
                ks_se: ks_standard_error(s.len()),
                w1: wasserstein1(&s),
                w1_se: w1_standard_error(&s),
            });
        }
        Ok(self.ladder.get_or_init(|| steps))
    }

    fn kappa(&self) -> Result<Probability> {
        Probability::open(self.cfg.kappa, "kappa")
    }

    fn coverage_config(&self, salt: u64) -> SimConfig {
        let mut sim = self.sim.clone();
        sim.replications = self.cfg.coverage_replications;
        sim.master_seed = derive_seed(derive_seed(self.cfg.master_seed, COVERAGE_STREAM), salt);
        sim
    }
}

pub trait VerificationSuite: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn run(&self, ctx: &VerifyContext) -> Result<SuiteOutcome>;
}

/// Envelope for KS of `N` samples: the DKW-style 0.999 bound, floored at 0.01.
pub fn ks_envelope(len: usize) -> f64 {
    (1.95 / (len as f64).sqrt()).max(0.01)
}

/// Envelope for the non-uniform profile maximum.
pub fn profile_envelope(len: usize) -> f64 {
    (3.0 / (len as f64).sqrt()).max(0.05)
}

/// Envelope for W1.
pub fn w1_envelope(len: usize) -> f64 {
    (2.0 / (len as f64).sqrt()).max(0.02)
}

/// Bound on the next rung of a ladder: previous value plus three combined SEs.
pub fn ladder_bound(prev: f64, prev_se: f64, se: f64) -> f64 {
    prev + 3.0 * (prev_se * prev_se + se * se).sqrt()
}

struct Clt;

impl VerificationSuite for Clt {
    fn name(&self) -> &'static str {
        "clt"
    }

    fn description(&self) -> &'static str {
        "KS distance of R and of -R to the standard normal"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<SuiteOutcome> {
        let s = ctx.main_samples()?;
        let mut out = SuiteOutcome::new(self.name());
        let env = ks_envelope(s.len());
        out.rows
            .push(CheckRow::new("ks", None, ks_distance(s), 0.0, env));
        out.rows.push(CheckRow::new(
            "ks_negated",
            None,
            ks_distance(&s.negated()),
            0.0,
            env,
        ));
        let (mean, sd) = s.mean_and_sd();
        out.metrics.insert("mean".into(), mean);
        out.metrics.insert("sd".into(), sd);
        out.metrics.insert("samples".into(), s.len() as f64);
        Ok(out)
    }
}

struct BerryEsseen;

impl VerificationSuite for BerryEsseen {
    fn name(&self) -> &'static str {
        "berry-esseen"
    }

    fn description(&self) -> &'static str {
        "non-uniform profile, Wasserstein-1 and their trend along the horizon ladder"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<SuiteOutcome> {
        let s = ctx.main_samples()?;
        let mut out = SuiteOutcome::new(self.name());
        let profile = nonuniform_profile(s, ctx.cfg.delta_prime)?;
        let env = profile_envelope(s.len());
        for &(x, v) in &profile {
            out.rows
                .push(CheckRow::new("nonuniform_profile", Some(x), v, 0.0, env));
        }
        out.rows.push(CheckRow::new(
            "w1",
            None,
            wasserstein1(s),
            0.0,
            w1_envelope(s.len()),
        ));
        out.metrics
            .insert("delta_prime".into(), ctx.cfg.delta_prime);

        let ladder = ctx.ladder()?;
        for (k, step) in ladder.iter().enumerate() {
            let x = Some(step.n as f64);
            let (ks_hi, w1_hi) = match k.checked_sub(1).map(|j| ladder[j]) {
                Some(prev) => (
                    ladder_bound(prev.ks, prev.ks_se, step.ks_se),
                    ladder_bound(prev.w1, prev.w1_se, step.w1_se),
                ),
                None => (1.0, f64::INFINITY),
            };
            out.rows
                .push(CheckRow::new("ladder_ks", x, step.ks, 0.0, ks_hi));
            out.rows
                .push(CheckRow::new("ladder_w1", x, step.w1, 0.0, w1_hi));
        }
        Ok(out)
    }
}

struct Tails;

impl VerificationSuite for Tails {
    fn name(&self) -> &'static str {
        "tails"
    }

    fn description(&self) -> &'static str {
        "ratios of empirical to normal tails on the configured grid"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<SuiteOutcome> {
        let s = ctx.main_samples()?;
        let mut out = SuiteOutcome::new(self.name());
        let curve = tail_ratio_curve(s, &ctx.cfg.tail_grid)?;
        for p in &curve.points {
            let se3 = tail_ratio_envelope(s.len(), p.x);
            let (lo, hi) = ((1.0 - se3).min(0.8), (1.0 + se3).max(1.25));
            out.rows
                .push(CheckRow::new("tail_upper", Some(p.x), p.upper, lo, hi));
            out.rows
                .push(CheckRow::new("tail_lower", Some(p.x), p.lower, lo, hi));
        }
        for x in curve.excluded {
            out.warnings.push(format!(
                "tail grid point {x} excluded: fewer than 50 expected exceedances"
            ));
        }
        Ok(out)
    }
}

struct Coverage;

impl Coverage {
    /// Injected normal mode: the interval events reduce to events of `R`.
    fn normal_rates(ctx: &VerifyContext, kappa: Probability) -> Result<[CoverageResult; 3]> {
        let sim = ctx.coverage_config(0);
        let z = normal_samples(sim.replications, sim.master_seed, ctx.workers)?;
        let q = phi_quantile(Probability::new(1.0 - kappa.get() / 2.0)?)?;
        let lo = chi2_quantile_1df(Probability::open(kappa.get() / 2.0, "kappa")?)?;
        let hi = chi2_quantile_1df(Probability::open(1.0 - kappa.get() / 2.0, "kappa")?)?;
        let n = z.len();
        let rate = |hits: usize, nominal: f64| CoverageResult {
            rate: hits as f64 / n as f64,
            nominal_se: (nominal * (1.0 - nominal) / n as f64).sqrt(),
            replications: n,
        };
        let inside = z.iter().filter(|v| v.abs() <= q).count();
        let chi_inside = z.iter().filter(|v| (lo..=hi).contains(&(*v * *v))).count();
        let k = kappa.get();
        Ok([
            rate(inside, 1.0 - k),
            rate(n - inside, k),
            rate(chi_inside, 1.0 - k),
        ])
    }

    fn simulated_rates(ctx: &VerifyContext, kappa: Probability) -> Result<[CoverageResult; 3]> {
        let quad = ctx.cfg.quad_order;
        let mu_diff = coverage_study(
            &ctx.coverage_config(0),
            kappa,
            IntervalMethod::MuDiff,
            quad,
            ctx.workers,
        )?;

        let mut null = ctx.coverage_config(1);
        null.family2 = null.family1.clone();
        let size = size_study(&null, kappa, quad, ctx.workers)?;

        let mut copies = ctx.coverage_config(2);
        copies.family2 = copies.family1.clone();
        copies.latent_r = 0.0;
        copies.m = copies.n;
        let sigma = coverage_study(&copies, kappa, IntervalMethod::SigmaSq, quad, ctx.workers)?;
        Ok([mu_diff, size, sigma])
    }
}

impl VerificationSuite for Coverage {
    fn name(&self) -> &'static str {
        "coverage"
    }

    fn description(&self) -> &'static str {
        "coverage of both intervals and size of the equal-growth test"
    }

    fn run(&self, ctx: &VerifyContext) -> Result<SuiteOutcome> {
        let kappa = ctx.kappa()?;
        let k = kappa.get();
        let [mu_diff, size, sigma] = if ctx.cfg.inject_normal {
            Self::normal_rates(ctx, kappa)?
        } else {
            Self::simulated_rates(ctx, kappa)?
        };
        let mut out = SuiteOutcome::new(self.name());
        for (name, res, nominal) in [
            ("coverage_mu_diff", mu_diff, 1.0 - k),
            ("size_mu_equal", size, k),
            ("coverage_sigma_sq", sigma, 1.0 - k),
        ] {
            let band = res.band();
            out.rows.push(CheckRow::new(
                name,
                None,
                res.rate,
                nominal - band,
                nominal + band,
            ));
        }
        out.metrics.insert("kappa".into(), k);
        out.metrics
            .insert("replications".into(), mu_diff.replications as f64);
        Ok(out)
    }
}

pub struct SuiteRegistry {
    suites: Vec<Box<dyn VerificationSuite>>,
}

impl SuiteRegistry {
    pub fn empty() -> Self {
        SuiteRegistry { suites: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Clt));
        r.register(Box::new(BerryEsseen));
        r.register(Box::new(Tails));
        r.register(Box::new(Coverage));
        r
    }

    /// Adds a suite, replacing any suite of the same name in place.
    pub fn register(&mut self, suite: Box<dyn VerificationSuite>) {
        match self.suites.iter().position(|s| s.name() == suite.name()) {
            Some(i) => self.suites[i] = suite,
            None => self.suites.push(suite),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.suites.iter().map(|s| s.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn VerificationSuite> {
        self.suites
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::Unknown {
                what: "suite",
                name: name.to_string(),
                known: format!("all, {}", self.names().join(", ")),
            })
    }

    /// The suites selected by `name`; `all` selects every suite.
    pub fn resolve(&self, name: &str) -> Result<Vec<&dyn VerificationSuite>> {
        if name == "all" {
            Ok(self.suites.iter().map(|s| s.as_ref()).collect())
        } else {
            Ok(vec![self.get(name)?])
        }
    }

    pub fn run(&self, name: &str, ctx: &VerifyContext) -> Result<Vec<SuiteOutcome>> {
        self.resolve(name)?
            .into_iter()
            .map(|s| s.run(ctx))
            .collect()
    }
}
