//! Confidence intervals for `μ₁ − μ₂` and `σ₁²`, and the test of `μ₁ = μ₂`.
//!
//! All procedures treat `σ₁`, `σ₂` and `ρ` as known. Their levels are
//! asymptotic; when `|ln κ|` is large compared with the horizon a warning is
//! attached. The thresholds `|ln κ| > ln(m∧n)` and `|ln κ| > (m∧n)^{1/3}` are
//! heuristics for the regimes in which the normal approximation of the tails
//! is known to hold, not hard limits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::special::{chi2_quantile_1df, normal_cdf, phi_quantile, Probability};
use crate::statistic::v_mn_rho;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    MuDiff,
    SigmaSq,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Confidence level `1 − κ`.
    pub level: Probability,
    pub method: IntervalMethod,
    pub warnings: Vec<String>,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Final log-populations of the two processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    pub log_z1: f64,
    pub n: usize,
    pub log_z2: f64,
    pub m: usize,
}

impl Observation {
    pub fn point_estimate(&self) -> f64 {
        self.log_z1 / self.n as f64 - self.log_z2 / self.m as f64
    }
}

/// The known scale parameters `σ₁`, `σ₂`, `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scales {
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

/// Advisory warnings for `κ` too small relative to `m∧n`.
pub fn validity_warnings(kappa: f64, shared: usize) -> Vec<String> {
    let log_kappa = kappa.ln().abs();
    let h = shared as f64;
    let mut out = Vec::new();
    if log_kappa > h.ln() {
        out.push(format!(
            "|ln kappa| = {log_kappa:.3} exceeds ln(m^n) = {:.3}; tail approximation under moment conditions only is doubtful",
            h.ln()
        ));
    }
    if log_kappa > h.cbrt() {
        out.push(format!(
            "|ln kappa| = {log_kappa:.3} exceeds (m^n)^(1/3) = {:.3}; interval level is unreliable",
            h.cbrt()
        ));
    }
    out
}

fn check_kappa(kappa: Probability, op: &'static str) -> Result<f64> {
    Ok(Probability::open(kappa.get(), op)?.get())
}

/// `[A, B] = point ∓ V·Φ⁻¹(1 − κ/2)` with `point = ln Z₁/n − ln Z₂/m`.
pub fn ci_mu_diff(obs: &Observation, scales: &Scales, kappa: Probability) -> Result<Interval> {
    let k = check_kappa(kappa, "ci_mu_diff")?;
    let v = v_mn_rho(obs.n, obs.m, scales.sigma1, scales.sigma2, scales.rho)?;
    let half = v * phi_quantile(Probability::new(1.0 - k / 2.0)?)?;
    let center = obs.point_estimate();
    Ok(Interval {
        lo: center - half,
        hi: center + half,
        level: kappa.complement(),
        method: IntervalMethod::MuDiff,
        warnings: validity_warnings(k, obs.n.min(obs.m)),
    })
}

/// `[d²/(2n·χ²_{1−κ/2}(1)), d²/(2n·χ²_{κ/2}(1))]` with `d = ln Z₁,ₙ − ln Z₂,ₙ`.
///
/// Only valid when process 2 is an independent copy of process 1; the caller
/// must say so through `independent_copies`.
pub fn ci_sigma_sq(
    log_z1: f64,
    log_z2: f64,
    n: usize,
    kappa: Probability,
    independent_copies: bool,
) -> Result<Interval> {
    if !independent_copies {
        return Err(Error::Refused(
            "the sigma^2 interval requires process 2 to be an independent copy of process 1; \
             attest this explicitly"
                .into(),
        ));
    }
    let k = check_kappa(kappa, "ci_sigma_sq")?;
    if n == 0 {
        return Err(Error::domain("ci_sigma_sq", "n must be at least 1"));
    }
    let mut warnings = validity_warnings(k, n);
    let d = log_z1 - log_z2;
    let level = kappa.complement();
    if d == 0.0 {
        warnings.push("identical log-populations: degenerate interval [0, 0]".into());
        return Ok(Interval {
            lo: 0.0,
            hi: 0.0,
            level,
            method: IntervalMethod::SigmaSq,
            warnings,
        });
    }
    let d2 = d * d;
    let two_n = 2.0 * n as f64;
    let upper_q = chi2_quantile_1df(Probability::new(1.0 - k / 2.0)?)?;
    let lower_q = chi2_quantile_1df(Probability::new(k / 2.0)?)?;
    Ok(Interval {
        lo: d2 / (two_n * upper_q),
        hi: d2 / (two_n * lower_q),
        level,
        method: IntervalMethod::SigmaSq,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    /// The comparison statistic evaluated at `μ₁ − μ₂ = 0`.
    pub statistic: f64,
    pub p_value: Probability,
    pub reject_at: Probability,
    pub decision: bool,
    pub warnings: Vec<String>,
}

/// Two-sided test of `μ₁ = μ₂`. Rejecting at level `κ` is equivalent to
/// `0 ∉ ci_mu_diff(…, κ)`.
pub fn test_mu_equal(obs: &Observation, scales: &Scales, level: Probability) -> Result<TestResult> {
    let k = check_kappa(level, "test_mu_equal")?;
    let v = v_mn_rho(obs.n, obs.m, scales.sigma1, scales.sigma2, scales.rho)?;
    let statistic = obs.point_estimate() / v;
    let p = (2.0 * normal_cdf(-statistic.abs())).min(1.0);
    let p_value = Probability::new(p)?;
    Ok(TestResult {
        statistic,
        p_value,
        reject_at: level,
        decision: p < k,
        warnings: validity_warnings(k, obs.n.min(obs.m)),
    })
}
