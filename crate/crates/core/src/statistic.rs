//! The standardized comparison statistic for two growth rates.
//!
//! With `V = √(σ₁²/n + σ₂²/m − 2ρσ₁σ₂(m∧n)/(mn))`,
//!
//! ```text
//! R = (ln Z₁,ₙ / n − ln Z₂,ₘ / m − (μ₁ − μ₂)) / V
//! ```
//!
//! and, writing `ln Z = ln Π + ln W`, `R` splits exactly into a sum of
//! independent centered environment terms plus two martingale corrections
//! (see [`decompose`]).

use serde::Serialize;

use crate::env::{env_moments, pair_correlation};
use crate::error::{Error, Result};
use crate::sim::{PairedTrajectory, SimConfig};

/// Known parameters of the two environment laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

impl ModelParams {
    /// The parameters seen from the other process.
    pub fn swapped(self) -> Self {
        ModelParams {
            mu1: self.mu2,
            mu2: self.mu1,
            sigma1: self.sigma2,
            sigma2: self.sigma1,
            rho: self.rho,
        }
    }
}

/// Standard deviation normalizer of the comparison statistic.
pub fn v_mn_rho(n: usize, m: usize, sigma1: f64, sigma2: f64, rho: f64) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::domain("v_mn_rho", "n and m must be at least 1"));
    }
    if !(sigma1 > 0.0 && sigma2 > 0.0) || !sigma1.is_finite() || !sigma2.is_finite() {
        return Err(Error::domain(
            "v_mn_rho",
            format!("sigma1 = {sigma1}, sigma2 = {sigma2} must be positive and finite"),
        ));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::domain(
            "v_mn_rho",
            format!("rho = {rho} is outside [-1, 1]"),
        ));
    }
    let (nf, mf) = (n as f64, m as f64);
    let shared = n.min(m) as f64;
    let v2 = sigma1 * sigma1 / nf + sigma2 * sigma2 / mf
        - 2.0 * rho * (sigma1 * sigma2) * shared / (mf * nf);
    if v2.is_nan() || v2 <= 0.0 {
        return Err(Error::DegenerateVariance(format!(
            "V^2 = {v2:e} for n = {n}, m = {m}, sigma1 = {sigma1}, sigma2 = {sigma2}, rho = {rho}; \
             the comparison needs rho < 1 or sigma1 != sigma2"
        )));
    }
    Ok(v2.sqrt())
}

/// `R` with its normalizer and inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonStatistic {
    pub r: f64,
    pub v: f64,
    pub n: usize,
    pub m: usize,
    pub log_z1: f64,
    pub log_z2: f64,
    pub params: ModelParams,
}

pub fn r_statistic(
    log_z1: f64,
    n: usize,
    log_z2: f64,
    m: usize,
    params: &ModelParams,
) -> Result<ComparisonStatistic> {
    let v = v_mn_rho(n, m, params.sigma1, params.sigma2, params.rho)?;
    if !(log_z1 >= 0.0 && log_z2 >= 0.0) || !log_z1.is_finite() || !log_z2.is_finite() {
        return Err(Error::domain(
            "r_statistic",
            format!("log populations must be finite and nonnegative, got {log_z1}, {log_z2}"),
        ));
    }
    let r = (log_z1 / n as f64 - log_z2 / m as f64 - (params.mu1 - params.mu2)) / v;
    Ok(ComparisonStatistic {
        r,
        v,
        n,
        m,
        log_z1,
        log_z2,
        params: *params,
    })
}

/// `(ln Z − nμ)/(σ√n)`, the one-process statistic and the `m → ∞` limit of `R`.
pub fn single_process_statistic(log_z: f64, n: usize, mu: f64, sigma: f64) -> Result<f64> {
    if n == 0 || sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::domain(
            "single_process_statistic",
            format!("need n >= 1 and sigma > 0, got n = {n}, sigma = {sigma}"),
        ));
    }
    let nf = n as f64;
    Ok((log_z - nf * mu) / (sigma * nf.sqrt()))
}

/// Exact split of `R` into environment and martingale parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    /// `Σ η_i` over the `n + m` centered environment terms.
    pub eta_sum: f64,
    /// `ln W₁,ₙ / (nV)`.
    pub w1_term: f64,
    /// `ln W₂,ₘ / (mV)`.
    pub w2_term: f64,
    /// `R` computed directly from the log-populations.
    pub r: f64,
}

impl Decomposition {
    pub fn reconstructed(&self) -> f64 {
        self.eta_sum + self.w1_term - self.w2_term
    }

    /// `|R − reconstruction| / max(1, |R|)`.
    pub fn relative_error(&self) -> f64 {
        (self.r - self.reconstructed()).abs() / self.r.abs().max(1.0)
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Splits `R` for a simulated pair into
/// `Σ η_i + ln W₁,ₙ/(nV) − ln W₂,ₘ/(mV)` with
/// `η_i = (M₁,ᵢ₋₁ − μ₁)/(nV)` for `i ≤ n` and `η_{n+j} = −(M₂,ⱼ₋₁ − μ₂)/(mV)`.
pub fn decompose(pair: &PairedTrajectory, params: &ModelParams) -> Result<Decomposition> {
    let (n, m) = (pair.traj1.n, pair.traj2.n);
    if pair.traj1.path.len() != n || pair.traj2.path.len() != m {
        return Err(Error::domain(
            "decompose",
            "trajectory paths do not match their horizons",
        ));
    }
    let stat = r_statistic(pair.traj1.log_z, n, pair.traj2.log_z, m, params)?;
    let nv = n as f64 * stat.v;
    let mv = m as f64 * stat.v;
    let etas1 = pair.traj1.log_mean_path().map(|x| (x - params.mu1) / nv);
    let etas2 = pair.traj2.log_mean_path().map(|x| -(x - params.mu2) / mv);
    Ok(Decomposition {
        eta_sum: compensated_sum(etas1.chain(etas2)),
        w1_term: pair.traj1.log_w / nv,
        w2_term: pair.traj2.log_w / mv,
        r: stat.r,
    })
}

/// `Σ E Yᵢ²` for the independent blocks `Yᵢ = η_i + η_{n+i}` (`i ≤ m∧n`) and
/// the unpaired remainder; equals 1 whenever `V > 0`.
pub fn normalized_variance(n: usize, m: usize, params: &ModelParams) -> Result<f64> {
    let v = v_mn_rho(n, m, params.sigma1, params.sigma2, params.rho)?;
    let a = params.sigma1 / (n as f64 * v);
    let b = params.sigma2 / (m as f64 * v);
    let paired = a * a + b * b - 2.0 * params.rho * a * b;
    let terms = (0..n.max(m)).map(|i| match (i < n, i < m) {
        (true, true) => paired,
        (true, false) => a * a,
        (false, true) => b * b,
        (false, false) => unreachable!(),
    });
    Ok(compensated_sum(terms))
}

/// Quadrature values of `μ`, `σ` for both families and of `ρ` for the pair.
pub fn model_params(cfg: &SimConfig, quad_order: usize) -> Result<ModelParams> {
    let p1 = env_moments(&cfg.family1, quad_order)?;
    let p2 = env_moments(&cfg.family2, quad_order)?;
    let corr = pair_correlation(&cfg.family1, &cfg.family2, cfg.latent_r, quad_order)?;
    Ok(ModelParams {
        mu1: p1.mu,
        mu2: p2.mu,
        sigma1: p1.sigma,
        sigma2: p2.sigma,
        rho: corr.rho,
    })
}
