//! Random environments and their offspring laws.
//!
//! An environment is driven by a latent standard normal `g`. The linear
//! predictor `z = a + b·g` selects one offspring law from a parametric
//! family. Every built-in family puts all its mass on `{1, 2, ...}`, so each
//! individual has at least one child, the conditional mean satisfies `m ≥ 1`
//! and `M = ln m ≥ 0`. The link maps below are a modeling choice:
//!
//! | family              | offspring `X`               | parameter             | mean `m`      |
//! |---------------------|-----------------------------|-----------------------|---------------|
//! | `two_point`         | `1` or `2`, `P(X=2)=θ`      | `θ = sigmoid(z)`      | `1 + θ`       |
//! | `shifted_poisson`   | `1 + Poisson(λ)`            | `λ = e^z`             | `1 + λ`       |
//! | `shifted_geometric` | `1 + Geometric(q)` failures | `q = 1/(1 + e^z)`     | `1/q = 1+e^z` |
//!
//! All three maps make `M` increasing in `g`, so a positive latent
//! correlation always yields a positive correlation of the log-means.
//!
//! Each family admits an exact sampler for the sum of `k` independent
//! offspring counts: `k + Binomial(k, θ)`, `k + Poisson(kλ)` and
//! `k + NegativeBinomial(k, q)` respectively.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::RngCore;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{GaussHermite, MAX_ORDER};

/// Default Gauss–Hermite order for moment computations.
pub const DEFAULT_QUAD_ORDER: usize = 64;

/// Quadrature results are accepted once halving the order moves them by
/// less than this.
pub const QUAD_TOLERANCE: f64 = 1e-10;

/// Largest count a Poisson sampler returns as an exact integer.
const EXACT_FLOAT_LIMIT: f64 = 4_503_599_627_370_496.0; // 2^52

/// Result of sampling a sum of offspring counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OffspringSum {
    /// The sum as an exact integer.
    Exact(u64),
    /// The sum exceeded the exactly representable range; only its size is known.
    Approx(f64),
}

impl OffspringSum {
    pub fn as_f64(self) -> f64 {
        match self {
            OffspringSum::Exact(k) => k as f64,
            OffspringSum::Approx(v) => v,
        }
    }
}

/// One parametric offspring family.
pub trait OffspringLaw: Send + Sync {
    /// Registry key, also used in configuration files.
    fn name(&self) -> &'static str;

    /// Maps the linear predictor `z` to `(parameter, conditional mean)`.
    fn link(&self, z: f64) -> (f64, f64);

    /// Draws `X₁ + … + X_k` for iid offspring counts under `param`.
    fn sample_sum(&self, param: f64, k: u64, rng: &mut dyn RngCore) -> OffspringSum;

    /// Largest `δ ∈ (0, 1]` with `E M^{2+δ} < ∞`.
    fn moment_delta(&self) -> f64 {
        1.0
    }

    /// Why the moment conditions on `M` and `Z₁/m` hold for this family.
    fn moment_conditions(&self) -> &'static str;
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn poisson_count(mean: f64, rng: &mut dyn RngCore) -> OffspringSum {
    if mean <= 0.0 {
        return OffspringSum::Exact(0);
    }
    if mean > EXACT_FLOAT_LIMIT {
        // Relative spread 1/sqrt(mean) < 2e-8; the sum is far beyond any cap.
        return OffspringSum::Approx(mean);
    }
    let draw: f64 = Poisson::new(mean)
        .expect("finite positive Poisson mean")
        .sample(rng);
    if draw > EXACT_FLOAT_LIMIT {
        OffspringSum::Approx(draw)
    } else {
        OffspringSum::Exact(draw as u64)
    }
}

fn add_base(k: u64, extra: OffspringSum) -> OffspringSum {
    match extra {
        OffspringSum::Exact(e) => match k.checked_add(e) {
            Some(total) => OffspringSum::Exact(total),
            None => OffspringSum::Approx(k as f64 + e as f64),
        },
        OffspringSum::Approx(v) => OffspringSum::Approx(k as f64 + v),
    }
}

/// Offspring in `{1, 2}` with `P(X = 2) = sigmoid(z)`.
#[derive(Debug, Default)]
pub struct TwoPoint;

impl OffspringLaw for TwoPoint {
    fn name(&self) -> &'static str {
        "two_point"
    }

    #[inline]
    fn link(&self, z: f64) -> (f64, f64) {
        let theta = sigmoid(z);
        (theta, 1.0 + theta)
    }

    fn sample_sum(&self, theta: f64, k: u64, rng: &mut dyn RngCore) -> OffspringSum {
        let extra = if theta <= 0.0 {
            0
        } else if theta >= 1.0 {
            k
        } else {
            Binomial::new(k, theta)
                .expect("theta in (0, 1)")
                .sample(rng)
        };
        add_base(k, OffspringSum::Exact(extra))
    }

    fn moment_conditions(&self) -> &'static str {
        "M = ln(1 + theta) lies in [0, ln 2] and X <= 2, so M and Z_1/m have moments of every order"
    }
}

/// Offspring `1 + Poisson(λ)` with `λ = e^z`.
#[derive(Debug, Default)]
pub struct ShiftedPoisson;

impl OffspringLaw for ShiftedPoisson {
    fn name(&self) -> &'static str {
        "shifted_poisson"
    }

    #[inline]
    fn link(&self, z: f64) -> (f64, f64) {
        let lambda = z.exp();
        (lambda, 1.0 + lambda)
    }

    fn sample_sum(&self, lambda: f64, k: u64, rng: &mut dyn RngCore) -> OffspringSum {
        add_base(k, poisson_count(lambda * k as f64, rng))
    }

    fn moment_conditions(&self) -> &'static str {
        "M = softplus(a + bG) grows linearly in a Gaussian, and given the environment Z_1/m is a scaled Poisson, so both have all moments"
    }
}

/// Offspring `1 + Geometric(q)` counting failures, with `q = 1/(1 + e^z)`.
#[derive(Debug, Default)]
pub struct ShiftedGeometric;

impl OffspringLaw for ShiftedGeometric {
    fn name(&self) -> &'static str {
        "shifted_geometric"
    }

    #[inline]
    fn link(&self, z: f64) -> (f64, f64) {
        let mean = 1.0 + z.exp();
        (1.0 / mean, mean)
    }

    fn sample_sum(&self, q: f64, k: u64, rng: &mut dyn RngCore) -> OffspringSum {
        if q >= 1.0 {
            return OffspringSum::Exact(k);
        }
        // NegativeBinomial(k, q) as a gamma-mixed Poisson.
        let scale = (1.0 - q) / q;
        let rate: f64 = Gamma::new(k as f64, scale)
            .expect("positive gamma shape and scale")
            .sample(rng);
        add_base(k, poisson_count(rate, rng))
    }

    fn moment_conditions(&self) -> &'static str {
        "M = softplus(a + bG) has all moments, and given the environment Z_1/m is a scaled geometric with exponential moments"
    }
}

/// Offspring families addressable by name.
#[derive(Clone, Default)]
pub struct LawRegistry {
    laws: BTreeMap<&'static str, Arc<dyn OffspringLaw>>,
}

impl LawRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut registry = Self::new();
        registry.register(Arc::new(TwoPoint));
        registry.register(Arc::new(ShiftedPoisson));
        registry.register(Arc::new(ShiftedGeometric));
        registry
    }

    pub fn register(&mut self, law: Arc<dyn OffspringLaw>) {
        self.laws.insert(law.name(), law);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn OffspringLaw>> {
        self.laws.get(name).cloned().ok_or_else(|| Error::Unknown {
            what: "offspring family",
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.laws.keys().copied().collect()
    }
}

/// The process-wide registry of built-in families.
pub fn builtin_laws() -> &'static LawRegistry {
    static REGISTRY: OnceLock<LawRegistry> = OnceLock::new();
    REGISTRY.get_or_init(LawRegistry::builtin)
}

/// A family of environments: an offspring law plus the latent link `z = a + b·g`.
#[derive(Clone)]
pub struct EnvironmentFamily {
    law: Arc<dyn OffspringLaw>,
    a: f64,
    b: f64,
}

impl fmt::Debug for EnvironmentFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvironmentFamily")
            .field("kind", &self.law.name())
            .field("a", &self.a)
            .field("b", &self.b)
            .finish()
    }
}

impl PartialEq for EnvironmentFamily {
    fn eq(&self, other: &Self) -> bool {
        self.kind() == other.kind() && self.a == other.a && self.b == other.b
    }
}

impl EnvironmentFamily {
    /// A nondegenerate family from the built-in registry.
    pub fn new(kind: &str, a: f64, b: f64) -> Result<Self> {
        Self::with_law(builtin_laws().get(kind)?, a, b)
    }

    pub fn with_law(law: Arc<dyn OffspringLaw>, a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::domain(
                "environment family",
                format!("a = {a} and b = {b} must be finite"),
            ));
        }
        if b < 0.0 {
            return Err(Error::domain(
                "environment family",
                format!("scale b = {b} must be nonnegative"),
            ));
        }
        if b == 0.0 {
            return Err(Error::DegenerateEnvironment(format!(
                "{} with b = 0 has a constant environment (sigma = 0)",
                law.name()
            )));
        }
        Ok(EnvironmentFamily { law, a, b })
    }

    /// A constant environment (`b = 0`). Only meaningful for checks that
    /// need a deterministic mean path; moment computations reject it.
    pub fn degenerate(kind: &str, a: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::domain("environment family", "a must be finite"));
        }
        Ok(EnvironmentFamily {
            law: builtin_laws().get(kind)?,
            a,
            b: 0.0,
        })
    }

    pub fn kind(&self) -> &'static str {
        self.law.name()
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn law(&self) -> &dyn OffspringLaw {
        self.law.as_ref()
    }

    pub fn is_degenerate(&self) -> bool {
        self.b == 0.0
    }

    /// `M` as a function of the latent normal.
    #[inline]
    pub fn log_mean(&self, g: f64) -> f64 {
        self.law.link(self.a + self.b * g).1.ln()
    }

    /// Deterministic map from the latent draw to one generation's environment.
    #[inline]
    pub fn sample_environment(&self, g: f64) -> EnvRealization {
        let (param, mean) = self.law.link(self.a + self.b * g);
        EnvRealization {
            link: g,
            param,
            mean,
            log_mean: mean.ln(),
        }
    }

    /// Exact draw of the total offspring of `k` individuals.
    pub fn sample_offspring_sum(
        &self,
        env: &EnvRealization,
        k: u64,
        rng: &mut dyn RngCore,
    ) -> Result<u64> {
        match self.offspring_sum(env, k, rng)? {
            OffspringSum::Exact(total) => Ok(total),
            OffspringSum::Approx(v) => Err(Error::domain(
                "sample_offspring_sum",
                format!("offspring total {v:e} exceeds the exact integer range"),
            )),
        }
    }

    pub(crate) fn offspring_sum(
        &self,
        env: &EnvRealization,
        k: u64,
        rng: &mut dyn RngCore,
    ) -> Result<OffspringSum> {
        if k == 0 {
            return Err(Error::domain(
                "sample_offspring_sum",
                "k = 0: an empty generation cannot occur when every individual has a child",
            ));
        }
        Ok(self.law.sample_sum(env.param, k, rng))
    }
}

/// One generation's environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvRealization {
    /// The latent standard normal draw.
    pub link: f64,
    /// θ, λ or q depending on the family.
    pub param: f64,
    /// Conditional mean offspring count, at least 1.
    pub mean: f64,
    /// `ln(mean)`.
    pub log_mean: f64,
}

/// Mean and standard deviation of `M = ln m` under the environment law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalityParams {
    pub mu: f64,
    pub sigma: f64,
    pub quad_order: usize,
    pub quad_error_estimate: f64,
}

/// Correlation of the two log-means induced by a Gaussian copula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairCorrelation {
    pub latent_r: f64,
    pub rho: f64,
}

fn moments_at(family: &EnvironmentFamily, order: usize) -> (f64, f64) {
    let rule = GaussHermite::new(order);
    let values: Vec<f64> = rule.nodes().iter().map(|&x| family.log_mean(x)).collect();
    let mu: f64 = rule.weights().iter().zip(&values).map(|(w, v)| w * v).sum();
    let var: f64 = rule
        .weights()
        .iter()
        .zip(&values)
        .map(|(w, v)| w * (v - mu) * (v - mu))
        .sum();
    (mu, var.max(0.0).sqrt())
}

fn check_order(quad_order: usize) -> Result<()> {
    if !(8..=MAX_ORDER).contains(&quad_order) {
        return Err(Error::domain(
            "quadrature",
            format!("quad_order {quad_order} outside [8, {MAX_ORDER}]"),
        ));
    }
    Ok(())
}

fn check_nondegenerate(family: &EnvironmentFamily) -> Result<()> {
    if family.is_degenerate() {
        return Err(Error::DegenerateEnvironment(format!(
            "{}(a = {}, b = 0) has sigma = 0",
            family.kind(),
            family.a()
        )));
    }
    Ok(())
}

/// μ = E M and σ = sd M by Gauss–Hermite quadrature.
///
/// The order starts at `quad_order` and doubles until the change from half
/// the order drops below [`QUAD_TOLERANCE`].
pub fn env_moments(family: &EnvironmentFamily, quad_order: usize) -> Result<CriticalityParams> {
    check_nondegenerate(family)?;
    check_order(quad_order)?;
    let mut order = quad_order;
    let mut coarse = moments_at(family, order / 2);
    loop {
        let fine = moments_at(family, order);
        let err = (fine.0 - coarse.0).abs().max((fine.1 - coarse.1).abs());
        if err <= QUAD_TOLERANCE {
            if fine.1 <= 0.0 {
                return Err(Error::DegenerateEnvironment(format!(
                    "{}(a = {}, b = {}) has numerically zero sigma",
                    family.kind(),
                    family.a(),
                    family.b()
                )));
            }
            return Ok(CriticalityParams {
                mu: fine.0,
                sigma: fine.1,
                quad_order: order,
                quad_error_estimate: err,
            });
        }
        if order * 2 > MAX_ORDER {
            return Err(Error::Precision {
                order,
                estimate: err,
            });
        }
        coarse = fine;
        order *= 2;
    }
}

fn covariance_at(
    f1: &EnvironmentFamily,
    f2: &EnvironmentFamily,
    latent_r: f64,
    order: usize,
) -> (f64, f64, f64) {
    let rule = GaussHermite::new(order);
    let (x, w) = (rule.nodes(), rule.weights());
    let s = (1.0 - latent_r * latent_r).max(0.0).sqrt();
    let m1: Vec<f64> = x.iter().map(|&g| f1.log_mean(g)).collect();
    let mu1: f64 = w.iter().zip(&m1).map(|(w, v)| w * v).sum();
    let mu2: f64 = x.iter().zip(w).map(|(&g, w)| w * f2.log_mean(g)).sum();
    let mut var1 = 0.0;
    let mut var2 = 0.0;
    let mut cov = 0.0;
    for (i, (&gi, &wi)) in x.iter().zip(w).enumerate() {
        let d1 = m1[i] - mu1;
        var1 += wi * d1 * d1;
        let d2 = f2.log_mean(gi) - mu2;
        var2 += wi * d2 * d2;
        let inner: f64 = x
            .iter()
            .zip(w)
            .map(|(&gj, &wj)| wj * (f2.log_mean(latent_r * gi + s * gj) - mu2))
            .sum();
        cov += wi * d1 * inner;
    }
    (cov, var1, var2)
}

/// ρ = Corr(M₁(G₁), M₂(G₂)) for latent normals with correlation `latent_r`.
pub fn pair_correlation(
    f1: &EnvironmentFamily,
    f2: &EnvironmentFamily,
    latent_r: f64,
    quad_order: usize,
) -> Result<PairCorrelation> {
    if !(-1.0..=1.0).contains(&latent_r) {
        return Err(Error::domain(
            "pair_correlation",
            format!("latent_r = {latent_r} is outside [-1, 1]"),
        ));
    }
    check_nondegenerate(f1)?;
    check_nondegenerate(f2)?;
    check_order(quad_order)?;
    if latent_r == 0.0 {
        return Ok(PairCorrelation { latent_r, rho: 0.0 });
    }
    let corr = |order| {
        let (cov, v1, v2) = covariance_at(f1, f2, latent_r, order);
        (cov / (v1 * v2).sqrt()).clamp(-1.0, 1.0)
    };
    let mut order = quad_order;
    let mut coarse = corr(order / 2);
    loop {
        let fine = corr(order);
        let err = (fine - coarse).abs();
        if err <= QUAD_TOLERANCE {
            return Ok(PairCorrelation {
                latent_r,
                rho: fine,
            });
        }
        if order * 2 > MAX_ORDER {
            return Err(Error::Precision {
                order,
                estimate: err,
            });
        }
        coarse = fine;
        order *= 2;
    }
}
