//! Distributional diagnostics of a sample against the standard normal law.
//!
//! Every diagnostic works on a sorted [`SampleSet`] and is a single pass (or a
//! binary search per grid point) over the data.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{
    ci_mu_diff, ci_sigma_sq, test_mu_equal, IntervalMethod, Observation, Scales,
};
use crate::rng::{stream_rng, Stream};
use crate::sim::{par_map_indices, simulate_pair_outcome, SimConfig};
use crate::special::{normal_cdf, normal_pdf, normal_sf, Probability};
use crate::statistic::{model_params, r_statistic, ModelParams};

pub const MIN_SAMPLES: usize = 100;

/// Tail grid points need at least this many expected exceedances.
pub const MIN_TAIL_COUNT: f64 = 50.0;

/// Grid spacing used by the Wasserstein-1 trapezoid rule.
const W1_GRID_STEP: f64 = 0.01;

/// A sorted sample of a statistic that should be close to standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub cfg_hash: String,
}

impl SampleSet {
    pub fn new(
        mut values: Vec<f64>,
        n: usize,
        m: usize,
        cfg_hash: impl Into<String>,
    ) -> Result<Self> {
        if values.len() < MIN_SAMPLES {
            return Err(Error::InsufficientSamples {
                needed: MIN_SAMPLES,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(
                "sample set",
                format!("non-finite value {bad}"),
            ));
        }
        values.sort_by(f64::total_cmp);
        Ok(SampleSet {
            values,
            n,
            m,
            cfg_hash: cfg_hash.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `F̂(x) = #{v ≤ x}/N`.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    /// `#{v ≥ x}`.
    pub fn count_at_least(&self, x: f64) -> usize {
        self.len() - self.values.partition_point(|&v| v < x)
    }

    /// `#{v ≤ x}`.
    pub fn count_at_most(&self, x: f64) -> usize {
        self.values.partition_point(|&v| v <= x)
    }

    /// The sample of `−v`.
    pub fn negated(&self) -> SampleSet {
        SampleSet {
            values: self.values.iter().rev().map(|v| -v).collect(),
            n: self.n,
            m: self.m,
            cfg_hash: self.cfg_hash.clone(),
        }
    }

    pub fn mean_and_sd(&self) -> (f64, f64) {
        let n = self.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }
}

/// `sup_x |F̂(x) − Φ(x)|`.
pub fn ks_distance(s: &SampleSet) -> f64 {
    let n = s.len() as f64;
    s.values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let phi = normal_cdf(x);
            ((i + 1) as f64 / n - phi)
                .abs()
                .max((i as f64 / n - phi).abs())
        })
        .fold(0.0, f64::max)
}

/// Bounded-difference scale of the KS statistic: one sample moves it by at
/// most `1/N`, so its standard deviation is at most `1/(2√N)`.
pub fn ks_standard_error(len: usize) -> f64 {
    0.5 / (len as f64).sqrt()
}

/// `|F̂(x) − Φ(x)|·(1 + |x|^{1+δ′})` on `x = −5, −4.9, …, 5`.
pub fn nonuniform_profile(s: &SampleSet, delta_prime: f64) -> Result<Vec<(f64, f64)>> {
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::domain(
            "nonuniform_profile",
            format!("delta' = {delta_prime} is outside (0, 1)"),
        ));
    }
    Ok((-50..=50)
        .map(|i| {
            let x = i as f64 / 10.0;
            let gap = (s.ecdf(x) - normal_cdf(x)).abs();
            (x, gap * (1.0 + x.abs().powf(1.0 + delta_prime)))
        })
        .collect())
}

pub fn profile_max(profile: &[(f64, f64)]) -> f64 {
    profile.iter().map(|p| p.1).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub x: f64,
    /// `P̂(R ≥ x)/(1 − Φ(x))`.
    pub upper: f64,
    /// `P̂(R ≤ −x)/Φ(−x)`.
    pub lower: f64,
    /// `N·(1 − Φ(x))`.
    pub expected_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub points: Vec<TailPoint>,
    /// Grid points dropped because too few exceedances were expected.
    pub excluded: Vec<f64>,
}

/// Ratios of empirical to normal tails on `x_grid` (nonnegative points).
pub fn tail_ratio_curve(s: &SampleSet, x_grid: &[f64]) -> Result<TailCurve> {
    let n = s.len() as f64;
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for &x in x_grid {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::domain(
                "tail_ratio_curve",
                format!("grid point {x} must be finite and nonnegative"),
            ));
        }
        let tail = normal_sf(x);
        let expected_count = n * tail;
        if expected_count < MIN_TAIL_COUNT {
            excluded.push(x);
            continue;
        }
        points.push(TailPoint {
            x,
            upper: s.count_at_least(x) as f64 / n / tail,
            lower: s.count_at_most(-x) as f64 / n / tail,
            expected_count,
        });
    }
    Ok(TailCurve { points, excluded })
}

/// Three binomial standard errors of a tail ratio at expected count `N·p`.
pub fn tail_ratio_envelope(len: usize, x: f64) -> f64 {
    let p = normal_sf(x);
    3.0 * ((1.0 - p) / (len as f64 * p)).sqrt()
}

/// `∫|F̂ − Φ| dx`: trapezoid rule over the merged set of sample points and a
/// 0.01 grid on `[min − 1, max + 1]`, plus the exact normal tails outside.
pub fn wasserstein1(s: &SampleSet) -> f64 {
    let v = s.values();
    let n = v.len() as f64;
    let lo = v[0] - 1.0;
    let hi = v[v.len() - 1] + 1.0;

    // Outside the range F̂ is 0 on the left and 1 on the right.
    let left_tail = lo * normal_cdf(lo) + normal_pdf(lo);
    let right_tail = normal_pdf(hi) - hi * normal_sf(hi);

    let steps = ((hi - lo) / W1_GRID_STEP).ceil() as usize;
    let mut total = 0.0;
    let mut below = 0usize; // samples <= current knot
    let mut x0 = lo;
    let mut gap0 = -normal_cdf(lo);
    let mut grid_i = 1usize;
    let mut sample_i = 0usize;
    loop {
        let grid_x = if grid_i <= steps {
            (lo + grid_i as f64 * W1_GRID_STEP).min(hi)
        } else {
            f64::INFINITY
        };
        let sample_x = v.get(sample_i).copied().unwrap_or(f64::INFINITY);
        let x1 = grid_x.min(sample_x);
        if !x1.is_finite() {
            break;
        }
        let level = below as f64 / n;
        let phi1 = normal_cdf(x1);
        let gap1 = level - phi1;
        total += segment(x1 - x0, gap0, gap1);
        if sample_x <= grid_x {
            while sample_i < v.len() && v[sample_i] == x1 {
                sample_i += 1;
                below += 1;
            }
        }
        if grid_x <= sample_x {
            grid_i += 1;
        }
        x0 = x1;
        gap0 = below as f64 / n - phi1;
    }
    total + left_tail + right_tail
}

/// Trapezoid for `|g|` on a segment where `g` is linear-ish, splitting at a
/// sign change.
fn segment(h: f64, g0: f64, g1: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    let (a0, a1) = (g0.abs(), g1.abs());
    if g0 * g1 < 0.0 {
        0.5 * h * (a0 * a0 + a1 * a1) / (a0 + a1)
    } else {
        0.5 * h * (a0 + a1)
    }
}

/// McDiarmid scale of the Wasserstein-1 estimate: one sample moves it by at
/// most `|Δx|/N`, giving roughly `sd/√N`.
pub fn w1_standard_error(s: &SampleSet) -> f64 {
    s.mean_and_sd().1 / (s.len() as f64).sqrt()
}

/// Asymptotic Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test on sorted inputs: `(D, p-value)` with
/// Stephens' small-sample correction of the asymptotic law.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let root = ne.sqrt();
    (d, kolmogorov_sf((root + 0.12 + 0.11 / root) * d))
}

/// Summary of all distributional diagnostics for one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub samples: usize,
    pub ks: f64,
    pub nonuniform_profile: Vec<(f64, f64)>,
    pub nonuniform_max: f64,
    pub tail_ratios: Vec<TailPoint>,
    pub w1: f64,
    pub coverage: Option<f64>,
    pub delta_prime: f64,
}

pub fn verification_report(
    s: &SampleSet,
    delta_prime: f64,
    tail_grid: &[f64],
    coverage: Option<f64>,
) -> Result<VerificationReport> {
    let profile = nonuniform_profile(s, delta_prime)?;
    Ok(VerificationReport {
        samples: s.len(),
        ks: ks_distance(s),
        nonuniform_max: profile_max(&profile),
        nonuniform_profile: profile,
        tail_ratios: tail_ratio_curve(s, tail_grid)?.points,
        w1: wasserstein1(s),
        coverage,
        delta_prime,
    })
}

/// `R` for every replication of `cfg` under the given parameters.
pub fn comparison_samples(
    cfg: &SimConfig,
    params: &ModelParams,
    workers: usize,
) -> Result<Vec<f64>> {
    par_map_indices(cfg.replications, workers, |i| {
        let o = simulate_pair_outcome(cfg, i)?;
        Ok(r_statistic(o.log_z1, cfg.n, o.log_z2, cfg.m, params)?.r)
    })
}

/// `count` standard normal draws, reproducible per index like the simulator.
pub fn normal_samples(count: usize, master_seed: u64, workers: usize) -> Result<Vec<f64>> {
    use rand::Rng;
    par_map_indices(count, workers, |i| {
        let mut rng = stream_rng(crate::rng::derive_seed(master_seed, i), Stream::Normals);
        Ok(rng.sample::<f64, _>(rand_distr::StandardNormal))
    })
}

/// Outcome of a repeated-interval experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageResult {
    /// Fraction of replications with the event of interest.
    pub rate: f64,
    /// Binomial standard error at the nominal rate.
    pub nominal_se: f64,
    pub replications: usize,
}

impl CoverageResult {
    fn from_hits(hits: usize, replications: usize, nominal: f64) -> Self {
        CoverageResult {
            rate: hits as f64 / replications as f64,
            nominal_se: (nominal * (1.0 - nominal) / replications as f64).sqrt(),
            replications,
        }
    }

    /// Acceptance band half-width around the nominal rate: 0.01 or three
    /// standard errors, whichever is larger.
    pub fn band(&self) -> f64 {
        (3.0 * self.nominal_se).max(0.01)
    }
}

/// Fraction of replications whose interval covers the quadrature truth.
///
/// For [`IntervalMethod::SigmaSq`] the two families must coincide and the
/// latent correlation must be zero, so that process 2 is an independent copy.
pub fn coverage_study(
    cfg: &SimConfig,
    kappa: Probability,
    which: IntervalMethod,
    quad_order: usize,
    workers: usize,
) -> Result<CoverageResult> {
    let params = model_params(cfg, quad_order)?;
    let hits: Vec<bool> = match which {
        IntervalMethod::MuDiff => {
            let truth = params.mu1 - params.mu2;
            let scales = Scales {
                sigma1: params.sigma1,
                sigma2: params.sigma2,
                rho: params.rho,
            };
            par_map_indices(cfg.replications, workers, |i| {
                let o = simulate_pair_outcome(cfg, i)?;
                let obs = Observation {
                    log_z1: o.log_z1,
                    n: cfg.n,
                    log_z2: o.log_z2,
                    m: cfg.m,
                };
                Ok(ci_mu_diff(&obs, &scales, kappa)?.contains(truth))
            })?
        }
        IntervalMethod::SigmaSq => {
            if cfg.family1 != cfg.family2 || cfg.latent_r != 0.0 || cfg.n != cfg.m {
                return Err(Error::Refused(
                    "sigma^2 coverage needs independent copies: identical families, latent_r = 0, n = m"
                        .into(),
                ));
            }
            let truth = params.sigma1 * params.sigma1;
            par_map_indices(cfg.replications, workers, |i| {
                let o = simulate_pair_outcome(cfg, i)?;
                Ok(ci_sigma_sq(o.log_z1, o.log_z2, cfg.n, kappa, true)?.contains(truth))
            })?
        }
    };
    let covered = hits.iter().filter(|&&h| h).count();
    Ok(CoverageResult::from_hits(
        covered,
        hits.len(),
        1.0 - kappa.get(),
    ))
}

/// Rejection frequency of the test of `μ₁ = μ₂` at `level`; its size when the
/// two families have equal `μ`.
pub fn size_study(
    cfg: &SimConfig,
    level: Probability,
    quad_order: usize,
    workers: usize,
) -> Result<CoverageResult> {
    let params = model_params(cfg, quad_order)?;
    let scales = Scales {
        sigma1: params.sigma1,
        sigma2: params.sigma2,
        rho: params.rho,
    };
    let rejections: Vec<bool> = par_map_indices(cfg.replications, workers, |i| {
        let o = simulate_pair_outcome(cfg, i)?;
        let obs = Observation {
            log_z1: o.log_z1,
            n: cfg.n,
            log_z2: o.log_z2,
            m: cfg.m,
        };
        Ok(test_mu_equal(&obs, &scales, level)?.decision)
    })?;
    let rejected = rejections.iter().filter(|&&r| r).count();
    Ok(CoverageResult::from_hits(
        rejected,
        rejections.len(),
        level.get(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normals(count: usize, seed: u64) -> SampleSet {
        SampleSet::new(normal_samples(count, seed, 1).unwrap(), 1, 1, "test").unwrap()
    }

    #[test]
    fn sample_set_validation() {
        assert!(matches!(
            SampleSet::new(vec![0.0; 99], 1, 1, ""),
            Err(Error::InsufficientSamples { .. })
        ));
        let mut v = vec![0.0; 200];
        v[3] = f64::NAN;
        assert!(SampleSet::new(v, 1, 1, "").is_err());
        let s = SampleSet::new((0..200).rev().map(f64::from).collect(), 1, 1, "").unwrap();
        assert!(s.values().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s.ecdf(9.5), 10.0 / 200.0);
        assert_eq!(s.count_at_least(190.0), 10);
        assert_eq!(s.count_at_most(-1.0), 0);
    }

    #[test]
    fn ks_boundary_cases() {
        let zeros = SampleSet::new(vec![0.0; 500], 1, 1, "").unwrap();
        assert!((ks_distance(&zeros) - 0.5).abs() < 1e-15);
        let shifted = SampleSet::new(
            normal_samples(1000, 1, 1)
                .unwrap()
                .iter()
                .map(|v| v + 10.0)
                .collect(),
            1,
            1,
            "",
        )
        .unwrap();
        assert!(ks_distance(&shifted) >= 0.99);
    }

    #[test]
    fn ks_self_test_on_normals() {
        let n = 100_000;
        let s = normals(n, 3);
        assert!(ks_distance(&s) <= 1.95 / (n as f64).sqrt());
    }

    #[test]
    fn profile_properties() {
        let s = normals(1_000_000, 4);
        let profile = nonuniform_profile(&s, 0.5).unwrap();
        assert_eq!(profile.len(), 101);
        assert!(profile_max(&profile) <= 0.02);
        let at_zero = profile.iter().find(|p| p.0 == 0.0).unwrap().1;
        assert_eq!(at_zero, (s.ecdf(0.0) - 0.5).abs());
        assert!(nonuniform_profile(&s, 0.0).is_err());
        assert!(nonuniform_profile(&s, 1.0).is_err());
    }

    #[test]
    fn tail_ratios_on_normals() {
        let s = normals(200_000, 5);
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        let curve = tail_ratio_curve(&s, &grid).unwrap();
        // N * (1 - Phi(x)) < 50 beyond x ~ 3.47 for N = 2e5.
        assert!(!curve.excluded.is_empty());
        assert!(curve.excluded.iter().all(|&x| x > 3.4));
        let at_zero = curve.points[0];
        let se0 = tail_ratio_envelope(s.len(), 0.0);
        assert!((at_zero.upper - 1.0).abs() < se0);
        for p in &curve.points {
            let env = tail_ratio_envelope(s.len(), p.x);
            assert!((p.upper - 1.0).abs() < env, "x = {}", p.x);
            assert!((p.lower - 1.0).abs() < env, "x = {}", p.x);
        }
        assert!(tail_ratio_curve(&s, &[-0.5]).is_err());
    }

    #[test]
    fn wasserstein_on_normals_and_shift() {
        let s = normals(1_000_000, 6);
        assert!(wasserstein1(&s) <= 0.01);
        let shifted =
            SampleSet::new(s.values().iter().map(|v| v + 0.5).collect(), 1, 1, "").unwrap();
        assert!((wasserstein1(&shifted) - 0.5).abs() < 0.02);
    }

    #[test]
    fn wasserstein_point_mass() {
        // W1 between a point mass at 0 and N(0,1) is E|G| = sqrt(2/pi).
        let s = SampleSet::new(vec![0.0; 1000], 1, 1, "").unwrap();
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (wasserstein1(&s) - expected).abs() < 1e-5,
            "{}",
            wasserstein1(&s)
        );
    }

    #[test]
    fn negation_mirrors_diagnostics() {
        let s = SampleSet::new(
            normal_samples(20_000, 8, 1)
                .unwrap()
                .iter()
                .map(|v| v * 1.1 + 0.05)
                .collect(),
            1,
            1,
            "",
        )
        .unwrap();
        let neg = s.negated();
        assert!((ks_distance(&s) - ks_distance(&neg)).abs() < 1e-12);
        assert!((wasserstein1(&s) - wasserstein1(&neg)).abs() < 1e-6);
        let grid = [0.0, 0.5, 1.0, 1.5];
        let a = tail_ratio_curve(&s, &grid).unwrap();
        let b = tail_ratio_curve(&neg, &grid).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.upper, q.lower);
            assert_eq!(p.lower, q.upper);
        }
    }

    #[test]
    fn kolmogorov_law() {
        // Known quantiles of the Kolmogorov distribution.
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.949) - 0.001).abs() < 1e-4);
        let a = normals(5_000, 9);
        let b = normals(5_000, 10);
        let (_, p) = two_sample_ks(a.values(), b.values());
        assert!(p > 1e-3);
        let shifted: Vec<f64> = b.values().iter().map(|v| v + 0.3).collect();
        let (d, p) = two_sample_ks(a.values(), &shifted);
        assert!(d > 0.1 && p < 1e-10);
    }
}
