//! Standard normal distribution functions and related quantiles.
//!
//! The CDF is evaluated through the complementary error function from the
//! `libm` crate (a port of the FreeBSD msun routines, accurate to about one
//! ulp), so both tails keep full relative precision. The quantile is found by
//! bisection to a narrow bracket followed by guarded Newton steps.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::domain(
                "probability",
                format!("{value} is outside [0, 1]"),
            ))
        }
    }

    /// Checks the open interval `(0, 1)` required by quantile functions.
    pub fn open(value: f64, op: &'static str) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Probability(value))
        } else {
            Err(Error::domain(op, format!("{value} is outside (0, 1)")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Probability {
        Probability(1.0 - self.0)
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal CDF without argument checks. NaN in, NaN out.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 − Φ(x)` evaluated without cancellation.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    normal_cdf(-x)
}

/// Φ(x) for finite `x`.
pub fn phi_cdf(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::domain("phi_cdf", format!("non-finite argument {x}")));
    }
    Ok(Probability(normal_cdf(x)))
}

/// Φ⁻¹(p) for `p` in the open unit interval.
pub fn phi_quantile(p: Probability) -> Result<f64> {
    let p = Probability::open(p.get(), "phi_quantile")?.get();
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        Ok(lower_quantile(p))
    } else {
        // 1 - p is exact for p >= 0.5.
        Ok(-lower_quantile(1.0 - p))
    }
}

/// Solves Φ(x) = p for p in (0, 0.5]; the root is nonpositive.
fn lower_quantile(p: f64) -> f64 {
    // Φ(-40) underflows to zero, so the bracket holds every positive double.
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    while hi - lo > 1.0 / 64.0 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = normal_cdf(x) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - f / normal_pdf(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-13 || hi - lo <= 1e-13 {
            break;
        }
    }
    x
}

/// The leading terms of the small-`p` expansion of the normal quantile,
/// `−√(ln(1/p²) − ln ln(1/p²) − ln 2π)`.
///
/// Defined only for `0 < p < e⁻¹` with a positive radicand; the radicand
/// vanishes near `p ≈ 0.234`, and everything above that is rejected.
pub fn phi_quantile_asymptotic(p: Probability) -> Result<f64> {
    let p = p.get();
    if !(p > 0.0 && p < (-1.0_f64).exp()) {
        return Err(Error::domain(
            "phi_quantile_asymptotic",
            format!("p = {p} is outside (0, 1/e)"),
        ));
    }
    let l = -2.0 * p.ln();
    let radicand = l - l.ln() - LN_2PI;
    if radicand <= 0.0 {
        return Err(Error::domain(
            "phi_quantile_asymptotic",
            format!(
                "radicand ln(1/p^2) - ln ln(1/p^2) - ln(2 pi) = {radicand} is not positive at p = {p}"
            ),
        ));
    }
    Ok(-radicand.sqrt())
}

/// The `q`-quantile of the chi-squared law with one degree of freedom.
pub fn chi2_quantile_1df(q: Probability) -> Result<f64> {
    let q = Probability::open(q.get(), "chi2_quantile_1df")?.get();
    let z = phi_quantile(Probability((1.0 + q) / 2.0))?;
    Ok(z * z)
}

/// Mills-ratio envelope `φ(x)·√(2π)/(√(2π)(1+x)) ≤ 1 − Φ(x) ≤ φ(x)·√(2π)/(√π(1+x))`.
pub fn normal_tail_bounds(x: f64) -> Result<(f64, f64)> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::domain(
            "normal_tail_bounds",
            format!("x = {x} must be finite and nonnegative"),
        ));
    }
    let e = (-0.5 * x * x).exp();
    let lower = e / (SQRT_2PI * (1.0 + x));
    let upper = e / (PI.sqrt() * (1.0 + x));
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson integration of the normal density; independent of erfc.
    fn oracle_cdf(x: f64) -> f64 {
        fn simpson(a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (normal_pdf(a) + 4.0 * normal_pdf(0.5 * (a + b)) + normal_pdf(b))
        }
        fn adapt(a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let c = 0.5 * (a + b);
            let (l, r) = (simpson(a, c), simpson(c, b));
            if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
                l + r + (l + r - whole) / 15.0
            } else {
                adapt(a, c, l, tol / 2.0, depth - 1) + adapt(c, b, r, tol / 2.0, depth - 1)
            }
        }
        0.5 + adapt(0.0, x, simpson(0.0, x), 1e-14, 50)
    }

    fn oracle_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if oracle_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn prob(p: f64) -> Probability {
        Probability::new(p).unwrap()
    }

    #[test]
    fn cdf_matches_quadrature_oracle() {
        assert_eq!(phi_cdf(0.0).unwrap().get(), 0.5);
        assert!((phi_cdf(1.959964).unwrap().get() - 0.975).abs() < 1e-6);
        for &x in &[-6.0, -3.3, -1.0, -0.2, 0.4, 1.7, 2.5, 5.0] {
            let got = phi_cdf(x).unwrap().get();
            assert!((got - oracle_cdf(x)).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn cdf_reflection() {
        for i in 0..=800 {
            let x = -8.0 + 0.02 * i as f64;
            let sum = normal_cdf(x) + normal_cdf(-x);
            assert!((sum - 1.0).abs() <= 1e-15, "x = {x}");
        }
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(phi_cdf(f64::NAN).is_err());
        assert!(phi_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn quantile_values() {
        assert_eq!(phi_quantile(prob(0.5)).unwrap(), 0.0);
        let z = phi_quantile(prob(0.975)).unwrap();
        assert!((z - oracle_quantile(0.975)).abs() < 1e-9);
        assert!((z - 1.959964).abs() < 1e-6);
        for &p in &[0.3, 0.1, 0.025, 1e-3, 0.25, 0.125] {
            let s = phi_quantile(prob(p)).unwrap() + phi_quantile(prob(1.0 - p)).unwrap();
            assert!(s.abs() < 1e-12, "p = {p}: {s}");
        }
    }

    #[test]
    fn quantile_domain() {
        assert!(phi_quantile(prob(0.0)).is_err());
        assert!(phi_quantile(prob(1.0)).is_err());
        assert!(Probability::new(1.5).is_err());
        assert!(Probability::new(-0.1).is_err());
    }

    #[test]
    fn quantile_round_trip_on_log_grid() {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let p = 10f64.powf(-10.0 + 10.0 * k as f64 / 400.0) * 0.5;
            for &pp in &[p, 1.0 - p] {
                let x = phi_quantile(prob(pp)).unwrap();
                assert!((normal_cdf(x) - pp).abs() <= 1e-12, "p = {pp}");
            }
            let x = phi_quantile(prob(p)).unwrap();
            assert!(x > prev);
            prev = x;
        }
    }

    #[test]
    fn asymptotic_expansion() {
        let v = phi_quantile_asymptotic(prob(0.001)).unwrap();
        assert!((v + 3.0581).abs() < 1e-3, "{v}");
        let exact = phi_quantile(prob(0.001)).unwrap();
        assert!((exact + 3.0902).abs() < 1e-4);

        let p = 1e-8;
        let gap = phi_quantile_asymptotic(prob(p)).unwrap() - phi_quantile(prob(p)).unwrap();
        assert!(gap.abs() < 0.02, "{gap}");

        assert!(phi_quantile_asymptotic(prob((-1.0f64).exp())).is_err());
        assert!(phi_quantile_asymptotic(prob(0.5)).is_err());
        // Below 1/e but above the radicand root.
        assert!(phi_quantile_asymptotic(prob(0.3)).is_err());
        assert!(phi_quantile_asymptotic(prob(0.2)).is_ok());
    }

    #[test]
    fn asymptotic_gap_shrinks_along_ladder() {
        let mut last = f64::INFINITY;
        for k in 3..=12 {
            let p = prob(10f64.powi(-k));
            let gap = (phi_quantile_asymptotic(p).unwrap() - phi_quantile(p).unwrap()).abs();
            assert!(gap < last, "k = {k}");
            last = gap;
        }
    }

    #[test]
    fn chi2_quantiles() {
        let q95 = chi2_quantile_1df(prob(0.95)).unwrap();
        assert!((q95 - oracle_quantile(0.975).powi(2)).abs() < 1e-8);
        assert!((q95 - 3.8415).abs() < 1e-3);
        let q025 = chi2_quantile_1df(prob(0.025)).unwrap();
        assert!((q025 - 0.000982).abs() < 1e-5, "{q025}");
        let mut prev = 0.0;
        for i in 1..100 {
            let q = chi2_quantile_1df(prob(i as f64 / 100.0)).unwrap();
            assert!(q > prev);
            prev = q;
        }
        assert!(chi2_quantile_1df(prob(1.0)).is_err());
    }

    #[test]
    fn tail_bounds() {
        let (lo, hi) = normal_tail_bounds(0.0).unwrap();
        assert!((lo - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((hi - 0.564_189_583_547_756_3).abs() < 1e-15);
        let (lo, hi) = normal_tail_bounds(2.0).unwrap();
        let tail = 1.0 - oracle_cdf(2.0);
        assert!((tail - 0.02275).abs() < 1e-5);
        assert!(lo <= tail && tail <= hi);
        for i in 0..=1000 {
            let x = 0.01 * i as f64;
            let (lo, hi) = normal_tail_bounds(x).unwrap();
            let sf = normal_sf(x);
            assert!(lo <= sf && sf <= hi, "x = {x}");
        }
        assert!(normal_tail_bounds(-0.1).is_err());
        assert!(normal_tail_bounds(f64::NAN).is_err());
    }
}
