//! Gauss–Hermite rules for expectations of functions of a standard normal.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

/// Highest order for which the Hermite recurrence stays within `f64` range.
pub const MAX_ORDER: usize = 512;

/// A Gauss–Hermite rule rescaled to the standard normal: `E f(G) ≈ Σ wᵢ f(xᵢ)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds the rule with `order` nodes. Panics if `order` is zero or
    /// exceeds [`MAX_ORDER`].
    pub fn new(order: usize) -> Self {
        assert!(
            (1..=MAX_ORDER).contains(&order),
            "Gauss-Hermite order {order} out of range"
        );
        let (t, w) = hermite_roots(order);
        let scale = 1.0 / PI.sqrt();
        GaussHermite {
            nodes: t.iter().map(|t| t * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|w| w * scale).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Roots and weights of the physicists' Hermite polynomial `H_n` for the
/// weight `e^{−t²}`. Eigenvalues of the Jacobi matrix give the starting
/// points; Newton steps on the orthonormal recurrence polish each root and
/// yield its weight.
fn hermite_roots(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
    let nf = n as f64;
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = SymmetricEigen::new(jacobi)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    guesses.sort_by(|a, b| b.total_cmp(a));

    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = guesses[i];
        let mut pp = 0.0;
        for _ in 0..20 {
            let (mut p1, mut p2) = (PIM4, 0.0_f64);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[half - 1] = 0.0;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments_are_exact() {
        for &order in &[8usize, 9, 32, 64, 128, 256, 512] {
            let q = GaussHermite::new(order);
            let total: f64 = q.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-13, "order {order}: {total}");
            assert!(q.expect(|x| x).abs() < 1e-12);
            assert!((q.expect(|x| x * x) - 1.0).abs() < 1e-12, "order {order}");
            assert!((q.expect(|x| x.powi(4)) - 3.0).abs() < 1e-11);
            assert!((q.expect(|x| x.powi(6)) - 15.0).abs() < 1e-10);
        }
    }

    #[test]
    fn nodes_are_sorted_and_distinct() {
        for &order in &[10usize, 64, 257, 512] {
            let q = GaussHermite::new(order);
            for pair in q.nodes().windows(2) {
                assert!(pair[0] > pair[1], "order {order}");
            }
        }
    }

    #[test]
    fn smooth_expectations() {
        // E cos(G) = e^{-1/2}, E e^{G} = e^{1/2}.
        let q = GaussHermite::new(64);
        assert!((q.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-14);
        assert!((q.expect(f64::exp) - 0.5f64.exp()).abs() < 1e-13);
    }
}
