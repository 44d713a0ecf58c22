//! Gauss-Hermite rules and cubic-spline sampled curves.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest supported rule; beyond it the Hermite recurrence overflows at the outer nodes.
pub const MAX_ORDER: usize = 256;

/// Nodes and weights for `int f(x) exp(-x^2) dx ~ sum w_i f(x_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-point rule. Nodes come from the eigenvalues of the
    /// Jacobi matrix and are polished by Newton steps on the orthonormal
    /// Hermite recurrence, which also yields the weights without underflow.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_ORDER {
            return Err(Error::Domain(format!(
                "Gauss-Hermite order must be in 1..={MAX_ORDER}, got {n}"
            )));
        }
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut roots: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().cloned().collect();
        roots.sort_by(f64::total_cmp);

        let pim4 = PI.powf(-0.25);
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (i, &guess) in roots.iter().enumerate() {
            let mut z = guess;
            for _ in 0..8 {
                let (p, dp) = hermite_orthonormal(n, z, pim4);
                let next = z - p / dp;
                let done = (next - z).abs() <= 1e-16 * z.abs().max(1.0);
                z = next;
                if done {
                    break;
                }
            }
            if n % 2 == 1 && i == n / 2 {
                z = 0.0;
            }
            let (_, dp) = hermite_orthonormal(n, z, pim4);
            nodes.push(z);
            weights.push(2.0 / (dp * dp));
        }
        // enforce exact symmetry
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -x;
            nodes[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        Ok(Self { nodes, weights })
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

    /// `w_i exp(x_i^2)`, for integrating functions that carry their own Gaussian decay.
    pub fn scaled_weights(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (w.ln() + x * x).exp())
            .collect()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Expectation of `f(X)` for `X ~ N(mean, sd^2)`.
    pub fn gaussian_expectation<F: Fn(f64) -> f64>(&self, mean: f64, sd: f64, f: F) -> f64 {
        let s = std::f64::consts::SQRT_2 * sd;
        self.integrate(|x| f(mean + s * x)) / PI.sqrt()
    }
}

/// Orthonormal Hermite value `p_n(z)` and derivative.
fn hermite_orthonormal(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// A function of delay sampled on an ascending grid, interpolated with a
/// natural cubic spline.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl SampledCurve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Domain("grid and values differ in length".into()));
        }
        if xs.len() < 3 {
            return Err(Error::Coverage("a sampled curve needs at least 3 points".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("grid must be strictly ascending".into()));
        }
        let second = natural_spline_second_derivatives(&xs, &ys);
        Ok(Self { xs, ys, second })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap_or(&self.xs[0]))
    }

    pub fn grid(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    /// Spline value; outside the grid the nearest endpoint value is returned.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let hi = self.xs.partition_point(|&g| g <= x).min(n - 1);
        let lo = hi - 1;
        let h = self.xs[hi] - self.xs[lo];
        let a = (self.xs[hi] - x) / h;
        let b = (x - self.xs[lo]) / h;
        a * self.ys[lo]
            + b * self.ys[hi]
            + ((a * a * a - a) * self.second[lo] + (b * b * b - b) * self.second[hi]) * h * h / 6.0
    }
}

fn natural_spline_second_derivatives(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut y2 = vec![0.0; n];
    let mut u = vec![0.0; n];
    for i in 1..n - 1 {
        let sig = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
        let p = sig * y2[i - 1] + 2.0;
        y2[i] = (sig - 1.0) / p;
        let d = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) - (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
        u[i] = (6.0 * d / (xs[i + 1] - xs[i - 1]) - sig * u[i - 1]) / p;
    }
    y2[n - 1] = 0.0;
    for k in (0..n - 1).rev() {
        y2[k] = y2[k] * y2[k + 1] + u[k];
    }
    y2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_rules_are_exact_on_moments() {
        // int x^{2k} exp(-x^2) = Gamma(k + 1/2)
        let gamma_half = [
            PI.sqrt(),
            PI.sqrt() / 2.0,
            3.0 * PI.sqrt() / 4.0,
            15.0 * PI.sqrt() / 8.0,
        ];
        for n in [4usize, 5, 8, 16] {
            let gh = GaussHermite::new(n).unwrap();
            assert_eq!(gh.order(), n);
            for (k, g) in gamma_half.iter().enumerate() {
                if 2 * k < 2 * n {
                    let v = gh.integrate(|x| x.powi(2 * k as i32));
                    assert!((v - g).abs() < 1e-13 * g, "n={n} k={k} {v} vs {g}");
                }
            }
            let odd = gh.integrate(|x| x.powi(3));
            assert!(odd.abs() < 1e-13);
        }
    }

    #[test]
    fn known_two_point_rule() {
        let gh = GaussHermite::new(2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((gh.nodes()[0] + r).abs() < 1e-15 && (gh.nodes()[1] - r).abs() < 1e-15);
        assert!((gh.weights()[0] - PI.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn smooth_integrand_converges() {
        let exact = PI.sqrt() * (-0.25f64).exp();
        for n in [16usize, 64, 128, 256] {
            let gh = GaussHermite::new(n).unwrap();
            assert!((gh.integrate(f64::cos) - exact).abs() < 1e-13, "n = {n}");
            let total: f64 = gh.weights().iter().sum();
            assert!((total - PI.sqrt()).abs() < 1e-13);
            assert!(gh.nodes().windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn scaled_weights_integrate_decaying_functions() {
        // int exp(-2 x^2) = sqrt(pi / 2)
        let gh = GaussHermite::new(64).unwrap();
        let v: f64 = gh
            .nodes()
            .iter()
            .zip(gh.scaled_weights())
            .map(|(&x, w)| w * (-2.0 * x * x).exp())
            .sum();
        assert!((v - (PI / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_expectation_of_square() {
        let gh = GaussHermite::new(10).unwrap();
        let v = gh.gaussian_expectation(1.5, 0.3, |x| x * x);
        assert!((v - (1.5f64 * 1.5 + 0.09)).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_order() {
        assert!(GaussHermite::new(0).is_err());
        assert!(GaussHermite::new(MAX_ORDER + 1).is_err());
    }

    #[test]
    fn spline_reproduces_smooth_function() {
        let xs: Vec<f64> = (0..201).map(|i| -5.0 + 0.05 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (-x * x / 2.0f64).exp()).collect();
        let c = SampledCurve::new(xs, ys).unwrap();
        for i in 0..97 {
            let x = -4.0 + 0.0831 * i as f64;
            assert!((c.eval(x) - (-x * x / 2.0).exp()).abs() < 2e-6);
        }
        assert_eq!(c.eval(-10.0), c.values()[0]);
        assert_eq!(c.eval(10.0), *c.values().last().unwrap());
        assert_eq!(c.domain(), (-5.0, 5.0));
    }

    #[test]
    fn spline_rejects_bad_grids() {
        assert!(SampledCurve::new(vec![0.0, 1.0], vec![0.0, 1.0]).is_err());
        assert!(SampledCurve::new(vec![0.0, 2.0, 1.0], vec![0.0; 3]).is_err());
        assert!(SampledCurve::new(vec![0.0, 1.0, 2.0], vec![0.0; 2]).is_err());
    }
}
