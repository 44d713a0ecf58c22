//! Gaussian dip fitting shared by the quadrature oracle and the counting simulation.
//!
//! Model: `y(d) = B (1 - A exp(-(d - d0)^2 / 2 w^2))`, fitted by
//! Levenberg-Marquardt. With [`Weighting::Poisson`] the objective is the
//! Poisson deviance and the normal matrix is the Fisher information, so the
//! fixed point is the maximum-likelihood estimate for count data.

use nalgebra::{Matrix4, Vector4};

use crate::analytic::{visibility_from_depth, DipModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Ordinary least squares.
    Uniform,
    /// Poisson maximum likelihood.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDipFit {
    pub baseline: f64,
    /// Relative depth `A`; negative for a bump.
    pub amplitude: f64,
    pub center: f64,
    pub rms_width: f64,
    /// r.m.s. of `y - model`, in data units.
    pub residual_rms: f64,
    /// Final objective: sum of squares or Poisson deviance.
    pub objective: f64,
    pub iterations: usize,
}

impl GaussianDipFit {
    /// `A / (2 - A)`.
    pub fn visibility(&self) -> f64 {
        visibility_from_depth(self.amplitude)
    }

    pub fn value_at(&self, delay: f64) -> f64 {
        model(&self.params_vector(), delay).0
    }

    /// The fit as a [`DipModel`], with depth clamped into `[0, 1]`.
    pub fn to_model(&self) -> DipModel {
        DipModel {
            baseline: self.baseline.max(0.0),
            depth: self.amplitude.clamp(0.0, 1.0),
            rms_width: self.rms_width,
        }
    }

    /// True when the data reach at least `k` widths on both sides of the center.
    pub fn spans_widths(&self, delays: &[f64], k: f64) -> bool {
        let lo = delays.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = delays.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.center - lo >= k * self.rms_width && hi - self.center >= k * self.rms_width
    }

    fn params_vector(&self) -> Vector4<f64> {
        Vector4::new(self.baseline, self.amplitude, self.center, self.rms_width.ln())
    }
}

/// Returns the model value and its gradient with respect to `(B, A, d0, ln w)`.
fn model(p: &Vector4<f64>, d: f64) -> (f64, Vector4<f64>) {
    let (b, a, d0, lw) = (p[0], p[1], p[2], p[3]);
    let w = lw.exp();
    let z = (d - d0) / w;
    let g = (-0.5 * z * z).exp();
    let y = b * (1.0 - a * g);
    let grad = Vector4::new(1.0 - a * g, -b * g, -b * a * g * z / w, -b * a * g * z * z);
    (y, grad)
}

struct Problem<'a> {
    delays: &'a [f64],
    values: &'a [f64],
    weighting: Weighting,
    center_bounds: (f64, f64),
    log_width_bounds: (f64, f64),
}

impl Problem<'_> {
    fn clamp(&self, mut p: Vector4<f64>) -> Vector4<f64> {
        p[0] = p[0].max(0.0);
        p[1] = p[1].min(1.0);
        p[2] = p[2].clamp(self.center_bounds.0, self.center_bounds.1);
        p[3] = p[3].clamp(self.log_width_bounds.0, self.log_width_bounds.1);
        p
    }

    fn objective(&self, p: &Vector4<f64>) -> f64 {
        let mut total = 0.0;
        for (&d, &y) in self.delays.iter().zip(self.values) {
            let mu = model(p, d).0;
            total += match self.weighting {
                Weighting::Uniform => (y - mu) * (y - mu),
                Weighting::Poisson => {
                    if mu <= 0.0 {
                        if y > 0.0 {
                            return f64::INFINITY;
                        }
                        0.0
                    } else if y > 0.0 {
                        2.0 * (y * (y / mu).ln() - (y - mu))
                    } else {
                        2.0 * mu
                    }
                }
            };
        }
        total
    }

    /// Normal matrix and gradient-side vector.
    fn normal_equations(&self, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let mut h = Matrix4::zeros();
        let mut g = Vector4::zeros();
        for (&d, &y) in self.delays.iter().zip(self.values) {
            let (mu, grad) = model(p, d);
            let w = match self.weighting {
                Weighting::Uniform => 1.0,
                Weighting::Poisson => 1.0 / mu.max(1e-12),
            };
            h += grad * grad.transpose() * w;
            g += grad * ((y - mu) * w);
        }
        (h, g)
    }

    fn residual_rms(&self, p: &Vector4<f64>) -> f64 {
        let ss: f64 = self
            .delays
            .iter()
            .zip(self.values)
            .map(|(&d, &y)| (y - model(p, d).0).powi(2))
            .sum();
        (ss / self.delays.len() as f64).sqrt()
    }

    fn levenberg_marquardt(&self, start: Vector4<f64>) -> (Vector4<f64>, f64, usize) {
        let mut p = self.clamp(start);
        let mut obj = self.objective(&p);
        let mut lambda = 1e-3;
        let mut iterations = 0;
        while iterations < 500 {
            iterations += 1;
            let (h, g) = self.normal_equations(&p);
            let mut improved = false;
            for _ in 0..30 {
                let mut a = h;
                for k in 0..4 {
                    a[(k, k)] += lambda * h[(k, k)].max(1e-12 * h.diagonal().max()) + 1e-300;
                }
                let step = match a.cholesky() {
                    Some(c) => c.solve(&g),
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                };
                let trial = self.clamp(p + step);
                let trial_obj = self.objective(&trial);
                if trial_obj.is_finite() && trial_obj <= obj {
                    let change = (trial - p).abs();
                    let scale = p.abs().map(|v| v.max(1.0));
                    let rel_step = change
                        .iter()
                        .zip(scale.iter())
                        .map(|(c, s)| c / s)
                        .fold(0.0, f64::max);
                    let obj_drop = obj - trial_obj;
                    p = trial;
                    obj = trial_obj;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    let near_gauss_newton = lambda < 1e-2;
                    if rel_step < 1e-13 || (near_gauss_newton && obj_drop <= 1e-15 * obj) {
                        return (p, obj, iterations);
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
        (p, obj, iterations)
    }
}

/// Fits a Gaussian dip to `(delays, values)`.
///
/// Several starting widths are tried and the lowest objective wins. The width
/// is confined to `[min spacing / 4, full span]` and the center to the data range.
pub fn fit_gaussian_dip(delays: &[f64], values: &[f64], weighting: Weighting) -> Result<GaussianDipFit> {
    if delays.len() != values.len() {
        return Err(Error::Domain("delays and values differ in length".into()));
    }
    if delays.len() < 4 {
        return Err(Error::Statistics(format!(
            "need at least 4 points to fit 4 parameters, got {}",
            delays.len()
        )));
    }
    if delays.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite data".into()));
    }
    if weighting == Weighting::Poisson && values.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain(
            "Poisson weighting needs non-negative counts".into(),
        ));
    }
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::Statistics("all values are zero".into()));
    }

    // Work in delays normalized to the half span so all parameters are O(1).
    let mut order: Vec<usize> = (0..delays.len()).collect();
    order.sort_by(|&a, &b| delays[a].total_cmp(&delays[b]));
    let raw_lo = delays[order[0]];
    let raw_hi = delays[order[order.len() - 1]];
    let mid = 0.5 * (raw_lo + raw_hi);
    let half = 0.5 * (raw_hi - raw_lo);
    if !(half > 0.0) {
        return Err(Error::Statistics("delays must span a non-zero range".into()));
    }
    let xs: Vec<f64> = order.iter().map(|&i| (delays[i] - mid) / half).collect();
    let ys: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let lo = xs[0];
    let hi = xs[xs.len() - 1];
    let span = hi - lo;
    let min_spacing = xs
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);

    let problem = Problem {
        delays: &xs,
        values: &ys,
        weighting,
        center_bounds: (lo, hi),
        log_width_bounds: ((0.25 * min_spacing).ln(), span.ln()),
    };

    // Starting point: baseline from the upper quartile, center at the smoothed minimum.
    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let top = &sorted[(3 * sorted.len()) / 4..];
    let baseline0 = top.iter().sum::<f64>() / top.len() as f64;
    let smoothed: Vec<f64> = (0..ys.len())
        .map(|i| {
            let a = i.saturating_sub(1);
            let b = (i + 1).min(ys.len() - 1);
            ys[a..=b].iter().sum::<f64>() / (b - a + 1) as f64
        })
        .collect();
    let imin = smoothed
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let amp0 = if baseline0 > 0.0 {
        (1.0 - smoothed[imin] / baseline0).clamp(0.0, 0.99)
    } else {
        0.0
    };

    let mut best: Option<(Vector4<f64>, f64, usize)> = None;
    for frac in [0.05, 0.125, 0.25] {
        let start = Vector4::new(baseline0, amp0, xs[imin], (frac * span).ln());
        let (p, obj, it) = problem.levenberg_marquardt(start);
        if obj.is_finite() && best.as_ref().is_none_or(|b| obj < b.1) {
            best = Some((p, obj, it));
        }
    }
    let Some((p, obj, iterations)) = best else {
        return Err(Error::Fit {
            message: "objective is not finite at any starting point".into(),
            residual_rms: f64::NAN,
        });
    };
    let residual_rms = problem.residual_rms(&p);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::Fit {
            message: "non-finite parameters".into(),
            residual_rms,
        });
    }
    Ok(GaussianDipFit {
        baseline: p[0],
        amplitude: p[1],
        center: mid + half * p[2],
        rms_width: half * p[3].exp(),
        residual_rms,
        objective: obj,
        iterations,
    })
}
