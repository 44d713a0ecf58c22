//! Closed-form dip predictions for two independent heralded sources.
//!
//! With pump bandwidth `sigma_p`, signal filter `sigma_s`, trigger filter
//! `sigma_t` (all r.m.s., rad/s) and Gaussian pair timing jitter `sigma_j` (s):
//!
//! ```text
//! X = (sigma_s^2 + sigma_p^2 + 2 sigma_p^2 sigma_j^2 sigma_s^2) (sigma_p^2 + sigma_t^2)
//!     / (sigma_p^2 + sigma_s^2 + sigma_t^2)
//! D = sigma_p / sqrt(X)                    relative dip depth
//! V = sigma_p / (2 sqrt(X) - sigma_p)      = D / (2 - D)
//! w = sqrt(sigma_p^2 + sigma_s^2 (1 + 2 sigma_j^2 sigma_p^2)) / (sqrt(2) sigma_s sigma_p)
//! ```
//!
//! Visibility is `(Cmax - Cmin) / (Cmax + Cmin)` throughout; the depth `D` is
//! `(Cmax - Cmin) / Cmax`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Trigger-arm filter: a finite r.m.s. bandwidth or no filter at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerFilter {
    /// r.m.s. bandwidth in rad/s.
    Filtered(f64),
    /// The `sigma_t -> infinity` limit, kept exact.
    Unfiltered,
}

impl TriggerFilter {
    pub fn bandwidth(&self) -> Option<f64> {
        match *self {
            TriggerFilter::Filtered(t) => Some(t),
            TriggerFilter::Unfiltered => None,
        }
    }
}

impl fmt::Display for TriggerFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriggerFilter::Filtered(t) => write!(f, "{t:e}"),
            TriggerFilter::Unfiltered => f.write_str("unfiltered"),
        }
    }
}

/// Bandwidths (rad/s) and pair timing jitter (s) entering the dip formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipParams {
    pub sigma_p: f64,
    pub sigma_s: f64,
    pub sigma_t: TriggerFilter,
    pub sigma_j: f64,
}

impl DipParams {
    pub fn new(sigma_p: f64, sigma_s: f64, sigma_t: TriggerFilter, sigma_j: f64) -> Result<Self> {
        let p = Self {
            sigma_p,
            sigma_s,
            sigma_t,
            sigma_j,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        finite_nonneg("sigma_p", self.sigma_p)?;
        finite_nonneg("sigma_s", self.sigma_s)?;
        finite_nonneg("sigma_j", self.sigma_j)?;
        if let TriggerFilter::Filtered(t) = self.sigma_t {
            finite_nonneg("sigma_t", t)?;
        }
        if self.sigma_p <= 0.0 {
            return Err(Error::Domain("sigma_p must be > 0".into()));
        }
        Ok(())
    }

    /// `X / sigma_p^2`, evaluated in ratios to stay well scaled.
    fn normalized_x(&self) -> f64 {
        let s2 = (self.sigma_s / self.sigma_p).powi(2);
        let pj2 = (self.sigma_p * self.sigma_j).powi(2);
        let first = 1.0 + s2 * (1.0 + 2.0 * pj2);
        let (num, den) = match self.sigma_t {
            TriggerFilter::Unfiltered => (1.0, 1.0),
            TriggerFilter::Filtered(t) => {
                let t2 = (t / self.sigma_p).powi(2);
                (1.0 + t2, 1.0 + s2 + t2)
            }
        };
        first * num / den
    }
}

/// Gaussian dip `C(d) = B (1 - D exp(-d^2 / 2 w^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipModel {
    pub baseline: f64,
    pub depth: f64,
    pub rms_width: f64,
}

impl DipModel {
    pub fn new(baseline: f64, depth: f64, rms_width: f64) -> Result<Self> {
        if !(baseline >= 0.0) || !baseline.is_finite() {
            return Err(Error::Domain(format!("baseline must be >= 0, got {baseline}")));
        }
        if !(0.0..=1.0).contains(&depth) {
            return Err(Error::Domain(format!("depth must lie in [0, 1], got {depth}")));
        }
        if !(rms_width > 0.0) || !rms_width.is_finite() {
            return Err(Error::Domain(format!("rms width must be > 0, got {rms_width}")));
        }
        Ok(Self {
            baseline,
            depth,
            rms_width,
        })
    }

    /// Predicted dip for the given parameters with unit baseline.
    pub fn from_params(p: &DipParams) -> Result<Self> {
        Self::new(1.0, dip_depth(p)?, dip_width(p)?)
    }

    pub fn visibility(&self) -> f64 {
        visibility_from_depth(self.depth)
    }

    /// Shape factor `exp(-d^2 / 2 w^2)`.
    pub fn profile(&self, delay: f64) -> f64 {
        (-0.5 * (delay / self.rms_width).powi(2)).exp()
    }

    pub fn value_at(&self, delay: f64) -> f64 {
        self.baseline * (1.0 - self.depth * self.profile(delay))
    }
}

pub fn visibility_from_depth(depth: f64) -> f64 {
    depth / (2.0 - depth)
}

pub fn depth_from_visibility(visibility: f64) -> f64 {
    2.0 * visibility / (1.0 + visibility)
}

/// Relative dip depth `D = sigma_p / sqrt(X)`.
pub fn dip_depth(p: &DipParams) -> Result<f64> {
    p.validate()?;
    let xn = p.normalized_x();
    if xn < 1.0 - 1e-12 {
        return Err(Error::Consistency(format!(
            "X/sigma_p^2 = {xn} < 1 would give depth > 1"
        )));
    }
    Ok((1.0 / xn.sqrt()).min(1.0))
}

/// Dip visibility `sigma_p / (2 sqrt(X) - sigma_p)`.
pub fn visibility(p: &DipParams) -> Result<f64> {
    p.validate()?;
    let xn = p.normalized_x();
    if xn < 1.0 - 1e-12 {
        return Err(Error::Consistency(format!(
            "X/sigma_p^2 = {xn} < 1 would give visibility > 1"
        )));
    }
    Ok(1.0 / (2.0 * xn.sqrt() - 1.0))
}

/// r.m.s. dip width in seconds.
pub fn dip_width(p: &DipParams) -> Result<f64> {
    p.validate()?;
    if p.sigma_s <= 0.0 {
        return Err(Error::Divergence("dip width diverges for sigma_s = 0".into()));
    }
    let (sp, ss, sj) = (p.sigma_p, p.sigma_s, p.sigma_j);
    let inner = 1.0 / (2.0 * ss * ss) + (1.0 + 2.0 * (sj * sp).powi(2)) / (2.0 * sp * sp);
    Ok(inner.sqrt())
}

/// Visibility without jitter and without trigger filtering.
pub fn zukowski_limit(sigma_p: f64, sigma_s: f64) -> Result<f64> {
    if !(sigma_p > 0.0) || !sigma_p.is_finite() {
        return Err(Error::Domain(format!("sigma_p must be > 0, got {sigma_p}")));
    }
    if !(sigma_s >= 0.0) || !sigma_s.is_finite() {
        return Err(Error::Domain(format!("sigma_s must be >= 0, got {sigma_s}")));
    }
    let r = sigma_s / sigma_p;
    Ok(1.0 / (2.0 * (1.0 + r * r).sqrt() - 1.0))
}

/// Input-state preparation for the interference experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Indistinguishable,
    Orthogonal,
    Unpolarized,
    Thermal,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Indistinguishable,
        Scenario::Orthogonal,
        Scenario::Unpolarized,
        Scenario::Thermal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Indistinguishable => "indistinguishable",
            Scenario::Orthogonal => "orthogonal",
            Scenario::Unpolarized => "unpolarized",
            Scenario::Thermal => "thermal",
        }
    }

    /// Mean fraction of the triggered depth that survives for heralded scenarios.
    /// `None` for thermal, whose depth also depends on the intensity ratio.
    pub fn depth_factor(&self) -> Option<f64> {
        match self {
            Scenario::Indistinguishable => Some(1.0),
            Scenario::Orthogonal => Some(0.0),
            Scenario::Unpolarized => Some(0.5),
            Scenario::Thermal => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "indistinguishable" => Ok(Scenario::Indistinguishable),
            "orthogonal" => Ok(Scenario::Orthogonal),
            "unpolarized" => Ok(Scenario::Unpolarized),
            "thermal" => Ok(Scenario::Thermal),
            other => Err(Error::Usage(format!(
                "unknown scenario '{other}' (expected indistinguishable, orthogonal, unpolarized or thermal)"
            ))),
        }
    }
}

/// Relative dip depth seen in the thermal scenario, `r D / (1 + r + r^2)`.
pub fn thermal_depth(depth: f64, intensity_ratio: f64) -> f64 {
    let r = intensity_ratio;
    r * depth / (1.0 + r + r * r)
}

/// Visibility of a scenario given the triggered dip depth `depth` and, for the
/// thermal case, the mean intensity ratio `r:1` of the two inputs.
pub fn scenario_visibility(kind: Scenario, depth: f64, intensity_ratio: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&depth) {
        return Err(Error::Domain(format!("depth must lie in [0, 1], got {depth}")));
    }
    if !(intensity_ratio > 0.0) || !intensity_ratio.is_finite() {
        return Err(Error::Domain(format!(
            "intensity ratio must be > 0, got {intensity_ratio}"
        )));
    }
    Ok(match kind {
        Scenario::Indistinguishable => visibility_from_depth(depth),
        Scenario::Orthogonal => 0.0,
        Scenario::Unpolarized => {
            let half = 0.5 * depth;
            half / (2.0 - half)
        }
        Scenario::Thermal => {
            let r = intensity_ratio;
            depth * r / (2.0 * (1.0 + r * r) + r * (2.0 - depth))
        }
    })
}

/// Filter bandwidths recovered from a (visibility, width) target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSolution {
    pub sigma_s: f64,
    pub sigma_t: TriggerFilter,
    pub iterations: usize,
}

const SOLVE_TOL: f64 = 1e-13;

/// Recovers `(sigma_s, sigma_t)` so that the forward formulas return the target
/// visibility and r.m.s. width.
///
/// Unknowns are `ln sigma_s` and `tau = sigma_p^2 / sigma_t^2 >= 0`, so the
/// unfiltered trigger sits at the finite boundary `tau = 0`. A log grid seeds a
/// damped Newton iteration with a finite-difference Jacobian.
pub fn solve_filters(v_target: f64, w_target: f64, sigma_p: f64, sigma_j: f64) -> Result<FilterSolution> {
    if !(v_target > 0.0 && v_target < 1.0) {
        return Err(Error::Domain(format!(
            "target visibility must lie in (0, 1), got {v_target}"
        )));
    }
    if !(w_target > 0.0) || !w_target.is_finite() {
        return Err(Error::Domain(format!("target width must be > 0, got {w_target}")));
    }
    if !(sigma_p > 0.0) || !sigma_p.is_finite() {
        return Err(Error::Domain(format!("sigma_p must be > 0, got {sigma_p}")));
    }
    if !(sigma_j >= 0.0) || !sigma_j.is_finite() {
        return Err(Error::Domain(format!("sigma_j must be >= 0, got {sigma_j}")));
    }

    let eval = |u: f64, tau: f64| -> [f64; 2] {
        let sigma_s = sigma_p * u.exp();
        let sigma_t = if tau <= 0.0 {
            TriggerFilter::Unfiltered
        } else {
            TriggerFilter::Filtered(sigma_p / tau.sqrt())
        };
        let p = DipParams {
            sigma_p,
            sigma_s,
            sigma_t,
            sigma_j,
        };
        let v = visibility(&p).unwrap_or(f64::NAN);
        let w = dip_width(&p).unwrap_or(f64::NAN);
        [v / v_target - 1.0, w / w_target - 1.0]
    };
    let norm = |r: [f64; 2]| {
        let n = r[0].abs().max(r[1].abs());
        if n.is_finite() {
            n
        } else {
            f64::INFINITY
        }
    };

    // Coarse scan; ascending sigma_s with strict improvement keeps the smallest on ties.
    let mut taus = vec![0.0];
    taus.extend((0..49).map(|i| 10f64.powf(-6.0 + 0.25 * i as f64)));
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..61 {
        let u = (10f64.ln()) * (-4.0 + 5.0 * i as f64 / 60.0);
        for &tau in &taus {
            let n = norm(eval(u, tau));
            if n < best.0 {
                best = (n, u, tau);
            }
        }
    }

    let (_, mut u, mut tau) = best;
    let mut r = eval(u, tau);
    let mut iterations = 0;
    while norm(r) > SOLVE_TOL && iterations < 200 {
        iterations += 1;
        let hu = 1e-7;
        let ru_p = eval(u + hu, tau);
        let ru_m = eval(u - hu, tau);
        let ht = 1e-7 * tau.max(1e-3);
        let (rt_p, rt_m, dt) = if tau >= ht {
            (eval(u, tau + ht), eval(u, tau - ht), 2.0 * ht)
        } else {
            (eval(u, tau + ht), r, ht)
        };
        let j = [
            [(ru_p[0] - ru_m[0]) / (2.0 * hu), (rt_p[0] - rt_m[0]) / dt],
            [(ru_p[1] - ru_m[1]) / (2.0 * hu), (rt_p[1] - rt_m[1]) / dt],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let (mut du, mut dtau) = if det.abs() > 1e-300 {
            (
                -(j[1][1] * r[0] - j[0][1] * r[1]) / det,
                -(-j[1][0] * r[0] + j[0][0] * r[1]) / det,
            )
        } else {
            (0.0, 0.0)
        };
        // Pinned at the unfiltered boundary: only the width equation can still move.
        if tau <= 0.0 && dtau < 0.0 {
            dtau = 0.0;
            du = if j[1][0].abs() > 0.0 { -r[1] / j[1][0] } else { 0.0 };
        }
        let current = norm(r);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let nu = u + step * du;
            let nt = (tau + step * dtau).max(0.0);
            let nr = eval(nu, nt);
            if norm(nr) < current {
                u = nu;
                tau = nt;
                r = nr;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if norm(r) > 1e-10 {
        return Err(Error::NoSolution {
            message: format!(
                "targets V = {v_target}, w = {w_target:e} s not reachable (best residual {:.3e})",
                norm(r)
            ),
            frontier: reachable_frontier(w_target, sigma_p, sigma_j),
        });
    }
    let sigma_t = if tau <= 0.0 {
        TriggerFilter::Unfiltered
    } else {
        TriggerFilter::Filtered(sigma_p / tau.sqrt())
    };
    Ok(FilterSolution {
        sigma_s: sigma_p * u.exp(),
        sigma_t,
        iterations,
    })
}

/// Describes the visibility range reachable at a target width.
fn reachable_frontier(w_target: f64, sigma_p: f64, sigma_j: f64) -> String {
    let floor = (1.0 + 2.0 * (sigma_j * sigma_p).powi(2)) / (2.0 * sigma_p * sigma_p);
    let w_min = floor.sqrt();
    if w_target * w_target <= floor {
        return format!("width must exceed {w_min:e} s for sigma_p = {sigma_p:e}, sigma_j = {sigma_j:e}");
    }
    let sigma_s = 1.0 / (2.0 * (w_target * w_target - floor)).sqrt();
    let at = |t| {
        visibility(&DipParams {
            sigma_p,
            sigma_s,
            sigma_t: t,
            sigma_j,
        })
        .unwrap_or(f64::NAN)
    };
    let v_lo = at(TriggerFilter::Unfiltered);
    let v_hi = at(TriggerFilter::Filtered(0.0));
    format!(
        "at w = {w_target:e} s (sigma_s = {sigma_s:e} rad/s) visibility is reachable only in [{v_lo:.6}, {v_hi:.6})"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::rms_omega_from_nm;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn pump() -> f64 {
        rms_omega_from_nm(394.25, 0.8).unwrap()
    }

    fn params(sp: f64, ss: f64, st: TriggerFilter, sj: f64) -> DipParams {
        DipParams::new(sp, ss, st, sj).unwrap()
    }

    #[test]
    fn depth_limits() {
        let sp = 1e13;
        let d = dip_depth(&params(sp, 0.0, TriggerFilter::Unfiltered, 0.0)).unwrap();
        assert_eq!(d, 1.0);
        let d = dip_depth(&params(sp, sp, TriggerFilter::Unfiltered, 0.0)).unwrap();
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let v = visibility(&params(sp, sp, TriggerFilter::Unfiltered, 0.0)).unwrap();
        assert!((v - 1.0 / (2.0 * 2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((v - 0.5469).abs() < 1e-4);
    }

    #[test]
    fn visibility_vanishes_for_large_jitter() {
        let sp = pump();
        let v = visibility(&params(sp, 0.1 * sp, TriggerFilter::Unfiltered, 1e-6)).unwrap();
        assert!(v < 1e-4);
    }

    #[test]
    fn width_values() {
        let sp = 3e12;
        let w = dip_width(&params(sp, sp, TriggerFilter::Unfiltered, 0.0)).unwrap();
        assert!(rel(w, 1.0 / sp) < 1e-14);

        // sqrt(sp^2 + ss^2 (1 + 2 sj^2 sp^2)) / (sqrt 2 ss sp), evaluated by hand
        let w = dip_width(&params(9.70e12, 8.8e11, TriggerFilter::Unfiltered, 350e-15)).unwrap();
        let (sp, ss, sj) = (9.70e12f64, 8.8e11f64, 350e-15f64);
        let direct = (sp * sp + ss * ss * (1.0 + 2.0 * sj * sj * sp * sp)).sqrt() / (2f64.sqrt() * ss * sp);
        assert!(rel(w, direct) < 1e-14);
        assert!((w - 0.88e-12).abs() < 0.01e-12, "w = {w:e}");
    }

    #[test]
    fn width_diverges_without_signal_filter() {
        let p = params(1e13, 0.0, TriggerFilter::Unfiltered, 0.0);
        assert!(matches!(dip_width(&p), Err(Error::Divergence(_))));
        assert!(DipParams::new(0.0, 1.0, TriggerFilter::Unfiltered, 0.0).is_err());
        assert!(DipParams::new(1.0, -1.0, TriggerFilter::Unfiltered, 0.0).is_err());
        assert!(DipParams::new(1.0, 1.0, TriggerFilter::Filtered(-1.0), 0.0).is_err());
    }

    #[test]
    fn zukowski_values() {
        let sp = 2e12;
        assert_eq!(zukowski_limit(sp, 0.0).unwrap(), 1.0);
        assert!((zukowski_limit(sp, sp).unwrap() - 0.546_918_160_678).abs() < 1e-11);
        let v = zukowski_limit(sp, 3.0 * sp).unwrap();
        assert!((v - 1.0 / (2.0 * 10f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((v - 0.1879).abs() < 1e-4);
        assert!(zukowski_limit(0.0, 1.0).is_err());
    }

    #[test]
    fn scenario_ladder() {
        let d_ref = depth_from_visibility(0.84);
        let v = |k, d, r| scenario_visibility(k, d, r).unwrap();
        assert!((v(Scenario::Unpolarized, 1.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((v(Scenario::Unpolarized, d_ref, 1.0) - 0.2958).abs() < 5e-4);
        assert!((v(Scenario::Thermal, 1.0, 1.0) - 0.2).abs() < 1e-15);
        assert!((v(Scenario::Thermal, 0.913, 1.0) - 0.1795).abs() < 1e-3);
        assert!((v(Scenario::Thermal, 0.913, 2.0) - 0.150).abs() < 1e-3);
        assert_eq!(v(Scenario::Orthogonal, 0.7, 1.0), 0.0);
        assert!((v(Scenario::Indistinguishable, d_ref, 1.0) - 0.84).abs() < 1e-14);
    }

    #[test]
    fn thermal_depth_matches_visibility() {
        for &(d, r) in &[(1.0, 1.0), (0.913, 2.0), (0.4, 0.3)] {
            let a = thermal_depth(d, r);
            let v = scenario_visibility(Scenario::Thermal, d, r).unwrap();
            assert!((visibility_from_depth(a) - v).abs() < 1e-15);
        }
    }

    #[test]
    fn scenario_errors() {
        assert!(matches!("laser".parse::<Scenario>(), Err(Error::Usage(_))));
        assert_eq!("Thermal".parse::<Scenario>().unwrap(), Scenario::Thermal);
        assert!(scenario_visibility(Scenario::Thermal, 0.5, 0.0).is_err());
        assert!(scenario_visibility(Scenario::Thermal, 1.5, 1.0).is_err());
    }

    /// Width depends on sigma_s only; the visibility then fixes sigma_t in
    /// closed form. Independent of the Newton path in `solve_filters`.
    fn triangular_solution(v: f64, w: f64, sp: f64, sj: f64) -> (f64, f64) {
        let floor = (1.0 + 2.0 * (sj * sp).powi(2)) / (2.0 * sp * sp);
        let ss = 1.0 / (2.0 * (w * w - floor)).sqrt();
        let d = 2.0 * v / (1.0 + v);
        let a = ss * ss + sp * sp + 2.0 * sp * sp * sj * sj * ss * ss;
        // X = sp^2 / d^2 = a (sp^2 + st^2) / (sp^2 + ss^2 + st^2)
        let x = sp * sp / (d * d);
        let st2 = (x * (sp * sp + ss * ss) - a * sp * sp) / (a - x);
        (ss, st2.sqrt())
    }

    #[test]
    fn solve_reference_targets() {
        let sp = pump();
        let sol = solve_filters(0.84, 0.86e-12, sp, 350e-15).unwrap();
        let p = params(sp, sol.sigma_s, sol.sigma_t, 350e-15);
        assert!(rel(visibility(&p).unwrap(), 0.84) < 1e-9);
        assert!(rel(dip_width(&p).unwrap(), 0.86e-12) < 1e-9);
        assert!(sol.sigma_s > 0.7e12 && sol.sigma_s < 1.1e12, "{:e}", sol.sigma_s);

        let (ss, st) = triangular_solution(0.84, 0.86e-12, sp, 350e-15);
        assert!(rel(sol.sigma_s, ss) < 1e-9);
        assert!(rel(sol.sigma_t.bandwidth().unwrap(), st) < 1e-6);
        // trigger filter wider than the signal filter
        assert!(st > 3.0 * ss);
        assert!((dip_depth(&p).unwrap() - 0.913).abs() < 1e-3);
    }

    #[test]
    fn solve_recovers_zukowski_limit() {
        let sp = pump();
        let s0 = 0.2 * sp;
        let v = zukowski_limit(sp, s0).unwrap();
        let w = dip_width(&params(sp, s0, TriggerFilter::Unfiltered, 0.0)).unwrap();
        let sol = solve_filters(v, w, sp, 0.0).unwrap();
        assert!(rel(sol.sigma_s, s0) < 1e-9);
        match sol.sigma_t {
            TriggerFilter::Unfiltered => {}
            TriggerFilter::Filtered(t) => assert!(t > 1e4 * sp, "sigma_t = {t:e}"),
        }
    }

    #[test]
    fn solve_rejects_unreachable_targets() {
        let sp = pump();
        let err = solve_filters(0.999_999, 10e-12, sp, 350e-15).unwrap_err();
        match err {
            Error::NoSolution { frontier, .. } => assert!(frontier.contains("reachable")),
            other => panic!("unexpected {other:?}"),
        }
        // narrower than the jitter floor
        let err = solve_filters(0.5, 0.2e-12, sp, 350e-15).unwrap_err();
        assert!(matches!(err, Error::NoSolution { .. }));
        assert!(solve_filters(1.0, 1e-12, sp, 0.0).is_err());
    }

    #[test]
    fn frontier_scan_confirms_infeasibility() {
        // brute-force scan of the forward map near the 10 ps width target
        let sp = pump();
        let sj = 350e-15;
        let mut best_v: f64 = 0.0;
        for i in 0..400 {
            let ss = sp * 10f64.powf(-4.0 + 4.0 * i as f64 / 399.0);
            for k in 0..60 {
                let st = sp * 10f64.powf(-6.0 + 12.0 * k as f64 / 59.0);
                let p = params(sp, ss, TriggerFilter::Filtered(st), sj);
                let w = dip_width(&p).unwrap();
                if (w / 10e-12 - 1.0).abs() < 0.01 {
                    best_v = best_v.max(visibility(&p).unwrap());
                }
            }
        }
        assert!(best_v > 0.99 && best_v < 0.999_999, "best = {best_v}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn depth_visibility_identity(
            sp in 1e11f64..1e14, rs in 0.0f64..5.0, rt in 0.0f64..50.0, pj in 0.0f64..10.0, unf in any::<bool>()
        ) {
            let st = if unf { TriggerFilter::Unfiltered } else { TriggerFilter::Filtered(rt * sp) };
            let p = params(sp, rs * sp, st, pj / sp);
            let d = dip_depth(&p).unwrap();
            let v = visibility(&p).unwrap();
            prop_assert!(d > 0.0 && d <= 1.0);
            prop_assert!(v > 0.0 && v <= 1.0);
            prop_assert!(rel(v, d / (2.0 - d)) < 1e-12);
        }

        #[test]
        fn reduces_to_zukowski(sp in 1e11f64..1e14, rs in 0.0f64..5.0) {
            let p = params(sp, rs * sp, TriggerFilter::Unfiltered, 0.0);
            prop_assert!(rel(visibility(&p).unwrap(), zukowski_limit(sp, rs * sp).unwrap()) < 1e-12);
        }

        #[test]
        fn monotone_in_jitter_and_filter(
            sp in 1e11f64..1e14, rs in 0.01f64..3.0, pj in 0.0f64..5.0, k in 1.01f64..3.0
        ) {
            let base = params(sp, rs * sp, TriggerFilter::Unfiltered, pj / sp);
            let more_jitter = params(sp, rs * sp, TriggerFilter::Unfiltered, (pj + 0.1) * k / sp);
            let wider = params(sp, k * rs * sp, TriggerFilter::Unfiltered, pj / sp);
            let v0 = visibility(&base).unwrap();
            prop_assert!(visibility(&more_jitter).unwrap() < v0);
            prop_assert!(visibility(&wider).unwrap() < v0);
            prop_assert!(dip_width(&more_jitter).unwrap() > dip_width(&base).unwrap());
        }

        #[test]
        fn scenarios_bounded(d in 0.0f64..=1.0, r in 0.01f64..100.0) {
            let ind = scenario_visibility(Scenario::Indistinguishable, d, r).unwrap();
            for kind in Scenario::ALL {
                let v = scenario_visibility(kind, d, r).unwrap();
                prop_assert!(v >= 0.0 && v <= ind + 1e-15);
            }
            prop_assert!(scenario_visibility(Scenario::Thermal, d, r).unwrap() < 0.5);
        }

        #[test]
        fn solve_round_trip(sp in 5e12f64..2e13, rs in 0.03f64..0.5, rt in 1.5f64..20.0, pj in 0.0f64..4.0) {
            let sj = pj / sp;
            let p = params(sp, rs * sp, TriggerFilter::Filtered(rt * rs * sp), sj);
            let v = visibility(&p).unwrap();
            let w = dip_width(&p).unwrap();
            let sol = solve_filters(v, w, sp, sj).unwrap();
            let q = params(sp, sol.sigma_s, sol.sigma_t, sj);
            prop_assert!(rel(visibility(&q).unwrap(), v) < 1e-9);
            prop_assert!(rel(dip_width(&q).unwrap(), w) < 1e-9);
        }
    }
}
