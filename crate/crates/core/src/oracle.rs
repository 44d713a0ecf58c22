//! Numerical reference for the heralded two-source dip.
//!
//! Each source emits pairs with joint spectral amplitude
//! `f(ws, wt) = pump(ws + wt) g_s(ws) g_t(wt)` (detunings from the degenerate
//! center, Gaussian amplitude factors `exp(-w^2 / 4 sigma^2)` for an r.m.s.
//! intensity bandwidth `sigma`, flat phase matching). Tracing out the
//! undetected trigger frequency leaves the heralded signal density matrix
//! `rho(w, w') = int f(w, wt) f(w', wt) dwt`, and the coincidence probability
//! behind a balanced beam splitter is
//!
//! ```text
//! P(d) = 1/2 [1 - Re int int rho_a(w, w') rho_b(w', w) exp(i (w - w') d) / (N_a N_b)]
//! ```
//!
//! Every integral is a tensor-product Gauss-Hermite sum; the trigger
//! integrals factor out of the four-dimensional sum, so each source is reduced
//! to its density matrix on the shared signal nodes before the delay sweep.
//! Nothing here uses the closed-form dip formulas except to size the delay grid.

use rayon::prelude::*;

use crate::analytic::{self, DipModel, DipParams, TriggerFilter};
use crate::error::{Error, Result};
use crate::fit::{fit_gaussian_dip, GaussianDipFit, Weighting};
use crate::quadrature::{GaussHermite, SampledCurve, MAX_ORDER};
use crate::units::SpectralGaussian;

/// Pump center used when building sources from bare bandwidths.
pub const PUMP_CENTER_M: f64 = 394.25e-9;

/// Relative change tolerated when the quadrature order is doubled.
pub const CONVERGENCE_TOL: f64 = 1e-6;

/// Jitter-averaged curves need this many `sigma_j` of coverage beyond the requested delays.
pub const JITTER_COVERAGE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSpectralAmplitude {
    pub pump: SpectralGaussian,
    pub signal_filter: SpectralGaussian,
    /// `None` when the trigger arm is unfiltered.
    pub trigger_filter: Option<SpectralGaussian>,
}

impl JointSpectralAmplitude {
    /// Degenerate sources only: both filters centered at twice the pump wavelength.
    pub fn new(
        pump: SpectralGaussian,
        signal_filter: SpectralGaussian,
        trigger_filter: Option<SpectralGaussian>,
    ) -> Result<Self> {
        let expected = 2.0 * pump.center_wavelength();
        let check = |s: &SpectralGaussian, what: &str| {
            if ((s.center_wavelength() - expected) / expected).abs() > 1e-9 {
                Err(Error::Domain(format!(
                    "{what} filter centered at {:e} m, expected degenerate {:e} m",
                    s.center_wavelength(),
                    expected
                )))
            } else {
                Ok(())
            }
        };
        check(&signal_filter, "signal")?;
        if let Some(t) = &trigger_filter {
            check(t, "trigger")?;
        }
        if pump.rms_bandwidth_omega() <= 0.0 {
            return Err(Error::Domain("pump bandwidth must be > 0".into()));
        }
        if signal_filter.rms_bandwidth_omega() <= 0.0 {
            return Err(Error::Domain("signal filter bandwidth must be > 0".into()));
        }
        if let Some(t) = &trigger_filter {
            if t.rms_bandwidth_omega() <= 0.0 {
                return Err(Error::Domain("trigger filter bandwidth must be > 0".into()));
            }
        }
        Ok(Self {
            pump,
            signal_filter,
            trigger_filter,
        })
    }

    pub fn from_params(p: &DipParams) -> Result<Self> {
        p.validate()?;
        let ir = 2.0 * PUMP_CENTER_M;
        let pump = SpectralGaussian::new(PUMP_CENTER_M, p.sigma_p)?;
        let signal = SpectralGaussian::new(ir, p.sigma_s)?;
        let trigger = match p.sigma_t {
            TriggerFilter::Filtered(t) => Some(SpectralGaussian::new(ir, t)?),
            TriggerFilter::Unfiltered => None,
        };
        Self::new(pump, signal, trigger)
    }

    fn sigma_p(&self) -> f64 {
        self.pump.rms_bandwidth_omega()
    }

    fn sigma_s(&self) -> f64 {
        self.signal_filter.rms_bandwidth_omega()
    }

    fn sigma_t(&self) -> Option<f64> {
        self.trigger_filter.map(|t| t.rms_bandwidth_omega())
    }

    /// Amplitude at signal/trigger detunings (rad/s).
    pub fn amplitude(&self, ws: f64, wt: f64) -> f64 {
        let sp = self.sigma_p();
        let ss = self.sigma_s();
        let mut e = (ws + wt).powi(2) / (4.0 * sp * sp) + ws * ws / (4.0 * ss * ss);
        if let Some(st) = self.sigma_t() {
            e += wt * wt / (4.0 * st * st);
        }
        (-e).exp()
    }

    /// r.m.s. width of `|f|^2` along the trigger axis at fixed signal frequency.
    fn trigger_axis_width(&self) -> f64 {
        let sp = self.sigma_p();
        match self.sigma_t() {
            Some(st) => sp * st / (sp * sp + st * st).sqrt(),
            None => sp,
        }
    }

    /// r.m.s. width of the heralded signal spectrum (a Gaussian convolution fact,
    /// used only to place quadrature nodes).
    fn signal_marginal_width(&self) -> f64 {
        let sp = self.sigma_p();
        let ss = self.sigma_s();
        let wide = match self.sigma_t() {
            Some(st) => 1.0 / (sp * sp + st * st),
            None => 0.0,
        };
        (1.0 / (1.0 / (ss * ss) + wide)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    /// Gauss-Hermite points per frequency axis.
    pub quadrature_order: usize,
    /// Gauss-Hermite points for the jitter average.
    pub jitter_nodes: usize,
    /// Delays (s) at which the averaged curve is sampled and fitted.
    pub delay_grid: Vec<f64>,
    /// `|<pol_a|pol_b>|^2`; zero for orthogonal polarizations.
    pub polarization_overlap: f64,
}

impl OracleSettings {
    /// Grid of 41 delays over six predicted widths on each side, and a
    /// quadrature order large enough to resolve the delay phase across the
    /// heralded spectrum at the outermost delay that will be evaluated.
    pub fn for_params(p: &DipParams) -> Result<Self> {
        let w = analytic::dip_width(p)?;
        let half = 6.0 * w;
        let delay_grid: Vec<f64> = (0..41).map(|i| -half + 2.0 * half * i as f64 / 40.0).collect();
        let jsa = JointSpectralAmplitude::from_params(p)?;
        let reach = half + JITTER_COVERAGE * p.sigma_j;
        let phase = reach * jsa.signal_marginal_width();
        Ok(Self {
            quadrature_order: order_for_phase(phase),
            jitter_nodes: 48,
            delay_grid,
            polarization_overlap: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.quadrature_order < 16 {
            return Err(Error::Config(format!(
                "quadrature_order must be >= 16, got {}",
                self.quadrature_order
            )));
        }
        if 2 * self.quadrature_order > MAX_ORDER {
            return Err(Error::Config(format!(
                "quadrature_order must be <= {} so that the doubled rule exists",
                MAX_ORDER / 2
            )));
        }
        if self.jitter_nodes < 8 {
            return Err(Error::Config(format!(
                "jitter_nodes must be >= 8, got {}",
                self.jitter_nodes
            )));
        }
        if !(0.0..=1.0).contains(&self.polarization_overlap) {
            return Err(Error::Config("polarization_overlap must lie in [0, 1]".into()));
        }
        if self.delay_grid.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("delay grid must be finite".into()));
        }
        Ok(())
    }
}

/// Quadrature order for delay phases up to `phase = d sigma_marginal`. The
/// rule needs roughly `phase^2 / 2` points before the oscillating factor
/// `exp(i w d)` is resolved; the margin covers the doubled-order check.
fn order_for_phase(phase: f64) -> usize {
    let n = (0.7 * phase * phase + 16.0).ceil() as usize;
    n.div_ceil(16).clamp(2, MAX_ORDER / 32) * 16
}

/// Heralded signal density matrix of one source on shared signal nodes.
fn density_matrix(jsa: &JointSpectralAmplitude, signal: &[f64], trigger: &GaussHermite) -> Vec<f64> {
    let n = signal.len();
    let st = std::f64::consts::SQRT_2 * jsa.trigger_axis_width();
    let wts = trigger.scaled_weights();
    let amps: Vec<Vec<f64>> = signal
        .iter()
        .map(|&ws| {
            trigger
                .nodes()
                .iter()
                .map(|&x| jsa.amplitude(ws, st * x))
                .collect()
        })
        .collect();
    let mut rho = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = amps[i]
                .iter()
                .zip(&amps[j])
                .zip(&wts)
                .map(|((a, b), w)| w * a * b)
                .sum::<f64>()
                * st;
            rho[i * n + j] = v;
            rho[j * n + i] = v;
        }
    }
    rho
}

/// Precomputed four-dimensional quadrature for one source pair at one order.
#[derive(Debug, Clone)]
pub struct OverlapKernel {
    omegas: Vec<f64>,
    /// `W_i W_j rho_a(i, j) rho_b(j, i) s^2 / (N_a N_b)`, row major.
    weighted: Vec<f64>,
    polarization_overlap: f64,
}

impl OverlapKernel {
    pub fn new(
        a: &JointSpectralAmplitude,
        b: &JointSpectralAmplitude,
        order: usize,
        polarization_overlap: f64,
    ) -> Result<Self> {
        let rule = GaussHermite::new(order)?;
        let ma = a.signal_marginal_width();
        let mb = b.signal_marginal_width();
        let s = 2.0 / (1.0 / (ma * ma) + 1.0 / (mb * mb)).sqrt();
        let omegas: Vec<f64> = rule.nodes().iter().map(|&x| s * x).collect();
        let w = rule.scaled_weights();
        let rho_a = density_matrix(a, &omegas, &rule);
        let rho_b = density_matrix(b, &omegas, &rule);
        let n = order;
        let norm = |rho: &[f64]| -> f64 { (0..n).map(|i| w[i] * rho[i * n + i]).sum::<f64>() * s };
        let (na, nb) = (norm(&rho_a), norm(&rho_b));
        if !(na > 0.0 && nb > 0.0) {
            return Err(Error::Consistency("vanishing pair normalization".into()));
        }
        let scale = s * s / (na * nb);
        let mut weighted = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                weighted[i * n + j] = w[i] * w[j] * rho_a[i * n + j] * rho_b[j * n + i] * scale;
            }
        }
        Ok(Self {
            omegas,
            weighted,
            polarization_overlap,
        })
    }

    /// Spectral overlap at the given delay, before the polarization factor.
    pub fn overlap(&self, delay: f64) -> f64 {
        let n = self.omegas.len();
        let (sin, cos): (Vec<f64>, Vec<f64>) = self.omegas.iter().map(|w| (w * delay).sin_cos()).unzip();
        let mut total = 0.0;
        for i in 0..n {
            let row = &self.weighted[i * n..(i + 1) * n];
            let mut rc = 0.0;
            let mut rs = 0.0;
            for j in 0..n {
                rc += row[j] * cos[j];
                rs += row[j] * sin[j];
            }
            total += cos[i] * rc + sin[i] * rs;
        }
        total
    }

    pub fn probability(&self, delay: f64) -> f64 {
        0.5 * (1.0 - self.polarization_overlap * self.overlap(delay))
    }
}

/// Kernels at `order` and `2 order`; evaluations fail if they disagree.
#[derive(Debug, Clone)]
pub struct CheckedKernel {
    coarse: OverlapKernel,
    fine: OverlapKernel,
    order: usize,
}

impl CheckedKernel {
    pub fn new(
        a: &JointSpectralAmplitude,
        b: &JointSpectralAmplitude,
        order: usize,
        polarization_overlap: f64,
    ) -> Result<Self> {
        Ok(Self {
            coarse: OverlapKernel::new(a, b, order, polarization_overlap)?,
            fine: OverlapKernel::new(a, b, 2 * order, polarization_overlap)?,
            order,
        })
    }

    /// Probability from the doubled rule, checked against the base rule.
    pub fn probability(&self, delay: f64) -> Result<f64> {
        let p0 = self.coarse.probability(delay);
        let p1 = self.fine.probability(delay);
        let change = ((p1 - p0) / p1.abs().max(1e-300)).abs();
        if change > CONVERGENCE_TOL || !p1.is_finite() {
            return Err(Error::Convergence {
                order: self.order,
                relative_change: change,
            });
        }
        Ok(p1)
    }
}

/// Heralded coincidence probability behind a balanced beam splitter, without jitter.
pub fn coincidence_probability(
    a: &JointSpectralAmplitude,
    b: &JointSpectralAmplitude,
    delay: f64,
    order: usize,
) -> Result<f64> {
    CheckedKernel::new(a, b, order, 1.0)?.probability(delay)
}

/// Averages a sampled curve over a Gaussian pair-time offset of r.m.s. `sigma_j`,
/// returning the averaged values at `delays`.
pub fn jitter_average(curve: &SampledCurve, sigma_j: f64, delays: &[f64], nodes: usize) -> Result<Vec<f64>> {
    if !(sigma_j >= 0.0) || !sigma_j.is_finite() {
        return Err(Error::Domain(format!("sigma_j must be >= 0, got {sigma_j}")));
    }
    if delays.is_empty() {
        return Ok(Vec::new());
    }
    let lo = delays.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = delays.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (dlo, dhi) = curve.domain();
    let need = JITTER_COVERAGE * sigma_j;
    if dlo > lo - need || dhi < hi + need {
        return Err(Error::Coverage(format!(
            "curve spans [{dlo:e}, {dhi:e}] s but [{:e}, {:e}] s is required",
            lo - need,
            hi + need
        )));
    }
    if sigma_j == 0.0 {
        return Ok(delays.iter().map(|&d| curve.eval(d)).collect());
    }
    let rule = GaussHermite::new(nodes)?;
    Ok(delays
        .iter()
        .map(|&d| rule.gaussian_expectation(d, sigma_j, |x| curve.eval(x)))
        .collect())
}

/// Fitted oracle dip together with the curve it was fitted to.
#[derive(Debug, Clone)]
pub struct OracleDip {
    pub model: DipModel,
    pub fit: GaussianDipFit,
    /// Depth `1 - 2 P(0)` before jitter averaging.
    pub unjittered_depth: f64,
    pub delays: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl OracleDip {
    pub fn visibility(&self) -> f64 {
        self.fit.visibility()
    }
}

/// Builds both sources from `params`, sweeps the delay, averages over jitter
/// and fits a Gaussian dip.
pub fn oracle_dip(params: &DipParams, settings: &OracleSettings) -> Result<OracleDip> {
    settings.validate()?;
    let jsa = JointSpectralAmplitude::from_params(params)?;
    let predicted = analytic::dip_width(params)?;
    let grid = &settings.delay_grid;
    if grid.len() < 7 {
        return Err(Error::Config("delay grid needs at least 7 points".into()));
    }
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo > -4.0 * predicted || hi < 4.0 * predicted {
        return Err(Error::Coverage(format!(
            "delay grid [{lo:e}, {hi:e}] s must span +-4 predicted widths ({predicted:e} s)"
        )));
    }

    let kernel = CheckedKernel::new(
        &jsa,
        &jsa,
        settings.quadrature_order,
        settings.polarization_overlap,
    )?;
    let unjittered_depth = 1.0 - 2.0 * kernel.probability(0.0)?;

    let probabilities = if params.sigma_j == 0.0 {
        grid.par_iter()
            .map(|&d| kernel.probability(d))
            .collect::<Result<Vec<_>>>()?
    } else {
        // Unjittered curve on a fine grid that covers the jitter average.
        let w0 = analytic::dip_width(&DipParams {
            sigma_j: 0.0,
            ..*params
        })?;
        let reach = JITTER_COVERAGE * params.sigma_j;
        let (flo, fhi) = (lo - reach, hi + reach);
        let step = (w0 / 16.0).max((fhi - flo) / 6000.0);
        let count = ((fhi - flo) / step).ceil() as usize + 1;
        let fine: Vec<f64> = (0..count)
            .map(|i| flo + (fhi - flo) * i as f64 / (count - 1) as f64)
            .collect();
        let values = fine
            .par_iter()
            .map(|&d| kernel.probability(d))
            .collect::<Result<Vec<_>>>()?;
        let curve = SampledCurve::new(fine, values)?;
        jitter_average(&curve, params.sigma_j, grid, settings.jitter_nodes)?
    };

    let fit = fit_gaussian_dip(grid, &probabilities, Weighting::Uniform)?;
    if fit.residual_rms > 1e-4 * fit.baseline.abs() {
        return Err(Error::Fit {
            message: "oracle curve is not Gaussian within 1e-4 of baseline".into(),
            residual_rms: fit.residual_rms,
        });
    }
    Ok(OracleDip {
        model: fit.to_model(),
        fit,
        unjittered_depth,
        delays: grid.clone(),
        probabilities,
    })
}

/// One cell of the oracle-versus-closed-form comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceCell {
    pub signal_ratio: f64,
    pub jitter_product: f64,
    /// Trigger filter as a multiple of `sigma_s`; `None` for unfiltered.
    pub trigger_ratio: Option<f64>,
    pub oracle_visibility: f64,
    pub analytic_visibility: f64,
    pub relative_error: f64,
}

impl DivergenceCell {
    pub fn within(&self, tolerance: f64) -> bool {
        self.relative_error <= tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub sigma_p: f64,
    pub tolerance: f64,
    pub cells: Vec<DivergenceCell>,
}

impl DivergenceReport {
    pub fn failures(&self) -> Vec<&DivergenceCell> {
        self.cells.iter().filter(|c| !c.within(self.tolerance)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.cells.iter().map(|c| c.relative_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "oracle vs closed form, sigma_p = {:e} rad/s, tolerance {:.1}% relative",
            self.sigma_p,
            100.0 * self.tolerance
        )?;
        writeln!(
            f,
            "{:>8} {:>8} {:>10} {:>12} {:>12} {:>10}  status",
            "ss/sp", "sj*sp", "st/ss", "V_oracle", "V_analytic", "rel_err"
        )?;
        for c in &self.cells {
            let t = c.trigger_ratio.map_or("inf".to_string(), |r| format!("{r}"));
            writeln!(
                f,
                "{:>8} {:>8} {:>10} {:>12.8} {:>12.8} {:>10.2e}  {}",
                c.signal_ratio,
                c.jitter_product,
                t,
                c.oracle_visibility,
                c.analytic_visibility,
                c.relative_error,
                if c.within(self.tolerance) {
                    "ok"
                } else {
                    "DIVERGENT"
                }
            )?;
        }
        Ok(())
    }
}

pub const GRID_SIGNAL_RATIOS: [f64; 3] = [0.05, 0.1, 0.3];
pub const GRID_JITTER_PRODUCTS: [f64; 3] = [0.0, 1.0, 3.4];
pub const GRID_TRIGGER_RATIOS: [Option<f64>; 3] = [Some(2.0), Some(10.0), None];

/// Runs the oracle over the 3x3x3 grid of signal filter, jitter and trigger
/// filter and compares each fitted visibility with the closed form.
pub fn divergence_grid(sigma_p: f64, tolerance: f64) -> Result<DivergenceReport> {
    let mut cells = Vec::with_capacity(27);
    for &rs in &GRID_SIGNAL_RATIOS {
        for &pj in &GRID_JITTER_PRODUCTS {
            for &rt in &GRID_TRIGGER_RATIOS {
                let ss = rs * sigma_p;
                let params = DipParams::new(
                    sigma_p,
                    ss,
                    rt.map_or(TriggerFilter::Unfiltered, |r| TriggerFilter::Filtered(r * ss)),
                    pj / sigma_p,
                )?;
                let settings = OracleSettings::for_params(&params)?;
                let dip = oracle_dip(&params, &settings)?;
                let analytic_visibility = analytic::visibility(&params)?;
                let oracle_visibility = dip.visibility();
                cells.push(DivergenceCell {
                    signal_ratio: rs,
                    jitter_product: pj,
                    trigger_ratio: rt,
                    oracle_visibility,
                    analytic_visibility,
                    relative_error: ((oracle_visibility - analytic_visibility) / analytic_visibility).abs(),
                });
            }
        }
    }
    Ok(DivergenceReport {
        sigma_p,
        tolerance,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::rms_omega_from_nm;

    fn pump() -> f64 {
        rms_omega_from_nm(394.25, 0.8).unwrap()
    }

    fn jsa(ss_ratio: f64, trigger: TriggerFilter) -> JointSpectralAmplitude {
        let sp = pump();
        let t = match trigger {
            TriggerFilter::Filtered(r) => TriggerFilter::Filtered(r * sp),
            TriggerFilter::Unfiltered => TriggerFilter::Unfiltered,
        };
        JointSpectralAmplitude::from_params(&DipParams::new(sp, ss_ratio * sp, t, 0.0).unwrap()).unwrap()
    }

    #[test]
    fn narrow_filter_gives_near_perfect_suppression() {
        let a = jsa(0.01, TriggerFilter::Unfiltered);
        let p = coincidence_probability(&a, &a, 0.0, 32).unwrap();
        assert!((0.0..1e-4).contains(&p), "p = {p}");
    }

    #[test]
    fn distinguishable_at_large_delay() {
        let a = jsa(0.3, TriggerFilter::Filtered(0.6));
        let d = 5e-12;
        let order = order_for_phase(d * a.signal_marginal_width());
        let p = coincidence_probability(&a, &a, d, order).unwrap();
        assert!((p - 0.5).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn symmetric_in_delay() {
        let a = jsa(0.1, TriggerFilter::Filtered(0.5));
        let k = CheckedKernel::new(&a, &a, 48, 1.0).unwrap();
        for d in [0.1e-12, 0.5e-12, 1.3e-12] {
            let (p, m) = (k.probability(d).unwrap(), k.probability(-d).unwrap());
            assert!((p - m).abs() < 1e-10);
            assert!((0.0..=0.5 + 1e-9).contains(&p));
        }
    }

    #[test]
    fn order_doubling_is_stable_at_reference_filters() {
        let sp = pump();
        let sol = analytic::solve_filters(0.84, 0.86e-12, sp, 350e-15).unwrap();
        let p = DipParams::new(sp, sol.sigma_s, sol.sigma_t, 0.0).unwrap();
        let a = JointSpectralAmplitude::from_params(&p).unwrap();
        for d in [0.0, 0.3e-12, 0.9e-12] {
            let lo = OverlapKernel::new(&a, &a, 48, 1.0).unwrap().probability(d);
            let hi = OverlapKernel::new(&a, &a, 96, 1.0).unwrap().probability(d);
            assert!((lo - hi).abs() < 1e-8, "d = {d:e}: {lo} vs {hi}");
        }
    }

    #[test]
    fn unconverged_quadrature_is_reported() {
        // far too few nodes for this delay phase
        let a = jsa(0.3, TriggerFilter::Unfiltered);
        let err = coincidence_probability(&a, &a, 20e-12, 16).unwrap_err();
        assert!(matches!(err, Error::Convergence { .. }), "{err:?}");
    }

    #[test]
    fn jitter_average_identities() {
        let xs: Vec<f64> = (0..401).map(|i| -20e-12 + 0.1e-12 * i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|d| 0.5 - 0.4 * (-0.5 * (d / 1e-12f64).powi(2)).exp())
            .collect();
        let curve = SampledCurve::new(xs.clone(), ys.clone()).unwrap();
        let delays = [-1e-12, 0.0, 0.5e-12];
        let same = jitter_average(&curve, 0.0, &delays, 16).unwrap();
        for (d, v) in delays.iter().zip(&same) {
            assert!((v - curve.eval(*d)).abs() < 1e-15);
        }

        let flat = SampledCurve::new(xs.clone(), vec![0.37; xs.len()]).unwrap();
        for v in jitter_average(&flat, 1e-12, &delays, 16).unwrap() {
            assert!((v - 0.37).abs() < 1e-14);
        }

        // Gaussian convolved with Gaussian: depth w/sqrt(w^2+s^2), width sqrt(w^2+s^2)
        let sj = 0.8e-12;
        let avg = jitter_average(&curve, sj, &[0.0, 1e-12], 48).unwrap();
        let wt = (1e-24f64 + sj * sj).sqrt();
        let expect = |d: f64| 0.5 - 0.4 * (1e-12 / wt) * (-0.5 * (d / wt).powi(2)).exp();
        assert!((avg[0] - expect(0.0)).abs() < 1e-6);
        assert!((avg[1] - expect(1e-12)).abs() < 1e-6);
    }

    #[test]
    fn jitter_average_needs_coverage() {
        let xs: Vec<f64> = (0..101).map(|i| -5e-12 + 0.1e-12 * i as f64).collect();
        let curve = SampledCurve::new(xs.clone(), vec![0.5; xs.len()]).unwrap();
        let err = jitter_average(&curve, 1e-12, &[0.0, 1e-12], 16).unwrap_err();
        assert!(matches!(err, Error::Coverage(_)));
        assert!(jitter_average(&curve, 0.9e-12, &[0.0], 16).is_ok());
    }

    #[test]
    fn settings_invariants() {
        let mut s = OracleSettings {
            quadrature_order: 32,
            jitter_nodes: 16,
            delay_grid: vec![0.0],
            polarization_overlap: 1.0,
        };
        assert!(s.validate().is_ok());
        s.quadrature_order = 8;
        assert!(s.validate().is_err());
        s.quadrature_order = 32;
        s.jitter_nodes = 4;
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_non_degenerate_sources() {
        let pump = SpectralGaussian::from_nm(394.25, 0.8).unwrap();
        let sig = SpectralGaussian::from_nm(790.0, 0.3).unwrap();
        assert!(JointSpectralAmplitude::new(pump, sig, None).is_err());
    }

    fn preset() -> DipParams {
        let sp = pump();
        let sol = analytic::solve_filters(0.84, 0.86e-12, sp, 350e-15).unwrap();
        DipParams::new(sp, sol.sigma_s, sol.sigma_t, 350e-15).unwrap()
    }

    #[test]
    fn preset_dip_matches_closed_form() {
        let p = preset();
        let dip = oracle_dip(&p, &OracleSettings::for_params(&p).unwrap()).unwrap();
        assert!((dip.visibility() - 0.84).abs() < 1e-5, "V = {}", dip.visibility());
        assert!((dip.fit.rms_width - 0.86e-12).abs() < 1e-16);
        assert!((dip.fit.baseline - 0.5).abs() < 1e-7);
        assert!(dip.unjittered_depth > dip.model.depth);
    }

    #[test]
    fn orthogonal_polarizations_show_no_dip() {
        let p = preset();
        let mut s = OracleSettings::for_params(&p).unwrap();
        s.polarization_overlap = 0.0;
        let dip = oracle_dip(&p, &s).unwrap();
        assert!(dip.visibility().abs() < 1e-9);
        assert!(dip.probabilities.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn short_delay_grid_is_rejected() {
        let p = preset();
        let mut s = OracleSettings::for_params(&p).unwrap();
        s.delay_grid = (0..21).map(|i| -1e-12 + 1e-13 * i as f64).collect();
        assert!(matches!(oracle_dip(&p, &s), Err(Error::Coverage(_))));
    }

    #[test]
    fn grid_agrees_with_closed_form() {
        let report = divergence_grid(pump(), 0.02).unwrap();
        assert_eq!(report.cells.len(), 27);
        assert!(report.passed(), "{report}");
        assert!(report.max_relative_error() < 1e-6);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn probability_bounded_and_symmetric(rs in 0.02f64..0.5, rt in 0.5f64..20.0, k in 0.0f64..6.0) {
            let a = jsa(rs, TriggerFilter::Filtered(rt * rs));
            let b = jsa(rs * 1.3, TriggerFilter::Unfiltered);
            let d = k / a.signal_marginal_width();
            let order = order_for_phase(d * a.signal_marginal_width().max(b.signal_marginal_width()));
            let k1 = CheckedKernel::new(&a, &b, order, 1.0).unwrap();
            let p = k1.probability(d).unwrap();
            let m = k1.probability(-d).unwrap();
            proptest::prop_assert!((-1e-12..=0.5 + 1e-12).contains(&p));
            proptest::prop_assert!((p - m).abs() < 1e-12);
        }
    }
}
