//! Event-level Monte Carlo of the delay-scan counting experiment.
//!
//! Each scan point is a set delay held for `dwell_per_point`, split into
//! blocks. Within a block the realized delay follows
//! `set + setting_error + start_offset + W(t)`, with `W` a Wiener process of
//! coefficient `drift_rate`. With compensation on, every block starts with a
//! fresh delay setting, so both the setting error and the recentering residual
//! are redrawn per block. With it off, the delay is set once per point and
//! drift accumulates across the whole scan.
//!
//! Fourfold events are generated by thinning: candidate coincidences arrive as
//! a Poisson process at the distinguishable-photon rate and each one survives
//! with probability `1 - D m g(d(t))`, where `g` is the Gaussian dip profile and
//! `m` the polarization match of that event. Thermal inputs are handled
//! separately by [`simulate_thermal`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::analytic::{scenario_visibility, DipModel, Scenario};
use crate::error::{Error, Result};
use crate::fit::{fit_gaussian_dip, GaussianDipFit, Weighting};

/// Seed of the block bootstrap in [`fit_dip`].
pub const BOOTSTRAP_SEED: u64 = 0x484f_4d5f_4249_4153;

/// Bootstrap resamples drawn by [`fit_dip`].
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Drift path samples per block.
const PATH_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Laser repetition rate (Hz).
    pub rep_rate: f64,
    pub pair_prob_a: f64,
    pub pair_prob_b: f64,
    pub trigger_efficiency: f64,
    pub signal_efficiency: f64,
    /// Delay increment between scan points (s).
    pub scan_step: f64,
    /// Scan covers `[-scan_half_range, scan_half_range]` (s).
    pub scan_half_range: f64,
    pub dwell_per_point: f64,
    pub block_duration: f64,
    /// Random-walk coefficient of the relative delay (s per sqrt(s)).
    pub drift_rate: f64,
    /// Recenter the delay at every block boundary.
    pub compensation: bool,
    /// Half width of the uniform delay-setting error (s).
    pub setting_error: f64,
    /// Half width of the uniform residual left after recentering (s).
    pub recenter_residual: f64,
    pub scenario: Scenario,
    /// Intensity ratio of the two thermal inputs.
    pub intensity_ratio: f64,
    /// Field samples per block in the thermal simulation.
    pub thermal_samples: usize,
    /// Triggered dip; the baseline is ignored, rates set the count scale.
    pub dip: DipModel,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Protocol defaults with a unit-depth placeholder dip; presets fill in the rest.
    pub fn protocol_defaults(dip: DipModel) -> Self {
        Self {
            rep_rate: 76e6,
            pair_prob_a: 4.2e-3,
            pair_prob_b: 4.2e-3,
            trigger_efficiency: 0.1,
            signal_efficiency: 0.1,
            scan_step: 300e-15,
            scan_half_range: 4.5e-12,
            dwell_per_point: 900.0,
            block_duration: 60.0,
            drift_rate: 10e-15,
            compensation: true,
            setting_error: 100e-15,
            recenter_residual: 30e-15,
            scenario: Scenario::Indistinguishable,
            intensity_ratio: 1.0,
            thermal_samples: 4096,
            dip,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.rep_rate > 0.0) || !self.rep_rate.is_finite() {
            return cfg(format!("rep_rate must be > 0, got {}", self.rep_rate));
        }
        for (name, p) in [
            ("pair_prob_a", self.pair_prob_a),
            ("pair_prob_b", self.pair_prob_b),
            ("trigger_efficiency", self.trigger_efficiency),
            ("signal_efficiency", self.signal_efficiency),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return cfg(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.scan_step > 0.0) || !(self.scan_half_range >= 0.0) {
            return cfg("scan_step must be > 0 and scan_half_range >= 0".into());
        }
        if !(self.block_duration > 0.0) || !self.block_duration.is_finite() {
            return cfg(format!("block_duration must be > 0, got {}", self.block_duration));
        }
        if !(self.dwell_per_point > 0.0) || !self.dwell_per_point.is_finite() {
            return cfg(format!(
                "dwell_per_point must be > 0, got {}",
                self.dwell_per_point
            ));
        }
        let ratio = self.dwell_per_point / self.block_duration;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return cfg(format!(
                "dwell_per_point {} s is not an integer multiple of block_duration {} s",
                self.dwell_per_point, self.block_duration
            ));
        }
        for (name, v) in [
            ("drift_rate", self.drift_rate),
            ("setting_error", self.setting_error),
            ("recenter_residual", self.recenter_residual),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return cfg(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.scenario == Scenario::Thermal {
            if !(self.intensity_ratio > 0.0) || !self.intensity_ratio.is_finite() {
                return Err(Error::Domain(format!(
                    "intensity ratio must be > 0, got {}",
                    self.intensity_ratio
                )));
            }
            if self.thermal_samples < 2 {
                return cfg("thermal_samples must be >= 2".into());
            }
        }
        DipModel::new(1.0, self.dip.depth, self.dip.rms_width)?;
        Ok(())
    }

    pub fn blocks_per_point(&self) -> usize {
        (self.dwell_per_point / self.block_duration).round() as usize
    }

    /// Set delays, symmetric about zero in steps of `scan_step`.
    pub fn delay_grid(&self) -> Vec<f64> {
        let half = (self.scan_half_range / self.scan_step + 1e-9).floor() as i64;
        (-half..=half).map(|k| k as f64 * self.scan_step).collect()
    }

    /// Expected coincidence rate (1/s) far outside the dip. The factor 1/2 is
    /// the probability that distinguishable photons leave by different ports.
    /// Heralded scenarios require both trigger detections; the thermal
    /// scenario ignores the triggers and counts plain twofold coincidences.
    pub fn baseline_rate(&self) -> f64 {
        let trigger = if self.scenario == Scenario::Thermal {
            1.0
        } else {
            self.trigger_efficiency * self.trigger_efficiency
        };
        0.5 * self.rep_rate
            * self.pair_prob_a
            * self.pair_prob_b
            * trigger
            * self.signal_efficiency
            * self.signal_efficiency
    }

    /// Visibility the simulated scenario should converge to.
    pub fn expected_visibility(&self) -> Result<f64> {
        scenario_visibility(self.scenario, self.dip.depth, self.intensity_ratio)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    /// Time-averaged delay during the block (s).
    pub realized_delay: f64,
    pub counts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub set_delay: f64,
    pub blocks: Vec<Block>,
}

impl ScanPoint {
    pub fn total_counts(&self) -> u64 {
        self.blocks.iter().map(|b| b.counts).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanMetadata {
    pub seed: Option<u64>,
    pub scenario: Option<Scenario>,
    pub dwell_per_point: Option<f64>,
    pub block_duration: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub metadata: ScanMetadata,
}

impl ScanResult {
    /// Rebuilds a scan from flat `(set_delay, block_index, realized_delay, counts)`
    /// rows. Points keep the order in which their set delay first appears and
    /// blocks are ordered by index.
    pub fn from_rows(rows: &[(f64, usize, f64, u64)]) -> Result<Self> {
        let mut points: Vec<(ScanPoint, Vec<usize>)> = Vec::new();
        for &(set, index, realized, counts) in rows {
            if !set.is_finite() || !realized.is_finite() {
                return Err(Error::Statistics("non-finite delay in scan rows".into()));
            }
            let slot = match points.iter().position(|(p, _)| p.set_delay == set) {
                Some(i) => i,
                None => {
                    points.push((
                        ScanPoint {
                            set_delay: set,
                            blocks: Vec::new(),
                        },
                        Vec::new(),
                    ));
                    points.len() - 1
                }
            };
            let (point, indices) = &mut points[slot];
            if indices.contains(&index) {
                return Err(Error::Statistics(format!(
                    "duplicate block {index} at set delay {set:e} s"
                )));
            }
            point.blocks.push(Block {
                realized_delay: realized,
                counts,
            });
            indices.push(index);
        }
        let points = points
            .into_iter()
            .map(|(mut p, idx)| {
                let mut order: Vec<usize> = (0..idx.len()).collect();
                order.sort_by_key(|&i| idx[i]);
                p.blocks = order.iter().map(|&i| p.blocks[i]).collect();
                p
            })
            .collect();
        Ok(Self {
            points,
            metadata: ScanMetadata {
                seed: None,
                scenario: None,
                dwell_per_point: None,
                block_duration: None,
                warnings: Vec::new(),
            },
        })
    }

    /// Flat rows in scan order, the inverse of [`ScanResult::from_rows`].
    pub fn rows(&self) -> Vec<(f64, usize, f64, u64)> {
        self.points
            .iter()
            .flat_map(|p| {
                p.blocks
                    .iter()
                    .enumerate()
                    .map(move |(i, b)| (p.set_delay, i, b.realized_delay, b.counts))
            })
            .collect()
    }

    pub fn total_counts(&self) -> u64 {
        self.points.iter().map(ScanPoint::total_counts).sum()
    }
}

/// Delay trajectory of one block relative to its start, sampled on an even grid.
#[derive(Debug, Clone)]
struct BlockPath {
    start_offset: f64,
    walk: Vec<f64>,
}

impl BlockPath {
    fn at(&self, frac: f64) -> f64 {
        let x = frac.clamp(0.0, 1.0) * PATH_STEPS as f64;
        let i = (x.floor() as usize).min(PATH_STEPS - 1);
        let t = x - i as f64;
        self.start_offset + self.walk[i] * (1.0 - t) + self.walk[i + 1] * t
    }

    /// Exact time average of the piecewise-linear path.
    fn mean(&self) -> f64 {
        let inner: f64 = self.walk.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
        self.start_offset + inner / PATH_STEPS as f64
    }

    fn end(&self) -> f64 {
        self.walk[PATH_STEPS]
    }
}

fn point_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_pm(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean > 0.0 {
        // a valid positive mean cannot fail to construct
        Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
    } else {
        0
    }
}

/// Setting error and block paths for every point. Path randomness is drawn per
/// point from stream `2 i`; only the cumulative offset without compensation is
/// resolved sequentially.
fn delay_paths(config: &ExperimentConfig, grid: &[f64]) -> Vec<(f64, Vec<BlockPath>)> {
    let blocks = config.blocks_per_point();
    let dt = config.block_duration / PATH_STEPS as f64;
    let step_sd = config.drift_rate * dt.sqrt();
    let mut paths: Vec<(f64, Vec<BlockPath>)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = point_rng(config.seed, 2 * i as u64);
            let setting = uniform_pm(&mut rng, config.setting_error);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let blocks = (0..blocks)
                .map(|_| {
                    let mut residual = uniform_pm(&mut rng, config.recenter_residual);
                    if config.compensation {
                        residual += uniform_pm(&mut rng, config.setting_error);
                    }
                    let mut walk = Vec::with_capacity(PATH_STEPS + 1);
                    let mut x = 0.0;
                    walk.push(x);
                    for _ in 0..PATH_STEPS {
                        x += step_sd * normal.sample(&mut rng);
                        walk.push(x);
                    }
                    BlockPath {
                        start_offset: residual,
                        walk,
                    }
                })
                .collect();
            (if config.compensation { 0.0 } else { setting }, blocks)
        })
        .collect();
    if !config.compensation {
        let mut carried = 0.0;
        for (_, blocks) in paths.iter_mut() {
            for b in blocks.iter_mut() {
                b.start_offset = carried;
                carried += b.end();
            }
        }
    }
    paths
}

fn degenerate_warnings(config: &ExperimentConfig) -> Vec<String> {
    if config.baseline_rate() == 0.0 {
        vec!["degenerate statistics: expected fourfold rate is zero".into()]
    } else {
        Vec::new()
    }
}

/// Runs the delay scan. Thermal scenarios are delegated to [`simulate_thermal`].
pub fn run_scan(config: &ExperimentConfig) -> Result<ScanResult> {
    if config.scenario == Scenario::Thermal {
        return simulate_thermal(config, config.intensity_ratio);
    }
    config.validate()?;
    let grid = config.delay_grid();
    let paths = delay_paths(config, &grid);
    let mean_candidates = config.baseline_rate() * config.block_duration;
    let depth = config.dip.depth;
    let width = config.dip.rms_width;
    let scenario = config.scenario;

    let points = grid
        .par_iter()
        .zip(paths.par_iter())
        .enumerate()
        .map(|(i, (&set, (setting, blocks)))| {
            let mut rng = point_rng(config.seed, 2 * i as u64 + 1);
            let blocks = blocks
                .iter()
                .map(|path| {
                    let base = set + setting;
                    let candidates = poisson(&mut rng, mean_candidates);
                    let mut counts = 0;
                    for _ in 0..candidates {
                        let frac: f64 = rng.random();
                        let match_factor = match scenario {
                            Scenario::Indistinguishable => 1.0,
                            Scenario::Orthogonal => 0.0,
                            // each photon H or V with equal probability
                            _ => {
                                let (pa, pb): (bool, bool) = (rng.random(), rng.random());
                                if pa == pb {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        let d = base + path.at(frac);
                        let g = (-0.5 * (d / width).powi(2)).exp();
                        let u: f64 = rng.random();
                        if u >= depth * match_factor * g {
                            counts += 1;
                        }
                    }
                    Block {
                        realized_delay: base + path.mean(),
                        counts,
                    }
                })
                .collect();
            ScanPoint {
                set_delay: set,
                blocks,
            }
        })
        .collect();

    Ok(ScanResult {
        points,
        metadata: ScanMetadata {
            seed: Some(config.seed),
            scenario: Some(scenario),
            dwell_per_point: Some(config.dwell_per_point),
            block_duration: Some(config.block_duration),
            warnings: degenerate_warnings(config),
        },
    })
}

/// Coincidence weights `I_c I_d` for one pair of thermal field samples behind
/// the beam splitter, with and without mode overlap `m^2`.
fn thermal_weights(rng: &mut ChaCha8Rng, normal: &Normal<f64>, r: f64, m2: f64) -> (f64, f64) {
    let sa = (r / 2.0).sqrt();
    let sb = std::f64::consts::FRAC_1_SQRT_2;
    let (ar, ai) = (sa * normal.sample(rng), sa * normal.sample(rng));
    let (br, bi) = (sb * normal.sample(rng), sb * normal.sample(rng));
    let total = ar * ar + ai * ai + br * br + bi * bi;
    let cross = ar * br + ai * bi;
    let overlapped = 0.25 * (total * total - 4.0 * m2 * cross * cross);
    (overlapped, 0.25 * total * total)
}

/// Thermal inputs of mean intensities `r : 1`. Each block draws
/// `thermal_samples` pairs of circular-Gaussian field amplitudes at random
/// times within the block; the mean coincidence weight relative to the same
/// samples without overlap scales the distinguishable count rate.
pub fn simulate_thermal(config: &ExperimentConfig, intensity_ratio: f64) -> Result<ScanResult> {
    if !(intensity_ratio > 0.0) || !intensity_ratio.is_finite() {
        return Err(Error::Domain(format!(
            "intensity ratio must be > 0, got {intensity_ratio}"
        )));
    }
    let config = ExperimentConfig {
        scenario: Scenario::Thermal,
        intensity_ratio,
        ..config.clone()
    };
    config.validate()?;
    let grid = config.delay_grid();
    let paths = delay_paths(&config, &grid);
    let mean_counts = config.baseline_rate() * config.block_duration;
    let depth = config.dip.depth;
    let width = config.dip.rms_width;
    let samples = config.thermal_samples;

    let points = grid
        .par_iter()
        .zip(paths.par_iter())
        .enumerate()
        .map(|(i, (&set, (setting, blocks)))| {
            let mut rng = point_rng(config.seed, 2 * i as u64 + 1);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let blocks = blocks
                .iter()
                .map(|path| {
                    let base = set + setting;
                    let (mut with, mut without) = (0.0, 0.0);
                    for _ in 0..samples {
                        let frac: f64 = rng.random();
                        let d = base + path.at(frac);
                        let m2 = depth * (-0.5 * (d / width).powi(2)).exp();
                        let (w, w0) = thermal_weights(&mut rng, &normal, intensity_ratio, m2);
                        with += w;
                        without += w0;
                    }
                    let ratio = if without > 0.0 { with / without } else { 1.0 };
                    Block {
                        realized_delay: base + path.mean(),
                        counts: poisson(&mut rng, mean_counts * ratio),
                    }
                })
                .collect();
            ScanPoint {
                set_delay: set,
                blocks,
            }
        })
        .collect();

    Ok(ScanResult {
        points,
        metadata: ScanMetadata {
            seed: Some(config.seed),
            scenario: Some(Scenario::Thermal),
            dwell_per_point: Some(config.dwell_per_point),
            block_duration: Some(config.block_duration),
            warnings: degenerate_warnings(&config),
        },
    })
}

/// Sample-mean estimate of the thermal visibility at zero delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalEstimate {
    pub visibility: f64,
    pub standard_error: f64,
    pub samples: usize,
}

/// Estimates the thermal visibility from `samples` field draws with overlap
/// `m^2 = depth`, using the same draws without overlap as the reference.
/// The standard error comes from 50 batch means.
pub fn thermal_visibility_estimate(
    depth: f64,
    intensity_ratio: f64,
    samples: usize,
    seed: u64,
) -> Result<ThermalEstimate> {
    if !(intensity_ratio > 0.0) {
        return Err(Error::Domain(format!(
            "intensity ratio must be > 0, got {intensity_ratio}"
        )));
    }
    if !(0.0..=1.0).contains(&depth) {
        return Err(Error::Domain(format!("depth must lie in [0, 1], got {depth}")));
    }
    const BATCHES: usize = 50;
    if samples < BATCHES * 2 {
        return Err(Error::Statistics(format!(
            "need at least {} samples",
            BATCHES * 2
        )));
    }
    let per = samples / BATCHES;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let batches: Vec<(f64, f64)> = (0..BATCHES)
        .into_par_iter()
        .map(|k| {
            let mut rng = point_rng(seed, k as u64);
            let (mut with, mut without) = (0.0, 0.0);
            for _ in 0..per {
                let (w, w0) = thermal_weights(&mut rng, &normal, intensity_ratio, depth);
                with += w;
                without += w0;
            }
            (with, without)
        })
        .collect();
    let vis = |with: f64, without: f64| {
        let a = 1.0 - with / without;
        a / (2.0 - a)
    };
    let (tw, t0) = batches.iter().fold((0.0, 0.0), |(a, b), (w, w0)| (a + w, b + w0));
    let visibility = vis(tw, t0);
    let per_batch: Vec<f64> = batches.iter().map(|&(w, w0)| vis(w, w0)).collect();
    let mean = per_batch.iter().sum::<f64>() / BATCHES as f64;
    let var = per_batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok(ThermalEstimate {
        visibility,
        standard_error: (var / BATCHES as f64).sqrt(),
        samples: per * BATCHES,
    })
}

/// Dip fit of a scan with bootstrap uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct DipFitReport {
    pub fit: GaussianDipFit,
    pub model: DipModel,
    pub visibility: f64,
    pub visibility_sigma: f64,
    pub width_sigma: f64,
    /// Bootstrap resamples whose fit converged.
    pub resamples: usize,
    /// False when the scan does not reach two fitted widths on both sides.
    pub span_ok: bool,
}

impl DipFitReport {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.span_ok {
            w.push("scan does not span +-2 fitted widths; width and depth are poorly constrained".into());
        }
        w
    }
}

/// Poisson maximum-likelihood fit of summed counts against set delay, with a
/// 200-resample bootstrap over blocks.
pub fn fit_dip(scan: &ScanResult) -> Result<DipFitReport> {
    fit_dip_with(scan, BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED)
}

pub fn fit_dip_with(scan: &ScanResult, resamples: usize, bootstrap_seed: u64) -> Result<DipFitReport> {
    if scan.points.len() < 7 {
        return Err(Error::Statistics(format!(
            "dip fit needs at least 7 delay points, got {}",
            scan.points.len()
        )));
    }
    if scan.points.iter().any(|p| p.blocks.is_empty()) {
        return Err(Error::Statistics("a delay point has no blocks".into()));
    }
    if scan.total_counts() == 0 {
        return Err(Error::Statistics("all counts are zero".into()));
    }
    let delays: Vec<f64> = scan.points.iter().map(|p| p.set_delay).collect();
    let totals: Vec<f64> = scan.points.iter().map(|p| p.total_counts() as f64).collect();
    let fit = fit_gaussian_dip(&delays, &totals, Weighting::Poisson)?;

    let mut rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
    let mut vis = Vec::with_capacity(resamples);
    let mut widths = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let sample: Vec<f64> = scan
            .points
            .iter()
            .map(|p| {
                let n = p.blocks.len();
                (0..n)
                    .map(|_| p.blocks[rng.random_range(0..n)].counts as f64)
                    .sum()
            })
            .collect();
        if sample.iter().all(|&c| c == 0.0) {
            continue;
        }
        if let Ok(f) = fit_gaussian_dip(&delays, &sample, Weighting::Poisson) {
            vis.push(f.visibility());
            widths.push(f.rms_width);
        }
    }
    let sd = |xs: &[f64]| {
        if xs.len() < 2 {
            return f64::NAN;
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    };
    Ok(DipFitReport {
        model: fit.to_model(),
        visibility: fit.visibility(),
        visibility_sigma: sd(&vis),
        width_sigma: sd(&widths),
        resamples: vis.len(),
        span_ok: fit.spans_widths(&delays, 2.0),
        fit,
    })
}
