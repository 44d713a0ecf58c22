//! Two-stage phase-locked loop between the master and slave lasers.
//!
//! The loop is integrated in the phase domain at the active harmonic `N` of
//! the repetition rate, one sample per timestep:
//!
//! ```text
//! detector   v = Kd wrap(phi)
//! PI filter  u = Kp (v + wz int v dt)
//! actuator   da/dt = wa (u(t - delay) - a)
//! VCO        dphi/dt = dphi_free/dt - Kv a
//! ```
//!
//! The free-running phase `phi_free` (radians at the active harmonic) is white
//! frequency noise plus random-walk frequency noise. The timing error is
//! `phi / (2 pi N f_rep)`. The loop starts at `N = 1` and hands over to the
//! configured harmonic once the coarse error has stayed below the threshold
//! for ten loop time constants; the phase, integrator and actuator states are
//! rescaled by the harmonic ratio so that the timing correction is continuous.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Target phase margin of the PI design (degrees).
pub const DESIGN_PHASE_MARGIN_DEG: f64 = 60.0;

/// Loops with less linearized phase margin are rejected.
pub const MIN_PHASE_MARGIN_DEG: f64 = 10.0;

/// Free-running noise of the calibrated preset (at the active harmonic).
/// Chosen so that the fine lock settles at 260 fs r.m.s.; not measured values.
pub const CALIBRATED_WHITE_FM: f64 = 0.1185;
pub const CALIBRATED_RANDOM_WALK_FM: f64 = 0.1185e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeRunNoise {
    /// Phase diffusion from white frequency noise (rad^2/s).
    pub white_fm: f64,
    /// Frequency diffusion from random-walk frequency noise (rad^2/s^3).
    pub random_walk_fm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub rep_rate: f64,
    /// Harmonic of the fine lock; 1 keeps the coarse lock throughout.
    pub harmonic: u32,
    pub loop_bandwidth: f64,
    /// V/rad.
    pub detector_gain: f64,
    /// rad/s/V at the active harmonic.
    pub vco_gain: f64,
    /// Actuator low-pass pole (Hz).
    pub actuator_bandwidth: f64,
    /// Transport delay between filter and actuator (s).
    pub loop_delay: f64,
    pub free_run_noise: FreeRunNoise,
    pub timestep: f64,
    /// Coarse phase error (rad) below which the handover clock runs.
    pub handover_threshold: f64,
    /// Phase error at start (rad at the fundamental).
    pub initial_offset: f64,
}

impl LoopConfig {
    /// 76 MHz lasers, 9th-harmonic fine lock, 10 kHz loop, calibrated noise.
    pub fn calibrated() -> Self {
        Self {
            rep_rate: 76e6,
            harmonic: 9,
            loop_bandwidth: 10e3,
            detector_gain: 1.0,
            vco_gain: 2.0 * PI * 1e4,
            actuator_bandwidth: 100e3,
            loop_delay: 0.0,
            free_run_noise: FreeRunNoise {
                white_fm: CALIBRATED_WHITE_FM,
                random_walk_fm: CALIBRATED_RANDOM_WALK_FM,
            },
            timestep: 2.5e-7,
            handover_threshold: 0.05,
            initial_offset: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.rep_rate > 0.0) {
            return bad(format!("rep_rate must be > 0, got {}", self.rep_rate));
        }
        if self.harmonic < 1 {
            return bad("harmonic must be >= 1".into());
        }
        if !(self.loop_bandwidth > 0.0
            && self.loop_bandwidth < self.actuator_bandwidth
            && self.actuator_bandwidth < self.rep_rate)
        {
            return bad(format!(
                "need 0 < loop_bandwidth ({}) < actuator_bandwidth ({}) < rep_rate ({})",
                self.loop_bandwidth, self.actuator_bandwidth, self.rep_rate
            ));
        }
        if !(self.timestep > 0.0 && self.timestep < 1.0 / (20.0 * self.actuator_bandwidth)) {
            return bad(format!(
                "timestep {} s must be positive and below 1/(20 actuator_bandwidth)",
                self.timestep
            ));
        }
        if !(self.detector_gain > 0.0 && self.vco_gain > 0.0) {
            return bad("detector and VCO gains must be > 0".into());
        }
        if !(self.loop_delay >= 0.0) {
            return bad("loop_delay must be >= 0".into());
        }
        let n = self.free_run_noise;
        if !(n.white_fm >= 0.0 && n.random_walk_fm >= 0.0) {
            return bad("noise levels must be >= 0".into());
        }
        if !(self.handover_threshold > 0.0 && self.handover_threshold < PI) {
            return bad("handover_threshold must lie in (0, pi)".into());
        }
        if !self.initial_offset.is_finite() {
            return bad("initial_offset must be finite".into());
        }
        Ok(())
    }

    /// Loop time constant `1 / (2 pi loop_bandwidth)`.
    pub fn time_constant(&self) -> f64 {
        1.0 / (2.0 * PI * self.loop_bandwidth)
    }
}

/// PI filter parameters and the resulting linearized margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopDesign {
    pub proportional_gain: f64,
    /// PI zero (rad/s).
    pub integral_corner: f64,
    pub crossover: f64,
    pub phase_margin_deg: f64,
}

impl LoopDesign {
    /// Open-loop gain `L(j w)`.
    pub fn open_loop(&self, config: &LoopConfig, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        let wa = 2.0 * PI * config.actuator_bandwidth;
        let k = config.detector_gain * self.proportional_gain * config.vco_gain;
        k * (1.0 + self.integral_corner / s) * (wa / (s + wa)) * (-s * config.loop_delay).exp() / s
    }

    /// `|1 / (1 + L(j w))|`, the transfer from free-running to residual phase.
    pub fn sensitivity(&self, config: &LoopConfig, frequency: f64) -> f64 {
        (1.0 / (1.0 + self.open_loop(config, 2.0 * PI * frequency))).norm()
    }
}

/// Places the crossover at the loop bandwidth with 60 degrees of phase margin.
/// When the actuator pole and delay leave too little phase, the PI zero is
/// pushed to one degree short of full lead; the margin is then checked.
pub fn design_loop(config: &LoopConfig) -> Result<LoopDesign> {
    config.validate()?;
    let wc = 2.0 * PI * config.loop_bandwidth;
    let wa = 2.0 * PI * config.actuator_bandwidth;
    let lag = (wc / wa).atan() + wc * config.loop_delay;
    let lead = (DESIGN_PHASE_MARGIN_DEG.to_radians() + lag).min(89f64.to_radians());
    let wz = wc / lead.tan();
    let mag = (1.0 + (wz / wc).powi(2)).sqrt() * wa / (wc * wc + wa * wa).sqrt() / wc;
    let proportional_gain = 1.0 / (mag * config.detector_gain * config.vco_gain);
    let mut design = LoopDesign {
        proportional_gain,
        integral_corner: wz,
        crossover: wc,
        phase_margin_deg: 0.0,
    };
    design.phase_margin_deg = 180.0 + design.open_loop(config, wc).arg().to_degrees();
    if design.phase_margin_deg > 180.0 {
        design.phase_margin_deg -= 360.0;
    }
    if design.phase_margin_deg < MIN_PHASE_MARGIN_DEG {
        return Err(Error::Stability {
            phase_margin_deg: design.phase_margin_deg,
        });
    }
    Ok(design)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JitterSeries {
    pub timestep: f64,
    /// Timing error (s) at the active harmonic, one per timestep.
    pub samples: Vec<f64>,
    /// (start of coarse lock, handover to the fine lock) in seconds.
    pub lock_epochs: (f64, Option<f64>),
}

impl JitterSeries {
    pub fn new(timestep: f64, samples: Vec<f64>, lock_epochs: (f64, Option<f64>)) -> Result<Self> {
        if !(timestep > 0.0) {
            return Err(Error::Domain("timestep must be > 0".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("jitter samples must be finite".into()));
        }
        Ok(Self {
            timestep,
            samples,
            lock_epochs,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.timestep
    }
}

/// Deterministic phase disturbance added on top of the noise (for
/// transfer-function checks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub frequency: f64,
    /// Peak phase (rad at the active harmonic).
    pub amplitude: f64,
}

fn wrap(phi: f64) -> f64 {
    let x = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if x == -PI {
        PI
    } else {
        x
    }
}

/// Runs the two-stage lock for `duration` seconds.
pub fn simulate_lock(config: &LoopConfig, duration: f64, seed: u64) -> Result<JitterSeries> {
    simulate_with_tone(config, duration, seed, None)
}

pub fn simulate_with_tone(
    config: &LoopConfig,
    duration: f64,
    seed: u64,
    tone: Option<Tone>,
) -> Result<JitterSeries> {
    let design = design_loop(config)?;
    if !(duration >= 100.0 / config.loop_bandwidth) {
        return Err(Error::Config(format!(
            "duration {duration} s is shorter than 100 / loop_bandwidth"
        )));
    }
    let dt = config.timestep;
    let steps = (duration / dt).round() as usize;
    let wa = 2.0 * PI * config.actuator_bandwidth;
    let smooth = 1.0 - (-wa * dt).exp();
    let delay_steps = (config.loop_delay / dt).round() as usize;
    let dwell = (10.0 * config.time_constant() / dt).ceil() as usize;
    let white = (config.free_run_noise.white_fm * dt).sqrt();
    let walk = (config.free_run_noise.random_walk_fm * dt).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut harmonic = 1.0;
    let mut phi = config.initial_offset;
    let mut freq = 0.0;
    let mut integ = 0.0;
    let mut act = 0.0;
    let mut pipe: VecDeque<f64> = std::iter::repeat_n(0.0, delay_steps).collect();
    let mut below = 0usize;
    let mut handover = None;
    let mut samples = Vec::with_capacity(steps);

    for k in 0..steps {
        let t = k as f64 * dt;
        let v = config.detector_gain * wrap(phi);
        integ += v * dt;
        let u = design.proportional_gain * (v + design.integral_corner * integ);
        pipe.push_back(u);
        let delayed = pipe.pop_front().unwrap_or(u);
        act += (delayed - act) * smooth;

        let mut step = freq * dt - config.vco_gain * act * dt;
        if white > 0.0 {
            step += white * normal.sample(&mut rng);
        }
        if walk > 0.0 {
            freq += walk * normal.sample(&mut rng);
        }
        if let Some(tone) = tone {
            let w = 2.0 * PI * tone.frequency;
            step += tone.amplitude * ((w * (t + dt)).sin() - (w * t).sin());
        }
        phi += step;

        if handover.is_none() && config.harmonic > 1 {
            if wrap(phi).abs() < config.handover_threshold {
                below += 1;
            } else {
                below = 0;
            }
            if below >= dwell {
                let ratio = config.harmonic as f64 / harmonic;
                harmonic = config.harmonic as f64;
                phi *= ratio;
                freq *= ratio;
                integ *= ratio;
                act *= ratio;
                pipe.iter_mut().for_each(|x| *x *= ratio);
                handover = Some(t + dt);
            }
        }
        samples.push(phi / (2.0 * PI * harmonic * config.rep_rate));
    }

    if config.harmonic > 1 && handover.is_none() {
        return Err(Error::Timeout(format!(
            "coarse lock never stayed within {} rad for {} s",
            config.handover_threshold,
            dwell as f64 * dt
        )));
    }
    JitterSeries::new(dt, samples, (0.0, handover))
}

/// r.m.s. of the samples after the first `discard` seconds.
pub fn rms_jitter(series: &JitterSeries, discard: f64) -> Result<f64> {
    if !(discard >= 0.0) {
        return Err(Error::Domain(format!("discard must be >= 0, got {discard}")));
    }
    let skip = (discard / series.timestep).ceil() as usize;
    let kept = series.samples.get(skip..).unwrap_or(&[]);
    if kept.len() < 1000 {
        return Err(Error::Statistics(format!(
            "only {} samples after discarding {discard} s; need 1000",
            kept.len()
        )));
    }
    Ok((kept.iter().map(|x| x * x).sum::<f64>() / kept.len() as f64).sqrt())
}

/// r.m.s. timing error of the fine lock, skipping `settle` seconds after the
/// handover (or after the start when there is no handover).
pub fn fine_lock_rms(series: &JitterSeries, settle: f64) -> Result<f64> {
    let start = series.lock_epochs.1.unwrap_or(series.lock_epochs.0);
    rms_jitter(series, start + settle)
}

/// Independent Gaussian contributions add in quadrature.
pub fn combined_pair_jitter(sync_rms: f64, gvm_rms: f64) -> Result<f64> {
    if !(sync_rms >= 0.0 && gvm_rms >= 0.0) {
        return Err(Error::Domain("jitter contributions must be >= 0".into()));
    }
    Ok(sync_rms.hypot(gvm_rms))
}

/// Residual tone amplitude over injected amplitude, from simulation without noise.
pub fn tone_response(config: &LoopConfig, frequency: f64, seed: u64) -> Result<f64> {
    let quiet = LoopConfig {
        free_run_noise: FreeRunNoise {
            white_fm: 0.0,
            random_walk_fm: 0.0,
        },
        harmonic: 1,
        initial_offset: 0.0,
        ..config.clone()
    };
    let amplitude = 1e-3;
    let periods = (frequency * 100.0 / quiet.loop_bandwidth).max(40.0);
    let duration = (periods / frequency).max(100.0 / quiet.loop_bandwidth + 20.0 / frequency);
    let series = simulate_with_tone(&quiet, duration, seed, Some(Tone { frequency, amplitude }))?;
    // least-squares amplitude over an integer number of periods at the end
    let n = series.samples.len();
    let per = (1.0 / (frequency * quiet.timestep)).round() as usize;
    let span = per * ((n / 2) / per).max(1);
    let w = 2.0 * PI * frequency;
    let scale = 2.0 * PI * quiet.rep_rate;
    let (mut c, mut s) = (0.0, 0.0);
    for k in n - span..n {
        let t = k as f64 * quiet.timestep;
        let phi = series.samples[k] * scale;
        c += phi * (w * t).cos();
        s += phi * (w * t).sin();
    }
    let amp = 2.0 * (c * c + s * s).sqrt() / span as f64;
    Ok(amp / amplitude)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_hits_targets() {
        let c = LoopConfig::calibrated();
        let d = design_loop(&c).unwrap();
        let l = d.open_loop(&c, 2.0 * PI * 10e3);
        assert!((l.norm() - 1.0).abs() < 1e-12);
        assert!((d.phase_margin_deg - 60.0).abs() < 1e-9);
    }

    #[test]
    fn excessive_delay_is_unstable() {
        let mut c = LoopConfig::calibrated();
        c.loop_delay = 25e-6;
        assert!(matches!(design_loop(&c), Err(Error::Stability { .. })));
        assert!(matches!(simulate_lock(&c, 0.02, 1), Err(Error::Stability { .. })));
    }

    #[test]
    fn config_invariants() {
        let mut c = LoopConfig::calibrated();
        c.actuator_bandwidth = 5e3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = LoopConfig::calibrated();
        c.timestep = 1e-6;
        assert!(c.validate().is_err());
        let mut c = LoopConfig::calibrated();
        c.harmonic = 0;
        assert!(c.validate().is_err());
        assert!(simulate_lock(&LoopConfig::calibrated(), 1e-3, 1).is_err());
    }

    #[test]
    fn noiseless_lock_settles_to_zero() {
        let mut c = LoopConfig::calibrated();
        c.free_run_noise = FreeRunNoise {
            white_fm: 0.0,
            random_walk_fm: 0.0,
        };
        let s = simulate_lock(&c, 0.02, 3).unwrap();
        let h = s.lock_epochs.1.unwrap();
        assert!(h > 0.0);
        assert!(fine_lock_rms(&s, 2e-3).unwrap() < 1e-18);
    }

    #[test]
    fn handover_needs_reachable_threshold() {
        let mut c = LoopConfig::calibrated();
        c.free_run_noise.white_fm *= 1e6;
        c.handover_threshold = 1e-4;
        assert!(matches!(simulate_lock(&c, 0.01, 1), Err(Error::Timeout(_))));
    }

    #[test]
    fn deterministic_for_seed() {
        let c = LoopConfig::calibrated();
        assert_eq!(
            simulate_lock(&c, 0.01, 5).unwrap(),
            simulate_lock(&c, 0.01, 5).unwrap()
        );
        assert_ne!(
            simulate_lock(&c, 0.01, 5).unwrap(),
            simulate_lock(&c, 0.01, 6).unwrap()
        );
    }

    #[test]
    fn rms_of_simple_series() {
        let zero = JitterSeries::new(1e-6, vec![0.0; 5000], (0.0, None)).unwrap();
        assert_eq!(rms_jitter(&zero, 0.0).unwrap(), 0.0);
        let a = 3e-13;
        let sine: Vec<f64> = (0..100_000)
            .map(|k| a * (2.0 * PI * k as f64 / 1000.0).sin())
            .collect();
        let s = JitterSeries::new(1e-6, sine, (0.0, None)).unwrap();
        let r = rms_jitter(&s, 0.0).unwrap();
        assert!((r / (a / 2f64.sqrt()) - 1.0).abs() < 1e-3);
        assert!(matches!(rms_jitter(&s, 0.0995), Err(Error::Statistics(_))));
    }

    #[test]
    fn quadrature_sum() {
        assert!((combined_pair_jitter(260e-15, 234.3e-15).unwrap() - 350e-15).abs() < 0.5e-15);
        assert_eq!(combined_pair_jitter(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(combined_pair_jitter(1e-13, 0.0).unwrap(), 1e-13);
        assert!(combined_pair_jitter(-1.0, 0.0).is_err());
    }

    #[test]
    fn calibrated_preset_and_harmonic_scaling() {
        let c = LoopConfig::calibrated();
        let fine = simulate_lock(&c, 0.05, 11).unwrap();
        let r9 = fine_lock_rms(&fine, 2e-3).unwrap();
        assert!((230e-15..=290e-15).contains(&r9), "{r9:e}");

        let coarse_only = LoopConfig { harmonic: 1, ..c };
        let coarse = simulate_lock(&coarse_only, 0.05, 11).unwrap();
        let r1 = rms_jitter(&coarse, fine.lock_epochs.1.unwrap() + 2e-3).unwrap();
        assert!(((r9 / r1) * 9.0 - 1.0).abs() < 0.15);
    }

    #[test]
    fn tone_injection_follows_sensitivity() {
        let c = LoopConfig::calibrated();
        let d = design_loop(&c).unwrap();
        for f in [1e3, 2e3, 50e3, 100e3] {
            let sim = tone_response(&c, f, 2).unwrap();
            let lin = d.sensitivity(&c, f);
            let db = 20.0 * (sim / lin).log10();
            assert!(db.abs() < 3.0, "{f} Hz: {sim} vs {lin}");
        }
        // suppressed below the loop bandwidth, passed above it
        assert!(tone_response(&c, 1e3, 2).unwrap() < 0.1);
        assert!(tone_response(&c, 100e3, 2).unwrap() > 0.7);
    }
}
