//! Named parameter sets for the four interference scenarios, with the origin of
//! every value.

use std::fmt;

use homlab_core::analytic::{self, DipModel, DipParams, Scenario, TriggerFilter};
use homlab_core::scan::ExperimentConfig;
use homlab_core::sync::LoopConfig;
use homlab_core::units::rms_omega_from_nm;
use homlab_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Quoted in the publication.
    Paper,
    /// Chosen or derived to match published results; not measured.
    Inferred,
    /// Numerical or bookkeeping setting with no physical content.
    Trivial,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Paper => "paper",
            Provenance::Inferred => "inferred",
            Provenance::Trivial => "trivial",
        })
    }
}

/// Configurable keys: name, unit, help, default provenance.
pub const KEYS: &[(&str, &str, &str, Provenance)] = &[
    (
        "dip.sigma_p",
        "rad/s",
        "pump r.m.s. bandwidth (mean of the two lasers)",
        Provenance::Paper,
    ),
    (
        "dip.sigma_S",
        "rad/s",
        "signal filter r.m.s. bandwidth",
        Provenance::Inferred,
    ),
    (
        "dip.sigma_T",
        "rad/s or `unfiltered`",
        "trigger filter r.m.s. bandwidth",
        Provenance::Inferred,
    ),
    (
        "dip.sigma_J",
        "s",
        "r.m.s. timing jitter between the two pairs",
        Provenance::Paper,
    ),
    (
        "experiment.rep_rate",
        "Hz",
        "laser repetition rate",
        Provenance::Paper,
    ),
    (
        "experiment.pair_prob_a",
        "1",
        "pair probability per pulse, source a",
        Provenance::Inferred,
    ),
    (
        "experiment.pair_prob_b",
        "1",
        "pair probability per pulse, source b",
        Provenance::Inferred,
    ),
    (
        "experiment.trigger_efficiency",
        "1",
        "trigger detection efficiency",
        Provenance::Inferred,
    ),
    (
        "experiment.signal_efficiency",
        "1",
        "signal detection efficiency",
        Provenance::Inferred,
    ),
    (
        "experiment.scan_step",
        "s",
        "delay step between points",
        Provenance::Paper,
    ),
    (
        "experiment.scan_half_range",
        "s",
        "scan covers +- this delay",
        Provenance::Inferred,
    ),
    (
        "experiment.dwell_per_point",
        "s",
        "measurement time per point",
        Provenance::Paper,
    ),
    (
        "experiment.block_duration",
        "s",
        "block length between recenterings",
        Provenance::Paper,
    ),
    (
        "experiment.drift_rate",
        "s/sqrt(s)",
        "random-walk coefficient of the delay",
        Provenance::Inferred,
    ),
    (
        "experiment.compensation",
        "bool",
        "recenter the delay between blocks",
        Provenance::Paper,
    ),
    (
        "experiment.setting_error",
        "s",
        "half width of the delay-setting error",
        Provenance::Paper,
    ),
    (
        "experiment.recenter_residual",
        "s",
        "half width of the residual after recentering",
        Provenance::Inferred,
    ),
    (
        "experiment.scenario",
        "name",
        "indistinguishable | orthogonal | unpolarized | thermal",
        Provenance::Paper,
    ),
    (
        "experiment.intensity_ratio",
        "1",
        "thermal input intensity ratio r",
        Provenance::Inferred,
    ),
    (
        "experiment.thermal_samples",
        "count",
        "field samples per block (thermal)",
        Provenance::Trivial,
    ),
    (
        "oracle.quadrature_order",
        "count",
        "Gauss-Hermite order per axis, 0 for automatic",
        Provenance::Trivial,
    ),
    (
        "oracle.jitter_nodes",
        "count",
        "Gauss-Hermite nodes of the jitter average",
        Provenance::Trivial,
    ),
    (
        "sync.rep_rate",
        "Hz",
        "repetition rate of the locked lasers",
        Provenance::Paper,
    ),
    (
        "sync.harmonic",
        "integer",
        "harmonic of the fine lock",
        Provenance::Paper,
    ),
    (
        "sync.loop_bandwidth",
        "Hz",
        "loop crossover frequency",
        Provenance::Paper,
    ),
    (
        "sync.detector_gain",
        "V/rad",
        "phase detector gain",
        Provenance::Inferred,
    ),
    (
        "sync.vco_gain",
        "rad/s/V",
        "VCO gain at the active harmonic",
        Provenance::Inferred,
    ),
    (
        "sync.actuator_bandwidth",
        "Hz",
        "actuator low-pass pole",
        Provenance::Inferred,
    ),
    (
        "sync.loop_delay",
        "s",
        "transport delay in the loop",
        Provenance::Inferred,
    ),
    (
        "sync.white_fm",
        "rad^2/s",
        "white frequency noise (phase diffusion)",
        Provenance::Inferred,
    ),
    (
        "sync.random_walk_fm",
        "rad^2/s^3",
        "random-walk frequency noise",
        Provenance::Inferred,
    ),
    ("sync.timestep", "s", "integration step", Provenance::Trivial),
    (
        "sync.handover_threshold",
        "rad",
        "coarse error below which handover may start",
        Provenance::Inferred,
    ),
    (
        "sync.initial_offset",
        "rad",
        "phase error at start",
        Provenance::Trivial,
    ),
    ("sync.duration", "s", "simulated time", Provenance::Trivial),
];

pub fn is_known_key(key: &str) -> bool {
    KEYS.iter().any(|k| k.0 == key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub dip: DipParams,
    pub experiment: ExperimentConfig,
    pub oracle_order: usize,
    pub oracle_jitter_nodes: usize,
    pub sync: LoopConfig,
    pub sync_duration: f64,
    /// Keys changed by a config file; they are listed with provenance `override`.
    pub overridden: Vec<String>,
    /// Raw published values behind the averaged ones, for reference.
    pub sources: Vec<(&'static str, &'static str)>,
}

pub const PRESET_NAMES: [&str; 4] = ["fig3a", "fig3b", "fig3c", "fig3d"];

/// Raw values of the two sources; the model uses one bandwidth per role.
const SOURCES: &[(&str, &str)] = &[
    ("pump center wavelength", "394.25 nm, 394.25 nm"),
    ("pump r.m.s. bandwidth", "0.7 nm, 0.9 nm (mean 0.8 nm used)"),
    ("IR center wavelength", "788.5 nm, 788.5 nm"),
    ("IR r.m.s. bandwidth", "2.9 nm, 3.2 nm"),
    ("IR r.m.s. pulse width", "49.3 fs, 46.8 fs"),
    ("predicted visibility", "0.84 +- 0.03"),
    ("predicted r.m.s. dip width", "0.86 +- 0.07 ps"),
    ("synchronization jitter", "260 +- 30 fs"),
    ("total pair jitter", "350 +- 30 fs"),
];

/// Triggered dip parameters: measured pump and jitter, filters solved so the
/// closed form gives V = 0.84 and w = 0.86 ps.
pub fn reference_dip_params() -> Result<DipParams> {
    let sigma_p = rms_omega_from_nm(394.25, 0.8)?;
    let sigma_j = 350e-15;
    let filters = analytic::solve_filters(0.84, 0.86e-12, sigma_p, sigma_j)?;
    DipParams::new(sigma_p, filters.sigma_s, filters.sigma_t, sigma_j)
}

pub fn preset(name: &str) -> Result<Preset> {
    let dip = reference_dip_params()?;
    let mut experiment = ExperimentConfig::protocol_defaults(DipModel::from_params(&dip)?);
    let description = match name {
        "fig3a" => "indistinguishable heralded photons",
        "fig3b" => "orthogonally polarized heralded photons",
        "fig3c" => "unpolarized heralded photons",
        "fig3d" => "thermal inputs (triggers ignored), intensity ratio 2:1",
        other => {
            return Err(Error::Usage(format!(
                "unknown preset `{other}`; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    experiment.scenario = match name {
        "fig3a" => Scenario::Indistinguishable,
        "fig3b" => Scenario::Orthogonal,
        "fig3c" => Scenario::Unpolarized,
        _ => Scenario::Thermal,
    };
    if experiment.scenario == Scenario::Thermal {
        // twofold rates are much higher; scaled so sigma_V is near 0.02
        experiment.intensity_ratio = 2.0;
        experiment.pair_prob_a = 9.4e-4;
        experiment.pair_prob_b = 9.4e-4;
    }
    Ok(Preset {
        name: name.to_string(),
        description: description.to_string(),
        dip,
        experiment,
        oracle_order: 0,
        oracle_jitter_nodes: 48,
        sync: LoopConfig::calibrated(),
        sync_duration: 0.05,
        overridden: Vec::new(),
        sources: SOURCES.to_vec(),
    })
}

fn parse_f64(key: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: `{raw}` is not a number")))
}

fn parse_usize(key: &str, raw: &str) -> Result<usize> {
    raw.parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: `{raw}` is not a non-negative integer")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: `{raw}` is not a boolean"))),
    }
}

impl Preset {
    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        KEYS.iter().find(|k| k.0 == key).map(|k| {
            // the intensity ratio only carries meaning for thermal runs
            if key == "experiment.intensity_ratio" && self.experiment.scenario != Scenario::Thermal {
                Provenance::Trivial
            } else {
                k.3
            }
        })
    }

    /// Current value of a key in the config syntax, floats in round-trip precision.
    pub fn get(&self, key: &str) -> Option<String> {
        let e = &self.experiment;
        let s = &self.sync;
        let f = |x: f64| format!("{x:e}");
        Some(match key {
            "dip.sigma_p" => f(self.dip.sigma_p),
            "dip.sigma_S" => f(self.dip.sigma_s),
            "dip.sigma_T" => match self.dip.sigma_t {
                TriggerFilter::Filtered(t) => f(t),
                TriggerFilter::Unfiltered => "unfiltered".into(),
            },
            "dip.sigma_J" => f(self.dip.sigma_j),
            "experiment.rep_rate" => f(e.rep_rate),
            "experiment.pair_prob_a" => f(e.pair_prob_a),
            "experiment.pair_prob_b" => f(e.pair_prob_b),
            "experiment.trigger_efficiency" => f(e.trigger_efficiency),
            "experiment.signal_efficiency" => f(e.signal_efficiency),
            "experiment.scan_step" => f(e.scan_step),
            "experiment.scan_half_range" => f(e.scan_half_range),
            "experiment.dwell_per_point" => f(e.dwell_per_point),
            "experiment.block_duration" => f(e.block_duration),
            "experiment.drift_rate" => f(e.drift_rate),
            "experiment.compensation" => e.compensation.to_string(),
            "experiment.setting_error" => f(e.setting_error),
            "experiment.recenter_residual" => f(e.recenter_residual),
            "experiment.scenario" => e.scenario.to_string(),
            "experiment.intensity_ratio" => f(e.intensity_ratio),
            "experiment.thermal_samples" => e.thermal_samples.to_string(),
            "oracle.quadrature_order" => self.oracle_order.to_string(),
            "oracle.jitter_nodes" => self.oracle_jitter_nodes.to_string(),
            "sync.rep_rate" => f(s.rep_rate),
            "sync.harmonic" => s.harmonic.to_string(),
            "sync.loop_bandwidth" => f(s.loop_bandwidth),
            "sync.detector_gain" => f(s.detector_gain),
            "sync.vco_gain" => f(s.vco_gain),
            "sync.actuator_bandwidth" => f(s.actuator_bandwidth),
            "sync.loop_delay" => f(s.loop_delay),
            "sync.white_fm" => f(s.free_run_noise.white_fm),
            "sync.random_walk_fm" => f(s.free_run_noise.random_walk_fm),
            "sync.timestep" => f(s.timestep),
            "sync.handover_threshold" => f(s.handover_threshold),
            "sync.initial_offset" => f(s.initial_offset),
            "sync.duration" => f(self.sync_duration),
            _ => return None,
        })
    }

    /// Sets one key and re-checks the invariants of the structure it belongs to.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let num = || parse_f64(key, raw);
        let e = &mut self.experiment;
        let s = &mut self.sync;
        match key {
            "dip.sigma_p" => self.dip.sigma_p = num()?,
            "dip.sigma_S" => self.dip.sigma_s = num()?,
            "dip.sigma_T" => {
                self.dip.sigma_t = if raw == "unfiltered" || raw == "inf" {
                    TriggerFilter::Unfiltered
                } else {
                    TriggerFilter::Filtered(num()?)
                }
            }
            "dip.sigma_J" => self.dip.sigma_j = num()?,
            "experiment.rep_rate" => e.rep_rate = num()?,
            "experiment.pair_prob_a" => e.pair_prob_a = num()?,
            "experiment.pair_prob_b" => e.pair_prob_b = num()?,
            "experiment.trigger_efficiency" => e.trigger_efficiency = num()?,
            "experiment.signal_efficiency" => e.signal_efficiency = num()?,
            "experiment.scan_step" => e.scan_step = num()?,
            "experiment.scan_half_range" => e.scan_half_range = num()?,
            "experiment.dwell_per_point" => e.dwell_per_point = num()?,
            "experiment.block_duration" => e.block_duration = num()?,
            "experiment.drift_rate" => e.drift_rate = num()?,
            "experiment.compensation" => e.compensation = parse_bool(key, raw)?,
            "experiment.setting_error" => e.setting_error = num()?,
            "experiment.recenter_residual" => e.recenter_residual = num()?,
            "experiment.scenario" => {
                e.scenario = raw
                    .parse()
                    .map_err(|err: Error| Error::Config(format!("{key}: {err}")))?
            }
            "experiment.intensity_ratio" => e.intensity_ratio = num()?,
            "experiment.thermal_samples" => e.thermal_samples = parse_usize(key, raw)?,
            "oracle.quadrature_order" => self.oracle_order = parse_usize(key, raw)?,
            "oracle.jitter_nodes" => self.oracle_jitter_nodes = parse_usize(key, raw)?,
            "sync.rep_rate" => s.rep_rate = num()?,
            "sync.harmonic" => {
                s.harmonic = raw
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: `{raw}` is not an integer")))?
            }
            "sync.loop_bandwidth" => s.loop_bandwidth = num()?,
            "sync.detector_gain" => s.detector_gain = num()?,
            "sync.vco_gain" => s.vco_gain = num()?,
            "sync.actuator_bandwidth" => s.actuator_bandwidth = num()?,
            "sync.loop_delay" => s.loop_delay = num()?,
            "sync.white_fm" => s.free_run_noise.white_fm = num()?,
            "sync.random_walk_fm" => s.free_run_noise.random_walk_fm = num()?,
            "sync.timestep" => s.timestep = num()?,
            "sync.handover_threshold" => s.handover_threshold = num()?,
            "sync.initial_offset" => s.initial_offset = num()?,
            "sync.duration" => self.sync_duration = num()?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        if !self.overridden.iter().any(|k| k == key) {
            self.overridden.push(key.to_string());
        }
        self.refresh(key)
    }

    /// Re-derives the experiment dip and validates the section owning `key`.
    fn refresh(&mut self, key: &str) -> Result<()> {
        let section = key.split('.').next().unwrap_or("");
        let tag = |e: Error| match e {
            Error::Config(m) | Error::Domain(m) => Error::Config(format!("{key}: {m}")),
            other => other,
        };
        match section {
            "dip" => {
                self.dip.validate().map_err(tag)?;
                self.experiment.dip = DipModel::from_params(&self.dip).map_err(tag)?;
            }
            "experiment" => {
                self.experiment.validate().map_err(tag)?;
            }
            "oracle" => {
                if self.oracle_jitter_nodes < 8 {
                    return Err(Error::Config(format!("{key}: jitter_nodes must be >= 8")));
                }
            }
            "sync" => {
                self.sync.validate().map_err(tag)?;
                if !self.sync_duration.is_finite() || self.sync_duration <= 0.0 {
                    return Err(Error::Config(format!("{key}: duration must be finite and > 0")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Every configurable key with its value and provenance, in table order.
    pub fn entries(&self) -> Vec<(&'static str, String, String)> {
        KEYS.iter()
            .map(|k| {
                let tag = if self.overridden.iter().any(|o| o == k.0) {
                    "override".to_string()
                } else {
                    self.provenance(k.0).map(|p| p.to_string()).unwrap_or_default()
                };
                (k.0, self.get(k.0).unwrap_or_default(), tag)
            })
            .collect()
    }
}
