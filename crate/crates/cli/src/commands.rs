use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use homlab_core::analytic::{self, Scenario};
use homlab_core::oracle::{self, OracleSettings};
use homlab_core::scan::{self, DipFitReport, ScanResult};
use homlab_core::sync;
use homlab_core::Error;

use crate::config::{apply_overrides, parse_config};
use crate::output;
use crate::presets::{self, Preset, KEYS, PRESET_NAMES};
use crate::{CliError, EXIT_OK};

/// Relative tolerance of the oracle against the closed form on the parameter grid.
pub const DIVERGENCE_TOLERANCE: f64 = 0.02;

/// Settling time skipped after the fine-lock handover when quoting jitter.
pub const SYNC_SETTLE: f64 = 2e-3;

const SYNC_CSV_STRIDE: usize = 20;
const SYNC_HIST_BINS: usize = 81;

const KEY_HELP: &str = "Config files hold `key = value` lines with `#` comments. \
Units are SI and fixed per key; run `homlab presets` for the full key list with units and provenance.";

#[derive(Parser, Debug)]
#[command(name = "homlab", version, about = "Two-source Hong-Ou-Mandel interference toolkit", after_help = KEY_HELP)]
struct Cli {
    /// Parameter preset: fig3a, fig3b, fig3c or fig3d.
    #[arg(long, global = true, default_value = "fig3a")]
    preset: String,
    /// Config file with `key = value` overrides applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; defaults to HOMLAB_SEED, then to the preset seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "homlab-out")]
    out_dir: PathBuf,
    /// Explicit path of the main CSV output.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Explicit path of the SVG plot.
    #[arg(long, global = true)]
    svg: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form visibility, depth and width, with the scenario table.
    Analytic,
    /// Spectral quadrature dip for the preset and the oracle-vs-closed-form grid.
    Oracle {
        /// Only evaluate the preset, not the 27-point comparison grid.
        #[arg(long)]
        skip_grid: bool,
    },
    /// Simulated delay scan with dip fit; writes CSV, SVG and a manifest.
    Scan,
    /// Two-stage PLL lock; writes the timing-error series and its histogram.
    Sync,
    /// Refit a scan CSV.
    Fit {
        /// Scan CSV in the `set_delay_s,block_index,realized_delay_s,fourfold_counts` schema.
        csv_file: PathBuf,
    },
    /// Print presets with every key, unit, value and provenance.
    Presets {
        /// Only this preset.
        name: Option<String>,
    },
}

/// Entry point used by the binary: real argv, HOMLAB_SEED, stdout and stderr.
pub fn run_command(argv: &[String]) -> i32 {
    let env_seed = std::env::var("HOMLAB_SEED").ok();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(argv, env_seed.as_deref(), &mut stdout.lock(), &mut stderr.lock())
}

/// Runs one command and returns its exit code. `argv[0]` is the program name.
pub fn run(argv: &[String], env_seed: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            // clap appends usage text; keep the first line so stderr stays one line per error
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let e = CliError::Args(first.to_string());
            e.report(err);
            return e.exit_code();
        }
    };
    match dispatch(&cli, argv, env_seed, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            e.report(err);
            e.exit_code()
        }
    }
}

fn load_preset(name: &str, config: Option<&Path>) -> Result<Preset, CliError> {
    let mut p = presets::preset(name)?;
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let overrides = parse_config(&text).map_err(|e| prefix_path(e, path))?;
        apply_overrides(&mut p, &overrides).map_err(|e| prefix_path(e, path))?;
    }
    Ok(p)
}

fn prefix_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn resolve_seed(cli: &Cli, env_seed: Option<&str>, preset: &Preset) -> Result<u64, CliError> {
    if let Some(s) = cli.seed {
        return Ok(s);
    }
    match env_seed.map(str::trim).filter(|s| !s.is_empty()) {
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Usage(format!("HOMLAB_SEED=`{raw}` is not an unsigned integer")).into()),
        None => Ok(preset.experiment.seed),
    }
}

fn default_path(cli: &Cli, explicit: &Option<PathBuf>, stem: &str, ext: &str) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| cli.out_dir.join(format!("{stem}.{ext}")))
}

fn dispatch(
    cli: &Cli,
    argv: &[String],
    env_seed: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    if let Command::Presets { name } = &cli.command {
        let names: Vec<&str> = match name {
            Some(n) => vec![n.as_str()],
            None => PRESET_NAMES.to_vec(),
        };
        for n in names {
            let p = load_preset(n, cli.config.as_deref())?;
            print_preset(&p, out);
        }
        return Ok(());
    }
    let preset = load_preset(&cli.preset, cli.config.as_deref())?;
    let seed = resolve_seed(cli, env_seed, &preset)?;
    let args: Vec<String> = argv.iter().skip(1).cloned().collect();
    match &cli.command {
        Command::Analytic => analytic_report(&preset, out),
        Command::Oracle { skip_grid } => oracle_report(cli, &preset, *skip_grid, out),
        Command::Scan => scan_command(cli, &preset, seed, &args, out, err),
        Command::Sync => sync_command(cli, &preset, seed, &args, out),
        Command::Fit { csv_file } => {
            let scan = output::read_scan_csv(csv_file)?;
            let report = scan::fit_dip(&scan)?;
            print_fit(&report, None, out, err);
            if let Some(svg) = &cli.svg {
                let title = format!("refit of {}", csv_file.display());
                output::write_file(svg, output::render_plot(&scan, &report, &title).as_bytes())?;
                let _ = writeln!(out, "wrote {}", svg.display());
            }
            Ok(())
        }
        Command::Presets { .. } => unreachable!("handled above"),
    }
}

fn print_preset(p: &Preset, out: &mut dyn Write) {
    let _ = writeln!(out, "preset {}: {}", p.name, p.description);
    let _ = writeln!(out, "{:<32} {:<24} {:<22} provenance", "key", "value", "unit");
    for ((key, value, tag), k) in p.entries().into_iter().zip(KEYS) {
        let _ = writeln!(out, "{key:<32} {value:<24} {:<22} {tag}", k.1);
    }
    let _ = writeln!(out, "published source values:");
    for (what, value) in &p.sources {
        let _ = writeln!(out, "  {what}: {value}");
    }
    let _ = writeln!(out);
}

fn analytic_report(p: &Preset, out: &mut dyn Write) -> Result<(), CliError> {
    let d = analytic::dip_depth(&p.dip)?;
    let v = analytic::visibility(&p.dip)?;
    let w = analytic::dip_width(&p.dip)?;
    let limit = analytic::zukowski_limit(p.dip.sigma_p, p.dip.sigma_s)?;
    let _ = writeln!(out, "preset {}: {}", p.name, p.description);
    let _ = writeln!(out, "V = {v:.4}");
    let _ = writeln!(out, "D = {d:.4}");
    let _ = writeln!(out, "w = {:.4} ps", w * 1e12);
    let _ = writeln!(out, "V without jitter or trigger filter = {limit:.4}");
    let _ = writeln!(out, "scenario            visibility");
    for kind in Scenario::ALL {
        let r = if kind == Scenario::Thermal {
            p.experiment.intensity_ratio
        } else {
            1.0
        };
        let vs = analytic::scenario_visibility(kind, d, r)?;
        let label = if kind == Scenario::Thermal {
            format!("thermal (r={r})")
        } else {
            kind.to_string()
        };
        let _ = writeln!(out, "{label:<19} {vs:.4}");
    }
    Ok(())
}

fn oracle_report(cli: &Cli, p: &Preset, skip_grid: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let mut settings = OracleSettings::for_params(&p.dip)?;
    if p.oracle_order > 0 {
        settings.quadrature_order = p.oracle_order;
    }
    settings.jitter_nodes = p.oracle_jitter_nodes;
    let dip = oracle::oracle_dip(&p.dip, &settings)?;
    let _ = writeln!(
        out,
        "preset {} (quadrature order {})",
        p.name, settings.quadrature_order
    );
    let _ = writeln!(
        out,
        "oracle:      V = {:.4}  w = {:.4} ps  unjittered D = {:.4}",
        dip.visibility(),
        dip.fit.rms_width * 1e12,
        dip.unjittered_depth
    );
    let _ = writeln!(
        out,
        "closed form: V = {:.4}  w = {:.4} ps",
        analytic::visibility(&p.dip)?,
        analytic::dip_width(&p.dip)? * 1e12
    );
    if let Some(path) = &cli.csv {
        output::write_file(path, &output::curve_csv(&dip.delays, &dip.probabilities))?;
        let _ = writeln!(out, "wrote {}", path.display());
    }
    if skip_grid {
        return Ok(());
    }
    let report = oracle::divergence_grid(p.dip.sigma_p, DIVERGENCE_TOLERANCE)?;
    let _ = write!(out, "{report}");
    if !report.passed() {
        return Err(Error::Divergence(format!(
            "{} of {} cells exceed {}% relative",
            report.failures().len(),
            report.cells.len(),
            100.0 * DIVERGENCE_TOLERANCE
        ))
        .into());
    }
    Ok(())
}

fn print_fit(report: &DipFitReport, expected: Option<f64>, out: &mut dyn Write, err: &mut dyn Write) {
    let _ = writeln!(
        out,
        "V = {:.4} +- {:.4}",
        report.visibility, report.visibility_sigma
    );
    let _ = writeln!(
        out,
        "w = {:.4} +- {:.4} ps",
        report.fit.rms_width * 1e12,
        report.width_sigma * 1e12
    );
    let _ = writeln!(out, "center = {:.4} ps", report.fit.center * 1e12);
    let _ = writeln!(out, "baseline = {:.1} counts per point", report.fit.baseline);
    if let Some(e) = expected {
        let _ = writeln!(out, "expected V = {e:.4}");
    }
    let _ = writeln!(out, "bootstrap resamples = {}", report.resamples);
    for w in report.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
}

fn scan_command(
    cli: &Cli,
    p: &Preset,
    seed: u64,
    args: &[String],
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let mut config = p.experiment.clone();
    config.seed = seed;
    let scan: ScanResult = scan::run_scan(&config)?;
    let stem = format!("scan-{}", p.name);
    let csv_path = default_path(cli, &cli.csv, &stem, "csv");
    let svg_path = default_path(cli, &cli.svg, &stem, "svg");
    let manifest_path = csv_path.with_extension("manifest");
    output::write_scan_csv(&csv_path, &scan)?;
    for w in &scan.metadata.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let _ = writeln!(
        out,
        "preset {} seed {seed}: {} points, {} blocks per point, {} counts",
        p.name,
        scan.points.len(),
        config.blocks_per_point(),
        scan.total_counts()
    );
    let report = scan::fit_dip(&scan)?;
    print_fit(&report, Some(config.expected_visibility()?), out, err);
    let title = format!("{}: {}", p.name, p.description);
    output::write_file(&svg_path, output::render_plot(&scan, &report, &title).as_bytes())?;
    let manifest = output::manifest(
        "scan",
        p,
        seed,
        args,
        &[("csv", csv_path.clone()), ("svg", svg_path.clone())],
    );
    output::write_file(&manifest_path, manifest.as_bytes())?;
    for path in [&csv_path, &svg_path, &manifest_path] {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok(())
}

fn sync_command(
    cli: &Cli,
    p: &Preset,
    seed: u64,
    args: &[String],
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let design = sync::design_loop(&p.sync)?;
    let series = sync::simulate_lock(&p.sync, p.sync_duration, seed)?;
    let rms = sync::fine_lock_rms(&series, SYNC_SETTLE)?;
    let _ = writeln!(
        out,
        "loop: crossover {:.1} kHz, phase margin {:.1} deg, harmonic {}",
        design.crossover / (2.0 * std::f64::consts::PI * 1e3),
        design.phase_margin_deg,
        p.sync.harmonic
    );
    match series.lock_epochs.1 {
        Some(t) => {
            let _ = writeln!(out, "handover to fine lock at {:.3} ms", t * 1e3);
        }
        None => {
            let _ = writeln!(out, "no handover (single-stage lock)");
        }
    }
    let _ = writeln!(out, "r.m.s. timing jitter = {:.1} fs", rms * 1e15);
    let stem = format!("sync-{}", p.name);
    let csv_path = default_path(cli, &cli.csv, &stem, "csv");
    let hist_path = csv_path.with_file_name(format!(
        "{}-hist.csv",
        csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or(&stem)
    ));
    let manifest_path = csv_path.with_extension("manifest");
    let start = series.lock_epochs.1.unwrap_or(series.lock_epochs.0) + SYNC_SETTLE;
    output::write_file(&csv_path, &output::jitter_csv(&series, SYNC_CSV_STRIDE))?;
    output::write_file(
        &hist_path,
        &output::jitter_histogram_csv(&series, start, SYNC_HIST_BINS),
    )?;
    let manifest = output::manifest(
        "sync",
        p,
        seed,
        args,
        &[("csv", csv_path.clone()), ("histogram", hist_path.clone())],
    );
    output::write_file(&manifest_path, manifest.as_bytes())?;
    for path in [&csv_path, &hist_path, &manifest_path] {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok(())
}
