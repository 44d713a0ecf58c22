//! CSV tables, SVG dip plots and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use homlab_core::scan::{DipFitReport, ScanResult};
use homlab_core::sync::JitterSeries;
use homlab_core::Error;

use crate::presets::Preset;
use crate::CliError;

pub const SCAN_HEADER: [&str; 4] = [
    "set_delay_s",
    "block_index",
    "realized_delay_s",
    "fourfold_counts",
];

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    // writing into memory cannot fail
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Scan table, one row per block, floats in shortest round-trip scientific form.
pub fn scan_csv(scan: &ScanResult) -> Vec<u8> {
    csv_bytes(
        &SCAN_HEADER,
        scan.rows().into_iter().map(|(set, i, real, n)| {
            vec![
                format!("{set:e}"),
                i.to_string(),
                format!("{real:e}"),
                n.to_string(),
            ]
        }),
    )
}

pub fn write_scan_csv(path: &Path, scan: &ScanResult) -> Result<(), CliError> {
    write_file(path, &scan_csv(scan))
}

pub fn parse_scan_csv(data: &[u8]) -> homlab_core::Result<ScanResult> {
    let bad = |m: String| Error::Config(format!("scan csv: {m}"));
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(data);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(SCAN_HEADER) {
        return Err(bad(format!(
            "expected header `{}`, found `{}`",
            SCAN_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).map(str::trim).unwrap_or("");
        let num = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|_| bad(format!("line {line}: bad number `{}`", field(k))))
        };
        let int = |k: usize| {
            field(k)
                .parse::<u64>()
                .map_err(|_| bad(format!("line {line}: bad integer `{}`", field(k))))
        };
        rows.push((num(0)?, int(1)? as usize, num(2)?, int(3)?));
    }
    ScanResult::from_rows(&rows)
}

pub fn read_scan_csv(path: &Path) -> Result<ScanResult, CliError> {
    let data = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(parse_scan_csv(&data)?)
}

/// Timing-error series, every `stride`-th sample.
pub fn jitter_csv(series: &JitterSeries, stride: usize) -> Vec<u8> {
    let stride = stride.max(1);
    csv_bytes(
        &["time_s", "timing_error_s"],
        series
            .samples
            .iter()
            .enumerate()
            .step_by(stride)
            .map(|(k, x)| vec![format!("{:e}", k as f64 * series.timestep), format!("{x:e}")]),
    )
}

/// Histogram of the samples after `discard` seconds, in `bins` equal bins.
pub fn jitter_histogram_csv(series: &JitterSeries, discard: f64, bins: usize) -> Vec<u8> {
    let skip = (discard / series.timestep).ceil() as usize;
    let xs = series.samples.get(skip..).unwrap_or(&[]);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let mut counts = vec![0u64; bins];
    if hi > lo {
        for &x in xs {
            let k = (((x - lo) / (hi - lo)) * bins as f64) as usize;
            counts[k.min(bins - 1)] += 1;
        }
    } else if !xs.is_empty() {
        counts[0] = xs.len() as u64;
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 0.0 };
    csv_bytes(
        &["bin_center_s", "count"],
        counts
            .iter()
            .enumerate()
            .map(|(k, c)| vec![format!("{:e}", lo + (k as f64 + 0.5) * width), c.to_string()]),
    )
}

/// Oracle curve as delay/probability pairs.
pub fn curve_csv(delays: &[f64], values: &[f64]) -> Vec<u8> {
    csv_bytes(
        &["delay_s", "coincidence_probability"],
        delays
            .iter()
            .zip(values)
            .map(|(d, p)| vec![format!("{d:e}"), format!("{p:e}")]),
    )
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.0 {
        2.0
    } else if r < 7.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 6);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-9 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Counts per point against set delay with sqrt(N) error bars, the fitted
/// dip, and the fit values in the corner.
pub fn render_plot(scan: &ScanResult, report: &DipFitReport, title: &str) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 20.0, 40.0, 60.0);
    let xs: Vec<f64> = scan.points.iter().map(|p| p.set_delay * 1e12).collect();
    let ys: Vec<f64> = scan.points.iter().map(|p| p.total_counts() as f64).collect();
    let xlo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let xhi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (xlo, xhi) = if xhi > xlo {
        (xlo, xhi)
    } else {
        (xlo - 1.0, xhi + 1.0)
    };
    let ymax = ys
        .iter()
        .map(|y| y + y.sqrt())
        .fold(report.fit.baseline.max(1.0), f64::max)
        * 1.1;
    let px = |x: f64| left + (x - xlo) / (xhi - xlo) * (w - left - right);
    let py = |y: f64| h - bottom - y / ymax * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for t in ticks(xlo, xhi) {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="black"/><text x="{x:.2}" y="{ty}" text-anchor="middle">{t}</text>"#,
            y0 = h - bottom,
            y1 = h - bottom + 5.0,
            ty = h - bottom + 18.0
        );
    }
    for t in ticks(0.0, ymax) {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{t}</text>"#,
            x0 = left - 5.0,
            tx = left - 8.0,
            ty = y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">delay (ps)</text>"#,
        left + (w - left - right) / 2.0,
        h - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">coincidences per point</text>"#,
        top + (h - top - bottom) / 2.0,
        top + (h - top - bottom) / 2.0
    );

    let mut path = String::new();
    for k in 0..=300 {
        let x = xlo + (xhi - xlo) * k as f64 / 300.0;
        let y = report.fit.value_at(x * 1e-12).max(0.0);
        let _ = write!(
            path,
            "{}{:.2},{:.2} ",
            if k == 0 { "M" } else { "L" },
            px(x),
            py(y.min(ymax))
        );
    }
    let _ = writeln!(
        s,
        r##"<path d="{}" fill="none" stroke="#c03030" stroke-width="1.5"/>"##,
        path.trim_end()
    );

    for (x, y) in xs.iter().zip(&ys) {
        let e = y.sqrt();
        let (cx, cy) = (px(*x), py(*y));
        let _ = writeln!(
            s,
            r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#204080"/><circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="#204080"/>"##,
            py((y - e).max(0.0)),
            py(y + e)
        );
    }
    let note = format!(
        "V = {:.3} \u{b1} {:.3}   w = {:.3} \u{b1} {:.3} ps",
        report.visibility,
        report.visibility_sigma,
        report.fit.rms_width * 1e12,
        report.width_sigma * 1e12
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        w - right - 10.0,
        top + 20.0,
        escape(&note)
    );
    s.push_str("</svg>\n");
    s
}

/// Run manifest: `run.` metadata followed by every effective parameter, so the
/// file doubles as a config for replaying the run.
pub fn manifest(
    command: &str,
    preset: &Preset,
    seed: u64,
    argv: &[String],
    outputs: &[(&str, PathBuf)],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# homlab run manifest; replay with");
    let _ = writeln!(
        s,
        "#   homlab {command} --preset {} --seed {seed} --config <this file>",
        preset.name
    );
    let _ = writeln!(s, "run.tool = homlab");
    let _ = writeln!(s, "run.version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "run.command = {command}");
    let _ = writeln!(s, "run.preset = {}", preset.name);
    let _ = writeln!(s, "run.seed = {seed}");
    let _ = writeln!(s, "run.argv = {}", argv.join(" "));
    for (name, path) in outputs {
        let _ = writeln!(s, "run.output.{name} = {}", path.display());
    }
    for (key, value, _) in preset.entries() {
        let _ = writeln!(s, "{key} = {value}");
    }
    s
}

/// Arguments that rerun the command recorded in a manifest, writing into `out_dir`.
pub fn replay_args(
    manifest_text: &str,
    manifest_path: &Path,
    out_dir: &Path,
) -> homlab_core::Result<Vec<String>> {
    let o = crate::config::parse_config(manifest_text)?;
    let get = |k: &str| {
        crate::config::run_value(&o, k)
            .map(str::to_string)
            .ok_or_else(|| Error::Config(format!("manifest lacks run.{k}")))
    };
    Ok(vec![
        get("command")?,
        "--preset".into(),
        get("preset")?,
        "--seed".into(),
        get("seed")?,
        "--config".into(),
        manifest_path.display().to_string(),
        "--out-dir".into(),
        out_dir.display().to_string(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use homlab_core::scan::{Block, ScanMetadata, ScanPoint};

    #[test]
    fn empty_scan_is_header_only() {
        let scan = ScanResult {
            points: vec![],
            metadata: ScanMetadata {
                seed: None,
                scenario: None,
                dwell_per_point: None,
                block_duration: None,
                warnings: vec![],
            },
        };
        assert_eq!(
            scan_csv(&scan),
            b"set_delay_s,block_index,realized_delay_s,fourfold_counts\n"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let scan = ScanResult::from_rows(&[
            (-3e-13, 0, -2.9876543210987e-13, 5),
            (-3e-13, 1, -3.0000000000001e-13, 7),
            (0.1 + 0.2, 0, 1.0 / 3.0, 0),
        ])
        .unwrap();
        let bytes = scan_csv(&scan);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(!text.contains('\r'));
        assert!(text.contains("3.0000000000000004e-1"));
        assert_eq!(parse_scan_csv(&bytes).unwrap().points, scan.points);
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(parse_scan_csv(b"a,b,c,d\n1,2,3,4\n").is_err());
        let err = parse_scan_csv(b"set_delay_s,block_index,realized_delay_s,fourfold_counts\n1e-12,0,x,3\n")
            .unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn ticks_cover_range() {
        let t = ticks(-4.5, 4.5);
        assert_eq!(t.first(), Some(&-4.0));
        assert_eq!(t.last(), Some(&4.0));
        assert!(t.contains(&0.0));
    }

    #[test]
    fn plot_is_self_contained() {
        let points = (-10..=10)
            .map(|k| ScanPoint {
                set_delay: k as f64 * 3e-13,
                blocks: vec![Block {
                    realized_delay: k as f64 * 3e-13,
                    counts: 100,
                }],
            })
            .collect();
        let scan = ScanResult {
            points,
            metadata: ScanMetadata {
                seed: None,
                scenario: None,
                dwell_per_point: None,
                block_duration: None,
                warnings: vec![],
            },
        };
        let report = homlab_core::scan::fit_dip_with(&scan, 10, 1).unwrap();
        let svg = render_plot(&scan, &report, "flat <data>");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("flat &lt;data&gt;"));
        assert!(!svg.contains("href"));
        assert_eq!(svg.matches("<circle").count(), 21);
    }
}
