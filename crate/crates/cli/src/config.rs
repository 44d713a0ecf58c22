//! Line-based `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys are dotted (`dip.sigma_J`)
//! and carry fixed SI units, listed by `homlab presets`. Keys under `run.`
//! are run-manifest metadata: accepted, but they never change parameters.

use homlab_core::{Error, Result};

use crate::presets::{is_known_key, Preset};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Override {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_config(text: &str) -> Result<Vec<Override>> {
    let mut out: Vec<Override> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!("line {line}: empty key or value")));
        }
        if !is_known_key(key) && !key.starts_with("run.") {
            return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
        }
        if let Some(prev) = out.iter().find(|o| o.key == key) {
            return Err(Error::Config(format!(
                "line {line}: `{key}` already set on line {}",
                prev.line
            )));
        }
        out.push(Override {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(out)
}

/// Applies overrides in file order; errors carry the line number.
pub fn apply_overrides(preset: &mut Preset, overrides: &[Override]) -> Result<()> {
    for o in overrides.iter().filter(|o| !o.key.starts_with("run.")) {
        preset.set(&o.key, &o.value).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("line {}: {m}", o.line)),
            other => other,
        })?;
    }
    Ok(())
}

/// Value of a `run.` metadata key, if present.
pub fn run_value<'a>(overrides: &'a [Override], key: &str) -> Option<&'a str> {
    overrides
        .iter()
        .find(|o| o.key == format!("run.{key}"))
        .map(|o| o.value.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn jitter_override() {
        let o = parse_config("dip.sigma_J = 350e-15\n").unwrap();
        let mut p = preset("fig3a").unwrap();
        p.dip.sigma_j = 0.0;
        apply_overrides(&mut p, &o).unwrap();
        assert_eq!(p.dip.sigma_j, 350e-15);
        assert_eq!(p.overridden, vec!["dip.sigma_J".to_string()]);
    }

    #[test]
    fn empty_and_comments() {
        assert!(parse_config("").unwrap().is_empty());
        assert!(parse_config("# only a comment\n\n   \n").unwrap().is_empty());
        let o = parse_config("experiment.seedless = 1 # trailing").unwrap_err();
        assert!(o.to_string().contains("line 1"));
        let o = parse_config("sync.harmonic = 1 # coarse only").unwrap();
        assert_eq!(o[0].value, "1");
    }

    #[test]
    fn errors_report_lines() {
        let err = parse_config("dip.sigma_J = 1e-13\n\nbogus line\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_config("a.b = 1").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
        let err = parse_config("dip.sigma_J = 1\ndip.sigma_J = 2").unwrap_err();
        assert!(err.to_string().contains("line 2"));

        let o = parse_config("\n\ndip.sigma_J = -1").unwrap();
        let mut p = preset("fig3a").unwrap();
        let err = apply_overrides(&mut p, &o).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("line 3") && err.to_string().contains("dip.sigma_J"));
    }

    #[test]
    fn run_keys_are_metadata() {
        let o = parse_config("run.command = scan\nrun.seed = 4").unwrap();
        let mut p = preset("fig3a").unwrap();
        apply_overrides(&mut p, &o).unwrap();
        assert!(p.overridden.is_empty());
        assert_eq!(run_value(&o, "seed"), Some("4"));
    }
}
