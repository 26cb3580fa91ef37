//! Flag validation and the `key=value` configuration file.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn float(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite".into())
    }
}

pub fn non_negative(s: &str) -> Result<f64, String> {
    float(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err("must be >= 0".into()) })
}

pub fn strictly_positive(s: &str) -> Result<f64, String> {
    float(s).and_then(|v| if v > 0.0 { Ok(v) } else { Err("must be > 0".into()) })
}

pub fn unit_interval(s: &str) -> Result<f64, String> {
    float(s).and_then(|v| {
        if (0.0..1.0).contains(&v) {
            Ok(v)
        } else {
            Err("must be in [0, 1)".into())
        }
    })
}

pub fn probability(s: &str) -> Result<f64, String> {
    unit_interval(s)
}

pub fn cosine(s: &str) -> Result<f64, String> {
    float(s).and_then(|v| {
        if (-1.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err("must be in [-1, 1]".into())
        }
    })
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), n + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("{}:{}: invalid key {key:?}", path.display(), n + 1);
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

fn flag_name(arg: &OsString) -> Option<String> {
    let s = arg.to_str()?;
    let name = s.strip_prefix("--")?;
    Some(name.split('=').next().unwrap_or(name).to_string())
}

/// Removes `--config FILE` from `argv` and splices the file's settings in
/// right after the subcommand, skipping any flag already given explicitly.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut iter = argv.into_iter();
    while let Some(arg) = iter.next() {
        match arg.to_str() {
            Some("--config") => {
                config = Some(iter.next().context("--config needs a file")?);
            }
            Some(s) if s.starts_with("--config=") => {
                config = Some(OsString::from(&s["--config=".len()..]));
            }
            _ => rest.push(arg),
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let settings = parse_config(&text, path)?;

    // The subcommand is the first bare word that is not the value of --threads.
    let mut pos = None;
    let mut i = 1;
    while i < rest.len() {
        let s = rest[i].to_str().unwrap_or("");
        if s == "--threads" {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            pos = Some(i + 1);
            break;
        }
        i += 1;
    }
    let Some(pos) = pos else {
        // No subcommand: let the parser report it.
        return Ok(rest);
    };
    let given: Vec<String> = rest.iter().filter_map(flag_name).collect();
    let mut injected = Vec::new();
    for (key, value) in settings {
        if given.contains(&key) {
            continue;
        }
        match value.as_str() {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    rest.splice(pos..pos, injected);
    Ok(rest)
}
