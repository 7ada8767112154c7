//! Versioned, line-oriented text checkpoints.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! saved model reloads bit-exactly. The header pins the geometry, the
//! windowing, and the normalizer that produced the training inputs; a
//! model evaluated against a dataset it was not fitted on would silently
//! produce nonsense otherwise.

use super::GruNetwork;
use crate::data::{atomic_write, Normalizer};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "fedflow-checkpoint";
const VERSION: u32 = 1;

/// A trained model together with the preprocessing it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: GruNetwork,
    pub normalizer: Normalizer,
    pub window_r: usize,
    pub horizon_s: usize,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} v{VERSION}");
    let _ = writeln!(out, "input_size={}", ckpt.net.input_size);
    let sizes: Vec<String> = ckpt
        .net
        .hidden_sizes
        .iter()
        .map(|h| h.to_string())
        .collect();
    let _ = writeln!(out, "hidden_sizes={}", sizes.join(","));
    let _ = writeln!(out, "window_r={}", ckpt.window_r);
    let _ = writeln!(out, "horizon_s={}", ckpt.horizon_s);
    let _ = writeln!(out, "norm_min={}", ckpt.normalizer.min);
    let _ = writeln!(out, "norm_max={}", ckpt.normalizer.max);
    let params = ckpt.net.flatten();
    let _ = writeln!(out, "param_count={}", params.len());
    for p in &params {
        let _ = writeln!(out, "{p}");
    }
    atomic_write(path, out.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("file is empty".to_string()))?;
    let expected = format!("{MAGIC} v{VERSION}");
    if header != expected {
        return Err(Error::Checkpoint(format!(
            "unrecognized header {header:?}, this reader supports {expected:?}"
        )));
    }

    let mut field = |name: &str| -> Result<String> {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing field {name}")))?;
        match line.split_once('=') {
            Some((k, v)) if k == name => Ok(v.to_string()),
            _ => Err(Error::Checkpoint(format!(
                "line {}: expected field {name}, found {line:?}",
                idx + 1
            ))),
        }
    };

    let input_size: usize = parse_field(&field("input_size")?, "input_size")?;
    let hidden_raw = field("hidden_sizes")?;
    let hidden_sizes: Vec<usize> = hidden_raw
        .split(',')
        .map(|s| parse_field(s, "hidden_sizes"))
        .collect::<Result<_>>()?;
    let window_r: usize = parse_field(&field("window_r")?, "window_r")?;
    let horizon_s: usize = parse_field(&field("horizon_s")?, "horizon_s")?;
    let norm_min: f64 = parse_field(&field("norm_min")?, "norm_min")?;
    let norm_max: f64 = parse_field(&field("norm_max")?, "norm_max")?;
    let param_count: usize = parse_field(&field("param_count")?, "param_count")?;

    let mut params = Vec::with_capacity(param_count);
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            Error::Checkpoint(format!("line {}: bad parameter value {line:?}", idx + 1))
        })?;
        params.push(v);
    }
    if params.len() != param_count {
        return Err(Error::Checkpoint(format!(
            "header promises {param_count} parameters, file holds {}",
            params.len()
        )));
    }

    let net = GruNetwork::unflatten(&params, input_size, &hidden_sizes)
        .map_err(|e| Error::Checkpoint(format!("geometry mismatch: {e}")))?;
    Ok(Checkpoint {
        net,
        normalizer: Normalizer {
            min: norm_min,
            max: norm_max,
        },
        window_r,
        horizon_s,
    })
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("field {name}: bad value {raw:?}")))
}
