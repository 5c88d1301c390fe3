//! Flat `key=value` experiment configuration files.
//!
//! Lists are comma-separated; blank lines and lines starting with `#` are
//! skipped; unknown keys are a hard error.

use std::str::FromStr;

use super::{ExperimentKind, ExperimentSpec};
use crate::srp::MethodTag;
use crate::{Result, SrpError};

fn parse_list<T: FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| SrpError::Parse(format!("bad entry '{s}' in {key}")))
        })
        .collect()
}

fn parse_scalar<T: FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| SrpError::Parse(format!("bad value '{value}' for {key}")))
}

/// Parse a config file's text into an [`ExperimentSpec`].
///
/// Required keys: `kind`, `dims`, `methods`, `output_path`. Defaults:
/// `outlier_counts=0`, `trials=50`, `sigma=0.02`, `sigma_t=0.3`,
/// `n_inliers=200`, `pool_size=100`, `lambda_bar=0.2`, `seed=0`.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let mut kind: Option<ExperimentKind> = None;
    let mut dims: Option<Vec<usize>> = None;
    let mut outlier_counts: Vec<usize> = vec![0];
    let mut trials = 50usize;
    let mut methods: Option<Vec<MethodTag>> = None;
    let mut sigma = 0.02f64;
    let mut sigma_t = 0.3f64;
    let mut n_inliers = 200usize;
    let mut pool_size = 100usize;
    let mut lambda_bar = 0.2f64;
    let mut seed = 0u64;
    let mut output_path: Option<String> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SrpError::Parse(format!(
                "line {}: expected key=value, got '{line}'",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "kind" => kind = Some(value.parse()?),
            "dims" => dims = Some(parse_list(value, "dims")?),
            "outlier_counts" => outlier_counts = parse_list(value, "outlier_counts")?,
            "trials" => trials = parse_scalar(value, "trials")?,
            "methods" => {
                methods = Some(
                    value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(MethodTag::from_str)
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "sigma" => sigma = parse_scalar(value, "sigma")?,
            "sigma_t" => sigma_t = parse_scalar(value, "sigma_t")?,
            "n_inliers" => n_inliers = parse_scalar(value, "n_inliers")?,
            "pool_size" => pool_size = parse_scalar(value, "pool_size")?,
            "lambda_bar" => lambda_bar = parse_scalar(value, "lambda_bar")?,
            "seed" => seed = parse_scalar(value, "seed")?,
            "output_path" => output_path = Some(value.to_string()),
            other => {
                return Err(SrpError::Parse(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }

    let spec = ExperimentSpec {
        kind: kind.ok_or_else(|| SrpError::Parse("missing key 'kind'".into()))?,
        dims: dims.ok_or_else(|| SrpError::Parse("missing key 'dims'".into()))?,
        outlier_counts,
        trials,
        methods: methods.ok_or_else(|| SrpError::Parse("missing key 'methods'".into()))?,
        sigma,
        sigma_t,
        n_inliers,
        pool_size,
        lambda_bar,
        seed,
        output_path: output_path.ok_or_else(|| SrpError::Parse("missing key 'output_path'".into()))?,
    };
    spec.validate()?;
    Ok(spec)
}
