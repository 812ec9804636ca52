//! Flat `key = value` pipeline configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Keys
//! not listed in [`KEYS`] and repeated keys are errors. Omitted keys keep
//! their defaults.

use std::path::Path;
use std::str::FromStr;

use sparseocc_core::pipeline::PipelineConfig;
use sparseocc_core::GridShape;

use crate::error::BenchError;

pub const KEYS: &[&str] = &[
    "shape",
    "channels",
    "decoder_channels",
    "levels",
    "kernel",
    "queries",
    "head_layers",
    "classes",
    "seed",
    "density",
    "lambda_cls",
    "lambda_bce",
    "lambda_dice",
    "sample_points",
    "leaky_slope",
    "filter_threshold",
];

/// Parses `HxWxD`.
pub fn parse_shape(s: &str) -> Result<GridShape, String> {
    let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
    if parts.len() != 3 {
        return Err(format!("shape `{s}` is not of the form HxWxD"));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p.trim().parse().map_err(|_| format!("shape `{s}`: `{p}` is not a positive integer"))?;
    }
    GridShape::new(dims[0], dims[1], dims[2]).map_err(|e| format!("shape `{s}`: {e}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
}

pub fn parse_config(text: &str) -> Result<PipelineConfig, BenchError> {
    let mut cfg = PipelineConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| BenchError::Config(format!("line {}: {msg}", i + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let known = KEYS.iter().find(|k| **k == key).ok_or_else(|| err(format!("unknown key `{key}`")))?;
        if seen.contains(known) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        seen.push(known);
        let r: Result<(), String> = (|| {
            match key {
                "shape" => cfg.shape = parse_shape(value)?,
                "channels" => cfg.channels = num(key, value)?,
                "decoder_channels" => cfg.decoder_channels = num(key, value)?,
                "levels" => cfg.levels = num(key, value)?,
                "kernel" => cfg.kernel = num(key, value)?,
                "queries" => cfg.queries = num(key, value)?,
                "head_layers" => cfg.head_layers = num(key, value)?,
                "classes" => cfg.classes = num(key, value)?,
                "seed" => cfg.seed = num(key, value)?,
                "density" => cfg.density = num(key, value)?,
                "lambda_cls" => cfg.weights.cls = num(key, value)?,
                "lambda_bce" => cfg.weights.bce = num(key, value)?,
                "lambda_dice" => cfg.weights.dice = num(key, value)?,
                "sample_points" => cfg.sample_points = num(key, value)?,
                "leaky_slope" => cfg.leaky_slope = num(key, value)?,
                "filter_threshold" => cfg.filter_threshold = num(key, value)?,
                _ => unreachable!("key list and match arms agree"),
            }
            Ok(())
        })();
        r.map_err(err)?;
    }
    cfg.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    parse_config(&text)
}

/// Every key with its current value; parses back to the same config.
pub fn to_text(cfg: &PipelineConfig) -> String {
    let s = cfg.shape;
    format!(
        "shape = {}x{}x{}\nchannels = {}\ndecoder_channels = {}\nlevels = {}\nkernel = {}\nqueries = {}\n\
         head_layers = {}\nclasses = {}\nseed = {}\ndensity = {}\nlambda_cls = {}\nlambda_bce = {}\n\
         lambda_dice = {}\nsample_points = {}\nleaky_slope = {}\nfilter_threshold = {}\n",
        s.h,
        s.w,
        s.d,
        cfg.channels,
        cfg.decoder_channels,
        cfg.levels,
        cfg.kernel,
        cfg.queries,
        cfg.head_layers,
        cfg.classes,
        cfg.seed,
        cfg.density,
        cfg.weights.cls,
        cfg.weights.bce,
        cfg.weights.dice,
        cfg.sample_points,
        cfg.leaky_slope,
        cfg.filter_threshold,
    )
}
