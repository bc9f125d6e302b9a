//! Deterministic synthetic sources standing in for sensor wrappers.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::SourceDef;
use crate::kb::{Datatype, Generator};
use crate::registry::Value;

/// Optional wrapper param delaying a source's first sample (milliseconds).
pub const PHASE_PARAM: &str = "phaseMs";

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("source {sensor}: cannot read trace {path}: {message}")]
    Trace { sensor: String, path: String, message: String },
    #[error("source {sensor}: {message}")]
    Param { sensor: String, message: String },
}

#[derive(Debug, Clone)]
enum Gen {
    Constant(f64),
    Sine { amplitude: f64, period: f64, offset: f64 },
    Random { rng: Box<ChaCha8Rng>, drawn: u64, min: f64, max: f64 },
    Trace(Arc<Vec<f64>>),
}

/// Reads a trace: one number per line, blank lines and `#` comments skipped.
pub fn read_trace(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split(',').next().unwrap_or(line).trim();
        out.push(first.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    if out.is_empty() {
        return Err("trace is empty".into());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub(crate) struct SourceState {
    pub interval: u64,
    pub phase: u64,
    datatype: Datatype,
    gen: Gen,
    /// Sample index and value of the most recent sample.
    current: Option<(u64, Value)>,
}

impl SourceState {
    pub fn new(def: &SourceDef) -> Result<Self, SourceError> {
        let w = &def.wrapper;
        let param_err = |message: String| SourceError::Param { sensor: def.sensor_id.clone(), message };
        if w.sample_interval_ms == 0 {
            return Err(param_err("sampleIntervalMs must be > 0".into()));
        }
        let gen = match w.generator {
            Generator::Constant => Gen::Constant(w.num("value").ok_or_else(|| param_err("missing value".into()))?),
            Generator::Sine => {
                let period = w.num("period").unwrap_or(60_000.0);
                if period.is_nan() || period <= 0.0 {
                    return Err(param_err("period must be > 0".into()));
                }
                Gen::Sine { amplitude: w.num("amplitude").unwrap_or(1.0), period, offset: w.num("offset").unwrap_or(0.0) }
            }
            Generator::UniformRandom => {
                let seed = w.params.get("seed").and_then(|v| v.as_u64()).ok_or_else(|| param_err("missing seed".into()))?;
                let (min, max) = (w.num("min").unwrap_or(0.0), w.num("max").unwrap_or(1.0));
                if min.is_nan() || max.is_nan() || min > max {
                    return Err(param_err("min must not exceed max".into()));
                }
                Gen::Random { rng: Box::new(ChaCha8Rng::seed_from_u64(seed)), drawn: 0, min, max }
            }
            Generator::TraceFile => {
                let path = w.text("path").ok_or_else(|| param_err("missing path".into()))?;
                let trace_err =
                    |message: String| SourceError::Trace { sensor: def.sensor_id.clone(), path: path.to_string(), message };
                let text = std::fs::read_to_string(path).map_err(|e| trace_err(e.to_string()))?;
                Gen::Trace(Arc::new(read_trace(&text).map_err(trace_err)?))
            }
        };
        Ok(Self {
            interval: w.sample_interval_ms,
            phase: w.num(PHASE_PARAM).map(|p| p.max(0.0) as u64).unwrap_or(0),
            datatype: def.observes.datatype,
            gen,
            current: None,
        })
    }

    /// Index of the latest sample at time `t`, if the source has started.
    pub fn index_at(&self, t: u64) -> Option<u64> {
        (t >= self.phase).then(|| (t - self.phase) / self.interval)
    }

    fn raw(&mut self, index: u64) -> f64 {
        let t = (self.phase + index * self.interval) as f64;
        match &mut self.gen {
            Gen::Constant(v) => *v,
            Gen::Sine { amplitude, period, offset } => *offset + *amplitude * (TAU * t / *period).sin(),
            Gen::Random { rng, drawn, min, max } => {
                // samples are only ever requested in increasing order
                let mut u = 0.0;
                while *drawn <= index {
                    u = rng.random::<f64>();
                    *drawn += 1;
                }
                *min + (*max - *min) * u
            }
            Gen::Trace(values) => values[(index % values.len() as u64) as usize],
        }
    }

    /// Latest sample at time `t` as `(index, value)`.
    pub fn sample_at(&mut self, t: u64) -> Option<(u64, &Value)> {
        let index = self.index_at(t)?;
        if self.current.as_ref().map(|c| c.0) != Some(index) {
            let x = self.raw(index);
            let v = match self.datatype {
                Datatype::Int => Value::Int(x.round() as i64),
                _ => Value::Double(x),
            };
            self.current = Some((index, v));
        }
        self.current.as_ref().map(|(i, v)| (*i, v))
    }
}
