//! Built-in component implementations.
//!
//! Every [`ComponentDescription`](crate::kb::ComponentDescription) names one
//! of these by `impl`. The math lives in free functions so the precompiled
//! and dynamic-dispatch execution paths share identical arithmetic.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::Datatype;

/// A typed value flowing through a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Double(f64),
    Str(String),
}

impl Value {
    pub fn datatype(&self) -> Datatype {
        match self {
            Value::Bool(_) => Datatype::Boolean,
            Value::Int(_) => Datatype::Int,
            Value::Double(_) => Datatype::Double,
            Value::Str(_) => Datatype::String,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Double(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Double(v) => write!(f, "{v}"),
            Value::Str(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImplError {
    #[error("unknown implementation {0:?}")]
    Unknown(String),
    #[error("{impl_id}: expected {expected} inputs, got {got}")]
    Arity { impl_id: String, expected: String, got: usize },
    #[error("{impl_id}: input {index} has the wrong type")]
    InputType { impl_id: String, index: usize },
    #[error("{impl_id}: input {index} is not finite")]
    NonFinite { impl_id: String, index: usize },
    #[error("{impl_id}: bad parameter {param}: {reason}")]
    Param { impl_id: String, param: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }

    pub fn is_variadic(self) -> bool {
        matches!(self, Arity::AtLeast(_))
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exact(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, "at least {k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Numeric,
    Text,
}

impl InputKind {
    pub fn admits(self, dt: Datatype) -> bool {
        match self {
            InputKind::Numeric => dt.is_numeric(),
            InputKind::Text => dt == Datatype::String,
        }
    }
}

/// Static description of a registry entry, checked against KB components at load time.
#[derive(Debug, Clone, Copy)]
pub struct ImplSignature {
    pub id: &'static str,
    pub arity: Arity,
    inputs: &'static [InputKind],
    pub output: Datatype,
}

impl ImplSignature {
    /// Kind required of input `i`; variadic signatures repeat their last kind.
    pub fn input_kind(&self, i: usize) -> InputKind {
        *self.inputs.get(i).or(self.inputs.last()).unwrap_or(&InputKind::Numeric)
    }
}

pub const THRESHOLD_AIR_STRESS: &str = "thresholdAirStress";
pub const PHYTOPHTORA_RULE: &str = "phytophtoraRule";
pub const WEIGHTED_AVERAGE: &str = "weightedAveragePollutionIndex";
pub const UNIT_CONVERT: &str = "unitConvertAffine";
pub const MOVING_AVERAGE: &str = "movingAverage";
pub const MIN_MAX_ANOMALY: &str = "minMaxAnomalyFlag";
pub const BATTERY_DECAY: &str = "batteryDecayContext";

const SIGNATURES: &[ImplSignature] = &[
    ImplSignature {
        id: THRESHOLD_AIR_STRESS,
        arity: Arity::Exact(2),
        inputs: &[InputKind::Numeric, InputKind::Numeric],
        output: Datatype::String,
    },
    ImplSignature {
        id: PHYTOPHTORA_RULE,
        arity: Arity::Exact(2),
        inputs: &[InputKind::Text, InputKind::Numeric],
        output: Datatype::Boolean,
    },
    ImplSignature {
        id: WEIGHTED_AVERAGE,
        arity: Arity::AtLeast(1),
        inputs: &[InputKind::Numeric],
        output: Datatype::Double,
    },
    ImplSignature {
        id: UNIT_CONVERT,
        arity: Arity::Exact(1),
        inputs: &[InputKind::Numeric],
        output: Datatype::Double,
    },
    ImplSignature {
        id: MOVING_AVERAGE,
        arity: Arity::Exact(1),
        inputs: &[InputKind::Numeric],
        output: Datatype::Double,
    },
    ImplSignature {
        id: MIN_MAX_ANOMALY,
        arity: Arity::Exact(1),
        inputs: &[InputKind::Numeric],
        output: Datatype::Boolean,
    },
    ImplSignature {
        id: BATTERY_DECAY,
        arity: Arity::Exact(1),
        inputs: &[InputKind::Numeric],
        output: Datatype::Double,
    },
];

pub fn signature(impl_id: &str) -> Option<&'static ImplSignature> {
    SIGNATURES.iter().find(|s| s.id == impl_id)
}

pub fn signatures() -> &'static [ImplSignature] {
    SIGNATURES
}

// Shared arithmetic.

/// `low` when both readings sit under their thresholds, `high` otherwise.
pub fn air_stress(temperature: f64, humidity: f64, alpha: f64, beta: f64) -> &'static str {
    if temperature < alpha && humidity < beta {
        "low"
    } else {
        "high"
    }
}

pub fn phytophtora(air_stress: &str, leaf_wetness: f64, delta: f64) -> bool {
    air_stress == "high" && leaf_wetness > delta
}

pub fn weighted_average(xs: &[f64], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, w) in xs.iter().zip(weights) {
        num += w * x;
        den += w;
    }
    num / den
}

pub fn affine(x: f64, scale: f64, offset: f64) -> f64 {
    scale * x + offset
}

/// `scale * x + offset`, or its inverse `(x - offset) / scale`.
pub fn unit_convert(x: f64, scale: f64, offset: f64, inverse: bool) -> f64 {
    if inverse {
        (x - offset) / scale
    } else {
        affine(x, scale, offset)
    }
}

pub fn out_of_range(x: f64, min: f64, max: f64) -> bool {
    x < min || x > max
}

pub fn battery_level(sample_index: f64, initial: f64, decay: f64) -> f64 {
    (initial - decay * sample_index).max(0.0)
}

pub const DEFAULT_ALPHA: f64 = 30.0;
pub const DEFAULT_BETA: f64 = 60.0;
pub const DEFAULT_DELTA: f64 = 50.0;
pub const DEFAULT_WINDOW: f64 = 5.0;
pub const DEFAULT_BATTERY_INITIAL: f64 = 100.0;
pub const DEFAULT_BATTERY_DECAY: f64 = 0.01;

fn param(params: &BTreeMap<String, f64>, name: &str, default: f64) -> f64 {
    params.get(name).copied().unwrap_or(default)
}

fn required(impl_id: &str, params: &BTreeMap<String, f64>, name: &str) -> Result<f64, ImplError> {
    params.get(name).copied().ok_or_else(|| ImplError::Param {
        impl_id: impl_id.to_string(),
        param: name.to_string(),
        reason: "missing".into(),
    })
}

/// Weights `w0..w{n-1}` for a variadic average, defaulting to 1.
pub fn average_weights(params: &BTreeMap<String, f64>, n: usize) -> Vec<f64> {
    (0..n).map(|i| param(params, &format!("w{i}"), 1.0)).collect()
}

fn numeric(impl_id: &str, inputs: &[Value], index: usize) -> Result<f64, ImplError> {
    let v = inputs[index].as_f64().ok_or_else(|| ImplError::InputType {
        impl_id: impl_id.to_string(),
        index,
    })?;
    if !v.is_finite() {
        return Err(ImplError::NonFinite { impl_id: impl_id.to_string(), index });
    }
    Ok(v)
}

fn text<'a>(impl_id: &str, inputs: &'a [Value], index: usize) -> Result<&'a str, ImplError> {
    match &inputs[index] {
        Value::Str(s) => Ok(s),
        _ => Err(ImplError::InputType { impl_id: impl_id.to_string(), index }),
    }
}

fn check_arity(sig: &ImplSignature, n: usize) -> Result<(), ImplError> {
    if sig.arity.accepts(n) {
        Ok(())
    } else {
        Err(ImplError::Arity { impl_id: sig.id.to_string(), expected: sig.arity.to_string(), got: n })
    }
}

/// A registry entry with its parameters resolved ahead of time. Used by the
/// precompiled execution mode.
#[derive(Debug, Clone)]
pub enum Op {
    AirStress { alpha: f64, beta: f64 },
    Phytophtora { delta: f64 },
    WeightedAverage { weights: Vec<f64>, scratch: Vec<f64> },
    Affine { scale: f64, offset: f64, inverse: bool },
    MovingAverage { window: usize, state: Window },
    MinMaxFlag { min: f64, max: f64 },
    Battery { initial: f64, decay: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct Window {
    buf: VecDeque<f64>,
}

impl Window {
    fn push(&mut self, x: f64, window: usize) -> f64 {
        self.buf.push_back(x);
        while self.buf.len() > window {
            self.buf.pop_front();
        }
        self.buf.iter().sum::<f64>() / self.buf.len() as f64
    }
}

fn window_size(impl_id: &str, params: &BTreeMap<String, f64>) -> Result<usize, ImplError> {
    let w = param(params, "window", DEFAULT_WINDOW);
    if w.is_nan() || w < 1.0 || w.fract() != 0.0 {
        return Err(ImplError::Param {
            impl_id: impl_id.to_string(),
            param: "window".into(),
            reason: "must be a positive integer".into(),
        });
    }
    Ok(w as usize)
}

impl Op {
    pub fn build(impl_id: &str, params: &BTreeMap<String, f64>, arity: usize) -> Result<Op, ImplError> {
        let sig = signature(impl_id).ok_or_else(|| ImplError::Unknown(impl_id.to_string()))?;
        check_arity(sig, arity)?;
        Ok(match impl_id {
            THRESHOLD_AIR_STRESS => Op::AirStress {
                alpha: param(params, "alpha", DEFAULT_ALPHA),
                beta: param(params, "beta", DEFAULT_BETA),
            },
            PHYTOPHTORA_RULE => Op::Phytophtora { delta: param(params, "delta", DEFAULT_DELTA) },
            WEIGHTED_AVERAGE => {
                let weights = average_weights(params, arity);
                let total: f64 = weights.iter().sum();
                if total.is_nan() || total <= 0.0 {
                    return Err(ImplError::Param {
                        impl_id: impl_id.to_string(),
                        param: "w*".into(),
                        reason: "weights must sum to a positive value".into(),
                    });
                }
                Op::WeightedAverage { scratch: Vec::with_capacity(arity), weights }
            }
            UNIT_CONVERT => Op::Affine {
                scale: required(impl_id, params, "scale")?,
                offset: param(params, "offset", 0.0),
                inverse: param(params, "inverse", 0.0) != 0.0,
            },
            MOVING_AVERAGE => Op::MovingAverage { window: window_size(impl_id, params)?, state: Window::default() },
            MIN_MAX_ANOMALY => Op::MinMaxFlag {
                min: required(impl_id, params, "min")?,
                max: required(impl_id, params, "max")?,
            },
            BATTERY_DECAY => Op::Battery {
                initial: param(params, "initial", DEFAULT_BATTERY_INITIAL),
                decay: param(params, "decay", DEFAULT_BATTERY_DECAY),
            },
            other => return Err(ImplError::Unknown(other.to_string())),
        })
    }

    pub fn apply(&mut self, inputs: &[Value]) -> Result<Value, ImplError> {
        match self {
            Op::AirStress { alpha, beta } => {
                let t = numeric(THRESHOLD_AIR_STRESS, inputs, 0)?;
                let h = numeric(THRESHOLD_AIR_STRESS, inputs, 1)?;
                Ok(Value::Str(air_stress(t, h, *alpha, *beta).to_string()))
            }
            Op::Phytophtora { delta } => {
                let s = text(PHYTOPHTORA_RULE, inputs, 0)?;
                let w = numeric(PHYTOPHTORA_RULE, inputs, 1)?;
                Ok(Value::Bool(phytophtora(s, w, *delta)))
            }
            Op::WeightedAverage { weights, scratch } => {
                scratch.clear();
                for i in 0..inputs.len() {
                    scratch.push(numeric(WEIGHTED_AVERAGE, inputs, i)?);
                }
                Ok(Value::Double(weighted_average(scratch, weights)))
            }
            Op::Affine { scale, offset, inverse } => {
                Ok(Value::Double(unit_convert(numeric(UNIT_CONVERT, inputs, 0)?, *scale, *offset, *inverse)))
            }
            Op::MovingAverage { window, state } => {
                let x = numeric(MOVING_AVERAGE, inputs, 0)?;
                Ok(Value::Double(state.push(x, *window)))
            }
            Op::MinMaxFlag { min, max } => {
                Ok(Value::Bool(out_of_range(numeric(MIN_MAX_ANOMALY, inputs, 0)?, *min, *max)))
            }
            Op::Battery { initial, decay } => {
                Ok(Value::Double(battery_level(numeric(BATTERY_DECAY, inputs, 0)?, *initial, *decay)))
            }
        }
    }
}

/// Per-node mutable state for the dynamic-dispatch path.
#[derive(Debug, Default)]
pub struct NodeState {
    window: Window,
}

/// Entry point resolved by name on every invocation.
pub type DynImpl = fn(&mut NodeState, &BTreeMap<String, f64>, &[Value]) -> Result<Value, ImplError>;

fn dyn_air_stress(_: &mut NodeState, p: &BTreeMap<String, f64>, inputs: &[Value]) -> Result<Value, ImplError> {
    let t = numeric(THRESHOLD_AIR_STRESS, inputs, 0)?;
    let h = numeric(THRESHOLD_AIR_STRESS, inputs, 1)?;
    let label = air_stress(t, h, param(p, "alpha", DEFAULT_ALPHA), param(p, "beta", DEFAULT_BETA));
    Ok(Value::Str(label.to_string()))
}

fn dyn_phytophtora(_: &mut NodeState, p: &BTreeMap<String, f64>, inputs: &[Value]) -> Result<Value, ImplError> {
    let s = text(PHYTOPHTORA_RULE, inputs, 0)?;
    let w = numeric(PHYTOPHTORA_RULE, inputs, 1)?;
    Ok(Value::Bool(phytophtora(s, w, param(p, "delta", DEFAULT_DELTA))))
}

fn dyn_weighted_average(_: &mut NodeState, p: &BTreeMap<String, f64>, inputs: &[Value]) -> Result<Value, ImplError> {
    let xs = (0..inputs.len())
        .map(|i| numeric(WEIGHTED_AVERAGE, inputs, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Value::Double(weighted_average(&xs, &average_weights(p, xs.len()))))
}

fn dyn_affine(_: &mut NodeState, p: &BTreeMap<String, f64>, inputs: &[Value]) -> Result<Value, ImplError> {
    let x = numeric(UNIT_CONVERT, inputs, 0)?;
    let inverse = param(p, "inverse", 0.0) != 0.0;
    Ok(Value::Double(unit_convert(x, required(UNIT_CONVERT, p, "scale")?, param(p, "offset", 0.0), inverse)))
}

fn dyn_moving_average(s: &mut NodeState, p: &BTreeMap<String, f64>, inputs: &[Value]) -> Result<Value, ImplError> {
    let x = numeric(MOVING_AVERAGE, inputs, 0)?;
    Ok(Value::Double(s.window.push(x, window_size(MOVING_AVERAGE, p)?)))
}

fn dyn_min_max(_: &mut NodeState, p: &BTreeMap<String, f64>, inputs: &[Value]) -> Result<Value, ImplError> {
    let x = numeric(MIN_MAX_ANOMALY, inputs, 0)?;
    Ok(Value::Bool(out_of_range(
        x,
        required(MIN_MAX_ANOMALY, p, "min")?,
        required(MIN_MAX_ANOMALY, p, "max")?,
    )))
}

fn dyn_battery(_: &mut NodeState, p: &BTreeMap<String, f64>, inputs: &[Value]) -> Result<Value, ImplError> {
    let idx = numeric(BATTERY_DECAY, inputs, 0)?;
    Ok(Value::Double(battery_level(
        idx,
        param(p, "initial", DEFAULT_BATTERY_INITIAL),
        param(p, "decay", DEFAULT_BATTERY_DECAY),
    )))
}

/// Name-keyed table used by the dynamic-dispatch execution mode.
pub fn dynamic_table() -> &'static HashMap<String, DynImpl> {
    static TABLE: OnceLock<HashMap<String, DynImpl>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let entries: [(&str, DynImpl); 7] = [
            (THRESHOLD_AIR_STRESS, dyn_air_stress),
            (PHYTOPHTORA_RULE, dyn_phytophtora),
            (WEIGHTED_AVERAGE, dyn_weighted_average),
            (UNIT_CONVERT, dyn_affine),
            (MOVING_AVERAGE, dyn_moving_average),
            (MIN_MAX_ANOMALY, dyn_min_max),
            (BATTERY_DECAY, dyn_battery),
        ];
        entries.into_iter().map(|(k, f)| (k.to_string(), f)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn air_stress_rule_boundaries() {
        assert_eq!(air_stress(20.0, 40.0, 30.0, 60.0), "low");
        assert_eq!(air_stress(35.0, 40.0, 30.0, 60.0), "high");
        assert_eq!(air_stress(20.0, 70.0, 30.0, 60.0), "high");
        // strict comparison: equal to threshold is not "below"
        assert_eq!(air_stress(30.0, 10.0, 30.0, 60.0), "high");
    }

    #[test]
    fn phytophtora_needs_high_stress_and_wet_leaves() {
        assert!(phytophtora("high", 80.0, 50.0));
        assert!(!phytophtora("high", 50.0, 50.0));
        assert!(!phytophtora("low", 80.0, 50.0));
    }

    #[test]
    fn every_signature_has_a_dynamic_entry() {
        let table = dynamic_table();
        for sig in signatures() {
            assert!(table.contains_key(sig.id), "{}", sig.id);
        }
    }

    #[test]
    fn both_paths_agree_on_moving_average() {
        let p = params(&[("window", 3.0)]);
        let mut op = Op::build(MOVING_AVERAGE, &p, 1).unwrap();
        let mut state = NodeState::default();
        let f = dynamic_table()[MOVING_AVERAGE];
        for x in [1.0, 2.0, 6.0, 10.0, -4.0] {
            let a = op.apply(&[Value::Double(x)]).unwrap();
            let b = f(&mut state, &p, &[Value::Double(x)]).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(op.apply(&[Value::Double(0.0)]).unwrap(), Value::Double(2.0));
    }

    #[test]
    fn arity_and_params_are_checked() {
        assert!(matches!(
            Op::build(THRESHOLD_AIR_STRESS, &BTreeMap::new(), 3),
            Err(ImplError::Arity { .. })
        ));
        assert!(matches!(Op::build(UNIT_CONVERT, &BTreeMap::new(), 1), Err(ImplError::Param { .. })));
        assert!(matches!(Op::build("no-such", &BTreeMap::new(), 1), Err(ImplError::Unknown(_))));
        let zero = params(&[("w0", 0.0)]);
        assert!(Op::build(WEIGHTED_AVERAGE, &zero, 1).is_err());
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let mut op = Op::build(WEIGHTED_AVERAGE, &BTreeMap::new(), 2).unwrap();
        let err = op.apply(&[Value::Double(1.0), Value::Double(f64::NAN)]).unwrap_err();
        assert_eq!(err, ImplError::NonFinite { impl_id: WEIGHTED_AVERAGE.into(), index: 1 });
    }

    #[test]
    fn battery_clamps_at_zero() {
        assert_eq!(battery_level(0.0, 100.0, 1.0), 100.0);
        assert_eq!(battery_level(250.0, 100.0, 1.0), 0.0);
    }
}
