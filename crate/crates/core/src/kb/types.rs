use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Value type carried by a stream field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Double,
    Int,
    Boolean,
    String,
}

impl Datatype {
    pub fn is_numeric(self) -> bool {
        matches!(self, Datatype::Double | Datatype::Int)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Datatype::Double => "double",
            Datatype::Int => "int",
            Datatype::Boolean => "boolean",
            Datatype::String => "string",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "double" => Some(Datatype::Double),
            "int" => Some(Datatype::Int),
            "boolean" => Some(Datatype::Boolean),
            "string" => Some(Datatype::String),
            _ => None,
        }
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const NO_UNIT: &str = "none";

/// A typed, unit-annotated data stream property such as `airTemperature [double, celsius]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PropertyRef {
    pub name: String,
    pub datatype: Datatype,
    pub unit: String,
}

impl PropertyRef {
    pub fn new(name: impl Into<String>, datatype: Datatype, unit: impl Into<String>) -> Self {
        Self { name: name.into(), datatype, unit: unit.into() }
    }

    /// Stable textual key, `name:datatype:unit`.
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.name, self.datatype, self.unit)
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("property name is empty".into());
        }
        if self.unit.is_empty() {
            return Err(format!("property {} has an empty unit", self.name));
        }
        if !self.datatype.is_numeric() && self.unit != NO_UNIT {
            return Err(format!(
                "property {} is {} and must carry unit \"none\"",
                self.name, self.datatype
            ));
        }
        Ok(())
    }
}

impl fmt::Display for PropertyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}, {}]", self.name, self.datatype, self.unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub value: f64,
    pub direction: Direction,
}

impl ContextEntry {
    pub fn new(value: f64, direction: Direction) -> Self {
        Self { value, direction }
    }
}

/// Non-functional properties (reliability, energy, latency, ...) of a sensor,
/// component or conversion. Keys are open-ended identifiers.
pub type ContextVector = BTreeMap<String, ContextEntry>;

pub(crate) fn check_context(ctx: &ContextVector) -> Result<(), String> {
    for (name, entry) in ctx {
        if name.is_empty() {
            return Err("context property with empty name".into());
        }
        if !entry.value.is_finite() {
            return Err(format!("context property {name} is not finite"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    Constant,
    Sine,
    UniformRandom,
    TraceFile,
}

/// Binding of a sensor to the synthetic source that stands in for its hardware wrapper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WrapperBinding {
    pub generator: Generator,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    pub sample_interval_ms: u64,
}

impl WrapperBinding {
    pub fn constant(value: f64, sample_interval_ms: u64) -> Self {
        let mut params = BTreeMap::new();
        params.insert("value".to_string(), serde_json::json!(value));
        Self { generator: Generator::Constant, params, sample_interval_ms }
    }

    pub fn num(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(|v| v.as_f64())
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(|v| v.as_str())
    }

    pub fn set_num(&mut self, key: &str, value: f64) {
        self.params.insert(key.to_string(), serde_json::json!(value));
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.sample_interval_ms == 0 {
            return Err("sampleIntervalMs must be > 0".into());
        }
        match self.generator {
            Generator::Constant if self.num("value").is_none() => {
                Err("constant generator needs a numeric \"value\" param".into())
            }
            Generator::UniformRandom if self.params.get("seed").and_then(|v| v.as_u64()).is_none() => {
                Err("uniform-random generator needs an integer \"seed\" param".into())
            }
            Generator::TraceFile if self.text("path").is_none() => {
                Err("trace-file generator needs a \"path\" param".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Deriver {
    StaticMetadata,
    DerivedStream,
}

/// Context output a sensor can contribute to a stream besides its observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextOutput {
    pub property: PropertyRef,
    pub deriver: Deriver,
    /// Literal for static metadata not backed by a sensor field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SensorDescription {
    pub id: String,
    pub sensor_type: u32,
    pub observes: PropertyRef,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub context: ContextVector,
    pub wrapper: WrapperBinding,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_outputs: Vec<ContextOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDescription {
    pub id: String,
    pub function: u32,
    pub inputs: Vec<PropertyRef>,
    pub output: PropertyRef,
    #[serde(default)]
    pub context: ContextVector,
    #[serde(rename = "impl")]
    pub impl_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Affine unit conversion `to = scale * from + offset`. Usable in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UnitConversion {
    pub from_unit: String,
    pub to_unit: String,
    pub scale: f64,
    pub offset: f64,
    #[serde(default, rename = "context", skip_serializing_if = "BTreeMap::is_empty")]
    pub cost_context: ContextVector,
}

impl UnitConversion {
    pub fn key(&self) -> String {
        conversion_key(&self.from_unit, &self.to_unit)
    }
}

pub fn conversion_key(from: &str, to: &str) -> String {
    format!("{from}->{to}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerKind {
    Choice,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Question {
    pub id: String,
    pub text: String,
    pub answer_kind: AnswerKind,
    #[serde(default)]
    pub choices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptValue {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub question_id: String,
    pub values: Vec<ConceptValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskDescription {
    pub id: String,
    pub title: String,
    pub required_outputs: Vec<PropertyRef>,
    #[serde(default)]
    pub concept_bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Mean,
    Sum,
    Max,
}
