//! Pipeline generation and execution.
//!
//! A grounded [`Solution`] becomes a [`PipelineDefinition`]: synthetic sources
//! standing in for sensor wrappers, a topologically ordered list of processing
//! nodes, and an output projection. The definition serializes to an XML
//! virtual-sensor document and to JSON, and runs in either execution mode.

mod bench;
mod exec;
mod queue;
mod schema;
mod source;
mod xml;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{benchmark_definition, benchmark_modes, chain_definition, ModeBenchmark, ModeTiming};
pub use exec::{run, ErrorBody, ErrorRecord, Executor, RunError, RunLimit, StreamItem, StreamRecord};
pub use queue::{pump, OverflowPolicy, QueueClosed, StreamQueue};
pub use schema::{error_record_schema, record_schema};
pub use source::{read_trace, SourceError, PHASE_PARAM};
pub use xml::{from_xml, to_xml, XmlError};

use crate::context::exported_names;
use crate::kb::{ConversionStep, Datatype, Deriver, KnowledgeBase, PropertyRef, WrapperBinding};
use crate::planner::{NodeKind, Solution, SolutionNode};
use crate::registry::{self, ImplError};

/// Field every source exposes with its running sample number.
pub const SAMPLE_INDEX: &str = "sampleIndex";
/// Wrapper params feeding the battery model of a source.
pub const BATTERY_INITIAL_PARAM: &str = "batteryInitial";
pub const BATTERY_DECAY_PARAM: &str = "batteryDecay";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    #[default]
    Precompiled,
    DynamicDispatch,
}

impl ExecMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecMode::Precompiled => "precompiled",
            ExecMode::DynamicDispatch => "dynamic-dispatch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "precompiled" => Some(ExecMode::Precompiled),
            "dynamic-dispatch" => Some(ExecMode::DynamicDispatch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceDef {
    pub sensor_id: String,
    pub observes: PropertyRef,
    pub wrapper: WrapperBinding,
    /// Static string fields (location and other metadata).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldRef {
    pub from: String,
    pub field: String,
}

impl FieldRef {
    pub fn new(from: impl Into<String>, field: impl Into<String>) -> Self {
        Self { from: from.into(), field: field.into() }
    }

    pub fn key(&self) -> String {
        format!("{}.{}", self.from, self.field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeDef {
    pub node_id: String,
    #[serde(rename = "impl")]
    pub impl_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub inputs: Vec<FieldRef>,
    /// The single field this node emits, named after the property.
    pub output: PropertyRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputField {
    pub from: String,
    pub field: String,
    pub name: String,
    #[serde(rename = "type")]
    pub datatype: Datatype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineDefinition {
    pub id: String,
    pub solution_canonical_id: String,
    pub sources: Vec<SourceDef>,
    pub nodes: Vec<NodeDef>,
    pub outputs: Vec<OutputField>,
    #[serde(default)]
    pub mode: ExecMode,
}

/// Which fields end up in the output stream.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "fields")]
pub enum Projection {
    /// The task's outputs plus accepted context.
    #[default]
    Required,
    /// Every source and intermediate field, in evaluation order, then context.
    All,
    /// The named fields, in the given order.
    Fields(Vec<String>),
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("field {0:?} is not produced anywhere in the pipeline")]
    ProjectionUnreachable(String),
    #[error("solution has open sensor slots; ground it first")]
    NotGrounded,
    #[error("unknown reference {0:?}")]
    UnknownRef(String),
    #[error("context output {property} of {source_id} cannot be streamed")]
    UnsupportedContext { source_id: String, property: String },
    #[error("duplicate exported field {0:?}")]
    DuplicateField(String),
    #[error(transparent)]
    Impl(#[from] ImplError),
}

#[derive(Debug, Error)]
pub enum DefinitionError {
    #[error("node {node} reads {input} before it is produced")]
    NotTopological { node: String, input: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("duplicate exported field {0:?}")]
    DuplicateField(String),
    #[error("output {0:?} reads an unknown field")]
    UnknownField(String),
    #[error("pipeline has no sources")]
    NoSources,
    #[error("source {sensor}: {reason}")]
    Source { sensor: String, reason: String },
    #[error(transparent)]
    Impl(#[from] ImplError),
}

impl PipelineDefinition {
    /// Field names each producer exposes, with their datatypes.
    pub fn fields(&self) -> HashMap<FieldRef, Datatype> {
        let mut out = HashMap::new();
        for s in &self.sources {
            out.insert(FieldRef::new(&s.sensor_id, &s.observes.name), s.observes.datatype);
            out.insert(FieldRef::new(&s.sensor_id, SAMPLE_INDEX), Datatype::Double);
            for k in s.metadata.keys() {
                out.insert(FieldRef::new(&s.sensor_id, k), Datatype::String);
            }
        }
        for n in &self.nodes {
            out.insert(FieldRef::new(&n.node_id, &n.output.name), n.output.datatype);
        }
        out
    }

    /// Checks the definition invariants: unique ids, topological order,
    /// resolvable impls, reachable and unique outputs.
    pub fn check(&self) -> Result<(), DefinitionError> {
        if self.sources.is_empty() {
            return Err(DefinitionError::NoSources);
        }
        let mut ids = std::collections::HashSet::new();
        let mut known: HashMap<FieldRef, Datatype> = HashMap::new();
        for s in &self.sources {
            if !ids.insert(s.sensor_id.as_str()) {
                return Err(DefinitionError::DuplicateId(s.sensor_id.clone()));
            }
            s.wrapper
                .check()
                .map_err(|reason| DefinitionError::Source { sensor: s.sensor_id.clone(), reason })?;
            known.insert(FieldRef::new(&s.sensor_id, &s.observes.name), s.observes.datatype);
            known.insert(FieldRef::new(&s.sensor_id, SAMPLE_INDEX), Datatype::Double);
            for k in s.metadata.keys() {
                known.insert(FieldRef::new(&s.sensor_id, k), Datatype::String);
            }
        }
        for n in &self.nodes {
            if !ids.insert(n.node_id.as_str()) {
                return Err(DefinitionError::DuplicateId(n.node_id.clone()));
            }
            registry::Op::build(&n.impl_id, &n.params, n.inputs.len())?;
            for i in &n.inputs {
                if !known.contains_key(i) {
                    return Err(DefinitionError::NotTopological { node: n.node_id.clone(), input: i.key() });
                }
            }
            known.insert(FieldRef::new(&n.node_id, &n.output.name), n.output.datatype);
        }
        let mut names = std::collections::HashSet::new();
        for o in &self.outputs {
            if !names.insert(o.name.as_str()) {
                return Err(DefinitionError::DuplicateField(o.name.clone()));
            }
            if !known.contains_key(&FieldRef::new(&o.from, &o.field)) {
                return Err(DefinitionError::UnknownField(o.name.clone()));
            }
        }
        Ok(())
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.outputs.iter().map(|o| o.name.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("definition serializes")
    }
}

struct Builder<'a> {
    kb: &'a KnowledgeBase,
    sources: Vec<SourceDef>,
    nodes: Vec<NodeDef>,
    /// Canonical subtree form → the field it produces.
    merged: HashMap<String, (FieldRef, PropertyRef)>,
    /// Every field in first-production order.
    all: Vec<(FieldRef, PropertyRef)>,
    used_ids: HashMap<String, usize>,
}

impl Builder<'_> {
    fn fresh_id(&mut self, base: &str) -> String {
        let n = self.used_ids.entry(base.to_string()).or_insert(0);
        *n += 1;
        if *n == 1 {
            base.to_string()
        } else {
            format!("{base}#{n}")
        }
    }

    fn source(&mut self, id: &str) -> Result<&SourceDef, GenerateError> {
        if let Some(i) = self.sources.iter().position(|s| s.sensor_id == id) {
            return Ok(&self.sources[i]);
        }
        let sensor = self.kb.sensor(id).ok_or_else(|| GenerateError::UnknownRef(id.to_string()))?;
        let mut metadata = BTreeMap::new();
        for c in &sensor.context_outputs {
            if c.deriver == Deriver::StaticMetadata {
                let value = match (&c.value, c.property.name.as_str()) {
                    (Some(v), _) => v.clone(),
                    (None, "location") => sensor.location.clone(),
                    (None, _) => String::new(),
                };
                metadata.insert(c.property.name.clone(), value);
            }
        }
        *self.used_ids.entry(id.to_string()).or_insert(0) += 1;
        self.sources.push(SourceDef {
            sensor_id: id.to_string(),
            observes: sensor.observes.clone(),
            wrapper: sensor.wrapper.clone(),
            metadata,
        });
        Ok(self.sources.last().unwrap())
    }

    fn node(&mut self, n: &SolutionNode) -> Result<(FieldRef, PropertyRef), GenerateError> {
        let key = n.canonical();
        if let Some(hit) = self.merged.get(&key) {
            return Ok(hit.clone());
        }
        let produced = match n.kind {
            NodeKind::SensorLeaf => {
                let id = n.reference.as_deref().ok_or(GenerateError::NotGrounded)?;
                let observes = self.source(id)?.observes.clone();
                (FieldRef::new(id, &observes.name), observes)
            }
            NodeKind::Component => {
                let id = n.reference.as_deref().unwrap_or_default();
                let comp = self.kb.component(id).ok_or_else(|| GenerateError::UnknownRef(id.to_string()))?;
                let inputs = n.children.iter().map(|c| self.node(c).map(|r| r.0)).collect::<Result<Vec<_>, _>>()?;
                let node_id = self.fresh_id(id);
                self.nodes.push(NodeDef {
                    node_id: node_id.clone(),
                    impl_id: comp.impl_id.clone(),
                    params: comp.params.clone(),
                    inputs,
                    output: comp.output.clone(),
                });
                (FieldRef::new(node_id, &comp.output.name), comp.output.clone())
            }
            NodeKind::Converter => {
                let key = n.reference.as_deref().unwrap_or_default();
                let step = key
                    .split_once("->")
                    .and_then(|(from, to)| self.kb.conversion_step(from, to))
                    .cloned()
                    .ok_or_else(|| GenerateError::UnknownRef(key.to_string()))?;
                let child = n.children.first().ok_or_else(|| GenerateError::UnknownRef(key.to_string()))?;
                let (input, mut prop) = self.node(child)?;
                prop.unit = step.to.clone();
                let node_id = self.fresh_id(key);
                self.nodes.push(NodeDef {
                    node_id: node_id.clone(),
                    impl_id: registry::UNIT_CONVERT.to_string(),
                    params: conversion_params(&step),
                    inputs: vec![input],
                    output: prop.clone(),
                });
                (FieldRef::new(node_id, &prop.name), prop)
            }
        };
        self.merged.insert(key, produced.clone());
        self.all.push(produced.clone());
        Ok(produced)
    }

    fn context_field(&mut self, source_id: &str, property: &PropertyRef, deriver: Deriver) -> Result<FieldRef, GenerateError> {
        let unsupported =
            || GenerateError::UnsupportedContext { source_id: source_id.to_string(), property: property.name.clone() };
        match deriver {
            Deriver::StaticMetadata => {
                let src = self.source(source_id)?;
                if !src.metadata.contains_key(&property.name) {
                    return Err(unsupported());
                }
                Ok(FieldRef::new(source_id, &property.name))
            }
            Deriver::DerivedStream if property.name == "batteryLevel" => {
                let wrapper = self.source(source_id)?.wrapper.clone();
                let mut params = BTreeMap::new();
                params.insert(
                    "initial".to_string(),
                    wrapper.num(BATTERY_INITIAL_PARAM).unwrap_or(registry::DEFAULT_BATTERY_INITIAL),
                );
                params.insert("decay".to_string(), wrapper.num(BATTERY_DECAY_PARAM).unwrap_or(registry::DEFAULT_BATTERY_DECAY));
                let node_id = self.fresh_id(&format!("{source_id}.{}", property.name));
                self.nodes.push(NodeDef {
                    node_id: node_id.clone(),
                    impl_id: registry::BATTERY_DECAY.to_string(),
                    params,
                    inputs: vec![FieldRef::new(source_id, SAMPLE_INDEX)],
                    output: property.clone(),
                });
                Ok(FieldRef::new(node_id, &property.name))
            }
            Deriver::DerivedStream => Err(unsupported()),
        }
    }
}

/// Builds the pipeline for a grounded solution.
pub fn generate(
    kb: &KnowledgeBase,
    solution: &Solution,
    projection: &Projection,
    mode: ExecMode,
) -> Result<PipelineDefinition, GenerateError> {
    if !solution.is_grounded() {
        return Err(GenerateError::NotGrounded);
    }
    let mut b = Builder {
        kb,
        sources: Vec::new(),
        nodes: Vec::new(),
        merged: HashMap::new(),
        all: Vec::new(),
        used_ids: HashMap::new(),
    };
    let mut required = Vec::new();
    for root in &solution.roots {
        let (field, prop) = b.node(root)?;
        required.push((field, prop.datatype));
    }
    let mut context = Vec::new();
    for offer in &solution.context {
        let field = b.context_field(&offer.source, &offer.property, offer.deriver)?;
        context.push((field, offer.property.datatype));
    }
    let names = exported_names(solution);

    let outputs: Vec<OutputField> = match projection {
        Projection::Required => required
            .iter()
            .chain(&context)
            .zip(&names)
            .map(|((f, dt), name)| OutputField { from: f.from.clone(), field: f.field.clone(), name: name.clone(), datatype: *dt })
            .collect(),
        Projection::All | Projection::Fields(_) => {
            let mut every: Vec<OutputField> = Vec::new();
            for (f, p) in &b.all {
                let name = if every.iter().any(|o| o.name == p.name) { f.key() } else { p.name.clone() };
                every.push(OutputField { from: f.from.clone(), field: f.field.clone(), name, datatype: p.datatype });
            }
            for ((f, dt), name) in context.iter().zip(&names[required.len()..]) {
                let name = if every.iter().any(|o| &o.name == name) { f.key() } else { name.clone() };
                every.push(OutputField { from: f.from.clone(), field: f.field.clone(), name, datatype: *dt });
            }
            match projection {
                Projection::Fields(wanted) => {
                    let mut picked = Vec::new();
                    for w in wanted {
                        let hit = every
                            .iter()
                            .find(|o| &o.name == w || &format!("{}.{}", o.from, o.field) == w)
                            .ok_or_else(|| GenerateError::ProjectionUnreachable(w.clone()))?;
                        if picked.iter().any(|o: &OutputField| o.name == hit.name) {
                            return Err(GenerateError::DuplicateField(w.clone()));
                        }
                        picked.push(hit.clone());
                    }
                    picked
                }
                _ => every,
            }
        }
    };

    let def = PipelineDefinition {
        id: format!("vs-{}", solution.canonical_id),
        solution_canonical_id: solution.canonical_id.clone(),
        sources: b.sources,
        nodes: b.nodes,
        outputs,
        mode,
    };
    if let Err(e) = def.check() {
        return match e {
            DefinitionError::Impl(e) => Err(e.into()),
            DefinitionError::DuplicateField(f) => Err(GenerateError::DuplicateField(f)),
            other => Err(GenerateError::UnknownRef(other.to_string())),
        };
    }
    Ok(def)
}

fn conversion_params(step: &ConversionStep) -> BTreeMap<String, f64> {
    let mut params: BTreeMap<String, f64> = [("scale".to_string(), step.scale), ("offset".to_string(), step.offset)].into();
    if step.inverse {
        params.insert("inverse".to_string(), 1.0);
    }
    params
}
