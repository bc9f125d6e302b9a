use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::source::{SourceError, SourceState};
use super::{DefinitionError, ExecMode, FieldRef, PipelineDefinition, SAMPLE_INDEX};
use crate::registry::{dynamic_table, ImplError, NodeState, Op, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RunLimit {
    /// Stop after this many stream items (records plus error records).
    Records(usize),
    /// Stop at the first tick at or after this pipeline time.
    DurationMs(u64),
}

/// One output row: timestamp plus the projected fields in projection order.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub timestamp_ms: u64,
    pub values: Vec<(String, Value)>,
}

impl StreamRecord {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }
}

impl Serialize for StreamRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.values.len() + 1))?;
        map.serialize_entry("timestampMs", &self.timestamp_ms)?;
        for (k, v) in &self.values {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub node: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorRecord {
    pub timestamp_ms: u64,
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StreamItem {
    Record(StreamRecord),
    Error(ErrorRecord),
}

impl StreamItem {
    pub fn timestamp_ms(&self) -> u64 {
        match self {
            StreamItem::Record(r) => r.timestamp_ms,
            StreamItem::Error(e) => e.timestamp_ms,
        }
    }

    pub fn record(&self) -> Option<&StreamRecord> {
        match self {
            StreamItem::Record(r) => Some(r),
            StreamItem::Error(_) => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, StreamItem::Error(_))
    }

    /// One NDJSON line, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("stream items serialize")
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

struct Step {
    node_id: String,
    op: Op,
    inputs: Vec<usize>,
    out: usize,
}

/// Plan flattened ahead of time: resolved ops reading and writing slot indices.
struct Compiled {
    slots: Vec<Value>,
    /// Per source: (value slot, sample-index slot).
    source_slots: Vec<(usize, usize)>,
    steps: Vec<Step>,
    outputs: Vec<usize>,
    scratch: Vec<Value>,
}

struct DynNode {
    node_id: String,
    impl_id: String,
    params: BTreeMap<String, f64>,
    input_keys: Vec<String>,
    out_key: String,
    state: NodeState,
}

/// Name-keyed evaluation: implementations and fields are looked up by name per row.
struct Dynamic {
    env: HashMap<String, Value>,
    source_keys: Vec<(String, String)>,
    nodes: Vec<DynNode>,
    outputs: Vec<String>,
}

enum Engine {
    Compiled(Compiled),
    Dynamic(Dynamic),
}

type NodeFailure = (String, ImplError);

impl Engine {
    fn compile(def: &PipelineDefinition) -> Result<Compiled, DefinitionError> {
        let mut slot_of: HashMap<FieldRef, usize> = HashMap::new();
        let mut slots = Vec::new();
        fn alloc(slot_of: &mut HashMap<FieldRef, usize>, f: FieldRef, init: Value, slots: &mut Vec<Value>) -> usize {
            slots.push(init);
            slot_of.insert(f, slots.len() - 1);
            slots.len() - 1
        }
        let mut source_slots = Vec::new();
        for s in &def.sources {
            let v = alloc(&mut slot_of, FieldRef::new(&s.sensor_id, &s.observes.name), Value::Double(0.0), &mut slots);
            let i = alloc(&mut slot_of, FieldRef::new(&s.sensor_id, SAMPLE_INDEX), Value::Double(0.0), &mut slots);
            for (k, text) in &s.metadata {
                alloc(&mut slot_of, FieldRef::new(&s.sensor_id, k), Value::Str(text.clone()), &mut slots);
            }
            source_slots.push((v, i));
        }
        let mut steps = Vec::with_capacity(def.nodes.len());
        for n in &def.nodes {
            let inputs = n
                .inputs
                .iter()
                .map(|f| {
                    slot_of
                        .get(f)
                        .copied()
                        .ok_or_else(|| DefinitionError::NotTopological { node: n.node_id.clone(), input: f.key() })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let op = Op::build(&n.impl_id, &n.params, n.inputs.len())?;
            let out = alloc(&mut slot_of, FieldRef::new(&n.node_id, &n.output.name), Value::Double(0.0), &mut slots);
            steps.push(Step { node_id: n.node_id.clone(), op, inputs, out });
        }
        let outputs = def
            .outputs
            .iter()
            .map(|o| slot_of.get(&FieldRef::new(&o.from, &o.field)).copied().ok_or_else(|| DefinitionError::UnknownField(o.name.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let widest = def.nodes.iter().map(|n| n.inputs.len()).max().unwrap_or(0);
        Ok(Compiled { slots, source_slots, steps, outputs, scratch: Vec::with_capacity(widest) })
    }

    fn dynamic(def: &PipelineDefinition) -> Dynamic {
        let mut env = HashMap::new();
        let mut source_keys = Vec::new();
        for s in &def.sources {
            for (k, text) in &s.metadata {
                env.insert(FieldRef::new(&s.sensor_id, k).key(), Value::Str(text.clone()));
            }
            source_keys.push((
                FieldRef::new(&s.sensor_id, &s.observes.name).key(),
                FieldRef::new(&s.sensor_id, SAMPLE_INDEX).key(),
            ));
        }
        let nodes = def
            .nodes
            .iter()
            .map(|n| DynNode {
                node_id: n.node_id.clone(),
                impl_id: n.impl_id.clone(),
                params: n.params.clone(),
                input_keys: n.inputs.iter().map(FieldRef::key).collect(),
                out_key: FieldRef::new(&n.node_id, &n.output.name).key(),
                state: NodeState::default(),
            })
            .collect();
        let outputs = def.outputs.iter().map(|o| FieldRef::new(&o.from, &o.field).key()).collect();
        Dynamic { env, source_keys, nodes, outputs }
    }

    fn set_source(&mut self, i: usize, index: u64, value: &Value) {
        match self {
            Engine::Compiled(c) => {
                let (v, ix) = c.source_slots[i];
                c.slots[v] = value.clone();
                c.slots[ix] = Value::Double(index as f64);
            }
            Engine::Dynamic(d) => {
                let (v, ix) = &d.source_keys[i];
                d.env.insert(v.clone(), value.clone());
                d.env.insert(ix.clone(), Value::Double(index as f64));
            }
        }
    }

    /// Evaluates one row. `at` tracks the node being evaluated so a panic
    /// can be attributed.
    fn eval(&mut self, at: &mut String) -> Result<Vec<Value>, NodeFailure> {
        match self {
            Engine::Compiled(c) => {
                for step in &mut c.steps {
                    at.clone_from(&step.node_id);
                    c.scratch.clear();
                    c.scratch.extend(step.inputs.iter().map(|&i| c.slots[i].clone()));
                    let v = step.op.apply(&c.scratch).map_err(|e| (step.node_id.clone(), e))?;
                    c.slots[step.out] = v;
                }
                Ok(c.outputs.iter().map(|&i| c.slots[i].clone()).collect())
            }
            Engine::Dynamic(d) => {
                let table = dynamic_table();
                for node in &mut d.nodes {
                    at.clone_from(&node.node_id);
                    let f = table.get(&node.impl_id).ok_or_else(|| (node.node_id.clone(), ImplError::Unknown(node.impl_id.clone())))?;
                    let inputs: Vec<Value> = node
                        .input_keys
                        .iter()
                        .map(|k| d.env.get(k).cloned().ok_or_else(|| (node.node_id.clone(), ImplError::Unknown(k.clone()))))
                        .collect::<Result<_, _>>()?;
                    let v = f(&mut node.state, &node.params, &inputs).map_err(|e| (node.node_id.clone(), e))?;
                    d.env.insert(node.out_key.clone(), v);
                }
                Ok(d.outputs.iter().map(|k| d.env.get(k).cloned().unwrap_or(Value::Double(f64::NAN))).collect())
            }
        }
    }
}

/// Runs a pipeline definition. Records are emitted on the ticks of the
/// fastest source, each slower source contributing its latest sample; ticks
/// before every source has produced once are skipped.
pub struct Executor {
    names: Vec<String>,
    sources: Vec<SourceState>,
    clock: usize,
    tick: u64,
    emitted: usize,
    limit: RunLimit,
    engine: Engine,
    #[cfg(test)]
    panic_at_tick: Option<u64>,
}

impl Executor {
    pub fn new(def: &PipelineDefinition, limit: RunLimit) -> Result<Self, RunError> {
        Self::with_mode(def, def.mode, limit)
    }

    pub fn with_mode(def: &PipelineDefinition, mode: ExecMode, limit: RunLimit) -> Result<Self, RunError> {
        def.check()?;
        let sources = def.sources.iter().map(SourceState::new).collect::<Result<Vec<_>, _>>()?;
        let clock = (0..sources.len()).min_by_key(|&i| (sources[i].interval, i)).unwrap_or(0);
        let engine = match mode {
            ExecMode::Precompiled => Engine::Compiled(Engine::compile(def)?),
            ExecMode::DynamicDispatch => Engine::Dynamic(Engine::dynamic(def)),
        };
        Ok(Self {
            names: def.outputs.iter().map(|o| o.name.clone()).collect(),
            sources,
            clock,
            tick: 0,
            emitted: 0,
            limit,
            engine,
            #[cfg(test)]
            panic_at_tick: None,
        })
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    fn row(&mut self, t: u64) -> StreamItem {
        let mut at = String::new();
        #[cfg(test)]
        let poison = self.panic_at_tick == Some(self.tick);
        let engine = &mut self.engine;
        let result = catch_unwind(AssertUnwindSafe(|| {
            #[cfg(test)]
            if poison {
                at = "injected".into();
                panic!("injected fault");
            }
            engine.eval(&mut at)
        }));
        match result {
            Ok(Ok(values)) => StreamItem::Record(StreamRecord {
                timestamp_ms: t,
                values: self.names.iter().cloned().zip(values).collect(),
            }),
            Ok(Err((node, e))) => StreamItem::Error(ErrorRecord {
                timestamp_ms: t,
                error: ErrorBody { code: "impl-error".into(), node, message: e.to_string() },
            }),
            Err(payload) => {
                let message = payload
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| payload.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                StreamItem::Error(ErrorRecord {
                    timestamp_ms: t,
                    error: ErrorBody { code: "impl-panic".into(), node: at, message },
                })
            }
        }
    }
}

impl Iterator for Executor {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        loop {
            if let RunLimit::Records(n) = self.limit {
                if self.emitted >= n {
                    return None;
                }
            }
            let clock = &self.sources[self.clock];
            let t = clock.phase + self.tick * clock.interval;
            if let RunLimit::DurationMs(d) = self.limit {
                if t >= d {
                    return None;
                }
            }
            if self.sources.iter().any(|s| s.index_at(t).is_none()) {
                self.tick += 1;
                continue;
            }
            for (i, s) in self.sources.iter_mut().enumerate() {
                let (index, value) = s.sample_at(t).expect("source started");
                self.engine.set_source(i, index, value);
            }
            let item = self.row(t);
            self.tick += 1;
            self.emitted += 1;
            return Some(item);
        }
    }
}

/// Runs `def` to completion and collects the stream.
pub fn run(def: &PipelineDefinition, limit: RunLimit) -> Result<Vec<StreamItem>, RunError> {
    Ok(Executor::new(def, limit)?.collect())
}
