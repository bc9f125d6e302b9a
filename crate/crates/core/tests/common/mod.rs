//! Reference implementations shared by the integration and acceptance tests.
//! None of these go through the planner, cost engine or executor.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::TAU;

use cascom::kb::{
    ComponentDescription, ContextEntry, ContextVector, Datatype, Direction, Generator, KbDocument, KnowledgeBase,
    PropertyRef, SensorDescription, TaskDescription, UnitConversion, WrapperBinding,
};
use cascom::planner::{Solution, SolutionNode};
use cascom::registry::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Planner: random KBs and exhaustive enumeration

pub const ORACLE_DEPTH: usize = 3;
const UNITS: [&str; 3] = ["u0", "u1", "u2"];
const NAMES: [&str; 3] = ["alpha", "beta", "gamma"];

fn random_prop(rng: &mut ChaCha8Rng, allow_int: bool) -> PropertyRef {
    let name = NAMES[rng.random_range(0..NAMES.len())];
    if allow_int && rng.random_bool(0.15) {
        return PropertyRef::new(name, Datatype::Int, "count");
    }
    PropertyRef::new(name, Datatype::Double, UNITS[rng.random_range(0..UNITS.len())])
}

fn random_wrapper(seed: u64) -> WrapperBinding {
    let mut params = BTreeMap::new();
    params.insert("seed".into(), serde_json::json!(seed));
    WrapperBinding { generator: Generator::UniformRandom, params, sample_interval_ms: 1000 }
}

/// A small random KB (at most six sensors and six components) with one task.
/// Units form the chain u0 - u1 - u2, each link present at random, so every
/// conversion path is unique.
pub fn random_kb(seed: u64) -> (KnowledgeBase, TaskDescription) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc = KbDocument::default();
    for (a, b) in [("u0", "u1"), ("u1", "u2")] {
        if rng.random_bool(0.5) {
            doc.conversions.push(UnitConversion {
                from_unit: a.into(),
                to_unit: b.into(),
                scale: rng.random_range(0.5..2.0),
                offset: rng.random_range(-5.0..5.0),
                cost_context: BTreeMap::new(),
            });
        }
    }
    for i in 0..rng.random_range(1..=6) {
        doc.sensors.push(SensorDescription {
            id: format!("s{i}"),
            sensor_type: 1,
            observes: random_prop(&mut rng, true),
            location: String::new(),
            context: BTreeMap::new(),
            wrapper: random_wrapper(i as u64),
            context_outputs: Vec::new(),
        });
    }
    for j in 0..rng.random_range(1..=6) {
        let inputs: Vec<PropertyRef> = (0..rng.random_range(1..=2)).map(|_| random_prop(&mut rng, true)).collect();
        let params = (0..inputs.len()).map(|i| (format!("w{i}"), 1.0)).collect();
        doc.components.push(ComponentDescription {
            id: format!("c{j}"),
            function: rng.random_range(1..=4),
            inputs,
            output: random_prop(&mut rng, false),
            context: BTreeMap::new(),
            impl_id: cascom::registry::WEIGHTED_AVERAGE.into(),
            params,
        });
    }
    let task = TaskDescription {
        id: "task".into(),
        title: "random".into(),
        required_outputs: (0..rng.random_range(1..=2)).map(|_| random_prop(&mut rng, true)).collect(),
        concept_bindings: BTreeMap::new(),
    };
    doc.tasks.push(task.clone());
    (KnowledgeBase::from_document(doc).expect("random KB is valid"), task)
}

/// Units convertible into `target` with their hop sequences, found by
/// breadth-first search over both directions of every conversion record.
fn conversion_routes(kb: &KnowledgeBase, target: &str) -> Vec<(String, Vec<(String, String)>)> {
    let mut edges: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for c in kb.conversions() {
        edges.entry(c.from_unit.clone()).or_default().insert(c.to_unit.clone());
        edges.entry(c.to_unit.clone()).or_default().insert(c.from_unit.clone());
    }
    // path from `unit` to `target`, as hops
    let mut routes: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    routes.insert(target.to_string(), Vec::new());
    let mut frontier = vec![target.to_string()];
    for _ in 0..3 {
        let mut next = Vec::new();
        for u in &frontier {
            for v in edges.get(u).into_iter().flatten() {
                if routes.contains_key(v) {
                    continue;
                }
                let mut hops = vec![(v.clone(), u.clone())];
                hops.extend(routes[u].iter().cloned());
                routes.insert(v.clone(), hops);
                next.push(v.clone());
            }
        }
        frontier = next;
    }
    routes.into_iter().collect()
}

fn functions_of(kb: &KnowledgeBase, node: &SolutionNode, out: &mut BTreeSet<u32>) {
    if let (cascom::planner::NodeKind::Component, Some(id)) = (node.kind, &node.reference) {
        out.insert(kb.component(id).unwrap().function);
    }
    for c in &node.children {
        functions_of(kb, c, out);
    }
}

/// Every tree supplying `goal` within `depth` component levels, by plain recursion.
pub fn enumerate_trees(kb: &KnowledgeBase, goal: &PropertyRef, depth: usize) -> Vec<SolutionNode> {
    let routes = if goal.datatype == Datatype::Double {
        conversion_routes(kb, &goal.unit)
    } else {
        vec![(goal.unit.clone(), Vec::new())]
    };
    let mut out = Vec::new();
    for (unit, hops) in routes {
        let source = PropertyRef { unit, ..goal.clone() };
        let mut exact = Vec::new();
        let observing: Vec<&SensorDescription> = kb.sensors().iter().filter(|s| s.observes == source).collect();
        match observing.len() {
            0 => {}
            1 => exact.push(SolutionNode::sensor(observing[0].id.clone(), source.clone())),
            _ => exact.push(SolutionNode::slot(source.clone())),
        }
        if depth > 0 {
            for comp in kb.components().iter().filter(|c| c.output == source) {
                let options: Vec<Vec<SolutionNode>> = comp
                    .inputs
                    .iter()
                    .map(|input| {
                        enumerate_trees(kb, input, depth - 1)
                            .into_iter()
                            .filter(|t| {
                                let mut f = BTreeSet::new();
                                functions_of(kb, t, &mut f);
                                !f.contains(&comp.function)
                            })
                            .collect()
                    })
                    .collect();
                for children in cartesian(&options) {
                    exact.push(SolutionNode::component(comp.id.clone(), children));
                }
            }
        }
        for mut node in exact {
            for (from, to) in &hops {
                let step = kb.conversion_step(from, to).expect("route hop exists");
                node = SolutionNode::converter(step.key(), node);
            }
            out.push(node);
        }
    }
    out
}

pub fn cartesian<T: Clone>(options: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut acc: Vec<Vec<T>> = vec![Vec::new()];
    for opts in options {
        let mut next = Vec::new();
        for prefix in &acc {
            for o in opts {
                let mut v = prefix.clone();
                v.push(o.clone());
                next.push(v);
            }
        }
        acc = next;
    }
    acc
}

/// Canonical ids of every solution of `task`, by exhaustive enumeration.
pub fn oracle_solution_ids(kb: &KnowledgeBase, task: &TaskDescription, depth: usize) -> BTreeSet<String> {
    let per_output: Vec<Vec<SolutionNode>> =
        task.required_outputs.iter().map(|g| enumerate_trees(kb, g, depth)).collect();
    cartesian(&per_output)
        .into_iter()
        .map(|roots| Solution::new(roots, task.required_outputs.clone()).canonical_id)
        .collect()
}

// ---------------------------------------------------------------------------
// Cost index: a direct transcription of the weighted distance to the ideal point

pub fn reference_index(candidates: &[ContextVector], weights: &BTreeMap<String, f64>) -> Vec<f64> {
    let mut props: BTreeSet<&String> = BTreeSet::new();
    for c in candidates {
        props.extend(c.keys());
    }
    let total: f64 = if weights.is_empty() { props.len() as f64 } else { weights.values().sum() };
    let mut sums = vec![0.0; candidates.len()];
    for p in props {
        let w = if weights.is_empty() { 1.0 } else { weights.get(p).copied().unwrap_or(0.0) } / total;
        let vals: Vec<f64> = candidates.iter().filter_map(|c| c.get(p)).map(|e| e.value).collect();
        let dir = candidates.iter().find_map(|c| c.get(p)).unwrap().direction;
        let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for (i, c) in candidates.iter().enumerate() {
            let score = match c.get(p) {
                None => 0.5,
                Some(_) if hi == lo => 1.0,
                Some(e) if dir == Direction::HigherBetter => (e.value - lo) / (hi - lo),
                Some(e) => (hi - e.value) / (hi - lo),
            };
            sums[i] += w * (1.0 - score).powi(2);
        }
    }
    sums.into_iter().map(|s| s.sqrt().min(1.0)).collect()
}

pub fn random_candidates(rng: &mut ChaCha8Rng, n: usize, props: usize, sparse: bool) -> Vec<ContextVector> {
    let dirs: Vec<Direction> =
        (0..props).map(|_| if rng.random_bool(0.5) { Direction::HigherBetter } else { Direction::LowerBetter }).collect();
    (0..n)
        .map(|_| {
            let mut c = ContextVector::new();
            for (p, dir) in dirs.iter().enumerate() {
                if !sparse || rng.random_bool(0.8) {
                    c.insert(format!("p{p}"), ContextEntry::new(rng.random_range(0.0..100.0), *dir));
                }
            }
            c
        })
        .collect()
}

pub fn random_weights(rng: &mut ChaCha8Rng, props: usize) -> BTreeMap<String, f64> {
    if rng.random_bool(0.2) {
        return BTreeMap::new();
    }
    let mut w: BTreeMap<String, f64> = (0..props).map(|p| (format!("p{p}"), rng.random_range(0.0..10.0))).collect();
    w.insert("p0".into(), rng.random_range(0.5..10.0));
    w
}

/// `a` is at least as good as `b` on every property and strictly better on one.
pub fn dominates(a: &ContextVector, b: &ContextVector) -> bool {
    let mut strict = false;
    for (k, ea) in a {
        let eb = &b[k];
        let (x, y) = match ea.direction {
            Direction::HigherBetter => (ea.value, eb.value),
            Direction::LowerBetter => (-ea.value, -eb.value),
        };
        if x < y {
            return false;
        }
        strict |= x > y;
    }
    strict
}

// ---------------------------------------------------------------------------
// Runtime: sources and solution trees evaluated directly

/// Raw samples of one sensor, generated on demand in index order.
pub struct OracleSource {
    wrapper: WrapperBinding,
    rng: Option<ChaCha8Rng>,
    samples: Vec<f64>,
}

impl OracleSource {
    pub fn new(sensor: &SensorDescription) -> Self {
        let w = sensor.wrapper.clone();
        let rng = match w.generator {
            Generator::UniformRandom => Some(ChaCha8Rng::seed_from_u64(w.params["seed"].as_u64().unwrap())),
            _ => None,
        };
        OracleSource { wrapper: w, rng, samples: Vec::new() }
    }

    fn num(&self, k: &str, default: f64) -> f64 {
        self.wrapper.params.get(k).and_then(|v| v.as_f64()).unwrap_or(default)
    }

    pub fn phase(&self) -> u64 {
        self.num("phaseMs", 0.0) as u64
    }

    pub fn interval(&self) -> u64 {
        self.wrapper.sample_interval_ms
    }

    pub fn sample(&mut self, j: u64) -> f64 {
        while self.samples.len() as u64 <= j {
            let k = self.samples.len() as u64;
            let t = (self.phase() + k * self.interval()) as f64;
            let v = match self.wrapper.generator {
                Generator::Constant => self.num("value", 0.0),
                Generator::Sine => {
                    self.num("offset", 0.0) + self.num("amplitude", 1.0) * (TAU * t / self.num("period", 60_000.0)).sin()
                }
                Generator::UniformRandom => {
                    let (lo, hi) = (self.num("min", 0.0), self.num("max", 1.0));
                    let u: f64 = self.rng.as_mut().unwrap().random();
                    lo + (hi - lo) * u
                }
                Generator::TraceFile => panic!("trace sources are not used in oracle tests"),
            };
            self.samples.push(v);
        }
        self.samples[j as usize]
    }
}

fn param(c: &ComponentDescription, k: &str, default: f64) -> f64 {
    c.params.get(k).copied().unwrap_or(default)
}

/// Evaluates a solution tree for the given latest sample indexes.
pub fn eval_tree(
    kb: &KnowledgeBase,
    node: &SolutionNode,
    sources: &mut HashMap<String, OracleSource>,
    index: &HashMap<String, u64>,
) -> Value {
    use cascom::planner::NodeKind;
    let id = node.reference.as_deref().expect("grounded");
    match node.kind {
        NodeKind::SensorLeaf => {
            let v = sources.get_mut(id).unwrap().sample(index[id]);
            match kb.sensor(id).unwrap().observes.datatype {
                Datatype::Int => Value::Int(v.round() as i64),
                _ => Value::Double(v),
            }
        }
        NodeKind::Converter => {
            let (from, to) = id.split_once("->").expect("conversion key");
            let x = num(&eval_tree(kb, &node.children[0], sources, index));
            let rec = kb
                .conversions()
                .iter()
                .find(|c| (c.from_unit == from && c.to_unit == to) || (c.from_unit == to && c.to_unit == from))
                .unwrap();
            if rec.from_unit == from {
                Value::Double(rec.scale * x + rec.offset)
            } else {
                Value::Double((x - rec.offset) / rec.scale)
            }
        }
        NodeKind::Component => {
            let c = kb.component(id).unwrap();
            let args: Vec<Value> = node.children.iter().map(|ch| eval_tree(kb, ch, sources, index)).collect();
            match c.impl_id.as_str() {
                "thresholdAirStress" => {
                    let (t, h) = (num(&args[0]), num(&args[1]));
                    let calm = t < param(c, "alpha", 30.0) && h < param(c, "beta", 60.0);
                    Value::Str(if calm { "low" } else { "high" }.into())
                }
                "phytophtoraRule" => {
                    let stress = matches!(&args[0], Value::Str(s) if s == "high");
                    Value::Bool(stress && num(&args[1]) > param(c, "delta", 50.0))
                }
                "weightedAveragePollutionIndex" => {
                    let (mut top, mut bottom) = (0.0, 0.0);
                    for (i, a) in args.iter().enumerate() {
                        let w = param(c, &format!("w{i}"), 1.0);
                        top += w * num(a);
                        bottom += w;
                    }
                    Value::Double(top / bottom)
                }
                other => panic!("no oracle for {other}"),
            }
        }
    }
}

pub fn num(v: &Value) -> f64 {
    match v {
        Value::Double(x) => *x,
        Value::Int(x) => *x as f64,
        other => panic!("not numeric: {other:?}"),
    }
}

/// Exact for discrete values, relative 1e-12 for doubles.
pub fn values_match(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Double(x), Value::Double(y)) => {
            x == y || (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(f64::MIN_POSITIVE)
        }
        _ => a == b,
    }
}

/// Replaces every sensor wrapper by a seeded uniform-random one over `[0, 100]`,
/// keeping sample intervals and other params.
pub fn randomize_wrappers(doc: &mut KbDocument, seed: u64) {
    for (i, s) in doc.sensors.iter_mut().enumerate() {
        s.wrapper.generator = Generator::UniformRandom;
        for k in ["value", "amplitude", "period", "offset", "path"] {
            s.wrapper.params.remove(k);
        }
        s.wrapper.params.insert("seed".into(), serde_json::json!(seed * 1000 + i as u64));
        s.wrapper.params.insert("min".into(), serde_json::json!(0.0));
        s.wrapper.params.insert("max".into(), serde_json::json!(100.0));
    }
}

/// Expected record values (task outputs and battery/location context) of
/// `solution` for `rows` ticks, from the join rule: the fastest source clocks
/// the stream and every source contributes its latest sample.
pub fn expected_rows(kb: &KnowledgeBase, solution: &Solution, rows: usize) -> Vec<(u64, Vec<(String, Value)>)> {
    let leaves = solution.leaf_sensors();
    let mut sources: HashMap<String, OracleSource> =
        leaves.iter().map(|id| (id.clone(), OracleSource::new(kb.sensor(id).unwrap()))).collect();
    let (clock_interval, clock_phase) = leaves
        .iter()
        .map(|id| (sources[id].interval(), sources[id].phase()))
        .min_by_key(|(i, _)| *i)
        .unwrap();
    let base = solution.outputs.len() - solution.context.len();
    let mut out = Vec::with_capacity(rows);
    let mut tick = 0u64;
    while out.len() < rows {
        let t = clock_phase + tick * clock_interval;
        tick += 1;
        if leaves.iter().any(|id| t < sources[id].phase()) {
            continue;
        }
        let index: HashMap<String, u64> =
            leaves.iter().map(|id| (id.clone(), (t - sources[id].phase()) / sources[id].interval())).collect();
        let mut values = Vec::new();
        for (root, prop) in solution.roots.iter().zip(&solution.outputs[..base]) {
            values.push((prop.name.clone(), eval_tree(kb, root, &mut sources, &index)));
        }
        for offer in &solution.context {
            let sensor = kb.sensor(&offer.source).unwrap();
            let v = match offer.property.name.as_str() {
                "location" => Value::Str(sensor.location.clone()),
                "batteryLevel" => {
                    let w = &sensor.wrapper;
                    let initial = w.params.get("batteryInitial").and_then(|v| v.as_f64()).unwrap_or(100.0);
                    let decay = w.params.get("batteryDecay").and_then(|v| v.as_f64()).unwrap_or(0.01);
                    Value::Double((initial - decay * index[&offer.source] as f64).max(0.0))
                }
                other => panic!("no oracle for context {other}"),
            };
            values.push((offer.property.name.clone(), v));
        }
        out.push((t, values));
    }
    out
}
