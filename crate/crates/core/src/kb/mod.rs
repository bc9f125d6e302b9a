//! Sensor, component, conversion and task knowledge.
//!
//! A [`KnowledgeBase`] is an immutable, indexed snapshot of a [`KbDocument`].
//! Mutation goes through [`KnowledgeBase::add`], which returns a new snapshot
//! with a bumped version so readers holding the old one are unaffected.

mod load;
mod types;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use load::{load_kb, parse_kb, ParseMode};
pub use types::*;

use crate::registry;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("parse error{}: {message}", location(*.line, *.column))]
    Parse { message: String, line: Option<usize>, column: Option<usize> },
    #[error("{owner} references unknown {kind} {missing:?}")]
    Ref { owner: String, kind: &'static str, missing: String },
    #[error("duplicate {collection} id {id:?}")]
    Dup { collection: &'static str, id: String },
    #[error("invalid {owner}: {reason}")]
    Invalid { owner: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" at line {l}, column {c}"),
        (Some(l), None) => format!(" at line {l}"),
        _ => String::new(),
    }
}

impl KbError {
    /// Identifier of the offending record or reference, when there is one.
    pub fn offender(&self) -> Option<&str> {
        match self {
            KbError::Ref { missing, .. } => Some(missing),
            KbError::Dup { id, .. } => Some(id),
            KbError::Invalid { owner, .. } => Some(owner),
            _ => None,
        }
    }
}

/// The on-disk shape of a knowledge base.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KbDocument {
    #[serde(default)]
    pub sensors: Vec<SensorDescription>,
    #[serde(default)]
    pub components: Vec<ComponentDescription>,
    #[serde(default)]
    pub conversions: Vec<UnitConversion>,
    #[serde(default)]
    pub tasks: Vec<TaskDescription>,
    #[serde(default)]
    pub concepts: Vec<Concept>,
    #[serde(default)]
    pub questions: Vec<Question>,
    /// How each context property combines across the nodes of a solution.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub context_aggregation: BTreeMap<String, Aggregate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    #[default]
    Strict,
    UnitConvertible,
}

/// A sensor or component record for [`KnowledgeBase::add`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Description {
    Sensor(SensorDescription),
    Component(ComponentDescription),
}

/// One hop of an affine unit conversion, possibly the inverse of a KB record.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionStep {
    pub from: String,
    pub to: String,
    /// Scale and offset of the backing record, applied forwards or inverted.
    pub scale: f64,
    pub offset: f64,
    pub inverse: bool,
    /// Index of the backing record in `conversions`.
    pub record: usize,
}

impl ConversionStep {
    pub fn key(&self) -> String {
        conversion_key(&self.from, &self.to)
    }

    pub fn apply(&self, x: f64) -> f64 {
        registry::unit_convert(x, self.scale, self.offset, self.inverse)
    }
}

pub const MAX_CONVERSION_HOPS: usize = 3;

#[derive(Debug, Clone, Default)]
struct Indexes {
    sensor_by_id: HashMap<String, usize>,
    component_by_id: HashMap<String, usize>,
    task_by_id: HashMap<String, usize>,
    concept_by_id: HashMap<String, usize>,
    question_by_id: HashMap<String, usize>,
    sensors_by_property: HashMap<PropertyRef, Vec<usize>>,
    components_by_output: HashMap<PropertyRef, Vec<usize>>,
    /// Adjacency `unit -> [(unit, step)]`, both directions of every record.
    unit_graph: BTreeMap<String, Vec<ConversionStep>>,
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    doc: KbDocument,
    version: u64,
    idx: Indexes,
}

impl KnowledgeBase {
    /// Validates `doc` and builds an indexed snapshot at version 1.
    pub fn from_document(mut doc: KbDocument) -> Result<Self, KbError> {
        load::validate(&doc)?;
        doc.sensors.sort_by(|a, b| a.id.cmp(&b.id));
        doc.components.sort_by(|a, b| a.id.cmp(&b.id));
        doc.tasks.sort_by(|a, b| a.id.cmp(&b.id));
        doc.concepts.sort_by(|a, b| a.id.cmp(&b.id));
        doc.questions.sort_by(|a, b| a.id.cmp(&b.id));
        let idx = Indexes::build(&doc);
        Ok(Self { doc, version: 1, idx })
    }

    pub fn empty() -> Self {
        Self::from_document(KbDocument::default()).expect("empty KB is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        load_kb(path, ParseMode::Strict)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn document(&self) -> &KbDocument {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("KB serializes")
    }

    pub fn sensors(&self) -> &[SensorDescription] {
        &self.doc.sensors
    }

    pub fn components(&self) -> &[ComponentDescription] {
        &self.doc.components
    }

    pub fn conversions(&self) -> &[UnitConversion] {
        &self.doc.conversions
    }

    pub fn tasks(&self) -> &[TaskDescription] {
        &self.doc.tasks
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.doc.concepts
    }

    pub fn questions(&self) -> &[Question] {
        &self.doc.questions
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorDescription> {
        self.idx.sensor_by_id.get(id).map(|&i| &self.doc.sensors[i])
    }

    pub fn component(&self, id: &str) -> Option<&ComponentDescription> {
        self.idx.component_by_id.get(id).map(|&i| &self.doc.components[i])
    }

    pub fn task(&self, id: &str) -> Option<&TaskDescription> {
        self.idx.task_by_id.get(id).map(|&i| &self.doc.tasks[i])
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.idx.concept_by_id.get(id).map(|&i| &self.doc.concepts[i])
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.idx.question_by_id.get(id).map(|&i| &self.doc.questions[i])
    }

    /// Concepts whose answers are collected by `question_id`.
    pub fn concepts_for_question<'a>(&'a self, question_id: &'a str) -> impl Iterator<Item = &'a Concept> + 'a {
        self.doc.concepts.iter().filter(move |c| c.question_id == question_id)
    }

    pub fn aggregate_for(&self, property: &str) -> Aggregate {
        self.doc.context_aggregation.get(property).copied().unwrap_or_default()
    }

    /// Sensors observing exactly `prop`, sorted by id.
    pub fn sensors_observing(&self, prop: &PropertyRef) -> impl Iterator<Item = &SensorDescription> + '_ {
        self.idx
            .sensors_by_property
            .get(prop)
            .into_iter()
            .flatten()
            .map(|&i| &self.doc.sensors[i])
    }

    /// Components whose output is exactly `prop`, sorted by id.
    pub fn components_producing(&self, prop: &PropertyRef) -> impl Iterator<Item = &ComponentDescription> + '_ {
        self.idx
            .components_by_output
            .get(prop)
            .into_iter()
            .flatten()
            .map(|&i| &self.doc.components[i])
    }

    /// A single conversion hop `from -> to`, using a record directly or inverted.
    pub fn conversion_step(&self, from: &str, to: &str) -> Option<&ConversionStep> {
        self.idx.unit_graph.get(from)?.iter().find(|s| s.to == to)
    }

    /// Shortest conversion chain from `from` to `to` of at most
    /// [`MAX_CONVERSION_HOPS`] hops. An empty chain means the units are equal.
    pub fn conversion_path(&self, from: &str, to: &str) -> Option<Vec<ConversionStep>> {
        self.units_convertible_to(to).remove(from)
    }

    /// Every unit that converts into `target` within the hop limit, with its
    /// shortest chain. Ties between equal-length chains go to the
    /// lexicographically smallest intermediate unit.
    pub fn units_convertible_to(&self, target: &str) -> BTreeMap<String, Vec<ConversionStep>> {
        // BFS outward from every unit towards `target` is the same as BFS from
        // `target` over reversed edges; the graph is symmetric so walk it directly.
        let mut found: BTreeMap<String, Vec<ConversionStep>> = BTreeMap::new();
        found.insert(target.to_string(), Vec::new());
        let mut queue = VecDeque::from([target.to_string()]);
        while let Some(unit) = queue.pop_front() {
            let chain = found[&unit].clone();
            if chain.len() == MAX_CONVERSION_HOPS {
                continue;
            }
            let Some(edges) = self.idx.unit_graph.get(&unit) else { continue };
            for edge in edges {
                if found.contains_key(&edge.to) {
                    continue;
                }
                // edge goes unit -> edge.to; we need edge.to -> unit prepended.
                let Some(back) = self.conversion_step(&edge.to, &unit) else { continue };
                let mut longer = Vec::with_capacity(chain.len() + 1);
                longer.push(back.clone());
                longer.extend(chain.iter().cloned());
                found.insert(edge.to.clone(), longer);
                queue.push_back(edge.to.clone());
            }
        }
        found
    }

    fn matches(&self, produced: &PropertyRef, goal: &PropertyRef, mode: MatchMode) -> bool {
        if produced.name != goal.name || produced.datatype != goal.datatype {
            return false;
        }
        match mode {
            MatchMode::Strict => produced.unit == goal.unit,
            MatchMode::UnitConvertible => {
                produced.unit == goal.unit
                    || (goal.datatype == Datatype::Double
                        && self.conversion_path(&produced.unit, &goal.unit).is_some())
            }
        }
    }

    /// Components able to produce `goal`, sorted by id.
    pub fn find_components_by_output(&self, goal: &PropertyRef, mode: MatchMode) -> Vec<&ComponentDescription> {
        match mode {
            MatchMode::Strict => self.components_producing(goal).collect(),
            MatchMode::UnitConvertible => {
                let mut out: Vec<_> = self
                    .doc
                    .components
                    .iter()
                    .filter(|c| self.matches(&c.output, goal, mode))
                    .collect();
                out.sort_by(|a, b| a.id.cmp(&b.id));
                out
            }
        }
    }

    /// Sensors able to supply `goal`, sorted by id.
    pub fn find_sensors_by_property(&self, goal: &PropertyRef, mode: MatchMode) -> Vec<&SensorDescription> {
        match mode {
            MatchMode::Strict => self.sensors_observing(goal).collect(),
            MatchMode::UnitConvertible => self
                .doc
                .sensors
                .iter()
                .filter(|s| self.matches(&s.observes, goal, mode))
                .collect(),
        }
    }

    /// Returns a new snapshot containing `record`, with version + 1.
    pub fn add(&self, record: Description) -> Result<KnowledgeBase, KbError> {
        let mut doc = self.doc.clone();
        match record {
            Description::Sensor(s) => {
                if self.sensor(&s.id).is_some() {
                    return Err(KbError::Dup { collection: "sensor", id: s.id });
                }
                doc.sensors.push(s);
            }
            Description::Component(c) => {
                if self.component(&c.id).is_some() {
                    return Err(KbError::Dup { collection: "component", id: c.id });
                }
                doc.components.push(c);
            }
        }
        let mut next = KnowledgeBase::from_document(doc)?;
        next.version = self.version + 1;
        Ok(next)
    }

    /// Unvalidated copy with an extra record. Used for hypothetical what-if
    /// queries that are never committed.
    pub(crate) fn hypothetical(&self, record: Description) -> KnowledgeBase {
        let mut doc = self.doc.clone();
        match record {
            Description::Sensor(s) => {
                let at = doc.sensors.partition_point(|x| x.id < s.id);
                doc.sensors.insert(at, s);
            }
            Description::Component(c) => {
                let at = doc.components.partition_point(|x| x.id < c.id);
                doc.components.insert(at, c);
            }
        }
        let idx = Indexes::build(&doc);
        KnowledgeBase { doc, version: self.version, idx }
    }
}

impl Indexes {
    fn build(doc: &KbDocument) -> Self {
        let mut idx = Indexes::default();
        for (i, s) in doc.sensors.iter().enumerate() {
            idx.sensor_by_id.insert(s.id.clone(), i);
            idx.sensors_by_property.entry(s.observes.clone()).or_default().push(i);
        }
        for (i, c) in doc.components.iter().enumerate() {
            idx.component_by_id.insert(c.id.clone(), i);
            idx.components_by_output.entry(c.output.clone()).or_default().push(i);
        }
        for (i, t) in doc.tasks.iter().enumerate() {
            idx.task_by_id.insert(t.id.clone(), i);
        }
        for (i, c) in doc.concepts.iter().enumerate() {
            idx.concept_by_id.insert(c.id.clone(), i);
        }
        for (i, q) in doc.questions.iter().enumerate() {
            idx.question_by_id.insert(q.id.clone(), i);
        }
        // Direct records first so they win over inverses of the opposite record.
        for (i, c) in doc.conversions.iter().enumerate() {
            idx.add_step(ConversionStep {
                from: c.from_unit.clone(),
                to: c.to_unit.clone(),
                scale: c.scale,
                offset: c.offset,
                inverse: false,
                record: i,
            });
        }
        for (i, c) in doc.conversions.iter().enumerate() {
            idx.add_step(ConversionStep {
                from: c.to_unit.clone(),
                to: c.from_unit.clone(),
                scale: c.scale,
                offset: c.offset,
                inverse: true,
                record: i,
            });
        }
        for edges in idx.unit_graph.values_mut() {
            edges.sort_by(|a, b| a.to.cmp(&b.to));
        }
        idx
    }

    fn add_step(&mut self, step: ConversionStep) {
        let edges = self.unit_graph.entry(step.from.clone()).or_default();
        if !edges.iter().any(|e| e.to == step.to) {
            edges.push(step);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn prop(name: &str, dt: Datatype, unit: &str) -> PropertyRef {
        PropertyRef::new(name, dt, unit)
    }

    #[test]
    fn bundled_kb_has_the_use_case_records() {
        let kb = bundled::use_case_kb();
        assert!(kb.sensors().len() >= 8);
        assert!(kb.components().len() >= 5);
        assert_eq!(kb.version(), 1);
        for id in ["C1_1", "C1_2", "C38_3", "C77_3", "C32_3"] {
            assert!(kb.component(id).is_some(), "{id}");
        }
    }

    #[test]
    fn air_stress_producer_is_the_detector() {
        let kb = bundled::use_case_kb();
        let hits = kb.find_components_by_output(&prop("airStress", Datatype::String, "none"), MatchMode::Strict);
        let ids: Vec<_> = hits.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["C1_1"]);
        assert!(kb
            .find_components_by_output(&prop("unobtanium", Datatype::Double, "none"), MatchMode::Strict)
            .is_empty());
    }

    #[test]
    fn leaf_wetness_is_sensed_but_air_stress_is_not() {
        let kb = bundled::use_case_kb();
        let s = kb.find_sensors_by_property(&prop("leafWetness", Datatype::Double, "percent"), MatchMode::Strict);
        assert_eq!(s.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["S3"]);
        assert!(kb
            .find_sensors_by_property(&prop("airStress", Datatype::String, "none"), MatchMode::Strict)
            .is_empty());
    }

    #[test]
    fn two_sensors_for_one_property_come_back_sorted() {
        let kb = bundled::use_case_kb();
        let mut extra = kb.sensor("S1").unwrap().clone();
        extra.id = "S0-backup".into();
        let kb = kb.add(Description::Sensor(extra)).unwrap();
        let s = kb.find_sensors_by_property(&prop("airTemperature", Datatype::Double, "celsius"), MatchMode::Strict);
        assert_eq!(s.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["S0-backup", "S1"]);
    }

    #[test]
    fn add_bumps_version_and_rejects_duplicates() {
        let kb = bundled::use_case_kb();
        let mut s = kb.sensor("S1").unwrap().clone();
        s.id = "S9".into();
        let next = kb.add(Description::Sensor(s)).unwrap();
        assert_eq!(next.version(), kb.version() + 1);
        assert_eq!(kb.sensor("S9"), None, "old snapshot untouched");
        let dup = next.component("C1_1").unwrap().clone();
        assert!(matches!(next.add(Description::Component(dup)), Err(KbError::Dup { .. })));
    }

    #[test]
    fn add_rejects_unresolvable_impl() {
        let kb = bundled::use_case_kb();
        let mut c = kb.component("C1_1").unwrap().clone();
        c.id = "C9_1".into();
        c.impl_id = "no-such".into();
        match kb.add(Description::Component(c)) {
            Err(KbError::Ref { missing, .. }) => assert_eq!(missing, "no-such"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conversion_steps_invert_records() {
        let kb = bundled::use_case_kb();
        let c2f = kb.conversion_step("celsius", "fahrenheit").unwrap();
        assert_eq!(c2f.apply(100.0), 212.0);
        let f2c = kb.conversion_step("fahrenheit", "celsius").unwrap();
        assert!((f2c.apply(212.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn conversion_chains_are_bounded() {
        let mut doc = KbDocument::default();
        for (a, b) in [("u0", "u1"), ("u1", "u2"), ("u2", "u3"), ("u3", "u4")] {
            doc.conversions.push(UnitConversion {
                from_unit: a.into(),
                to_unit: b.into(),
                scale: 2.0,
                offset: 1.0,
                cost_context: Default::default(),
            });
        }
        let kb = KnowledgeBase::from_document(doc).unwrap();
        let path = kb.conversion_path("u0", "u3").unwrap();
        assert_eq!(path.iter().map(|s| s.key()).collect::<Vec<_>>(), ["u0->u1", "u1->u2", "u2->u3"]);
        assert!(kb.conversion_path("u0", "u4").is_none(), "four hops exceeds the limit");
        let back = kb.conversion_path("u3", "u1").unwrap();
        assert_eq!(back.len(), 2);
        let x = back.iter().fold(23.0, |x, s| s.apply(x));
        assert!((x - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fahrenheit_goal_finds_celsius_producers_when_convertible() {
        let kb = bundled::use_case_kb();
        let mut extra = kb.component("C1_1").unwrap().clone();
        extra.id = "C5_9".into();
        extra.function = 9;
        extra.impl_id = registry::UNIT_CONVERT.into();
        extra.inputs = vec![prop("airTemperature", Datatype::Double, "kelvin")];
        extra.output = prop("airTemperature", Datatype::Double, "celsius");
        extra.params = [("scale".to_string(), 1.0), ("offset".to_string(), -273.15)].into();
        let kb = kb.add(Description::Component(extra)).unwrap();
        let goal = prop("airTemperature", Datatype::Double, "fahrenheit");
        assert!(kb.find_components_by_output(&goal, MatchMode::Strict).is_empty());
        let hits = kb.find_components_by_output(&goal, MatchMode::UnitConvertible);
        assert_eq!(hits.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(), ["C5_9"]);
        let sensors = kb.find_sensors_by_property(&goal, MatchMode::UnitConvertible);
        assert_eq!(sensors.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["S1"]);
    }
}
