//! Seeded synthetic knowledge bases for scaling measurements.
//!
//! Sensors observe a pool of base properties (about four sensors per
//! property). Components form up to three layers over those properties, and
//! every derived property has exactly two producers. One task is guaranteed
//! solvable; the other tasks ask for properties nobody produces.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kb::{
    load_kb, AnswerKind, ComponentDescription, Concept, ConceptValue, ContextEntry, ContextVector, Datatype, Direction,
    Generator, KbDocument, KbError, ParseMode, PropertyRef, Question, SensorDescription, TaskDescription,
    WrapperBinding,
};
use crate::planner::{solve, SolveOptions};
use crate::registry::WEIGHTED_AVERAGE;

pub const SYNTH_TASK: &str = "synth-task-0000";
const SENSORS_PER_PROPERTY: usize = 4;
const UNSOLVABLE_TASKS: usize = 3;

fn prop(name: String) -> PropertyRef {
    PropertyRef::new(name, Datatype::Double, "unit")
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn context(rng: &mut ChaCha8Rng, entries: &[(&str, f64, f64, Direction)]) -> ContextVector {
    entries
        .iter()
        .map(|(name, lo, hi, dir)| (name.to_string(), ContextEntry::new(round3(rng.random_range(*lo..*hi)), *dir)))
        .collect()
}

/// Builds the synthetic document. Identical arguments give identical documents.
pub fn synth_document(sensors: usize, components: usize, seed: u64) -> KbDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensors = sensors.max(1);
    let base_count = (sensors / SENSORS_PER_PROPERTY).max(1);
    let base: Vec<PropertyRef> = (0..base_count).map(|k| prop(format!("base{k:05}"))).collect();

    let mut doc = KbDocument::default();
    for i in 0..sensors {
        let mut params = BTreeMap::new();
        params.insert("seed".to_string(), serde_json::json!(seed.wrapping_mul(1_000_003).wrapping_add(i as u64)));
        params.insert("min".to_string(), serde_json::json!(0.0));
        params.insert("max".to_string(), serde_json::json!(100.0));
        doc.sensors.push(SensorDescription {
            id: format!("s{i:05}"),
            sensor_type: (i % 50) as u32 + 1,
            observes: base[i % base_count].clone(),
            location: format!("zone-{}", i % 17),
            context: context(
                &mut rng,
                &[
                    ("reliability", 0.5, 1.0, Direction::HigherBetter),
                    ("energy", 1.0, 10.0, Direction::LowerBetter),
                    ("latency", 1.0, 100.0, Direction::LowerBetter),
                ],
            ),
            wrapper: WrapperBinding { generator: Generator::UniformRandom, params, sample_interval_ms: 1000 },
            context_outputs: Vec::new(),
        });
    }

    let derived_count = if components == 0 { 0 } else { (components / 2).max(1) };
    let l1 = if derived_count == 0 { 0 } else { (derived_count * 40 / 100).max(1) };
    let l2 = (derived_count * 35 / 100).min(derived_count - l1);
    let layers: Vec<Vec<usize>> = vec![(0..l1).collect(), (l1..l1 + l2).collect(), (l1 + l2..derived_count).collect()];
    let derived: Vec<PropertyRef> = (0..derived_count).map(|d| prop(format!("derived{d:05}"))).collect();
    let layer_of = |d: usize| layers.iter().position(|l| l.contains(&d)).unwrap_or(0);

    // properties available as inputs below each layer
    let mut below: Vec<Vec<PropertyRef>> = vec![base.clone()];
    for l in 0..2 {
        let mut next = below[l].clone();
        next.extend(layers[l].iter().map(|&d| derived[d].clone()));
        below.push(next);
    }

    for j in 0..components {
        let d = (j / 2).min(derived_count - 1);
        let layer = layer_of(d);
        let first = if layer == 0 {
            base[rng.random_range(0..base_count)].clone()
        } else {
            // previous layer keeps the chain deep
            let prev = &layers[layer - 1];
            if prev.is_empty() {
                base[rng.random_range(0..base_count)].clone()
            } else {
                derived[prev[rng.random_range(0..prev.len())]].clone()
            }
        };
        let pool = &below[layer];
        let second = pool[rng.random_range(0..pool.len())].clone();
        let mut params = BTreeMap::new();
        params.insert("w0".to_string(), round3(rng.random_range(0.5..1.5)));
        params.insert("w1".to_string(), round3(rng.random_range(0.5..1.5)));
        doc.components.push(ComponentDescription {
            id: format!("c{j:05}"),
            function: d as u32 + 1,
            inputs: vec![first, second],
            output: derived[d].clone(),
            context: context(
                &mut rng,
                &[
                    ("reliability", 0.5, 1.0, Direction::HigherBetter),
                    ("processingTime", 1.0, 50.0, Direction::LowerBetter),
                    ("memory", 8.0, 256.0, Direction::LowerBetter),
                ],
            ),
            impl_id: WEIGHTED_AVERAGE.to_string(),
            params,
        });
    }

    let target = layers
        .iter()
        .rev()
        .find_map(|l| l.first())
        .map(|&d| derived[d].clone())
        .unwrap_or_else(|| base[0].clone());

    let values: Vec<ConceptValue> = (0..=UNSOLVABLE_TASKS)
        .map(|k| ConceptValue { id: format!("workload-{k}"), label: format!("workload {k}") })
        .collect();
    doc.questions.push(Question {
        id: "Q-synth".into(),
        text: "Which synthetic workload should run?".into(),
        answer_kind: AnswerKind::Choice,
        choices: values.iter().map(|v| v.id.clone()).collect(),
    });
    doc.concepts.push(Concept { id: "C-synth".into(), name: "workload".into(), question_id: "Q-synth".into(), values });
    for k in 0..=UNSOLVABLE_TASKS {
        let required = if k == 0 { target.clone() } else { prop(format!("missing{k}")) };
        doc.tasks.push(TaskDescription {
            id: format!("synth-task-{k:04}"),
            title: if k == 0 { "Designated solvable task".into() } else { format!("Unsolvable task {k}") },
            required_outputs: vec![required],
            concept_bindings: [("C-synth".to_string(), format!("workload-{k}"))].into(),
        });
    }
    doc
}

pub fn synth_json(sensors: usize, components: usize, seed: u64) -> String {
    let mut s = serde_json::to_string_pretty(&synth_document(sensors, components, seed)).expect("document serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScalingPoint {
    pub sensors: usize,
    pub components: usize,
    pub generate_ms: f64,
    pub load_ms: f64,
    /// Median over the measured runs.
    pub solve_ms: f64,
    /// Load plus the first, cold solve.
    pub end_to_end_ms: f64,
    pub solutions: usize,
}

/// Generates a KB of the given size into `dir`, loads it back and times the
/// designated task's solve.
pub fn scaling_point(sensors: usize, components: usize, seed: u64, runs: usize, dir: &Path) -> Result<ScalingPoint, KbError> {
    let start = Instant::now();
    let text = synth_json(sensors, components, seed);
    let generate_ms = start.elapsed().as_secs_f64() * 1e3;
    let path = dir.join(format!("synth-{sensors}-{components}-{seed}.kb.json"));
    std::fs::write(&path, &text).map_err(|source| KbError::Io { path: path.display().to_string(), source })?;

    let start = Instant::now();
    let kb = load_kb(&path, ParseMode::Strict)?;
    let load_ms = start.elapsed().as_secs_f64() * 1e3;
    let task = kb.task(SYNTH_TASK).expect("synthetic KB has its designated task").clone();

    let mut times = Vec::new();
    let mut solutions = 0;
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        let out = solve(&kb, &task, SolveOptions::default());
        times.push(start.elapsed().as_secs_f64() * 1e3);
        solutions = out.map(|o| o.solutions.len()).unwrap_or(0);
    }
    let first_solve_ms = times[0];
    times.sort_by(f64::total_cmp);
    let solve_ms = times[times.len() / 2];
    Ok(ScalingPoint { sensors, components, generate_ms, load_ms, solve_ms, end_to_end_ms: load_ms + first_solve_ms, solutions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{parse_kb, KnowledgeBase};
    use crate::planner::PlanError;

    #[test]
    fn same_seed_same_bytes_different_seed_differs() {
        assert_eq!(synth_json(40, 30, 7), synth_json(40, 30, 7));
        assert_ne!(synth_json(40, 30, 7), synth_json(40, 30, 8));
    }

    #[test]
    fn designated_task_is_solvable_and_the_rest_are_not() {
        for (n, m, seed) in [(1, 0, 1), (4, 1, 2), (8, 2, 3), (40, 30, 4), (200, 200, 5)] {
            let kb = KnowledgeBase::from_document(synth_document(n, m, seed)).unwrap();
            assert_eq!(kb.sensors().len(), n);
            assert_eq!(kb.components().len(), m);
            let out = solve(&kb, kb.task(SYNTH_TASK).unwrap(), SolveOptions::default()).unwrap();
            assert!(!out.solutions.is_empty(), "{n}/{m}");
            for t in kb.tasks().iter().skip(1) {
                assert!(matches!(solve(&kb, t, SolveOptions::default()), Err(PlanError::NoSolution(_))));
            }
        }
    }

    #[test]
    fn every_derived_output_has_two_producers() {
        let kb = KnowledgeBase::from_document(synth_document(100, 60, 9)).unwrap();
        let mut producers: BTreeMap<&str, usize> = BTreeMap::new();
        for c in kb.components() {
            *producers.entry(c.output.name.as_str()).or_default() += 1;
        }
        assert!(producers.values().all(|&n| n == 2));
    }

    #[test]
    fn strict_parse_accepts_the_serialized_form() {
        parse_kb(&synth_json(20, 10, 1), ParseMode::Strict).unwrap();
    }
}
