//! Comparative priority-based weighted index (CPWI).
//!
//! Each candidate's context vector is min-max normalized against the other
//! candidates, direction-adjusted so that 1 is best, and scored by its
//! weighted Euclidean distance from the ideal point (all ones). Lower is better.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{Aggregate, ContextEntry, ContextVector, Direction, KnowledgeBase};
use crate::planner::{NodeKind, Solution};

/// Value given to a property a candidate does not declare.
pub const IMPUTED: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("no candidates to rank")]
    EmptyCandidateSet,
    #[error("invalid priorities: {0}")]
    InvalidPriorities(String),
}

/// User priorities per context property. Empty means "all properties equal".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorityVector {
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

impl PriorityVector {
    pub fn equal() -> Self {
        Self::default()
    }

    pub fn with(mut self, property: &str, weight: f64) -> Self {
        self.weights.insert(property.to_string(), weight);
        self
    }

    /// Weights normalized to sum 1 over `properties` (or over the given keys
    /// when explicit weights are set).
    pub fn normalized(&self, properties: &BTreeSet<String>) -> Result<BTreeMap<String, f64>, CostError> {
        if self.weights.is_empty() {
            let n = properties.len() as f64;
            return Ok(properties.iter().map(|p| (p.clone(), 1.0 / n)).collect());
        }
        if let Some((k, w)) = self.weights.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(CostError::InvalidPriorities(format!("weight of {k} is {w}")));
        }
        let total: f64 = self.weights.values().sum();
        if total <= 0.0 {
            return Err(CostError::InvalidPriorities("at least one weight must be positive".into()));
        }
        Ok(self.weights.iter().map(|(k, w)| (k.clone(), w / total)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyScore {
    /// Direction-adjusted normalized value, 1 = best.
    pub normalized: f64,
    pub weight: f64,
    /// `weight * (1 - normalized)^2`
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CostIndex {
    pub value: f64,
    pub per_property: BTreeMap<String, PropertyScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_properties: Vec<String>,
}

/// Solution-level context: per property, nodes that declare it are combined
/// (mean unless the KB annotates `sum` or `max`).
pub fn aggregate_context(kb: &KnowledgeBase, solution: &Solution) -> ContextVector {
    let mut collected: BTreeMap<String, (Direction, Vec<f64>)> = BTreeMap::new();
    for node in solution.distinct_nodes() {
        let ctx = match node.kind {
            NodeKind::SensorLeaf => node.reference.as_deref().and_then(|id| kb.sensor(id)).map(|s| &s.context),
            NodeKind::Component => node.reference.as_deref().and_then(|id| kb.component(id)).map(|c| &c.context),
            NodeKind::Converter => node
                .reference
                .as_deref()
                .and_then(|r| r.split_once("->"))
                .and_then(|(from, to)| kb.conversion_step(from, to))
                .map(|step| &kb.conversions()[step.record].cost_context),
        };
        for (name, entry) in ctx.into_iter().flatten() {
            collected
                .entry(name.clone())
                .or_insert_with(|| (entry.direction, Vec::new()))
                .1
                .push(entry.value);
        }
    }
    collected
        .into_iter()
        .map(|(name, (direction, values))| {
            let value = match kb.aggregate_for(&name) {
                Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
                Aggregate::Sum => values.iter().sum(),
                Aggregate::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            (name, ContextEntry { value, direction })
        })
        .collect()
}

pub fn cpwi(candidates: &[ContextVector], priorities: &PriorityVector) -> Result<Vec<CostIndex>, CostError> {
    if candidates.is_empty() {
        return Err(CostError::EmptyCandidateSet);
    }
    let properties: BTreeSet<String> = candidates.iter().flat_map(|c| c.keys().cloned()).collect();
    let weights = if properties.is_empty() && priorities.weights.is_empty() {
        BTreeMap::new()
    } else {
        priorities.normalized(&properties)?
    };

    let mut out: Vec<CostIndex> = candidates
        .iter()
        .map(|_| CostIndex { value: 0.0, per_property: BTreeMap::new(), missing_properties: Vec::new() })
        .collect();

    for prop in &properties {
        let weight = weights.get(prop).copied().unwrap_or(0.0);
        let present: Vec<&ContextEntry> = candidates.iter().filter_map(|c| c.get(prop)).collect();
        let direction = present[0].direction;
        let min = present.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
        let max = present.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
        for (cand, index) in candidates.iter().zip(out.iter_mut()) {
            let normalized = match cand.get(prop) {
                None => {
                    index.missing_properties.push(prop.clone());
                    IMPUTED
                }
                Some(_) if max <= min => 1.0,
                Some(e) => {
                    let v = (e.value - min) / (max - min);
                    match direction {
                        Direction::HigherBetter => v,
                        Direction::LowerBetter => 1.0 - v,
                    }
                }
            };
            let gap = 1.0 - normalized;
            let contribution = weight * gap * gap;
            index.per_property.insert(prop.clone(), PropertyScore { normalized, weight, contribution });
        }
    }
    for index in &mut out {
        let sum: f64 = index.per_property.values().map(|s| s.contribution).sum();
        index.value = sum.sqrt().min(1.0);
    }
    Ok(out)
}

/// Grounded solutions ordered best first (ascending index, ties by canonical id).
/// Each returned solution carries its index in `cost`.
pub fn rank_solutions(
    kb: &KnowledgeBase,
    solutions: &[Solution],
    priorities: &PriorityVector,
) -> Result<Vec<Solution>, CostError> {
    let vectors: Vec<ContextVector> = solutions.iter().map(|s| aggregate_context(kb, s)).collect();
    let indices = cpwi(&vectors, priorities)?;
    let mut ranked: Vec<Solution> = solutions
        .iter()
        .cloned()
        .zip(indices)
        .map(|(mut s, idx)| {
            s.cost = Some(idx);
            s
        })
        .collect();
    ranked.sort_by(|a, b| {
        let (x, y) = (a.cost.as_ref().unwrap().value, b.cost.as_ref().unwrap().value);
        x.total_cmp(&y).then_with(|| a.canonical_id.cmp(&b.canonical_id))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::planner::{solve, SolveOptions};
    use proptest::prelude::*;

    fn cv(pairs: &[(&str, f64, Direction)]) -> ContextVector {
        pairs.iter().map(|(k, v, d)| (k.to_string(), ContextEntry::new(*v, *d))).collect()
    }

    #[test]
    fn two_candidate_example_gives_zero_and_one() {
        let a = cv(&[("reliability", 0.9, Direction::HigherBetter)]);
        let b = cv(&[("reliability", 0.6, Direction::HigherBetter)]);
        let idx = cpwi(&[a, b], &PriorityVector::equal().with("reliability", 1.0)).unwrap();
        assert_eq!(idx[0].value, 0.0);
        assert_eq!(idx[1].value, 1.0);
    }

    #[test]
    fn single_candidate_scores_zero() {
        let a = cv(&[("latency", 12.0, Direction::LowerBetter), ("reliability", 0.3, Direction::HigherBetter)]);
        let idx = cpwi(&[a], &PriorityVector::equal()).unwrap();
        assert_eq!(idx[0].value, 0.0);
        assert!(idx[0].per_property.values().all(|s| s.normalized == 1.0));
    }

    #[test]
    fn empty_set_and_bad_weights_are_errors() {
        assert_eq!(cpwi(&[], &PriorityVector::equal()), Err(CostError::EmptyCandidateSet));
        let a = cv(&[("x", 1.0, Direction::HigherBetter)]);
        let zero = PriorityVector::equal().with("x", 0.0);
        assert!(matches!(cpwi(std::slice::from_ref(&a), &zero), Err(CostError::InvalidPriorities(_))));
        let neg = PriorityVector::equal().with("x", -1.0);
        assert!(matches!(cpwi(&[a], &neg), Err(CostError::InvalidPriorities(_))));
    }

    #[test]
    fn missing_values_are_imputed_at_midpoint() {
        let a = cv(&[("x", 1.0, Direction::HigherBetter), ("y", 5.0, Direction::LowerBetter)]);
        let b = cv(&[("x", 3.0, Direction::HigherBetter)]);
        let idx = cpwi(&[a, b], &PriorityVector::equal()).unwrap();
        assert_eq!(idx[1].missing_properties, ["y"]);
        assert_eq!(idx[1].per_property["y"].normalized, IMPUTED);
        // a: x=0 (worst), y=1 (only declarer) ; b: x=1, y=0.5
        assert!((idx[0].value - (0.5f64).sqrt()).abs() < 1e-15);
        assert!((idx[1].value - (0.5f64 * 0.25).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn property_absent_everywhere_contributes_nothing() {
        let a = cv(&[("x", 1.0, Direction::HigherBetter)]);
        let b = cv(&[("x", 2.0, Direction::HigherBetter)]);
        let p = PriorityVector::equal().with("x", 1.0).with("ghost", 1.0);
        let idx = cpwi(&[a, b], &p).unwrap();
        assert!(idx.iter().all(|i| !i.per_property.contains_key("ghost")));
        assert!((idx[0].value - (0.5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn use_case_one_reliability_is_the_mean() {
        let kb = bundled::use_case_kb();
        let s = &solve(&kb, kb.task("T1-phytophtora").unwrap(), SolveOptions::default()).unwrap().solutions[0];
        let agg = aggregate_context(&kb, s);
        let hand = (0.9 + 0.8 + 0.95 + 0.9 + 0.85) / 5.0;
        assert!((agg["reliability"].value - 0.88).abs() < 1e-12);
        assert!((agg["reliability"].value - hand).abs() < 1e-15);
        assert!(!agg.contains_key("nonexistent"));
    }

    #[test]
    fn single_sensor_solution_keeps_its_vector() {
        let kb = bundled::use_case_kb();
        let t = crate::kb::TaskDescription {
            id: "t".into(),
            title: "t".into(),
            required_outputs: vec![kb.sensor("S2").unwrap().observes.clone()],
            concept_bindings: Default::default(),
        };
        let s = &solve(&kb, &t, SolveOptions::default()).unwrap().solutions[0];
        assert_eq!(aggregate_context(&kb, s), kb.sensor("S2").unwrap().context);
    }

    #[test]
    fn sum_annotation_changes_aggregation() {
        let mut doc = kb_doc();
        doc.context_aggregation.insert("latency".into(), Aggregate::Sum);
        let kb = KnowledgeBase::from_document(doc).unwrap();
        let s = &solve(&kb, kb.task("T1-phytophtora").unwrap(), SolveOptions::default()).unwrap().solutions[0];
        assert_eq!(aggregate_context(&kb, s)["latency"].value, 20.0 + 25.0 + 30.0);
    }

    fn kb_doc() -> crate::kb::KbDocument {
        bundled::use_case_kb().document().clone()
    }

    #[test]
    fn rank_orders_ascending_and_single_is_zero() {
        let kb = bundled::use_case_kb();
        let sols = solve(&kb, kb.task("T2-pollution").unwrap(), SolveOptions::default()).unwrap().solutions;
        let ranked = rank_solutions(&kb, &sols, &PriorityVector::equal()).unwrap();
        let vals: Vec<f64> = ranked.iter().map(|s| s.cost.as_ref().unwrap().value).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let one = rank_solutions(&kb, &sols[..1], &PriorityVector::equal()).unwrap();
        assert_eq!(one[0].cost.as_ref().unwrap().value, 0.0);
        assert_eq!(rank_solutions(&kb, &[], &PriorityVector::equal()), Err(CostError::EmptyCandidateSet));
    }

    fn vectors(n: usize, props: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, props), n)
    }

    fn as_cv(rows: &[Vec<f64>]) -> Vec<ContextVector> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let d = if i % 2 == 0 { Direction::HigherBetter } else { Direction::LowerBetter };
                        (format!("p{i}"), ContextEntry::new(*v, d))
                    })
                    .collect()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn index_stays_in_unit_range(rows in vectors(4, 3), w in proptest::collection::vec(0.01f64..5.0, 3)) {
            let mut p = PriorityVector::equal();
            for (i, w) in w.iter().enumerate() { p = p.with(&format!("p{i}"), *w); }
            for idx in cpwi(&as_cv(&rows), &p).unwrap() {
                prop_assert!((0.0..=1.0).contains(&idx.value));
            }
        }

        #[test]
        fn permuting_candidates_permutes_indices(rows in vectors(5, 3), shift in 0usize..5) {
            let cvs = as_cv(&rows);
            let base = cpwi(&cvs, &PriorityVector::equal()).unwrap();
            let mut rotated = cvs.clone();
            rotated.rotate_left(shift);
            let rot = cpwi(&rotated, &PriorityVector::equal()).unwrap();
            for i in 0..cvs.len() {
                prop_assert_eq!(rot[i].value, base[(i + shift) % cvs.len()].value);
            }
        }
    }
}
