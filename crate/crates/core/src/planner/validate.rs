use serde::{Deserialize, Serialize};

use super::{NodeKind, Solution, SolutionNode};
use crate::kb::{KnowledgeBase, PropertyRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeStatus {
    Ok,
    Converted,
    DatatypeMismatch,
    UnitMismatch,
    /// Producer emits a differently named property.
    PropertyMismatch,
}

impl EdgeStatus {
    pub fn is_mismatch(self) -> bool {
        !matches!(self, EdgeStatus::Ok | EdgeStatus::Converted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EdgeReport {
    pub producer: String,
    /// Consuming component, or `output` for a solution root.
    pub consumer: String,
    pub expected: PropertyRef,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub via: Vec<String>,
    pub status: EdgeStatus,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationReport {
    pub edges: Vec<EdgeReport>,
    /// Structural defects: unknown refs, wrong child counts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty() && self.edges.iter().all(|e| !e.status.is_mismatch())
    }
}

struct Checker<'a> {
    kb: &'a KnowledgeBase,
    report: ValidationReport,
}

impl Checker<'_> {
    fn node(&mut self, node: &SolutionNode) {
        match node.kind {
            NodeKind::SensorLeaf => {
                if !node.children.is_empty() {
                    self.report.problems.push(format!("sensor leaf {} has children", node.label()));
                }
                match (&node.reference, &node.slot) {
                    (Some(id), slot) => match self.kb.sensor(id) {
                        None => self.report.problems.push(format!("unknown sensor {id}")),
                        Some(s) if slot.as_ref().is_some_and(|p| p != &s.observes) => {
                            self.report.problems.push(format!("sensor {id} does not observe its slot"))
                        }
                        Some(_) => {}
                    },
                    (None, None) => self.report.problems.push("sensor leaf without ref or slot".into()),
                    (None, Some(_)) => {}
                }
            }
            NodeKind::Converter => {
                if node.children.len() != 1 {
                    self.report.problems.push(format!("converter {} needs exactly one child", node.label()));
                }
                let known = node
                    .reference
                    .as_deref()
                    .and_then(|r| r.split_once("->"))
                    .is_some_and(|(from, to)| self.kb.conversion_step(from, to).is_some());
                if !known {
                    self.report.problems.push(format!("unknown conversion {}", node.label()));
                }
                for c in &node.children {
                    self.node(c);
                }
            }
            NodeKind::Component => {
                let id = node.label();
                let Some(comp) = node.reference.as_deref().and_then(|r| self.kb.component(r)) else {
                    self.report.problems.push(format!("unknown component {id}"));
                    return;
                };
                if comp.inputs.len() != node.children.len() {
                    self.report.problems.push(format!(
                        "component {id} takes {} inputs, has {} children",
                        comp.inputs.len(),
                        node.children.len()
                    ));
                }
                for (child, expected) in node.children.iter().zip(&comp.inputs) {
                    self.edge(child, &id, expected);
                    self.node(child);
                }
            }
        }
    }

    /// Checks the edge into a consumer slot, looking through converter chains.
    fn edge(&mut self, child: &SolutionNode, consumer: &str, expected: &PropertyRef) {
        let mut producer = child;
        let mut via = Vec::new();
        while producer.kind == NodeKind::Converter {
            via.push(producer.label());
            match producer.children.first() {
                Some(c) => producer = c,
                None => break,
            }
        }
        via.reverse();
        let status = match producer.output(self.kb) {
            None => EdgeStatus::PropertyMismatch,
            Some(p) if p.name != expected.name => EdgeStatus::PropertyMismatch,
            Some(p) if p.datatype != expected.datatype => EdgeStatus::DatatypeMismatch,
            Some(p) => {
                let mut unit = p.unit.clone();
                let mut broken = false;
                for key in &via {
                    match key.split_once("->") {
                        Some((from, to)) if from == unit && self.kb.conversion_step(from, to).is_some() => {
                            unit = to.to_string();
                        }
                        _ => {
                            broken = true;
                            break;
                        }
                    }
                }
                if broken || unit != expected.unit {
                    EdgeStatus::UnitMismatch
                } else if via.is_empty() {
                    EdgeStatus::Ok
                } else {
                    EdgeStatus::Converted
                }
            }
        };
        self.report.edges.push(EdgeReport {
            producer: producer.label(),
            consumer: consumer.to_string(),
            expected: expected.clone(),
            via,
            status,
        });
    }
}

/// Type- and unit-checks every edge of `solution`, including root-to-output edges.
pub fn validate(kb: &KnowledgeBase, solution: &Solution) -> ValidationReport {
    let mut checker = Checker { kb, report: ValidationReport::default() };
    if solution.roots.len() > solution.outputs.len() {
        checker.report.problems.push("more roots than outputs".into());
    }
    for (root, expected) in solution.roots.iter().zip(&solution.outputs) {
        checker.edge(root, "output", expected);
        checker.node(root);
    }
    checker.report
}
