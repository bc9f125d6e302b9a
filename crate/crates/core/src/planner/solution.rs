use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::ContextOffer;
use crate::cost::CostIndex;
use crate::kb::{KnowledgeBase, PropertyRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    SensorLeaf,
    Component,
    Converter,
}

/// One node of a composition. Children are the node's inputs in declared order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SolutionNode {
    pub kind: NodeKind,
    /// Sensor id, component id, or conversion key `from->to`. A sensor leaf
    /// with no ref is an ungrounded slot: several sensors could fill it.
    #[serde(rename = "ref")]
    pub reference: Option<String>,
    /// Property a sensor leaf must observe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<PropertyRef>,
    #[serde(default)]
    pub children: Vec<SolutionNode>,
}

impl SolutionNode {
    pub fn sensor(id: impl Into<String>, observes: PropertyRef) -> Self {
        Self { kind: NodeKind::SensorLeaf, reference: Some(id.into()), slot: Some(observes), children: vec![] }
    }

    pub fn slot(observes: PropertyRef) -> Self {
        Self { kind: NodeKind::SensorLeaf, reference: None, slot: Some(observes), children: vec![] }
    }

    pub fn component(id: impl Into<String>, children: Vec<SolutionNode>) -> Self {
        Self { kind: NodeKind::Component, reference: Some(id.into()), slot: None, children }
    }

    pub fn converter(key: impl Into<String>, child: SolutionNode) -> Self {
        Self { kind: NodeKind::Converter, reference: Some(key.into()), slot: None, children: vec![child] }
    }

    /// Display label: the ref, or `?name:datatype:unit` for an open slot.
    pub fn label(&self) -> String {
        match (&self.reference, &self.slot) {
            (Some(r), _) => r.clone(),
            (None, Some(slot)) => format!("?{}", slot.key()),
            (None, None) => "?".into(),
        }
    }

    /// Preorder `(kind, ref, arity)` serialization.
    pub fn write_canonical(&self, out: &mut String) {
        let tag = match self.kind {
            NodeKind::SensorLeaf => 'S',
            NodeKind::Component => 'C',
            NodeKind::Converter => 'V',
        };
        let _ = write!(out, "{tag}({}/{})", self.label(), self.children.len());
        for c in &self.children {
            c.write_canonical(out);
        }
    }

    pub fn canonical(&self) -> String {
        let mut s = String::new();
        self.write_canonical(&mut s);
        s
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a SolutionNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Postorder traversal.
    pub fn walk_post<'a>(&'a self, f: &mut impl FnMut(&'a SolutionNode)) {
        for c in &self.children {
            c.walk_post(f);
        }
        f(self);
    }

    pub fn depth(&self) -> usize {
        let below = self.children.iter().map(|c| c.depth()).max().unwrap_or(0);
        below + usize::from(self.kind == NodeKind::Component)
    }

    pub fn is_grounded(&self) -> bool {
        let mut grounded = true;
        self.walk(&mut |n| {
            if n.kind == NodeKind::SensorLeaf && n.reference.is_none() {
                grounded = false;
            }
        });
        grounded
    }

    /// Property this node emits, resolved against the KB.
    pub fn output(&self, kb: &KnowledgeBase) -> Option<PropertyRef> {
        match self.kind {
            NodeKind::SensorLeaf => match &self.reference {
                Some(id) => kb.sensor(id).map(|s| s.observes.clone()),
                None => self.slot.clone(),
            },
            NodeKind::Component => kb.component(self.reference.as_deref()?).map(|c| c.output.clone()),
            NodeKind::Converter => {
                let (_, to) = self.reference.as_deref()?.split_once("->")?;
                let mut p = self.children.first()?.output(kb)?;
                p.unit = to.to_string();
                Some(p)
            }
        }
    }

    /// Ids of leaf sensors, in preorder, without repeats.
    pub fn leaf_sensors(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.walk(&mut |n| {
            if n.kind == NodeKind::SensorLeaf {
                if let Some(id) = &n.reference {
                    if !out.contains(id) {
                        out.push(id.clone());
                    }
                }
            }
        });
        out
    }
}

/// A composition of sensors and components that produces every required
/// output of a task. `roots[i]` produces `outputs[i]` for the task outputs;
/// accepted context extends `outputs` past the roots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Solution {
    pub canonical_id: String,
    pub roots: Vec<SolutionNode>,
    pub outputs: Vec<PropertyRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context: Vec<ContextOffer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostIndex>,
}

impl Solution {
    pub fn new(roots: Vec<SolutionNode>, outputs: Vec<PropertyRef>) -> Self {
        let mut s = Solution { canonical_id: String::new(), roots, outputs, context: vec![], cost: None };
        s.canonical_id = s.compute_canonical_id();
        s
    }

    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        for (i, r) in self.roots.iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            r.write_canonical(&mut s);
        }
        for offer in &self.context {
            let _ = write!(s, "+{}.{}", offer.source, offer.property.name);
        }
        s
    }

    pub fn compute_canonical_id(&self) -> String {
        canonical_hash(&self.canonical_string())
    }

    pub fn refresh_id(&mut self) {
        self.canonical_id = self.compute_canonical_id();
    }

    pub fn is_grounded(&self) -> bool {
        self.roots.iter().all(|r| r.is_grounded())
    }

    pub fn leaf_sensors(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.roots {
            for id in r.leaf_sensors() {
                if !out.contains(&id) {
                    out.push(id);
                }
            }
        }
        out
    }

    /// Distinct nodes of the composition: identical subtrees count once.
    pub fn distinct_nodes(&self) -> Vec<&SolutionNode> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in &self.roots {
            r.walk(&mut |n| {
                if seen.insert(n.canonical()) {
                    out.push(n);
                }
            });
        }
        out
    }

    /// Compact `((S1, S2) => C1_1, S3) => C1_2` rendering.
    pub fn expression(&self) -> String {
        fn render(n: &SolutionNode) -> String {
            match n.kind {
                NodeKind::SensorLeaf => n.label(),
                _ => {
                    let args: Vec<_> = n.children.iter().map(render).collect();
                    format!("({}) => {}", args.join(", "), n.label())
                }
            }
        }
        self.roots.iter().map(render).collect::<Vec<_>>().join(" ; ")
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn canonical_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
