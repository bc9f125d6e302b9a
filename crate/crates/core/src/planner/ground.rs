use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NodeKind, Solution, SolutionNode};
use crate::cost::{cpwi, CostError, PriorityVector};
use crate::kb::{ContextVector, KnowledgeBase, PropertyRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "strategy", content = "k")]
pub enum Grounding {
    BestPerSlot,
    EnumerateTopK(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundError {
    #[error("no sensor observes {}", .0.key())]
    NoSensorForSlot(PropertyRef),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Fills every open sensor slot of `solution` with a registered sensor.
///
/// Sensors competing for a slot are ranked by their CPWI index over their own
/// context vectors. Slots with the same property share one sensor, so the
/// grounded composition streams each property once.
pub fn ground_sensors(
    kb: &KnowledgeBase,
    solution: &Solution,
    strategy: Grounding,
    priorities: &PriorityVector,
) -> Result<Vec<Solution>, GroundError> {
    let mut slots: BTreeMap<String, PropertyRef> = BTreeMap::new();
    for root in &solution.roots {
        root.walk(&mut |n| {
            if n.kind == NodeKind::SensorLeaf && n.reference.is_none() {
                if let Some(p) = &n.slot {
                    slots.insert(p.key(), p.clone());
                }
            }
        });
    }
    if slots.is_empty() {
        return Ok(vec![solution.clone()]);
    }

    let mut ranked: Vec<(String, Vec<String>)> = Vec::new();
    for (key, prop) in &slots {
        let sensors: Vec<_> = kb.sensors_observing(prop).collect();
        if sensors.is_empty() {
            return Err(GroundError::NoSensorForSlot(prop.clone()));
        }
        let vectors: Vec<ContextVector> = sensors.iter().map(|s| s.context.clone()).collect();
        let idx = cpwi(&vectors, priorities)?;
        let mut order: Vec<usize> = (0..sensors.len()).collect();
        order.sort_by(|&a, &b| idx[a].value.total_cmp(&idx[b].value).then_with(|| sensors[a].id.cmp(&sensors[b].id)));
        ranked.push((key.clone(), order.into_iter().map(|i| sensors[i].id.clone()).collect()));
    }

    let k = match strategy {
        Grounding::BestPerSlot => 1,
        Grounding::EnumerateTopK(k) => k.max(1),
    };
    for (_, ids) in &mut ranked {
        ids.truncate(k);
    }

    // Every combination of per-slot choices, keyed by total rank.
    let mut combos: Vec<(usize, Vec<usize>)> = vec![(0, Vec::new())];
    for (_, ids) in &ranked {
        combos = combos
            .into_iter()
            .flat_map(|(rank, pick)| {
                (0..ids.len()).map(move |j| {
                    let mut pick = pick.clone();
                    pick.push(j);
                    (rank + j, pick)
                })
            })
            .collect();
    }

    let mut out: Vec<(usize, Solution)> = combos
        .into_iter()
        .map(|(rank, pick)| {
            let choice: BTreeMap<&str, &str> =
                ranked.iter().zip(&pick).map(|((key, ids), &j)| (key.as_str(), ids[j].as_str())).collect();
            let roots = solution.roots.iter().map(|r| fill(r, &choice)).collect();
            let mut s = Solution { roots, ..solution.clone() };
            s.cost = None;
            s.refresh_id();
            (rank, s)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.canonical_id.cmp(&b.1.canonical_id)));
    out.truncate(k);
    Ok(out.into_iter().map(|(_, s)| s).collect())
}

fn fill(node: &SolutionNode, choice: &BTreeMap<&str, &str>) -> SolutionNode {
    if node.kind == NodeKind::SensorLeaf && node.reference.is_none() {
        if let Some(p) = &node.slot {
            if let Some(id) = choice.get(p.key().as_str()) {
                return SolutionNode::sensor(*id, p.clone());
            }
        }
    }
    SolutionNode { children: node.children.iter().map(|c| fill(c, choice)).collect(), ..node.clone() }
}
