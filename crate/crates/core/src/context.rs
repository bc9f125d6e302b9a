//! Context outputs that the sensors of a solution can provide in addition to
//! the requested stream (location, battery level, ...).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{Deriver, KnowledgeBase, PropertyRef};
use crate::planner::Solution;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextOffer {
    pub source: String,
    pub property: PropertyRef,
    pub deriver: Deriver,
}

impl ContextOffer {
    /// Field name used when the offer is exported into the stream.
    pub fn field_name(&self) -> &str {
        &self.property.name
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("offer {sensor}.{property} does not belong to this solution")]
    OfferMismatch { sensor: String, property: String },
}

/// One offer per (leaf sensor, declared context output), sorted by source
/// then property. Offers whose property name is already an output are left out.
pub fn discover_context(kb: &KnowledgeBase, solution: &Solution) -> Vec<ContextOffer> {
    let mut offers: Vec<ContextOffer> = solution
        .leaf_sensors()
        .iter()
        .filter_map(|id| kb.sensor(id))
        .flat_map(|s| {
            s.context_outputs.iter().map(move |c| ContextOffer {
                source: s.id.clone(),
                property: c.property.clone(),
                deriver: c.deriver,
            })
        })
        .filter(|o| !solution.outputs.iter().any(|p| p.name == o.property.name))
        .collect();
    offers.sort();
    offers.dedup();
    offers
}

/// Extends the solution's outputs with the accepted offers.
///
/// Each exported context field is named after its property; when two accepted
/// offers share a property name the second one is `<source>.<name>`.
pub fn attach_context(kb: &KnowledgeBase, solution: &Solution, accepted: &[ContextOffer]) -> Result<Solution, ContextError> {
    if accepted.is_empty() {
        return Ok(solution.clone());
    }
    let available = discover_context(kb, solution);
    let mut out = solution.clone();
    for offer in accepted {
        let mismatch = || ContextError::OfferMismatch { sensor: offer.source.clone(), property: offer.property.name.clone() };
        if !available.contains(offer) || out.context.contains(offer) {
            return Err(mismatch());
        }
        out.context.push(offer.clone());
        out.outputs.push(offer.property.clone());
    }
    out.refresh_id();
    Ok(out)
}

/// Exported field names for a solution: task outputs by property name, then
/// context fields, disambiguated by source when names collide. A repeated
/// task output gets its position appended.
pub fn exported_names(solution: &Solution) -> Vec<String> {
    let base = solution.outputs.len() - solution.context.len();
    let mut names: Vec<String> = Vec::with_capacity(solution.outputs.len());
    for (i, p) in solution.outputs[..base].iter().enumerate() {
        if names.contains(&p.name) {
            names.push(format!("{}.{i}", p.name));
        } else {
            names.push(p.name.clone());
        }
    }
    for offer in &solution.context {
        let plain = offer.property.name.clone();
        if names.contains(&plain) {
            names.push(format!("{}.{}", offer.source, plain));
        } else {
            names.push(plain);
        }
    }
    names
}
