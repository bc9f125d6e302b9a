//! Gap analysis for tasks that cannot be composed.
//!
//! Every goal the planner could not resolve is a candidate gap. For each one
//! the advisor builds a hypothetical knowledge base with a new sensor or a
//! reduced-input component variant and re-runs the planner; only
//! augmentations that actually produce new solutions are proposed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{Description, KnowledgeBase, PropertyRef, SensorDescription, TaskDescription, WrapperBinding};
use crate::planner::{producible, solve, NoSolution, PlanError, SolveOptions, PER_GOAL_LIMIT};
use crate::registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    DeploySensor,
    AcquireComponent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Augmentation {
    pub kind: ProposalKind,
    pub target: PropertyRef,
    /// For component proposals: the existing component the variant is modelled on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub based_on: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Proposal {
    pub kind: ProposalKind,
    pub target: PropertyRef,
    /// Solutions that become available when this proposal is adopted.
    pub unlocks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub based_on: Option<String>,
    /// Further augmentations that must be adopted together with this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub together_with: Vec<Augmentation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GapReport {
    pub unresolvable: Vec<PropertyRef>,
    pub proposals: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdviceError {
    #[error("task {0} is solvable; there is nothing to advise")]
    NotAFailure(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

struct Candidate {
    aug: Augmentation,
    record: Description,
}

fn proposed_sensor(target: &PropertyRef) -> SensorDescription {
    SensorDescription {
        id: format!("proposed-{}", target.name),
        sensor_type: 1,
        observes: target.clone(),
        location: String::new(),
        context: Default::default(),
        wrapper: WrapperBinding::constant(0.0, 1000),
        context_outputs: Vec::new(),
    }
}

fn candidates_for(kb: &KnowledgeBase, target: &PropertyRef, opts: SolveOptions) -> Vec<Candidate> {
    let mut out = Vec::new();
    if target.datatype.is_numeric() {
        out.push(Candidate {
            aug: Augmentation { kind: ProposalKind::DeploySensor, target: target.clone(), based_on: None },
            record: Description::Sensor(proposed_sensor(target)),
        });
    }
    for comp in kb.components_producing(target) {
        let variadic = registry::signature(&comp.impl_id).is_some_and(|s| s.arity.is_variadic());
        if !variadic {
            continue;
        }
        let kept: Vec<PropertyRef> = comp.inputs.iter().filter(|p| producible(kb, p, opts)).cloned().collect();
        if kept.is_empty() || kept.len() == comp.inputs.len() {
            continue;
        }
        let mut variant = comp.clone();
        variant.id = format!("{}-variant", comp.id);
        variant.inputs = kept;
        out.push(Candidate {
            aug: Augmentation { kind: ProposalKind::AcquireComponent, target: target.clone(), based_on: Some(comp.id.clone()) },
            record: Description::Component(variant),
        });
    }
    out
}

fn count(kb: &KnowledgeBase, task: &TaskDescription, opts: SolveOptions) -> usize {
    solve(kb, task, opts).map(|o| o.solutions.len()).unwrap_or(0)
}

/// Proposals that would make `task` solvable, best first.
pub fn advise(kb: &KnowledgeBase, task: &TaskDescription, failure: &NoSolution, opts: SolveOptions) -> Result<GapReport, AdviceError> {
    let opts = SolveOptions { max_solutions: PER_GOAL_LIMIT, ..opts };
    let before = match solve(kb, task, opts) {
        Ok(_) => return Err(AdviceError::NotAFailure(task.id.clone())),
        Err(PlanError::NoSolution(_)) => 0,
        Err(e) => return Err(e.into()),
    };

    let gaps: Vec<&PropertyRef> = failure.frontier.iter().filter(|p| !producible(kb, p, opts)).collect();
    let per_gap: Vec<Vec<Candidate>> = gaps.iter().map(|g| candidates_for(kb, g, opts)).collect();

    let mut proposals = Vec::new();
    for cands in &per_gap {
        // one proposal per (kind, target): the variant unlocking the most
        let mut best: Vec<Proposal> = Vec::new();
        for c in cands {
            let unlocks = count(&kb.hypothetical(c.record.clone()), task, opts).saturating_sub(before);
            if unlocks == 0 {
                continue;
            }
            let p = Proposal {
                kind: c.aug.kind,
                target: c.aug.target.clone(),
                unlocks,
                based_on: c.aug.based_on.clone(),
                together_with: Vec::new(),
            };
            match best.iter_mut().find(|b| b.kind == p.kind) {
                Some(b) if b.unlocks < p.unlocks => *b = p,
                Some(_) => {}
                None => best.push(p),
            }
        }
        proposals.extend(best);
    }

    if proposals.is_empty() {
        for i in 0..per_gap.len() {
            for j in i + 1..per_gap.len() {
                for a in &per_gap[i] {
                    for b in &per_gap[j] {
                        let hyp = kb.hypothetical(a.record.clone()).hypothetical(b.record.clone());
                        let unlocks = count(&hyp, task, opts).saturating_sub(before);
                        if unlocks > 0 {
                            proposals.push(Proposal {
                                kind: a.aug.kind,
                                target: a.aug.target.clone(),
                                unlocks,
                                based_on: a.aug.based_on.clone(),
                                together_with: vec![b.aug.clone()],
                            });
                        }
                    }
                }
            }
        }
    }

    proposals.sort_by(|a, b| {
        b.unlocks
            .cmp(&a.unlocks)
            .then_with(|| a.target.name.cmp(&b.target.name))
            .then_with(|| a.kind.cmp(&b.kind))
            .then_with(|| a.target.cmp(&b.target))
    });
    Ok(GapReport { unresolvable: gaps.into_iter().cloned().collect(), proposals })
}

/// Solves `task`; on failure returns the advisor's report instead.
pub fn solve_or_advise(
    kb: &KnowledgeBase,
    task: &TaskDescription,
    opts: SolveOptions,
) -> Result<crate::planner::SolveOutcome, Result<GapReport, AdviceError>> {
    match solve(kb, task, opts) {
        Ok(o) => Ok(o),
        Err(PlanError::NoSolution(ns)) => Err(advise(kb, task, &ns, opts)),
        Err(e) => Err(Err(e.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn failure(kb: &KnowledgeBase, task: &TaskDescription) -> NoSolution {
        match solve(kb, task, SolveOptions::default()) {
            Err(PlanError::NoSolution(ns)) => ns,
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn missing_leaf_wetness_gives_one_sensor_proposal() {
        let kb = bundled::without_sensor(&bundled::use_case_kb(), "S3");
        let task = kb.task("T1-phytophtora").unwrap();
        let r = advise(&kb, task, &failure(&kb, task), SolveOptions::default()).unwrap();
        assert_eq!(r.proposals.len(), 1);
        let p = &r.proposals[0];
        assert_eq!((p.kind, p.target.key().as_str(), p.unlocks), (ProposalKind::DeploySensor, "leafWetness:double:percent", 1));
        // oracle: restoring the real sensor gives the same number of solutions
        let restored = count(&bundled::use_case_kb(), task, SolveOptions::default());
        assert_eq!(p.unlocks, restored);
    }

    #[test]
    fn solvable_task_is_not_a_failure() {
        let kb = bundled::use_case_kb();
        let task = kb.task("T1-phytophtora").unwrap();
        let fake = NoSolution { task_id: task.id.clone(), frontier: vec![], depth_truncated: false };
        assert_eq!(advise(&kb, task, &fake, SolveOptions::default()), Err(AdviceError::NotAFailure(task.id.clone())));
    }

    #[test]
    fn pollution_gap_ranks_the_no2_sensor_first() {
        let kb = bundled::without_component(&bundled::without_sensor(&bundled::use_case_kb(), "S8"), "C32_3");
        let task = kb.task("T2-pollution").unwrap();
        let r = advise(&kb, task, &failure(&kb, task), SolveOptions::default()).unwrap();
        let first = &r.proposals[0];
        assert_eq!((first.kind, first.target.name.as_str(), first.unlocks), (ProposalKind::DeploySensor, "nitrogenDioxide", 2));
        assert!(r
            .proposals
            .iter()
            .any(|p| p.kind == ProposalKind::AcquireComponent && p.target.name == "pollutionIndex" && p.unlocks >= 1));
        // every proposal re-verified independently
        for p in &r.proposals {
            let rec = if p.kind == ProposalKind::DeploySensor {
                Description::Sensor(proposed_sensor(&p.target))
            } else {
                let base = kb.component(p.based_on.as_deref().unwrap()).unwrap();
                let mut v = base.clone();
                v.id = format!("{}-variant", base.id);
                v.inputs.retain(|i| producible(&kb, i, SolveOptions::default()));
                Description::Component(v)
            };
            assert_eq!(count(&kb.hypothetical(rec), task, SolveOptions::default()), p.unlocks);
            assert!(!producible(&kb, &p.target, SolveOptions::default()));
        }
    }

    #[test]
    fn two_missing_sensors_are_proposed_as_a_pair() {
        let kb = bundled::without_sensor(&bundled::without_sensor(&bundled::use_case_kb(), "S3"), "S2");
        let task = kb.task("T1-phytophtora").unwrap();
        let r = advise(&kb, task, &failure(&kb, task), SolveOptions::default()).unwrap();
        assert_eq!(r.proposals.len(), 1);
        let p = &r.proposals[0];
        assert_eq!(p.target.name, "airHumidity");
        assert_eq!(p.together_with.len(), 1);
        assert_eq!(p.together_with[0].target.name, "leafWetness");
        assert_eq!(p.unlocks, 1);
    }

    #[test]
    fn report_serializes_in_api_shape() {
        let kb = bundled::without_sensor(&bundled::use_case_kb(), "S3");
        let task = kb.task("T1-phytophtora").unwrap();
        let r = advise(&kb, task, &failure(&kb, task), SolveOptions::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["unresolvable"].is_array());
        assert_eq!(v["proposals"][0]["kind"], "deploy-sensor");
        assert_eq!(v["proposals"][0]["unlocks"], 1);
    }
}
