//! Backward-chaining composition of sensors and components.
//!
//! Starting from a task's required outputs, each unmet property is resolved
//! either by a sensor observing it or by a component producing it, whose own
//! inputs become new goals one composition level down. Per-goal resolutions
//! are memoized by `(goal, remaining depth)` and combined by Cartesian
//! product across a component's inputs.

mod ground;
mod solution;
mod validate;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ground::{ground_sensors, GroundError, Grounding};
pub use solution::{canonical_hash, NodeKind, Solution, SolutionNode};
pub use validate::{validate, EdgeReport, EdgeStatus, ValidationReport};

use crate::kb::{ConversionStep, Datatype, KnowledgeBase, PropertyRef, TaskDescription};

pub const DEFAULT_MAX_DEPTH: usize = 8;
pub const DEFAULT_MAX_SOLUTIONS: usize = 64;
/// Upper bound on resolutions kept per goal; beyond it the smallest
/// canonical forms are kept and the result is flagged truncated.
pub const PER_GOAL_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SolveOptions {
    pub max_depth: usize,
    pub allow_conversions: bool,
    pub max_solutions: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_depth: DEFAULT_MAX_DEPTH, allow_conversions: true, max_solutions: DEFAULT_MAX_SOLUTIONS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolveOutcome {
    pub solutions: Vec<Solution>,
    /// Some goal still had producers when the depth budget ran out.
    pub depth_truncated: bool,
    /// More solutions existed than `max_solutions` (or than the per-goal limit).
    pub count_truncated: bool,
}

/// Why a task could not be composed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NoSolution {
    pub task_id: String,
    /// Goals that resolved to nothing during the search, sorted.
    pub frontier: Vec<PropertyRef>,
    pub depth_truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no solution for task {}: unresolvable {}", .0.task_id, frontier_names(&.0.frontier))]
    NoSolution(NoSolution),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

fn frontier_names(f: &[PropertyRef]) -> String {
    f.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone)]
struct Candidate {
    node: SolutionNode,
    /// Component functions used anywhere in the subtree, sorted.
    functions: Vec<u32>,
    canonical: String,
}

impl Candidate {
    fn new(node: SolutionNode, functions: Vec<u32>) -> Self {
        let canonical = node.canonical();
        Self { node, functions, canonical }
    }
}

type Resolutions = Rc<Vec<Candidate>>;

struct Search<'a> {
    kb: &'a KnowledgeBase,
    opts: SolveOptions,
    memo: HashMap<(PropertyRef, usize), Resolutions>,
    exact_memo: HashMap<(PropertyRef, usize), Resolutions>,
    reach: HashMap<String, BTreeMap<String, Vec<ConversionStep>>>,
    failed: BTreeSet<PropertyRef>,
    depth_truncated: bool,
    count_truncated: bool,
}

impl<'a> Search<'a> {
    fn new(kb: &'a KnowledgeBase, opts: SolveOptions) -> Self {
        Self {
            kb,
            opts,
            memo: HashMap::new(),
            exact_memo: HashMap::new(),
            reach: HashMap::new(),
            failed: BTreeSet::new(),
            depth_truncated: false,
            count_truncated: false,
        }
    }

    fn source_units(&mut self, goal: &PropertyRef) -> Vec<(String, Vec<ConversionStep>)> {
        if !self.opts.allow_conversions || goal.datatype != Datatype::Double {
            return vec![(goal.unit.clone(), Vec::new())];
        }
        let kb = self.kb;
        let closure = self.reach.entry(goal.unit.clone()).or_insert_with(|| kb.units_convertible_to(&goal.unit));
        closure.iter().map(|(u, chain)| (u.clone(), chain.clone())).collect()
    }

    /// Every way to supply `goal`, using at most `depth` composition levels.
    fn resolve(&mut self, goal: &PropertyRef, depth: usize) -> Resolutions {
        if let Some(hit) = self.memo.get(&(goal.clone(), depth)) {
            return hit.clone();
        }
        let mut out = Vec::new();
        let mut cut_by_depth = false;
        for (unit, chain) in self.source_units(goal) {
            let source = PropertyRef { unit, ..goal.clone() };
            if depth == 0 && self.kb.components_producing(&source).next().is_some() {
                cut_by_depth = true;
            }
            for cand in self.resolve_exact(&source, depth).iter() {
                let mut node = cand.node.clone();
                for step in &chain {
                    node = SolutionNode::converter(step.key(), node);
                }
                out.push(Candidate::new(node, cand.functions.clone()));
            }
        }
        out.sort_by(|a, b| a.canonical.cmp(&b.canonical));
        out.dedup_by(|a, b| a.canonical == b.canonical);
        if out.len() > PER_GOAL_LIMIT {
            out.truncate(PER_GOAL_LIMIT);
            self.count_truncated = true;
        }
        if out.is_empty() && !cut_by_depth {
            self.failed.insert(goal.clone());
        }
        let rc = Rc::new(out);
        self.memo.insert((goal.clone(), depth), rc.clone());
        rc
    }

    /// Resolutions whose top-level output is exactly `prop` (no conversion at the top).
    fn resolve_exact(&mut self, prop: &PropertyRef, depth: usize) -> Resolutions {
        if let Some(hit) = self.exact_memo.get(&(prop.clone(), depth)) {
            return hit.clone();
        }
        let kb = self.kb;
        let mut out = Vec::new();

        let mut sensors = kb.sensors_observing(prop);
        if let Some(first) = sensors.next() {
            let leaf = if sensors.next().is_none() {
                SolutionNode::sensor(first.id.clone(), prop.clone())
            } else {
                SolutionNode::slot(prop.clone())
            };
            out.push(Candidate::new(leaf, Vec::new()));
        }

        let producers: Vec<_> = kb.components_producing(prop).collect();
        if depth == 0 {
            if !producers.is_empty() {
                self.depth_truncated = true;
            }
        } else {
            for comp in producers {
                let mut per_input: Vec<Vec<Candidate>> = Vec::with_capacity(comp.inputs.len());
                for input in &comp.inputs {
                    let options: Vec<Candidate> = self
                        .resolve(input, depth - 1)
                        .iter()
                        .filter(|c| c.functions.binary_search(&comp.function).is_err())
                        .cloned()
                        .collect();
                    // keep resolving the remaining inputs so the failure frontier is complete
                    per_input.push(options);
                }
                if per_input.iter().any(|o| o.is_empty()) {
                    continue;
                }
                self.combine(comp.id.as_str(), comp.function, &per_input, &mut out);
            }
        }
        out.sort_by(|a, b| a.canonical.cmp(&b.canonical));
        out.dedup_by(|a, b| a.canonical == b.canonical);
        let rc = Rc::new(out);
        self.exact_memo.insert((prop.clone(), depth), rc.clone());
        rc
    }

    fn combine(&mut self, id: &str, function: u32, per_input: &[Vec<Candidate>], out: &mut Vec<Candidate>) {
        let mut idx = vec![0usize; per_input.len()];
        let mut produced = 0usize;
        loop {
            if produced >= PER_GOAL_LIMIT {
                self.count_truncated = true;
                return;
            }
            let mut functions = vec![function];
            let children: Vec<SolutionNode> = idx
                .iter()
                .zip(per_input)
                .map(|(&i, opts)| {
                    functions.extend_from_slice(&opts[i].functions);
                    opts[i].node.clone()
                })
                .collect();
            functions.sort_unstable();
            functions.dedup();
            out.push(Candidate::new(SolutionNode::component(id, children), functions));
            produced += 1;

            // odometer increment, last input fastest
            let mut pos = per_input.len();
            loop {
                if pos == 0 {
                    return;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < per_input[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

/// All distinct valid compositions for `task`, sorted by canonical id.
pub fn solve(kb: &KnowledgeBase, task: &TaskDescription, opts: SolveOptions) -> Result<SolveOutcome, PlanError> {
    if opts.max_depth < 1 {
        return Err(PlanError::InvalidOptions("maxDepth must be >= 1".into()));
    }
    if opts.max_solutions < 1 {
        return Err(PlanError::InvalidOptions("maxSolutions must be >= 1".into()));
    }
    let mut search = Search::new(kb, opts);
    let mut per_output = Vec::with_capacity(task.required_outputs.len());
    let mut missing = false;
    for goal in &task.required_outputs {
        let r = search.resolve(goal, opts.max_depth);
        missing |= r.is_empty();
        per_output.push(r);
    }
    if missing {
        return Err(PlanError::NoSolution(NoSolution {
            task_id: task.id.clone(),
            frontier: search.failed.into_iter().collect(),
            depth_truncated: search.depth_truncated,
        }));
    }

    let mut solutions = Vec::new();
    let mut seen = HashSet::new();
    let mut idx = vec![0usize; per_output.len()];
    'outer: loop {
        if solutions.len() >= PER_GOAL_LIMIT {
            search.count_truncated = true;
            break;
        }
        let roots = idx.iter().zip(&per_output).map(|(&i, r)| r[i].node.clone()).collect();
        let s = Solution::new(roots, task.required_outputs.clone());
        if seen.insert(s.canonical_id.clone()) {
            solutions.push(s);
        }
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                break 'outer;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < per_output[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
    solutions.sort_by(|a, b| a.canonical_id.cmp(&b.canonical_id));
    if solutions.len() > opts.max_solutions {
        solutions.truncate(opts.max_solutions);
        search.count_truncated = true;
    }
    Ok(SolveOutcome {
        solutions,
        depth_truncated: search.depth_truncated,
        count_truncated: search.count_truncated,
    })
}

/// Whether `prop` can be supplied at all from `kb` within `opts`.
pub fn producible(kb: &KnowledgeBase, prop: &PropertyRef, opts: SolveOptions) -> bool {
    let mut search = Search::new(kb, opts);
    !search.resolve(prop, opts.max_depth).is_empty()
}
