use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::advisor::{advise, GapReport};
use crate::context::{attach_context, discover_context, ContextOffer};
use crate::cost::{rank_solutions, PriorityVector};
use crate::kb::{KnowledgeBase, Question, TaskDescription};
use crate::planner::{ground_sensors, solve, Grounding, PlanError, Solution, SolveOptions};
use crate::qa::{self, DialogState};
use crate::runtime::{generate, ExecMode, PipelineDefinition, Projection};

/// Idle time after which a session is dropped.
pub const SESSION_TTL: Duration = Duration::from_secs(30 * 60);
/// Records streamed by a deployment that does not say otherwise.
pub const DEFAULT_RECORDS: usize = 100;

/// Workflow phase, numbered after the configuration model's six phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Requirements,
    TaskSelected,
    Solved,
    Advised,
    ContextAccepted,
    Deployed,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Requirements => 1,
            Phase::TaskSelected => 2,
            Phase::Solved => 3,
            Phase::Advised => 4,
            Phase::ContextAccepted => 5,
            Phase::Deployed => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Requirements => "requirements",
            Phase::TaskSelected => "task-selected",
            Phase::Solved => "solved",
            Phase::Advised => "advised",
            Phase::ContextAccepted => "context-accepted",
            Phase::Deployed => "deployed",
        }
    }

    fn has_solutions(self) -> bool {
        matches!(self, Phase::Solved | Phase::ContextAccepted | Phase::Deployed)
    }
}

/// Picks one context offer of a solution by sensor and property name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSelector {
    pub source: String,
    pub property: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct DeployRequest {
    /// Canonical id of the solution to deploy; defaults to the chosen one.
    pub solution: Option<String>,
    /// Records the stream emits; 0 means unbounded.
    pub records: Option<usize>,
    /// Pace the stream by pipeline time instead of emitting as fast as possible.
    pub realtime: bool,
    pub mode: Option<ExecMode>,
    pub projection: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Deployment {
    pub pipeline_id: String,
    pub records: usize,
    pub realtime: bool,
    pub definition: PipelineDefinition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SolutionsView {
    pub task_id: String,
    pub priorities: PriorityVector,
    /// Best first.
    pub solutions: Vec<Solution>,
    pub depth_truncated: bool,
    pub count_truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub session_id: String,
    pub phase: Phase,
    pub phase_number: u8,
    pub dialog: DialogState,
    pub selected_task: Option<String>,
    pub priorities: PriorityVector,
    pub solution_count: usize,
    pub chosen_solution: Option<String>,
    pub accepted_context: Vec<ContextOffer>,
    pub deployed_pipeline_id: Option<String>,
    pub kb_version: Option<u64>,
}

/// One user's way through the workflow. Every operation checks the phase
/// before touching state, so a rejected call leaves the session unchanged.
#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    phase: Phase,
    dialog: DialogState,
    selected_task: Option<String>,
    priorities: PriorityVector,
    kb: Option<Arc<KnowledgeBase>>,
    candidates: Vec<Solution>,
    ranked: Vec<Solution>,
    depth_truncated: bool,
    count_truncated: bool,
    gap: Option<GapReport>,
    chosen: Option<(String, Solution)>,
    deployed: Option<String>,
    last_active: Instant,
}

impl Session {
    pub fn new(id: impl Into<String>, kb: &KnowledgeBase) -> Result<Self, ServiceError> {
        Ok(Session {
            id: id.into(),
            phase: Phase::Requirements,
            dialog: qa::start_dialog(kb)?,
            selected_task: None,
            priorities: PriorityVector::equal(),
            kb: None,
            candidates: Vec::new(),
            ranked: Vec::new(),
            depth_truncated: false,
            count_truncated: false,
            gap: None,
            chosen: None,
            deployed: None,
            last_active: Instant::now(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn touch(&mut self) {
        self.last_active = Instant::now();
    }

    pub fn idle_for(&self) -> Duration {
        self.last_active.elapsed()
    }

    pub fn chosen(&self) -> Option<&Solution> {
        self.chosen.as_ref().map(|(_, s)| s)
    }

    fn violation(&self, action: &'static str, needed: &'static str) -> ServiceError {
        ServiceError::Phase { action, phase: self.phase.as_str(), needed }
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            phase: self.phase,
            phase_number: self.phase.number(),
            dialog: self.dialog.clone(),
            selected_task: self.selected_task.clone(),
            priorities: self.priorities.clone(),
            solution_count: self.ranked.len(),
            chosen_solution: self.chosen().map(|s| s.canonical_id.clone()),
            accepted_context: self.chosen().map(|s| s.context.clone()).unwrap_or_default(),
            deployed_pipeline_id: self.deployed.clone(),
            kb_version: self.kb.as_ref().map(|k| k.version()),
        }
    }

    pub fn questions(&self, kb: &KnowledgeBase, k: usize) -> Vec<Question> {
        if self.phase != Phase::Requirements {
            return Vec::new();
        }
        qa::next_questions(kb, &self.dialog, k).into_iter().cloned().collect()
    }

    pub fn answer(&mut self, kb: &KnowledgeBase, question: &str, value: &str) -> Result<&DialogState, ServiceError> {
        if self.phase != Phase::Requirements {
            return Err(self.violation("answer", "answers are only taken before a task is selected"));
        }
        self.dialog = qa::answer(kb, &self.dialog, question, value)?;
        Ok(&self.dialog)
    }

    /// Tasks still consistent with the answers, in catalog order.
    pub fn tasks(&self, kb: &KnowledgeBase) -> Vec<TaskDescription> {
        self.dialog.remaining_tasks.iter().filter_map(|id| kb.task(id)).cloned().collect()
    }

    /// Selects a task; anything derived from an earlier selection is discarded.
    pub fn select_task(&mut self, kb: &KnowledgeBase, task: &str) -> Result<(), ServiceError> {
        qa::select_task(kb, &self.dialog, task)?;
        self.selected_task = Some(task.to_string());
        self.kb = None;
        self.candidates.clear();
        self.ranked.clear();
        self.gap = None;
        self.chosen = None;
        self.deployed = None;
        self.phase = Phase::TaskSelected;
        Ok(())
    }

    /// Composes, grounds and ranks solutions for the selected task against
    /// `kb`, which stays pinned to the session until the next solve. A failed
    /// search moves the session to the advice phase and returns the report.
    pub fn solve(&mut self, kb: Arc<KnowledgeBase>, opts: SolveOptions) -> Result<SolutionsView, ServiceError> {
        let Some(task_id) = self.selected_task.clone() else {
            return Err(self.violation("solve", "select a task first"));
        };
        let task = kb.task(&task_id).ok_or_else(|| ServiceError::NotFound { kind: "task", id: task_id.clone() })?;
        match solve(&kb, task, opts) {
            Ok(outcome) => {
                let ranked = rank_grounded(&kb, &outcome.solutions, &self.priorities)?;
                self.candidates = outcome.solutions;
                self.ranked = ranked;
                self.depth_truncated = outcome.depth_truncated;
                self.count_truncated = outcome.count_truncated;
                self.gap = None;
                self.chosen = None;
                self.deployed = None;
                self.kb = Some(kb);
                self.phase = Phase::Solved;
                self.solutions()
            }
            Err(PlanError::NoSolution(failure)) => {
                let report = advise(&kb, task, &failure, opts)?;
                self.candidates.clear();
                self.ranked.clear();
                self.chosen = None;
                self.deployed = None;
                self.gap = Some(report.clone());
                self.kb = Some(kb);
                self.phase = Phase::Advised;
                Err(ServiceError::NoSolution { task: task_id, report })
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn solutions(&self) -> Result<SolutionsView, ServiceError> {
        if !self.phase.has_solutions() {
            return Err(self.violation("solutions", "solve the selected task first"));
        }
        Ok(SolutionsView {
            task_id: self.selected_task.clone().unwrap_or_default(),
            priorities: self.priorities.clone(),
            solutions: self.ranked.clone(),
            depth_truncated: self.depth_truncated,
            count_truncated: self.count_truncated,
        })
    }

    /// Replaces the priorities and re-ranks existing solutions without a new search.
    pub fn set_priorities(&mut self, priorities: PriorityVector) -> Result<Option<SolutionsView>, ServiceError> {
        priorities.normalized(&Default::default())?;
        match (&self.kb, self.phase.has_solutions()) {
            (Some(kb), true) => {
                self.ranked = rank_grounded(kb, &self.candidates, &priorities)?;
                self.priorities = priorities;
                self.solutions().map(Some)
            }
            _ => {
                self.priorities = priorities;
                Ok(None)
            }
        }
    }

    pub fn advice(&self) -> Result<&GapReport, ServiceError> {
        match (&self.gap, self.phase) {
            (Some(report), Phase::Advised) => Ok(report),
            _ => Err(self.violation("advice", "advice exists only after a failed solve")),
        }
    }

    fn find(&self, id: Option<&str>, action: &'static str) -> Result<Solution, ServiceError> {
        if !self.phase.has_solutions() {
            return Err(self.violation(action, "solve the selected task first"));
        }
        match id {
            None => self
                .chosen()
                .or(self.ranked.first())
                .cloned()
                .ok_or_else(|| self.violation(action, "choose a solution first")),
            Some(id) => {
                if let Some((base, chosen)) = &self.chosen {
                    if chosen.canonical_id == id || base == id {
                        return Ok(chosen.clone());
                    }
                }
                self.ranked
                    .iter()
                    .find(|s| s.canonical_id == id)
                    .cloned()
                    .ok_or_else(|| ServiceError::UnknownSolution(id.to_string()))
            }
        }
    }

    fn base_of(&self, id: Option<&str>) -> Result<Solution, ServiceError> {
        let sol = self.find(id, "context")?;
        let base = self.chosen.as_ref().filter(|(_, c)| c.canonical_id == sol.canonical_id).map(|(b, _)| b.clone());
        match base {
            Some(b) => self.ranked.iter().find(|s| s.canonical_id == b).cloned().ok_or(ServiceError::UnknownSolution(b)),
            None => Ok(sol),
        }
    }

    /// Context offers of a solution (the chosen one, else the best ranked).
    pub fn context_offers(&self, solution: Option<&str>) -> Result<(String, Vec<ContextOffer>), ServiceError> {
        let base = self.base_of(solution)?;
        let kb = self.kb.as_ref().expect("solved sessions pin a KB");
        Ok((base.canonical_id.clone(), discover_context(kb, &base)))
    }

    /// Chooses a solution and attaches the selected context offers to it.
    pub fn accept_context(&mut self, solution: Option<&str>, accept: &[ContextSelector]) -> Result<&Solution, ServiceError> {
        let base = self.base_of(solution)?;
        let kb = self.kb.clone().expect("solved sessions pin a KB");
        let offers = discover_context(&kb, &base);
        let picked = accept
            .iter()
            .map(|sel| {
                offers.iter().find(|o| o.source == sel.source && o.property.name == sel.property).cloned().ok_or_else(
                    || crate::context::ContextError::OfferMismatch {
                        sensor: sel.source.clone(),
                        property: sel.property.clone(),
                    },
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let with_context = attach_context(&kb, &base, &picked)?;
        self.chosen = Some((base.canonical_id.clone(), with_context));
        self.deployed = None;
        self.phase = Phase::ContextAccepted;
        Ok(self.chosen().expect("just chosen"))
    }

    /// Generates the pipeline for the requested (or chosen) solution. The
    /// caller names the pipeline from its definition.
    pub fn deploy(
        &mut self,
        req: &DeployRequest,
        name: impl FnOnce(&PipelineDefinition) -> String,
    ) -> Result<Deployment, ServiceError> {
        if !self.phase.has_solutions() {
            return Err(self.violation("deploy", "solve the selected task first"));
        }
        if req.solution.is_none() && self.chosen.is_none() {
            return Err(self.violation("deploy", "choose a solution first"));
        }
        let sol = self.find(req.solution.as_deref(), "deploy")?;
        let kb = self.kb.as_ref().expect("solved sessions pin a KB");
        let projection = req.projection.clone().unwrap_or_default();
        let definition = generate(kb, &sol, &projection, req.mode.unwrap_or(ExecMode::Precompiled))?;
        let pipeline_id = name(&definition);
        if self.chosen.as_ref().is_none_or(|(_, c)| c.canonical_id != sol.canonical_id) {
            self.chosen = Some((sol.canonical_id.clone(), sol));
        }
        self.deployed = Some(pipeline_id.clone());
        self.phase = Phase::Deployed;
        Ok(Deployment {
            pipeline_id,
            records: req.records.unwrap_or(DEFAULT_RECORDS),
            realtime: req.realtime,
            definition,
        })
    }
}

/// Grounds every candidate with the best sensor per slot, drops duplicates and ranks the rest.
pub fn rank_grounded(kb: &KnowledgeBase, candidates: &[Solution], priorities: &PriorityVector) -> Result<Vec<Solution>, ServiceError> {
    let mut grounded: Vec<Solution> = Vec::new();
    for c in candidates {
        for g in ground_sensors(kb, c, Grounding::BestPerSlot, priorities)? {
            if !grounded.iter().any(|s| s.canonical_id == g.canonical_id) {
                grounded.push(g);
            }
        }
    }
    Ok(rank_solutions(kb, &grounded, priorities)?)
}
