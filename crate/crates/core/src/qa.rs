//! Guided task selection: questions narrow the task catalog until the user
//! can pick one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{AnswerKind, KnowledgeBase, Question, TaskDescription};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QaError {
    #[error("the knowledge base has no tasks")]
    EmptyCatalog,
    #[error("unknown question {0:?}")]
    UnknownQuestion(String),
    #[error("question {0:?} was already answered")]
    AlreadyAnswered(String),
    #[error("{value:?} is not a choice of question {question}")]
    IllegalChoice { question: String, value: String },
    #[error("task {0:?} is not among the remaining tasks")]
    NotInFilteredSet(String),
}

/// Answers given so far and the tasks still consistent with them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DialogState {
    pub answers: BTreeMap<String, String>,
    pub remaining_tasks: Vec<String>,
}

pub fn start_dialog(kb: &KnowledgeBase) -> Result<DialogState, QaError> {
    if kb.tasks().is_empty() {
        return Err(QaError::EmptyCatalog);
    }
    Ok(DialogState {
        answers: BTreeMap::new(),
        remaining_tasks: kb.tasks().iter().map(|t| t.id.clone()).collect(),
    })
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Whether `task` agrees with answering `value` to `question`. A task that
/// does not bind the question's concept agrees with every answer.
pub fn consistent(kb: &KnowledgeBase, task: &TaskDescription, question: &Question, value: &str) -> bool {
    kb.concepts_for_question(&question.id).all(|concept| {
        let Some(bound) = task.concept_bindings.get(&concept.id) else {
            return true;
        };
        match question.answer_kind {
            AnswerKind::Choice => bound == value,
            AnswerKind::FreeText => {
                let wanted = normalize(value);
                normalize(bound) == wanted
                    || concept
                        .values
                        .iter()
                        .any(|v| &v.id == bound && normalize(&v.label) == wanted)
            }
        }
    })
}

/// Binding signature of a task for a question: the value bound for each of
/// the question's concepts (`None` when unbound).
fn partition_key(kb: &KnowledgeBase, task: &TaskDescription, question: &Question) -> Vec<Option<String>> {
    kb.concepts_for_question(&question.id)
        .map(|c| task.concept_bindings.get(&c.id).cloned())
        .collect()
}

/// Shannon entropy (bits) of the partition `question` induces on the remaining tasks.
pub fn split_entropy(kb: &KnowledgeBase, state: &DialogState, question: &Question) -> f64 {
    let mut blocks: BTreeMap<Vec<Option<String>>, usize> = BTreeMap::new();
    for id in &state.remaining_tasks {
        if let Some(task) = kb.task(id) {
            *blocks.entry(partition_key(kb, task, question)).or_default() += 1;
        }
    }
    let n: usize = blocks.values().sum();
    if n == 0 {
        return 0.0;
    }
    blocks
        .values()
        .map(|&k| {
            let p = k as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

/// Up to `k` unanswered questions that still split the remaining tasks,
/// best split first, ties by question id.
pub fn next_questions<'a>(kb: &'a KnowledgeBase, state: &DialogState, k: usize) -> Vec<&'a Question> {
    let mut scored: Vec<(f64, &Question)> = kb
        .questions()
        .iter()
        .filter(|q| !state.answers.contains_key(&q.id))
        .map(|q| (split_entropy(kb, state, q), q))
        .filter(|(h, _)| *h > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    scored.into_iter().take(k).map(|(_, q)| q).collect()
}

pub fn answer(kb: &KnowledgeBase, state: &DialogState, question_id: &str, value: &str) -> Result<DialogState, QaError> {
    let question = kb
        .question(question_id)
        .ok_or_else(|| QaError::UnknownQuestion(question_id.to_string()))?;
    if state.answers.contains_key(question_id) {
        return Err(QaError::AlreadyAnswered(question_id.to_string()));
    }
    if question.answer_kind == AnswerKind::Choice && !question.choices.iter().any(|c| c == value) {
        return Err(QaError::IllegalChoice { question: question_id.to_string(), value: value.to_string() });
    }
    let mut next = state.clone();
    next.answers.insert(question_id.to_string(), value.to_string());
    next.remaining_tasks
        .retain(|id| kb.task(id).is_some_and(|t| consistent(kb, t, question, value)));
    Ok(next)
}

pub fn select_task<'a>(kb: &'a KnowledgeBase, state: &DialogState, task_id: &str) -> Result<&'a TaskDescription, QaError> {
    if !state.remaining_tasks.iter().any(|t| t == task_id) {
        return Err(QaError::NotInFilteredSet(task_id.to_string()));
    }
    kb.task(task_id).ok_or_else(|| QaError::NotInFilteredSet(task_id.to_string()))
}
