//! The knowledge base shipped with the crate: two reference tasks
//! (Phytophtora detection, air pollution index) over eight sensors.

use crate::kb::{parse_kb, KbDocument, KnowledgeBase, ParseMode};

pub const USE_CASE_KB_JSON: &str = include_str!("../data/use-cases.kb.json");

pub fn use_case_kb() -> KnowledgeBase {
    parse_kb(USE_CASE_KB_JSON, ParseMode::Strict).expect("bundled KB is valid")
}

fn rebuilt(kb: &KnowledgeBase, edit: impl FnOnce(&mut KbDocument)) -> KnowledgeBase {
    let mut doc = kb.document().clone();
    edit(&mut doc);
    KnowledgeBase::from_document(doc).expect("removal keeps the KB valid")
}

/// Copy of `kb` without the named sensor.
pub fn without_sensor(kb: &KnowledgeBase, id: &str) -> KnowledgeBase {
    rebuilt(kb, |d| d.sensors.retain(|s| s.id != id))
}

/// Copy of `kb` without the named component.
pub fn without_component(kb: &KnowledgeBase, id: &str) -> KnowledgeBase {
    rebuilt(kb, |d| d.components.retain(|c| c.id != id))
}
