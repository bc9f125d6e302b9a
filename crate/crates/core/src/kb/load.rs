use std::collections::HashSet;
use std::path::Path;

use serde_json::Value;

use super::{
    check_context, ComponentDescription, Deriver, KbDocument, KbError, KnowledgeBase, PropertyRef,
    SensorDescription, AnswerKind,
};
use crate::registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Unknown keys are a parse error.
    #[default]
    Strict,
    /// Unknown keys are ignored.
    Lax,
}

pub fn load_kb(path: impl AsRef<Path>, mode: ParseMode) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| KbError::Io { path: path.display().to_string(), source })?;
    parse_kb(&text, mode)
}

pub fn parse_kb(text: &str, mode: ParseMode) -> Result<KnowledgeBase, KbError> {
    let doc: KbDocument = serde_json::from_str(text).map_err(|e| KbError::Parse {
        message: e.to_string(),
        line: Some(e.line()),
        column: Some(e.column()),
    })?;
    if mode == ParseMode::Strict {
        let raw: Value = serde_json::from_str(text).expect("already parsed once");
        check_keys(&raw, &TOP, "$")?;
    }
    KnowledgeBase::from_document(doc)
}

/// Allowed-key schema for strict parsing.
enum Shape {
    Obj(&'static [(&'static str, Shape)]),
    List(&'static Shape),
    /// Map with arbitrary keys whose values follow the shape.
    MapOf(&'static Shape),
    Any,
}

const PROP: Shape = Shape::Obj(&[("name", Shape::Any), ("datatype", Shape::Any), ("unit", Shape::Any)]);
const CONTEXT: Shape = Shape::MapOf(&Shape::Obj(&[("value", Shape::Any), ("direction", Shape::Any)]));
const SENSOR: Shape = Shape::Obj(&[
    ("id", Shape::Any),
    ("sensorType", Shape::Any),
    ("observes", PROP),
    ("location", Shape::Any),
    ("context", CONTEXT),
    (
        "wrapper",
        Shape::Obj(&[("generator", Shape::Any), ("params", Shape::Any), ("sampleIntervalMs", Shape::Any)]),
    ),
    (
        "contextOutputs",
        Shape::List(&Shape::Obj(&[("property", PROP), ("deriver", Shape::Any), ("value", Shape::Any)])),
    ),
]);
const COMPONENT: Shape = Shape::Obj(&[
    ("id", Shape::Any),
    ("function", Shape::Any),
    ("inputs", Shape::List(&PROP)),
    ("output", PROP),
    ("context", CONTEXT),
    ("impl", Shape::Any),
    ("params", Shape::Any),
]);
const CONVERSION: Shape = Shape::Obj(&[
    ("fromUnit", Shape::Any),
    ("toUnit", Shape::Any),
    ("scale", Shape::Any),
    ("offset", Shape::Any),
    ("context", CONTEXT),
]);
const TASK: Shape = Shape::Obj(&[
    ("id", Shape::Any),
    ("title", Shape::Any),
    ("requiredOutputs", Shape::List(&PROP)),
    ("conceptBindings", Shape::Any),
]);
const CONCEPT: Shape = Shape::Obj(&[
    ("id", Shape::Any),
    ("name", Shape::Any),
    ("questionId", Shape::Any),
    ("values", Shape::List(&Shape::Obj(&[("id", Shape::Any), ("label", Shape::Any)]))),
]);
const QUESTION: Shape = Shape::Obj(&[
    ("id", Shape::Any),
    ("text", Shape::Any),
    ("answerKind", Shape::Any),
    ("choices", Shape::Any),
]);
const TOP: Shape = Shape::Obj(&[
    ("sensors", Shape::List(&SENSOR)),
    ("components", Shape::List(&COMPONENT)),
    ("conversions", Shape::List(&CONVERSION)),
    ("tasks", Shape::List(&TASK)),
    ("concepts", Shape::List(&CONCEPT)),
    ("questions", Shape::List(&QUESTION)),
    ("contextAggregation", Shape::Any),
]);

fn check_keys(value: &Value, shape: &Shape, path: &str) -> Result<(), KbError> {
    match (shape, value) {
        (Shape::Obj(fields), Value::Object(map)) => {
            for (k, v) in map {
                let Some((_, inner)) = fields.iter().find(|(name, _)| name == k) else {
                    return Err(KbError::Parse {
                        message: format!("unknown key {k:?} at {path}"),
                        line: None,
                        column: None,
                    });
                };
                check_keys(v, inner, &format!("{path}.{k}"))?;
            }
            Ok(())
        }
        (Shape::List(inner), Value::Array(items)) => {
            for (i, v) in items.iter().enumerate() {
                check_keys(v, inner, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        (Shape::MapOf(inner), Value::Object(map)) => {
            for (k, v) in map {
                check_keys(v, inner, &format!("{path}.{k}"))?;
            }
            Ok(())
        }
        // type mismatches were already reported by the typed parse
        _ => Ok(()),
    }
}

fn invalid(owner: impl Into<String>, reason: impl Into<String>) -> KbError {
    KbError::Invalid { owner: owner.into(), reason: reason.into() }
}

fn unique<'a>(collection: &'static str, ids: impl Iterator<Item = &'a str>) -> Result<HashSet<&'a str>, KbError> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(invalid(collection, "empty id"));
        }
        if !seen.insert(id) {
            return Err(KbError::Dup { collection, id: id.to_string() });
        }
    }
    Ok(seen)
}

fn check_prop(owner: &str, p: &PropertyRef) -> Result<(), KbError> {
    p.check().map_err(|r| invalid(owner, r))
}

pub(crate) fn validate_sensor(s: &SensorDescription) -> Result<(), KbError> {
    let owner = format!("sensor {}", s.id);
    if s.sensor_type < 1 {
        return Err(invalid(&owner, "sensorType must be >= 1"));
    }
    check_prop(&owner, &s.observes)?;
    if !s.observes.datatype.is_numeric() {
        return Err(invalid(&owner, "sensors observe double or int properties"));
    }
    check_context(&s.context).map_err(|r| invalid(&owner, r))?;
    s.wrapper.check().map_err(|r| invalid(&owner, r))?;
    for out in &s.context_outputs {
        check_prop(&owner, &out.property)?;
        if out.deriver == Deriver::DerivedStream && out.property.datatype != super::Datatype::Double {
            return Err(invalid(&owner, format!("derived context {} must be double", out.property.name)));
        }
        if out.deriver == Deriver::StaticMetadata && out.property.datatype != super::Datatype::String {
            return Err(invalid(&owner, format!("static context {} must be string", out.property.name)));
        }
    }
    Ok(())
}

pub(crate) fn validate_component(c: &ComponentDescription) -> Result<(), KbError> {
    let owner = format!("component {}", c.id);
    if c.inputs.is_empty() {
        return Err(invalid(&owner, "a component needs at least one input"));
    }
    for p in c.inputs.iter().chain(std::iter::once(&c.output)) {
        check_prop(&owner, p)?;
    }
    check_context(&c.context).map_err(|r| invalid(&owner, r))?;
    let sig = registry::signature(&c.impl_id).ok_or_else(|| KbError::Ref {
        owner: owner.clone(),
        kind: "impl",
        missing: c.impl_id.clone(),
    })?;
    if !sig.arity.accepts(c.inputs.len()) {
        return Err(invalid(&owner, format!("{} takes {} inputs", sig.id, sig.arity)));
    }
    for (i, p) in c.inputs.iter().enumerate() {
        if !sig.input_kind(i).admits(p.datatype) {
            return Err(invalid(&owner, format!("{} cannot take {} as input {i}", sig.id, p.datatype)));
        }
    }
    if sig.output != c.output.datatype {
        return Err(invalid(&owner, format!("{} produces {}, not {}", sig.id, sig.output, c.output.datatype)));
    }
    if let Some((k, _)) = c.params.iter().find(|(_, v)| !v.is_finite()) {
        return Err(invalid(&owner, format!("param {k} is not finite")));
    }
    Ok(())
}

pub(crate) fn validate(doc: &KbDocument) -> Result<(), KbError> {
    unique("sensor", doc.sensors.iter().map(|s| s.id.as_str()))?;
    unique("component", doc.components.iter().map(|c| c.id.as_str()))?;
    unique("task", doc.tasks.iter().map(|t| t.id.as_str()))?;
    let concept_ids = unique("concept", doc.concepts.iter().map(|c| c.id.as_str()))?;
    let question_ids = unique("question", doc.questions.iter().map(|q| q.id.as_str()))?;
    let _ = concept_ids;

    for s in &doc.sensors {
        validate_sensor(s)?;
    }
    for c in &doc.components {
        validate_component(c)?;
    }

    let mut conv_keys = HashSet::new();
    for c in &doc.conversions {
        let owner = format!("conversion {}", c.key());
        if c.from_unit.is_empty() || c.to_unit.is_empty() || c.from_unit == c.to_unit {
            return Err(invalid(&owner, "needs two distinct non-empty units"));
        }
        if c.scale == 0.0 || !c.scale.is_finite() || !c.offset.is_finite() {
            return Err(invalid(&owner, "scale must be finite and non-zero, offset finite"));
        }
        check_context(&c.cost_context).map_err(|r| invalid(&owner, r))?;
        let mut pair = [c.from_unit.as_str(), c.to_unit.as_str()];
        pair.sort();
        if !conv_keys.insert((pair[0], pair[1], c.from_unit.as_str())) {
            return Err(KbError::Dup { collection: "conversion", id: c.key() });
        }
    }

    for q in &doc.questions {
        let owner = format!("question {}", q.id);
        if q.text.trim().is_empty() {
            return Err(invalid(&owner, "empty text"));
        }
        if q.answer_kind == AnswerKind::Choice && q.choices.is_empty() {
            return Err(invalid(&owner, "choice question without choices"));
        }
    }

    for c in &doc.concepts {
        let owner = format!("concept {}", c.id);
        if !question_ids.contains(c.question_id.as_str()) {
            return Err(KbError::Ref { owner, kind: "question", missing: c.question_id.clone() });
        }
        if c.values.is_empty() {
            return Err(invalid(&owner, "no values"));
        }
        unique("concept value", c.values.iter().map(|v| v.id.as_str()))?;
    }

    for q in doc.questions.iter().filter(|q| q.answer_kind == AnswerKind::Choice) {
        for choice in &q.choices {
            let known = doc
                .concepts
                .iter()
                .filter(|c| c.question_id == q.id)
                .any(|c| c.values.iter().any(|v| &v.id == choice));
            if !known {
                return Err(KbError::Ref {
                    owner: format!("question {}", q.id),
                    kind: "concept value",
                    missing: choice.clone(),
                });
            }
        }
    }

    for t in &doc.tasks {
        let owner = format!("task {}", t.id);
        if t.required_outputs.is_empty() {
            return Err(invalid(&owner, "no required outputs"));
        }
        for p in &t.required_outputs {
            check_prop(&owner, p)?;
        }
        for (concept_id, value_id) in &t.concept_bindings {
            let concept = doc.concepts.iter().find(|c| &c.id == concept_id).ok_or_else(|| KbError::Ref {
                owner: owner.clone(),
                kind: "concept",
                missing: concept_id.clone(),
            })?;
            if !concept.values.iter().any(|v| &v.id == value_id) {
                return Err(KbError::Ref { owner: owner.clone(), kind: "concept value", missing: value_id.clone() });
            }
        }
    }
    Ok(())
}
