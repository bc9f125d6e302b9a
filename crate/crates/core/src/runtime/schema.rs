//! JSON Schema documents describing stream items.

use serde_json::{json, Map, Value as Json};

use super::PipelineDefinition;
use crate::kb::Datatype;

fn type_of(d: Datatype) -> &'static str {
    match d {
        Datatype::Double => "number",
        Datatype::Int => "integer",
        Datatype::Boolean => "boolean",
        Datatype::String => "string",
    }
}

/// Schema of the error record a node failure turns into.
pub fn error_record_schema() -> Json {
    json!({
        "type": "object",
        "required": ["timestampMs", "error"],
        "additionalProperties": false,
        "properties": {
            "timestampMs": { "type": "integer", "minimum": 0 },
            "error": {
                "type": "object",
                "required": ["code", "node", "message"],
                "additionalProperties": false,
                "properties": {
                    "code": { "type": "string", "enum": ["impl-error", "impl-panic"] },
                    "node": { "type": "string" },
                    "message": { "type": "string" }
                }
            }
        }
    })
}

/// Schema of one data record of `def`: `timestampMs` followed by the exported fields.
pub fn record_schema(def: &PipelineDefinition) -> Json {
    let mut props = Map::new();
    props.insert("timestampMs".into(), json!({ "type": "integer", "minimum": 0 }));
    let mut required = vec![Json::from("timestampMs")];
    for out in &def.outputs {
        let ty = type_of(out.datatype);
        // a double that is not finite serializes as null
        let schema = if out.datatype == Datatype::Double { json!({ "type": [ty, "null"] }) } else { json!({ "type": ty }) };
        props.insert(out.name.clone(), schema);
        required.push(Json::from(out.name.clone()));
    }
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": format!("{} stream item", def.id),
        "oneOf": [
            {
                "type": "object",
                "required": required,
                "additionalProperties": false,
                "properties": props,
                "x-field-order": Json::Array(required.clone()),
            },
            error_record_schema()
        ]
    })
}
