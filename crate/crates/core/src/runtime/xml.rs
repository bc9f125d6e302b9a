//! XML form of a pipeline definition (the virtual-sensor document).

use std::collections::BTreeMap;

use quick_xml::events::{BytesEnd, BytesStart, Event};
use quick_xml::{Reader, Writer};
use thiserror::Error;

use super::{ExecMode, FieldRef, NodeDef, OutputField, PipelineDefinition, SourceDef};
use crate::kb::{Datatype, Generator, PropertyRef, WrapperBinding};

#[derive(Debug, Error)]
pub enum XmlError {
    #[error("malformed XML at byte {position}: {message}")]
    Syntax { position: u64, message: String },
    #[error("<{element}> is missing attribute {attribute:?}")]
    Missing { element: String, attribute: String },
    #[error("unexpected <{0}>")]
    Unexpected(String),
    #[error("invalid value {value:?} for {attribute:?}")]
    Invalid { attribute: String, value: String },
}

fn generator_name(g: Generator) -> &'static str {
    match g {
        Generator::Constant => "constant",
        Generator::Sine => "sine",
        Generator::UniformRandom => "uniform-random",
        Generator::TraceFile => "trace-file",
    }
}

fn parse_generator(s: &str) -> Option<Generator> {
    Some(match s {
        "constant" => Generator::Constant,
        "sine" => Generator::Sine,
        "uniform-random" => Generator::UniformRandom,
        "trace-file" => Generator::TraceFile,
        _ => return None,
    })
}

fn element<'a>(name: &'a str, attrs: &[(&str, &str)]) -> BytesStart<'a> {
    let mut e = BytesStart::new(name);
    for a in attrs {
        e.push_attribute(*a);
    }
    e
}

/// Renders the definition as an indented XML document.
pub fn to_xml(def: &PipelineDefinition) -> String {
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    let mut emit = |ev: Event| w.write_event(ev).expect("writing to memory");

    emit(Event::Start(element(
        "virtual-sensor",
        &[("name", &def.id), ("solution", &def.solution_canonical_id), ("mode", def.mode.as_str())],
    )));

    emit(Event::Start(BytesStart::new("sources")));
    for s in &def.sources {
        let interval = s.wrapper.sample_interval_ms.to_string();
        emit(Event::Start(element(
            "source",
            &[
                ("sensor-id", &s.sensor_id),
                ("generator", generator_name(s.wrapper.generator)),
                ("interval-ms", &interval),
                ("property", &s.observes.name),
                ("datatype", s.observes.datatype.as_str()),
                ("unit", &s.observes.unit),
            ],
        )));
        for (k, v) in &s.wrapper.params {
            match v {
                serde_json::Value::String(text) => {
                    emit(Event::Empty(element("param", &[("name", k), ("value", text), ("type", "string")])))
                }
                other => emit(Event::Empty(element("param", &[("name", k), ("value", &other.to_string())]))),
            }
        }
        for (k, v) in &s.metadata {
            emit(Event::Empty(element("meta", &[("name", k), ("value", v)])));
        }
        emit(Event::End(BytesEnd::new("source")));
    }
    emit(Event::End(BytesEnd::new("sources")));

    emit(Event::Start(BytesStart::new("processing")));
    for n in &def.nodes {
        emit(Event::Start(element(
            "node",
            &[
                ("id", &n.node_id),
                ("impl", &n.impl_id),
                ("output", &n.output.name),
                ("datatype", n.output.datatype.as_str()),
                ("unit", &n.output.unit),
            ],
        )));
        for (k, v) in &n.params {
            emit(Event::Empty(element("param", &[("name", k), ("value", &v.to_string())])));
        }
        for i in &n.inputs {
            emit(Event::Empty(element("input", &[("from", &i.from), ("field", &i.field)])));
        }
        emit(Event::End(BytesEnd::new("node")));
    }
    emit(Event::End(BytesEnd::new("processing")));

    emit(Event::Start(BytesStart::new("output")));
    for o in &def.outputs {
        emit(Event::Empty(element(
            "field",
            &[("from", &o.from), ("field", &o.field), ("name", &o.name), ("type", o.datatype.as_str())],
        )));
    }
    emit(Event::End(BytesEnd::new("output")));
    emit(Event::End(BytesEnd::new("virtual-sensor")));

    String::from_utf8(w.into_inner()).expect("XML output is UTF-8")
}

struct Attrs {
    element: String,
    map: BTreeMap<String, String>,
}

impl Attrs {
    fn read(e: &BytesStart, position: u64) -> Result<Self, XmlError> {
        let element = String::from_utf8_lossy(e.name().as_ref()).into_owned();
        let mut map = BTreeMap::new();
        for a in e.attributes() {
            let a = a.map_err(|err| XmlError::Syntax { position, message: err.to_string() })?;
            let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
            let value = a.unescape_value().map_err(|err| XmlError::Syntax { position, message: err.to_string() })?;
            map.insert(key, value.into_owned());
        }
        Ok(Self { element, map })
    }

    fn get(&self, key: &str) -> Result<&str, XmlError> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| XmlError::Missing { element: self.element.clone(), attribute: key.to_string() })
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, XmlError> {
        let v = self.get(key)?;
        v.parse().map_err(|_| XmlError::Invalid { attribute: key.to_string(), value: v.to_string() })
    }

    fn datatype(&self, key: &str) -> Result<Datatype, XmlError> {
        let v = self.get(key)?;
        Datatype::parse(v).ok_or_else(|| XmlError::Invalid { attribute: key.to_string(), value: v.to_string() })
    }
}

/// Parses a document produced by [`to_xml`].
pub fn from_xml(text: &str) -> Result<PipelineDefinition, XmlError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);

    let mut def: Option<PipelineDefinition> = None;
    let mut source: Option<SourceDef> = None;
    let mut node: Option<NodeDef> = None;

    loop {
        let position = reader.buffer_position();
        let event = reader.read_event().map_err(|e| XmlError::Syntax { position, message: e.to_string() })?;
        let (start, is_empty) = match &event {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            Event::End(e) => {
                match e.name().as_ref() {
                    b"source" => {
                        if let (Some(d), Some(s)) = (def.as_mut(), source.take()) {
                            d.sources.push(s);
                        }
                    }
                    b"node" => {
                        if let (Some(d), Some(n)) = (def.as_mut(), node.take()) {
                            d.nodes.push(n);
                        }
                    }
                    _ => {}
                }
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let Some(e) = start else { continue };
        let a = Attrs::read(&e, position)?;
        match a.element.as_str() {
            "virtual-sensor" => {
                let mode = a.get("mode")?;
                def = Some(PipelineDefinition {
                    id: a.get("name")?.to_string(),
                    solution_canonical_id: a.get("solution")?.to_string(),
                    sources: Vec::new(),
                    nodes: Vec::new(),
                    outputs: Vec::new(),
                    mode: ExecMode::parse(mode)
                        .ok_or_else(|| XmlError::Invalid { attribute: "mode".into(), value: mode.to_string() })?,
                });
            }
            "sources" | "processing" | "output" => {}
            "source" => {
                let g = a.get("generator")?;
                let generator = parse_generator(g)
                    .ok_or_else(|| XmlError::Invalid { attribute: "generator".into(), value: g.to_string() })?;
                let s = SourceDef {
                    sensor_id: a.get("sensor-id")?.to_string(),
                    observes: PropertyRef::new(a.get("property")?, a.datatype("datatype")?, a.get("unit")?),
                    wrapper: WrapperBinding { generator, params: BTreeMap::new(), sample_interval_ms: a.parsed("interval-ms")? },
                    metadata: BTreeMap::new(),
                };
                if is_empty {
                    def.as_mut().ok_or_else(|| XmlError::Unexpected("source".into()))?.sources.push(s);
                } else {
                    source = Some(s);
                }
            }
            "meta" => {
                let s = source.as_mut().ok_or_else(|| XmlError::Unexpected("meta".into()))?;
                s.metadata.insert(a.get("name")?.to_string(), a.get("value")?.to_string());
            }
            "param" => {
                let name = a.get("name")?.to_string();
                let raw = a.get("value")?;
                if let Some(n) = node.as_mut() {
                    n.params.insert(name, a.parsed("value")?);
                } else if let Some(s) = source.as_mut() {
                    let value = if a.map.get("type").map(String::as_str) == Some("string") {
                        serde_json::Value::String(raw.to_string())
                    } else {
                        serde_json::from_str(raw)
                            .map_err(|_| XmlError::Invalid { attribute: "value".into(), value: raw.to_string() })?
                    };
                    s.wrapper.params.insert(name, value);
                } else {
                    return Err(XmlError::Unexpected("param".into()));
                }
            }
            "node" => {
                let n = NodeDef {
                    node_id: a.get("id")?.to_string(),
                    impl_id: a.get("impl")?.to_string(),
                    params: BTreeMap::new(),
                    inputs: Vec::new(),
                    output: PropertyRef::new(a.get("output")?, a.datatype("datatype")?, a.get("unit")?),
                };
                if is_empty {
                    def.as_mut().ok_or_else(|| XmlError::Unexpected("node".into()))?.nodes.push(n);
                } else {
                    node = Some(n);
                }
            }
            "input" => {
                let n = node.as_mut().ok_or_else(|| XmlError::Unexpected("input".into()))?;
                n.inputs.push(FieldRef::new(a.get("from")?, a.get("field")?));
            }
            "field" => {
                let d = def.as_mut().ok_or_else(|| XmlError::Unexpected("field".into()))?;
                d.outputs.push(OutputField {
                    from: a.get("from")?.to_string(),
                    field: a.get("field")?.to_string(),
                    name: a.get("name")?.to_string(),
                    datatype: a.datatype("type")?,
                });
            }
            other => return Err(XmlError::Unexpected(other.to_string())),
        }
    }
    def.ok_or_else(|| XmlError::Missing { element: "document".into(), attribute: "virtual-sensor".into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::context::{attach_context, discover_context};
    use crate::planner::{solve, SolveOptions};
    use crate::runtime::{generate, run, Projection, RunLimit};

    #[test]
    fn round_trip_preserves_every_bundled_definition() {
        let kb = bundled::use_case_kb();
        for task in kb.tasks() {
            for s in solve(&kb, task, SolveOptions::default()).unwrap().solutions {
                let s = attach_context(&kb, &s, &discover_context(&kb, &s)).unwrap();
                for mode in [ExecMode::Precompiled, ExecMode::DynamicDispatch] {
                    let def = generate(&kb, &s, &Projection::All, mode).unwrap();
                    let xml = to_xml(&def);
                    let back = from_xml(&xml).unwrap();
                    assert_eq!(back, def);
                    assert_eq!(run(&back, RunLimit::Records(5)).unwrap(), run(&def, RunLimit::Records(5)).unwrap());
                }
            }
        }
    }

    #[test]
    fn document_uses_the_virtual_sensor_vocabulary() {
        let kb = bundled::use_case_kb();
        let s = solve(&kb, kb.task("T1-phytophtora").unwrap(), SolveOptions::default()).unwrap().solutions.remove(0);
        let xml = to_xml(&generate(&kb, &s, &Projection::Required, ExecMode::Precompiled).unwrap());
        assert!(xml.starts_with("<virtual-sensor name=\"vs-"));
        assert!(xml.contains("<source sensor-id=\"S1\" generator=\"sine\" interval-ms=\"1000\""));
        assert!(xml.contains("<node id=\"C1_1\" impl=\"thresholdAirStress\""));
        assert!(xml.contains("<param name=\"alpha\" value=\"30\"/>"));
        assert!(xml.contains("<input from=\"S1\" field=\"airTemperature\"/>"));
        assert!(xml.contains("<field from=\"C1_2\" field=\"PhytophtoraDisease\" name=\"PhytophtoraDisease\" type=\"boolean\"/>"));
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(matches!(from_xml("<virtual-sensor name=\"x\">"), Err(XmlError::Missing { .. })));
        assert!(matches!(from_xml("<bogus/>"), Err(XmlError::Unexpected(_))));
        assert!(from_xml("").is_err());
        let bad_mode = "<virtual-sensor name=\"a\" solution=\"b\" mode=\"jit\"></virtual-sensor>";
        assert!(matches!(from_xml(bad_mode), Err(XmlError::Invalid { .. })));
    }
}
