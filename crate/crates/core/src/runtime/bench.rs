//! Precompiled versus dynamic-dispatch execution timing.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::exec::{Executor, RunError, RunLimit};
use super::{ExecMode, FieldRef, NodeDef, OutputField, PipelineDefinition, SourceDef};
use crate::kb::{Datatype, Generator, PropertyRef, WrapperBinding};
use crate::registry::WEIGHTED_AVERAGE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModeTiming {
    pub init_ms: f64,
    pub per_row_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModeBenchmark {
    pub n_ops: usize,
    pub rows: usize,
    pub trials: usize,
    pub precompiled: ModeTiming,
    pub dynamic_dispatch: ModeTiming,
    pub outputs_identical: bool,
}

fn random_source(id: &str, seed: u64) -> SourceDef {
    let mut params = BTreeMap::new();
    params.insert("seed".to_string(), serde_json::json!(seed));
    params.insert("min".to_string(), serde_json::json!(0.0));
    params.insert("max".to_string(), serde_json::json!(100.0));
    SourceDef {
        sensor_id: id.to_string(),
        observes: PropertyRef::new("value", Datatype::Double, "none"),
        wrapper: WrapperBinding { generator: Generator::UniformRandom, params, sample_interval_ms: 1 },
        metadata: BTreeMap::new(),
    }
}

/// Two random sources feeding `n_ops` chained weighted-average nodes; the
/// last node's value is the only output field.
pub fn chain_definition(n_ops: usize) -> PipelineDefinition {
    let n_ops = n_ops.max(1);
    let out = PropertyRef::new("value", Datatype::Double, "none");
    let mut nodes = Vec::with_capacity(n_ops);
    let mut prev = FieldRef::new("x", "value");
    for i in 0..n_ops {
        let id = format!("op{i}");
        let other = if i % 2 == 0 { FieldRef::new("y", "value") } else { FieldRef::new("x", "value") };
        nodes.push(NodeDef {
            node_id: id.clone(),
            impl_id: WEIGHTED_AVERAGE.to_string(),
            params: [("w0".to_string(), 0.75), ("w1".to_string(), 0.25)].into(),
            inputs: vec![prev, other],
            output: out.clone(),
        });
        prev = FieldRef::new(id, "value");
    }
    PipelineDefinition {
        id: format!("chain-{n_ops}"),
        solution_canonical_id: String::new(),
        sources: vec![random_source("x", 1), random_source("y", 2)],
        nodes,
        outputs: vec![OutputField { from: prev.from, field: prev.field, name: "result".into(), datatype: Datatype::Double }],
        mode: ExecMode::Precompiled,
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn timed(def: &PipelineDefinition, mode: ExecMode, rows: usize) -> Result<(f64, f64), RunError> {
    let start = Instant::now();
    let ex = Executor::with_mode(def, mode, RunLimit::Records(rows))?;
    let init = start.elapsed();
    let start = Instant::now();
    for item in ex {
        black_box(item);
    }
    let run = start.elapsed();
    Ok((init.as_secs_f64() * 1e3, run.as_nanos() as f64 / rows.max(1) as f64))
}

/// Median init and per-row times of both modes over `trials` runs of `rows` rows each.
pub fn benchmark_definition(def: &PipelineDefinition, rows: usize, trials: usize) -> Result<ModeBenchmark, RunError> {
    let trials = trials.max(1);
    let a = Executor::with_mode(def, ExecMode::Precompiled, RunLimit::Records(rows))?;
    let b = Executor::with_mode(def, ExecMode::DynamicDispatch, RunLimit::Records(rows))?;
    let outputs_identical = a.zip(b).all(|(x, y)| x == y);

    let (mut pi, mut pr, mut di, mut dr) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for t in 0..trials {
        let order = if t % 2 == 0 {
            [ExecMode::Precompiled, ExecMode::DynamicDispatch]
        } else {
            [ExecMode::DynamicDispatch, ExecMode::Precompiled]
        };
        for mode in order {
            let (init, row) = timed(def, mode, rows)?;
            match mode {
                ExecMode::Precompiled => {
                    pi.push(init);
                    pr.push(row);
                }
                ExecMode::DynamicDispatch => {
                    di.push(init);
                    dr.push(row);
                }
            }
        }
    }
    Ok(ModeBenchmark {
        n_ops: def.nodes.len(),
        rows,
        trials,
        precompiled: ModeTiming { init_ms: median(pi), per_row_ns: median(pr) },
        dynamic_dispatch: ModeTiming { init_ms: median(di), per_row_ns: median(dr) },
        outputs_identical,
    })
}

pub fn benchmark_modes(n_ops: usize, rows: usize, trials: usize) -> Result<ModeBenchmark, RunError> {
    benchmark_definition(&chain_definition(n_ops), rows, trials)
}
