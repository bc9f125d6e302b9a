//! Every primary acceptance criterion, one PASS/FAIL line each.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use cascom::bundled;
use cascom::context::{attach_context, discover_context};
use cascom::cost::{cpwi, PriorityVector};
use cascom::kb::{ContextEntry, ContextVector, Description, Direction, Generator, KnowledgeBase};
use cascom::planner::{solve, SolutionNode, SolveOptions};
use cascom::registry::Value;
use cascom::runtime::{benchmark_modes, generate, ExecMode, Executor, Projection, RunLimit};
use cascom::service::{rank_grounded, router, AppState, ServiceConfig, ServiceError, Session};
use cascom::synth::scaling_point;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn with_constant_wrappers(values: [(&str, f64); 3]) -> KnowledgeBase {
    let mut doc = bundled::use_case_kb().document().clone();
    for (id, v) in values {
        let s = doc.sensors.iter_mut().find(|s| s.id == id).unwrap();
        s.wrapper.generator = Generator::Constant;
        s.wrapper.params = [("value".to_string(), json!(v))].into();
    }
    KnowledgeBase::from_document(doc).unwrap()
}

fn use_case_one() -> Outcome {
    let start = Instant::now();
    let kb = bundled::use_case_kb();
    let out = solve(&kb, kb.task("T1-phytophtora").unwrap(), SolveOptions::default()).map_err(|e| e.to_string())?;
    check(out.solutions.len() == 1, format!("{} solutions", out.solutions.len()))?;
    let observes = |id: &str| kb.sensor(id).unwrap().observes.clone();
    let expected = SolutionNode::component(
        "C1_2",
        vec![
            SolutionNode::component("C1_1", vec![SolutionNode::sensor("S1", observes("S1")), SolutionNode::sensor("S2", observes("S2"))]),
            SolutionNode::sensor("S3", observes("S3")),
        ],
    );
    let solution = &out.solutions[0];
    check(solution.roots == [expected], format!("structure {}", solution.expression()))?;

    for (values, want) in [([("S1", 35.0), ("S2", 70.0), ("S3", 80.0)], true), ([("S1", 20.0), ("S2", 40.0), ("S3", 80.0)], false)] {
        let kb = with_constant_wrappers(values);
        let def = generate(&kb, solution, &Projection::Required, ExecMode::Precompiled).map_err(|e| e.to_string())?;
        let rows: Vec<_> = Executor::new(&def, RunLimit::Records(1_000)).map_err(|e| e.to_string())?.collect();
        check(rows.len() == 1_000, "short stream")?;
        let all = rows.iter().all(|r| r.record().and_then(|r| r.get("PhytophtoraDisease")) == Some(&Value::Bool(want)));
        check(all, format!("{values:?} did not emit {want} on every record"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 5.0, format!("{secs:.2} s"))?;
    Ok(format!("{} in {secs:.3} s", solution.expression()))
}

fn use_case_two() -> Outcome {
    let kb = bundled::use_case_kb();
    let task = kb.task("T2-pollution").unwrap();
    let exprs = |kb: &KnowledgeBase| -> Result<Vec<String>, String> {
        let out = solve(kb, task, SolveOptions::default()).map_err(|e| e.to_string())?;
        Ok(out.solutions.iter().map(|s| s.expression()).collect())
    };
    let first = exprs(&kb)?;
    let mut sorted = first.clone();
    sorted.sort();
    let expected = ["(S1, S5, S7) => C32_3", "(S4, S5, S6, S7, S8) => C38_3", "(S5, S8) => C77_3"];
    check(sorted == expected, format!("{first:?}"))?;
    for _ in 0..5 {
        check(exprs(&bundled::use_case_kb())? == first, "order changed between runs")?;
    }
    Ok(first.join(" | "))
}

fn planner_oracle() -> Outcome {
    let mut solvable = 0;
    for seed in 0..100 {
        let (kb, task) = common::random_kb(seed);
        let want = common::oracle_solution_ids(&kb, &task, common::ORACLE_DEPTH);
        let opts = SolveOptions { max_depth: common::ORACLE_DEPTH, ..SolveOptions::default() };
        let got: std::collections::BTreeSet<String> = match solve(&kb, &task, opts) {
            Ok(out) => out.solutions.into_iter().map(|s| s.canonical_id).collect(),
            Err(_) => Default::default(),
        };
        check(got == want, format!("seed {seed}: {} vs {} solutions", got.len(), want.len()))?;
        solvable += usize::from(!want.is_empty());
    }
    Ok(format!("100/100 agree ({solvable} solvable)"))
}

fn cpwi_values(cands: &[ContextVector], w: &BTreeMap<String, f64>) -> Vec<f64> {
    cpwi(cands, &PriorityVector { weights: w.clone() }).unwrap().into_iter().map(|c| c.value).collect()
}

fn cpwi_properties() -> Outcome {
    for seed in 0..1_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=8);
        let props = rng.random_range(1..=5);
        let sparse = rng.random_bool(0.5);
        let cands = common::random_candidates(&mut rng, n, props, sparse);
        let w = common::random_weights(&mut rng, props);
        let v = cpwi_values(&cands, &w);
        let reference = common::reference_index(&cands, &w);
        check(v.iter().all(|x| (0.0..=1.0).contains(x)), format!("seed {seed}: out of range {v:?}"))?;
        check(v.iter().zip(&reference).all(|(a, b)| (a - b).abs() <= 1e-12), format!("seed {seed}: reference mismatch"))?;

        let factor = rng.random_range(0.001..1000.0);
        let scaled: BTreeMap<_, _> = w.iter().map(|(k, x)| (k.clone(), x * factor)).collect();
        let s = cpwi_values(&cands, &scaled);
        check(v.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1e-9), format!("seed {seed}: weight scaling"))?;

        for i in 0..n {
            for j in 0..n {
                if !sparse && common::dominates(&cands[i], &cands[j]) {
                    check(v[i] <= v[j] + 1e-12, format!("seed {seed}: Pareto {i} over {j}"))?;
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<ContextVector> = order.iter().map(|&i| cands[i].clone()).collect();
        let p = cpwi_values(&permuted, &w);
        check(order.iter().enumerate().all(|(k, &i)| p[k] == v[i]), format!("seed {seed}: permutation"))?;
    }
    let cand = |x: f64| -> ContextVector { [("reliability".to_string(), ContextEntry::new(x, Direction::HigherBetter))].into() };
    let pair = cpwi(&[cand(0.9), cand(0.6)], &PriorityVector::equal().with("reliability", 1.0)).unwrap();
    check(pair[0].value == 0.0 && pair[1].value == 1.0, format!("example gave {} and {}", pair[0].value, pair[1].value))?;
    Ok("1000 instances, example {0, 1}".into())
}

fn scaling() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = scaling_point(1_000, 1_000, 7, 21, dir.path()).map_err(|e| e.to_string())?;
    let large = scaling_point(10_000, 10_000, 7, 21, dir.path()).map_err(|e| e.to_string())?;
    check(small.solutions >= 1 && large.solutions >= 1, "designated task unsolved")?;
    let growth = large.solve_ms / small.solve_ms.max(1e-6);
    let detail = format!(
        "10k end-to-end {:.0} ms (load {:.0}), solve {:.3} ms vs {:.3} ms at 1k, growth {growth:.2}x",
        large.end_to_end_ms, large.load_ms, large.solve_ms, small.solve_ms
    );
    check(large.end_to_end_ms < 60_000.0, detail.clone())?;
    check(large.solve_ms < 10_000.0, detail.clone())?;
    check(growth < 3.0, detail.clone())?;
    Ok(detail)
}

fn modes() -> Outcome {
    let mut ratios = Vec::new();
    for n_ops in 1..=10 {
        let b = benchmark_modes(n_ops, 100_000, 5).map_err(|e| e.to_string())?;
        check(b.outputs_identical, format!("nOps {n_ops}: outputs differ"))?;
        let (p, d) = (b.precompiled.per_row_ns, b.dynamic_dispatch.per_row_ns);
        check(p <= d, format!("nOps {n_ops}: precompiled {p:.1} ns/row > dynamic {d:.1} ns/row"))?;
        ratios.push(format!("{:.1}", d / p));
    }
    Ok(format!("dynamic/precompiled per-row ratio {}", ratios.join(" ")))
}

fn advisor() -> Outcome {
    let mut doc = bundled::use_case_kb().document().clone();
    doc.sensors.retain(|s| s.id != "S3");
    let kb = Arc::new(KnowledgeBase::from_document(doc).unwrap());
    let mut session = Session::new("acceptance", &kb).unwrap();
    session.select_task(&kb, "T1-phytophtora").unwrap();
    let err = match session.solve(kb.clone(), SolveOptions::default()) {
        Ok(_) => return Err("task solved without S3".into()),
        Err(e) => e,
    };
    check(err.status() == 422, format!("status {}", err.status()))?;
    let ServiceError::NoSolution { report, .. } = err else { unreachable!() };
    let proposal = report
        .proposals
        .iter()
        .find(|p| p.target.name == "leafWetness")
        .ok_or_else(|| format!("no leafWetness proposal in {report:?}"))?;
    check(proposal.unlocks == 1, format!("unlocks {}", proposal.unlocks))?;

    let mut sensor = bundled::use_case_kb().sensor("S2").unwrap().clone();
    sensor.id = "proposed".into();
    sensor.observes = proposal.target.clone();
    let augmented = kb.add(Description::Sensor(sensor)).map_err(|e| e.to_string())?;
    let resolved = solve(&augmented, augmented.task("T1-phytophtora").unwrap(), SolveOptions::default())
        .map_err(|e| format!("re-solve failed: {e}"))?;
    check(resolved.solutions.len() == proposal.unlocks, format!("re-solve found {}", resolved.solutions.len()))?;
    Ok("422, deploy leafWetness sensor, unlocks 1, re-solve confirms".into())
}

fn runtime_oracle() -> Outcome {
    let mut doc = bundled::use_case_kb().document().clone();
    common::randomize_wrappers(&mut doc, 11);
    let kb = KnowledgeBase::from_document(doc).unwrap();
    let mut pipelines = 0;
    for task in kb.tasks() {
        let found = solve(&kb, task, SolveOptions::default()).map_err(|e| e.to_string())?.solutions;
        for plain in rank_grounded(&kb, &found, &PriorityVector::equal()).map_err(|e| e.to_string())? {
            let with_context = attach_context(&kb, &plain, &discover_context(&kb, &plain)).map_err(|e| e.to_string())?;
            for solution in [plain, with_context] {
                for mode in [ExecMode::Precompiled, ExecMode::DynamicDispatch] {
                    let def = generate(&kb, &solution, &Projection::Required, mode).map_err(|e| e.to_string())?;
                    let names = cascom::context::exported_names(&solution);
                    let want = common::expected_rows(&kb, &solution, 10_000);
                    let got: Vec<_> = Executor::new(&def, RunLimit::Records(10_000)).map_err(|e| e.to_string())?.collect();
                    check(got.len() == want.len(), format!("{}: {} rows", solution.expression(), got.len()))?;
                    for (row, (item, (t, values))) in got.iter().zip(&want).enumerate() {
                        let rec = item.record().ok_or_else(|| format!("{}: error record at {row}", solution.expression()))?;
                        let same = rec.timestamp_ms == *t
                            && rec.values.len() == values.len()
                            && names.iter().zip(values).all(|(n, (_, v))| rec.get(n).is_some_and(|g| common::values_match(g, v)));
                        check(same, format!("{} {mode:?}: row {row} differs", solution.expression()))?;
                    }
                    pipelines += 1;
                }
            }
        }
    }
    Ok(format!("{pipelines} pipeline/mode pairs x 10000 rows"))
}

async fn api_call_count() -> Outcome {
    let app = router(AppState::new(bundled::use_case_kb(), ServiceConfig::default()));
    let mut calls = 0;
    let mut call = |method: Method, uri: String, body: Option<Json>| {
        calls += 1;
        let app = app.clone();
        async move {
            let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
            let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_default()).unwrap();
            let resp = app.oneshot(req).await.unwrap();
            let status = resp.status();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            (status, String::from_utf8(bytes.to_vec()).unwrap())
        }
    };
    let parse = |s: &str| serde_json::from_str::<Json>(s).unwrap();

    let (_, body) = call(Method::POST, "/sessions".into(), None).await;
    let sid = parse(&body)["sessionId"].as_str().unwrap().to_string();
    call(Method::GET, format!("/sessions/{sid}/questions?k=4"), None).await;
    let answers = json!({ "answers": [
        { "question": "Q1", "value": "agriculture" },
        { "question": "Q2", "value": "event-yes" },
        { "question": "Q3", "value": "disease-yes" },
    ]});
    call(Method::POST, format!("/sessions/{sid}/answers"), Some(answers)).await;
    call(Method::POST, format!("/sessions/{sid}/task"), Some(json!({ "taskId": "T1-phytophtora" }))).await;
    let (_, solved) = call(Method::POST, format!("/sessions/{sid}/solve"), None).await;
    let best = parse(&solved)["solutions"][0]["canonicalId"].clone();
    let (status, deployed) = call(Method::POST, format!("/sessions/{sid}/deploy"), Some(json!({ "solution": best, "records": 10 }))).await;
    check(status == StatusCode::CREATED, format!("deploy answered {status}: {deployed}"))?;
    let url = parse(&deployed)["streamUrl"].as_str().unwrap().to_string();
    let (_, stream) = call(Method::GET, url, None).await;
    let first = stream.lines().next().map(parse).ok_or("empty stream")?;
    check(first.get("PhytophtoraDisease").is_some_and(Json::is_boolean), format!("first record {first}"))?;
    check(calls <= 8, format!("{calls} calls"))?;
    Ok(format!("{calls} calls, first record {first}"))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    })
}

fn main() -> ExitCode {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("use case 1 reproduction", Box::new(use_case_one)),
        ("use case 2 reproduction", Box::new(use_case_two)),
        ("planner oracle equivalence", Box::new(planner_oracle)),
        ("cost index properties", Box::new(cpwi_properties)),
        ("scaling 1k -> 10k", Box::new(scaling)),
        ("precompiled vs dynamic dispatch", Box::new(modes)),
        ("advisor verification", Box::new(advisor)),
        ("runtime oracle equivalence", Box::new(runtime_oracle)),
        ("API call count", Box::new(|| rt.block_on(api_call_count()))),
    ];
    let total = criteria.len();
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let start = Instant::now();
        match guarded(run) {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.1} s]", start.elapsed().as_secs_f64()),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    println!("{} of {} criteria passed", total - failed.len(), total);
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
