//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! with its runtime, and exits nonzero if any failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::mutate::inject;
use common::{chat_body, fixture_catalog, oracle_eval, plan, row_map, MockServer, CODE3_INITIAL, CODE3_OPTIMIZED};
use mmqo_core::classifier::{accuracy_harness, ClassifierSession, LabeledPair};
use mmqo_core::cost::{output_rows, plan_cost, CostParams};
use mmqo_core::gcd::{aggregate, run_gcd, Candidate, GcdConfig, Supervisor, Termination};
use mmqo_core::llm::{extract_json_object, ChatClientConfig, HttpChatClient};
use mmqo_core::monitor::{check_equivalence, check_error, ErrorKind, PhraseMatcher};
use mmqo_core::plan::{parse_plan, serialize_plan, to_json_value, PlanNode};
use mmqo_core::proposer::{
    closure_minimum, compose_prompts, GreedyProposer, LlmProposer, ProposalContext, ScriptedProposer,
};
use mmqo_core::rewrite::{enumerate_removals, Policy};
use mmqo_core::workload::{
    demo_catalog, evaluate_method, generate_corpus, simulate_time, GeneratorLimits, SimProfile,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn greedy(cat: &mmqo_core::cost::Catalog) -> GreedyProposer {
    GreedyProposer::new(cat.clone(), CostParams::default(), PhraseMatcher::default())
}

fn cost_arithmetic() -> Outcome {
    let cat = fixture_catalog();
    let params = CostParams::default();
    let rows = row_map(&cat);
    let cases = [
        (r#"{"Operator":"Select(T.a > 5)","Left_child":"T","Right_child":null}"#, Some(500.0), None),
        (r#"{"Operator":"Join(T.id = U.id)","Left_child":"T","Right_child":"U"}"#, Some(2400.0), None),
        (
            r#"{"Operator":"Object detection(T.img: is there a dog?)","Left_child":{"Operator":"Select(T.a > 5)","Left_child":"T","Right_child":null},"Right_child":null}"#,
            None,
            Some(51000.0),
        ),
    ];
    for (text, want_rows, want_cost) in cases {
        let p = plan(text);
        let (o_rows, o_cost) = oracle_eval(&to_json_value(&p), &rows);
        let (rows_got, cost_got) = (output_rows(&p, &cat, &params).unwrap(), plan_cost(&p, &cat, &params).unwrap());
        ensure!(close(rows_got, o_rows) && close(cost_got, o_cost), "{text}: model ({rows_got}, {cost_got}) vs oracle ({o_rows}, {o_cost})");
        if let Some(r) = want_rows {
            ensure!(close(o_rows, r), "oracle rows {o_rows}, expected {r}");
        }
        if let Some(c) = want_cost {
            ensure!(close(o_cost, c), "oracle cost {o_cost}, expected {c}");
        }
    }
    Ok("500 rows, 2400 rows, cost 51000".into())
}

fn removal_fixture() -> Outcome {
    let (cat, params, m) = (fixture_catalog(), CostParams::default(), PhraseMatcher::default());
    let (init, opt) = (plan(CODE3_INITIAL), plan(CODE3_OPTIMIZED));
    let removals = enumerate_removals(&init, &m);
    ensure!(
        removals.iter().any(|r| r.policy == Policy::Removal && r.result == opt),
        "removal rewrite not emitted"
    );
    ensure!(check_equivalence(&init, &opt, &m).is_empty(), "pair judged inequivalent");
    let sup = Supervisor::new(&cat, &params, &m);
    let out = run_gcd(&init, &mut greedy(&cat), &sup, &GcdConfig::default()).map_err(|e| e.to_string())?;
    ensure!(out.best == opt, "greedy returned {}", serialize_plan(&out.best));
    Ok(format!("cost {} -> {}", out.trace.initial_cost, out.best_cost))
}

fn descent_fidelity() -> Outcome {
    let (cat, params, m) = (fixture_catalog(), CostParams::default(), PhraseMatcher::default());
    let sup = Supervisor::new(&cat, &params, &m);
    let p0 = plan(CODE3_INITIAL);
    let mut prop = ScriptedProposer::plans(["garbage", CODE3_OPTIMIZED]);
    let out = run_gcd(&p0, &mut prop, &sup, &GcdConfig::default()).map_err(|e| e.to_string())?;
    let fb: Vec<_> = out.trace.records.iter().map(|r| r.feedback.as_str()).collect();
    let want = [
        "No valid optimization generated",
        "Improved: 100000.00",
        "No improvement: 100000.00",
        "No improvement: 100000.00",
        "No improvement: 100000.00",
    ];
    ensure!(fb == want, "feedback sequence {fb:?}");
    ensure!(out.trace.termination == Termination::Tolerance, "terminated by {:?}", out.trace.termination);
    for t in 1..=5 {
        let mut bad = ScriptedProposer::plans(std::iter::repeat_n("x", 10));
        let config = GcdConfig { tolerance: t, ..GcdConfig::default() };
        let n = run_gcd(&p0, &mut bad, &sup, &config).map_err(|e| e.to_string())?.trace.iterations();
        ensure!(n == t, "tolerance {t} stopped after {n}");
    }
    for ctx in prop.contexts() {
        for h in &ctx.history_plans {
            ensure!(check_error(&serialize_plan(h), &p0, &cat, &m).is_empty(), "invalid plan in history");
        }
    }
    Ok("three branches, tolerance 1..5, clean history".into())
}

fn oracle_equivalence() -> Outcome {
    let cat = demo_catalog();
    let (params, m) = (CostParams::default(), PhraseMatcher::default());
    let sup = Supervisor::new(&cat, &params, &m);
    let corpus = generate_corpus(60, 11, &cat, &GeneratorLimits::default()).map_err(|e| e.to_string())?;
    let mut hits = 0;
    for q in &corpus {
        ensure!(q.operator_count() <= 10, "query with {} operators", q.operator_count());
        let init = sup.cost(q).unwrap();
        let g = run_gcd(q, &mut greedy(&cat), &sup, &GcdConfig::default()).map_err(|e| e.to_string())?;
        let min = closure_minimum(q, &cat, &params, &m, 250_000).map_err(|e| e.to_string())?;
        ensure!(g.best_cost >= min.cost - 1e-9, "greedy {} below closure minimum {}", g.best_cost, min.cost);
        ensure!(g.best_cost <= init + 1e-9, "greedy {} above initial {init}", g.best_cost);
        if (g.best_cost - min.cost).abs() <= 1e-9 * min.cost.abs().max(1.0) {
            hits += 1;
        }
    }
    let frac = hits as f64 / corpus.len() as f64;
    let detail = format!("greedy reaches the closure minimum on {hits}/{} = {:.1}% (gate 80%); bounds hold", corpus.len(), frac * 100.0);
    ensure!(frac >= 0.8, "{detail}");
    Ok(detail)
}

fn matched_metrics() -> Outcome {
    let cat = demo_catalog();
    let (params, m) = (CostParams::default(), PhraseMatcher::default());
    let sup = Supervisor::new(&cat, &params, &m);
    let corpus = generate_corpus(50, 12, &cat, &GeneratorLimits::default()).map_err(|e| e.to_string())?;
    let report = evaluate_method(
        "gcd",
        &corpus,
        |_, q| {
            run_gcd(q, &mut greedy(&cat), &sup, &GcdConfig::default())
                .map(|o| serialize_plan(&o.best))
                .map_err(|e| e.to_string())
        },
        &sup,
        &SimProfile::Matched,
    )
    .map_err(|e| e.to_string())?;
    let s = &report.summary;
    ensure!(s.vr == 1.0, "VR {}", s.vr);
    for r in &report.queries {
        ensure!(r.t_opt <= r.t_init, "query {} slower: {} > {}", r.index, r.t_opt, r.t_init);
    }
    ensure!(s.poi > 0.0, "mean PoI {}", s.poi);
    Ok(format!("VR {:.2}, mean PoI {:.4}", s.vr, s.poi))
}

fn aggregation_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..1000 {
        let n = rng.gen_range(1..10);
        let cands: Vec<Candidate> = (0..n)
            .map(|_| {
                let text = serialize_plan(&PlanNode::scan(format!("t{}", rng.gen_range(0..4))));
                if rng.gen_bool(0.3) {
                    Candidate::invalid(text)
                } else {
                    Candidate { plan_text: text, valid: true, cost: rng.gen_range(0..5) as f64 }
                }
            })
            .collect();
        let i = aggregate(&cands).ok_or("no selection")?;
        let any_valid = cands.iter().any(|c| c.valid);
        ensure!(!any_valid || cands[i].valid, "trial {trial}: invalid selected over a valid one");
        let voters: Vec<&Candidate> = cands.iter().filter(|c| c.valid || !any_valid).collect();
        let mut freq: HashMap<String, (usize, f64)> = HashMap::new();
        for c in &voters {
            let e = freq.entry(c.vote_key()).or_insert((0, f64::INFINITY));
            e.0 += 1;
            e.1 = e.1.min(if c.valid { c.cost } else { f64::INFINITY });
        }
        let top = freq.values().map(|v| v.0).max().unwrap();
        let (count, group_min) = freq[&cands[i].vote_key()];
        ensure!(count == top, "trial {trial}: frequency {count} < {top}");
        let cheapest_top = freq.values().filter(|v| v.0 == top).map(|v| v.1).fold(f64::INFINITY, f64::min);
        let chosen = if cands[i].valid { cands[i].cost } else { f64::INFINITY };
        ensure!(chosen == group_min && chosen == cheapest_top, "trial {trial}: cost {chosen} not minimal");
    }
    Ok("1000 multisets".into())
}

fn mutation_suite() -> Outcome {
    let cat = demo_catalog();
    let m = PhraseMatcher::default();
    let corpus = generate_corpus(100, 8, &cat, &GeneratorLimits::default()).map_err(|e| e.to_string())?;
    for q in &corpus {
        let errs = check_error(&serialize_plan(q), q, &cat, &m);
        ensure!(errs.is_empty(), "false positive: {errs:?}");
    }
    for kind in ErrorKind::STRUCTURAL {
        let mut rng = ChaCha8Rng::seed_from_u64(kind as u64 + 100);
        let mut done = 0;
        let mut tries = 0;
        while done < 20 {
            tries += 1;
            ensure!(tries < 10_000, "could not inject {kind:?}");
            let q = corpus.choose(&mut rng).unwrap();
            let Some(text) = inject(kind, q, &cat, &mut rng) else { continue };
            let errs = check_error(&text, q, &cat, &m);
            ensure!(errs.iter().any(|e| e.kind == kind), "{kind:?} missed: {text}");
            done += 1;
        }
    }
    Ok("8 kinds x 20 mutations, 0/100 false positives".into())
}

fn equivalence_fixtures() -> Outcome {
    let m = PhraseMatcher::default();
    ensure!(m.similarity("how many persons", "how many people").equivalent, "persons/people not equivalent");
    ensure!(!m.similarity("men", "women").equivalent, "men/women equivalent");
    let words = ["men", "women", "people", "dog", "dogs", "cat", "red", "car", "how", "many", "there", "any"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let phrase = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(1..5);
        (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    for _ in 0..200 {
        let (a, b) = (phrase(&mut rng), phrase(&mut rng));
        ensure!(m.similarity(&a, &b) == m.similarity(&b, &a), "asymmetric on {a:?} / {b:?}");
        let id = m.similarity(&a, &a);
        ensure!(
            close(id.lexical_score, 1.0) && close(id.semantic_score, 1.0) && close(id.combined, 1.0),
            "identity below 1 for {a:?}"
        );
    }
    Ok("fixtures, 200 symmetric pairs".into())
}

fn lite_guarantee() -> Outcome {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let read = |name: &str| std::fs::read_to_string(golden.join(name)).map_err(|e| format!("{name}: {e}"));
    let ctx = |lite: bool| {
        let mut c = ProposalContext::initial(plan(CODE3_OPTIMIZED), 100_000.0, !lite);
        c.history_plans = vec![plan(CODE3_OPTIMIZED)];
        c.history_costs = vec![100_000.0];
        c.feedback = if lite { String::new() } else { "Improved: 100000.00".into() };
        c
    };
    for (mode, lite) in [("full", false), ("lite", true)] {
        let (first, second) = compose_prompts(&ctx(lite), "Remove redundant detections.");
        for (name, got) in [("instruction_request", first), ("optimization_request", second)] {
            let want = read(&format!("{mode}_{name}.txt"))?;
            ensure!(got == want, "{mode} {name} differs from golden file");
            let has_cost = want.contains("100000.00");
            let has_verdict = want.contains("Improved") || want.contains("No improvement");
            if lite {
                ensure!(!has_cost && !has_verdict, "lite {name} leaks cost feedback");
            } else if name == "optimization_request" {
                ensure!(has_cost && has_verdict, "full {name} lacks cost feedback");
            }
        }
    }
    Ok("golden prompts match; lite prompts carry no cost text".into())
}

fn http_client(server: &MockServer) -> HttpChatClient {
    let mut config = ChatClientConfig::new(server.url(), "mock");
    config.api_key_env = "MMQO_ACCEPTANCE_UNSET_KEY".into();
    config.timeout_secs = 5;
    HttpChatClient::new(config)
}

fn llm_plumbing() -> Outcome {
    let (cat, params, m) = (fixture_catalog(), CostParams::default(), PhraseMatcher::default());
    let sup = Supervisor::new(&cat, &params, &m);

    // Descent over HTTP: a 500, one good proposal, then the exhausted
    // script answers 503 until tolerance runs out.
    let server = MockServer::start(vec![
        (500, "down".into()),
        (200, chat_body("Drop the implied detection.")),
        (200, chat_body(&format!("Here you go:\n```json\n{CODE3_OPTIMIZED}\n```"))),
    ]);
    let mut proposer = LlmProposer::new(Arc::new(http_client(&server)));
    let out = run_gcd(&plan(CODE3_INITIAL), &mut proposer, &sup, &GcdConfig::default()).map_err(|e| e.to_string())?;
    let wrong: Vec<_> = out.trace.records.iter().map(|r| r.wrong_count).collect();
    ensure!(wrong == [1, 0, 1, 2, 3], "wrong counts {wrong:?}");
    ensure!(out.best == plan(CODE3_OPTIMIZED), "descent did not reach the optimized plan");

    // Classifier harness over HTTP on matched pairs.
    let demo = demo_catalog();
    let mut g = greedy(&demo);
    let mut pairs = Vec::new();
    for (i, q) in generate_corpus(20, 3, &demo, &GeneratorLimits::default()).unwrap().into_iter().enumerate() {
        let mut best = q.clone();
        while let Some((next, _)) = g.step(&best) {
            best = next;
        }
        if best != q {
            let (a, b) = if i % 2 == 0 { (q, best) } else { (best, q) };
            let t = |p: &PlanNode| simulate_time(p, &demo, &params, &SimProfile::Matched).unwrap();
            pairs.push(LabeledPair { time_a: t(&a), time_b: t(&b), plan_a: a, plan_b: b });
        }
    }
    ensure!(pairs.len() >= 4, "only {} improvable pairs", pairs.len());
    let script = pairs
        .iter()
        .map(|p| {
            let word = if p.time_b < p.time_a { "second" } else { "first" };
            (200, chat_body(&format!("EXPLANATION: fewer rows reach the costly operators.\nESTIMATED_TIMES: {} {}\nFASTER: {word}", p.time_a, p.time_b)))
        })
        .collect();
    let server = MockServer::start(script);
    let client = http_client(&server);
    let mut session = ClassifierSession::new(&demo);
    let report = accuracy_harness(&pairs, &mut session, &client, &demo, &params).map_err(|e| e.to_string())?;
    ensure!(report.accuracy == 1.0, "scripted-correct accuracy {}", report.accuracy);
    ensure!(report.cost_model_accuracy == 1.0, "cost-model accuracy {}", report.cost_model_accuracy);
    ensure!(server.requests().len() == pairs.len(), "{} requests for {} pairs", server.requests().len(), pairs.len());

    // Plan extraction from wrapped replies.
    let fixtures: Vec<serde_json::Value> =
        serde_json::from_str(include_str!("fixtures/wrapped_replies.json")).map_err(|e| e.to_string())?;
    ensure!(fixtures.len() == 20, "{} fixtures", fixtures.len());
    for f in &fixtures {
        let name = f["name"].as_str().unwrap_or("?");
        let got = extract_json_object(f["reply"].as_str().unwrap_or("")).ok_or(format!("{name}: nothing extracted"))?;
        let want = parse_plan(&f["expected"].to_string()).map_err(|e| e.to_string())?;
        ensure!(parse_plan(got).ok() == Some(want), "{name}: wrong plan");
    }
    Ok(format!(
        "descent over HTTP survives a 500; classifier {} pairs, cost-model accuracy 1.0; 20/20 extractions",
        pairs.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("cost-model arithmetic", Duration::from_secs(1), cost_arithmetic),
        ("removal fixture", Duration::from_secs(1), removal_fixture),
        ("descent loop fidelity", Duration::from_secs(1), descent_fidelity),
        ("oracle equivalence", Duration::from_secs(120), oracle_equivalence),
        ("matched-mode metrics", Duration::from_secs(120), matched_metrics),
        ("aggregation properties", Duration::from_secs(10), aggregation_properties),
        ("error-monitor mutation suite", Duration::from_secs(30), mutation_suite),
        ("equivalence fixtures", Duration::from_secs(10), equivalence_fixtures),
        ("lite-mode guarantee", Duration::from_secs(1), lite_guarantee),
        ("LLM-path plumbing", Duration::from_secs(10), llm_plumbing),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > limit => Err(format!("{d}; took {elapsed:.2?}, limit {limit:?}")),
            o => o,
        };
        let n = i + 1;
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} [{elapsed:.2?}]: {detail}"),
            Err(detail) => {
                println!("criterion {n:>2} FAIL  {name} [{elapsed:.2?}]: {detail}");
                failed.push(n);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
