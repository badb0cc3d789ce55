mod common;

use std::collections::HashSet;

use common::table;
use mmqo_core::cost::{plan_cost, Catalog, CostParams};
use mmqo_core::gcd::Supervisor;
use mmqo_core::monitor::{check_structure, PhraseMatcher};
use mmqo_core::plan::{canonical_key, operator_census, serialize_plan, OperatorKind};
use mmqo_core::workload::{
    demo_catalog, evaluate_method, generate_corpus, simulate_time, GeneratorLimits, MethodSummary, QueryRecord,
    SimProfile, WorkloadError,
};

#[test]
fn generated_queries_respect_limits() {
    let cat = demo_catalog();
    let limits = GeneratorLimits::default();
    let corpus = generate_corpus(100, 1, &cat, &limits).unwrap();
    assert_eq!(corpus.len(), 100);
    for p in &corpus {
        let c = operator_census(p);
        assert!(c.get(OperatorKind::Join) <= limits.max_joins);
        assert!(c.get(OperatorKind::Select) <= limits.max_selects);
        assert!(c.get(OperatorKind::ObjectDetection) <= limits.max_detections);
        assert!(c.get(OperatorKind::ObjectCounting) <= limits.max_countings);
        for k in [OperatorKind::Select, OperatorKind::ObjectDetection, OperatorKind::ObjectCounting] {
            assert!(c.get(k) >= 1, "{k:?} missing in {}", serialize_plan(p));
        }
        assert!(p.operator_count() >= limits.min_operators);
        assert!(check_structure(p, &cat).is_empty());
    }
    let keys: HashSet<_> = corpus.iter().map(canonical_key).collect();
    assert_eq!(keys.len(), 100);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let cat = demo_catalog();
    let limits = GeneratorLimits::default();
    let a = generate_corpus(20, 5, &cat, &limits).unwrap();
    assert_eq!(a, generate_corpus(20, 5, &cat, &limits).unwrap());
    assert_ne!(a, generate_corpus(20, 6, &cat, &limits).unwrap());
    assert!(generate_corpus(0, 5, &cat, &limits).unwrap().is_empty());
}

#[test]
fn catalog_without_images_is_rejected() {
    let cat = Catalog::new().with_table("plain", table(10, &["id", "x"], &["id"], &[]));
    assert!(matches!(
        generate_corpus(1, 0, &cat, &GeneratorLimits::default()),
        Err(WorkloadError::UnsuitableCatalog(_))
    ));
}

#[test]
fn matched_time_equals_estimated_cost() {
    let cat = demo_catalog();
    let params = CostParams::default();
    for p in generate_corpus(50, 2, &cat, &GeneratorLimits::default()).unwrap() {
        assert_eq!(
            simulate_time(&p, &cat, &params, &SimProfile::Matched).unwrap(),
            plan_cost(&p, &cat, &params).unwrap()
        );
    }
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn unmatched_times_track_estimates() {
    let cat = demo_catalog();
    let params = CostParams::default();
    let corpus = generate_corpus(100, 4, &cat, &GeneratorLimits::default()).unwrap();
    let est: Vec<f64> = corpus.iter().map(|p| plan_cost(p, &cat, &params).unwrap()).collect();
    let profile = SimProfile::unmatched(99);
    let sim: Vec<f64> = corpus
        .iter()
        .map(|p| simulate_time(p, &cat, &params, &profile).unwrap())
        .collect();
    assert_ne!(est, sim);
    let rho = spearman(&est, &sim);
    eprintln!("spearman(estimate, unmatched time) = {rho:.3}");
    assert!(rho > 0.0);
    assert!(sim.iter().all(|t| t.is_finite() && *t >= 0.0));
}

fn record(t_init: f64, t_opt: f64, valid: bool) -> QueryRecord {
    QueryRecord {
        index: 0,
        initial: String::new(),
        optimized: String::new(),
        valid,
        errors: Vec::new(),
        est_cost_init: t_init,
        est_cost_opt: valid.then_some(t_opt),
        t_init,
        t_opt,
    }
}

#[test]
fn summary_arithmetic() {
    let s = MethodSummary::from_records(
        "m",
        &[record(100.0, 50.0, true), record(200.0, 200.0, false), record(0.0, 0.0, true)],
    );
    assert_eq!((s.queries, s.valid), (3, 2));
    assert!((s.vr - 2.0 / 3.0).abs() < 1e-12);
    assert!((s.avg_time_init - 100.0).abs() < 1e-12);
    assert!((s.avg_time - 250.0 / 3.0).abs() < 1e-12);
    assert!((s.poi - 0.5 / 3.0).abs() < 1e-12);
    assert!((s.toi - 50.0 / 3.0).abs() < 1e-12);
    let empty = MethodSummary::from_records("none", &[]);
    assert_eq!((empty.vr, empty.poi, empty.toi), (0.0, 0.0, 0.0));
}

#[test]
fn identity_and_always_invalid_methods() {
    let cat = demo_catalog();
    let (params, m) = (CostParams::default(), PhraseMatcher::default());
    let sup = Supervisor::new(&cat, &params, &m);
    let corpus = generate_corpus(20, 8, &cat, &GeneratorLimits::default()).unwrap();
    for profile in [SimProfile::Matched, SimProfile::unmatched(3)] {
        let id = evaluate_method("identity", &corpus, |_, q| Ok(serialize_plan(q)), &sup, &profile).unwrap();
        assert_eq!((id.summary.poi, id.summary.toi, id.summary.vr), (0.0, 0.0, 1.0));
        let bad = evaluate_method("broken", &corpus, |_, _| Ok("{".into()), &sup, &profile).unwrap();
        assert_eq!((bad.summary.poi, bad.summary.toi, bad.summary.vr), (0.0, 0.0, 0.0));
        assert!(bad.queries.iter().all(|r| !r.errors.is_empty() && r.t_opt == r.t_init));
        let failed = evaluate_method("failed", &corpus, |_, _| Err("gave up".into()), &sup, &profile).unwrap();
        assert_eq!(failed.summary.valid, 0);
        assert_eq!(failed.queries[0].errors, ["gave up"]);
    }
}

#[test]
fn report_csv_has_one_row_per_query() {
    let cat = demo_catalog();
    let (params, m) = (CostParams::default(), PhraseMatcher::default());
    let sup = Supervisor::new(&cat, &params, &m);
    let corpus = generate_corpus(5, 8, &cat, &GeneratorLimits::default()).unwrap();
    let r = evaluate_method("id", &corpus, |_, q| Ok(serialize_plan(q)), &sup, &SimProfile::Matched).unwrap();
    let csv = r.queries_csv();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("index,valid,"));
    let back: mmqo_core::workload::OptimizationReport =
        serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back, r);
}
