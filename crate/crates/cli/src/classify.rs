use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use mmqo_core::classifier::{accuracy_harness, ClassifierSession, HarnessReport, LabeledPair};
use mmqo_core::plan::{canonical_key, PlanNode};
use mmqo_core::proposer::GreedyProposer;
use mmqo_core::workload::simulate_time;

use crate::config::{read_json, write_json, RunConfig};

/// Pairs each query with its greedy-optimized form, alternating which one
/// comes first. Queries greedy cannot change are skipped.
fn build_pairs(config: &RunConfig, queries: &[PlanNode]) -> Result<Vec<LabeledPair>> {
    let catalog = config.load_catalog()?;
    let params = config.load_params()?;
    let matcher = config.load_matcher()?;
    let mut greedy = GreedyProposer::new(catalog.clone(), params, matcher);
    let mut pairs = Vec::new();
    for q in queries {
        let mut opt = q.clone();
        while let Some((next, _)) = greedy.step(&opt) {
            opt = next;
        }
        if canonical_key(&opt) == canonical_key(q) {
            continue;
        }
        let (a, b) = if pairs.len() % 2 == 0 { (q.clone(), opt) } else { (opt, q.clone()) };
        pairs.push(LabeledPair {
            time_a: simulate_time(&a, &catalog, &params, &config.sim)?,
            time_b: simulate_time(&b, &catalog, &params, &config.sim)?,
            plan_a: a,
            plan_b: b,
        });
    }
    Ok(pairs)
}

pub fn run(config: &RunConfig, corpus: &Path, out: &Path) -> Result<HarnessReport> {
    let client = config.chat_client()?;
    let queries: Vec<PlanNode> = read_json(corpus).context("loading corpus")?;
    let pairs = build_pairs(config, &queries)?;
    if pairs.len() < 2 {
        bail!("the corpus yields {} comparable pairs; at least 2 are needed", pairs.len());
    }
    let catalog = config.load_catalog()?;
    let params = config.load_params()?;
    let mut session = ClassifierSession::new(&catalog);
    if let Some(l) = &config.llm {
        session.temperature = l.temperature;
    }
    let report = accuracy_harness(&pairs, &mut session, client.as_ref(), &catalog, &params)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("pairs.json"), &pairs)?;
    write_json(&out.join("session.json"), &session)?;
    write_json(&out.join("classifier_report.json"), &report)?;
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "corpus": corpus,
            "pairs": pairs.len(),
            "config": config,
            "files": ["pairs.json", "session.json", "classifier_report.json"],
        }),
    )?;
    Ok(report)
}
