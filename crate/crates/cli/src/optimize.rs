use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use mmqo_core::cost::{Catalog, CostParams};
use mmqo_core::gcd::{run_aggregated, run_gcd, Candidate, GcdConfig, GcdTrace, Supervisor};
use mmqo_core::llm::ChatClient;
use mmqo_core::monitor::PhraseMatcher;
use mmqo_core::plan::{serialize_plan, PlanNode};
use mmqo_core::proposer::{ExhaustiveProposer, GreedyProposer, LlmProposer, Proposer, PROMPT_VERSION};
use mmqo_core::workload::{evaluate_method, OptimizationReport};

use crate::config::{read_json, write_json, Method, ProposerKind, RunConfig};

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    prompt_version: &'static str,
    corpus: &'a Path,
    queries: usize,
    config: &'a RunConfig,
    files: Vec<String>,
}

struct QueryOutcome {
    result: Result<String, String>,
    /// Trace per run, with the run index for aggregated methods.
    traces: Vec<(Option<usize>, GcdTrace)>,
    candidates: Option<Vec<Candidate>>,
}

struct Runner<'a> {
    config: &'a RunConfig,
    catalog: &'a Catalog,
    params: &'a CostParams,
    matcher: &'a PhraseMatcher,
    client: Option<Arc<dyn ChatClient>>,
}

impl Runner<'_> {
    fn proposer(&self, index: usize) -> Box<dyn Proposer> {
        match (self.config.proposer, &self.client) {
            (ProposerKind::Llm, Some(c)) => {
                let t = self.config.llm.as_ref().map(|l| l.temperature).unwrap_or_default();
                Box::new(LlmProposer::new(Arc::clone(c)).with_temperature(t))
            }
            _ => Box::new(self.greedy(index)),
        }
    }

    fn greedy(&self, index: usize) -> GreedyProposer {
        GreedyProposer::new(self.catalog.clone(), *self.params, self.matcher.clone())
            .with_seed(self.config.seed.wrapping_add(index as u64))
    }

    fn optimize(&self, index: usize, q: &PlanNode) -> QueryOutcome {
        let sup = Supervisor::new(self.catalog, self.params, self.matcher);
        let method = self.config.method;
        let gcd = GcdConfig {
            tolerance: self.config.tolerance,
            iteration_cap: self.config.iteration_cap,
            lite: method.is_lite(),
            ..GcdConfig::default()
        };
        let plain = |result| QueryOutcome {
            result,
            traces: Vec::new(),
            candidates: None,
        };
        match method {
            Method::Greedy => {
                let mut g = self.greedy(index);
                let mut plan = q.clone();
                while let Some((next, _)) = g.step(&plan) {
                    plan = next;
                }
                plain(Ok(serialize_plan(&plan)))
            }
            Method::Exhaustive => {
                let e = ExhaustiveProposer::new(self.catalog.clone(), *self.params, self.matcher.clone());
                plain(e.minimum(q).map(|m| serialize_plan(&m.plan)).map_err(|e| e.to_string()))
            }
            Method::Gcd | Method::GcdLite => {
                let mut p = self.proposer(index);
                match run_gcd(q, p.as_mut(), &sup, &gcd) {
                    Ok(out) => QueryOutcome {
                        result: Ok(serialize_plan(&out.best)),
                        traces: vec![(None, out.trace)],
                        candidates: None,
                    },
                    Err(e) => plain(Err(e.to_string())),
                }
            }
            Method::GcdAgg | Method::GcdLiteAgg => {
                let mut p = self.proposer(index);
                let out = run_aggregated(q, p.as_mut(), &sup, &gcd, self.config.k);
                QueryOutcome {
                    result: match out.selected_run {
                        Some(_) => Ok(serialize_plan(&out.best)),
                        None => Err("every run failed".into()),
                    },
                    traces: out
                        .traces
                        .into_iter()
                        .enumerate()
                        .filter_map(|(r, t)| t.map(|t| (Some(r), t)))
                        .collect(),
                    candidates: Some(out.candidates),
                }
            }
        }
    }
}

fn trace_name(index: usize, run: Option<usize>) -> String {
    match run {
        Some(r) => format!("q{index:04}-run{r}.jsonl"),
        None => format!("q{index:04}.jsonl"),
    }
}

pub fn run(config: &RunConfig, corpus_path: &Path, out: &Path, jobs: usize) -> Result<OptimizationReport> {
    let catalog = config.load_catalog()?;
    catalog.validate().context("invalid catalog")?;
    let params = config.load_params()?;
    params.validate().context("invalid cost parameters")?;
    let matcher = config.load_matcher()?;
    let queries: Vec<PlanNode> = read_json(corpus_path).context("loading corpus")?;
    let client = match (config.method.is_gcd(), config.proposer) {
        (true, ProposerKind::Llm) => Some(config.chat_client()?),
        _ => None,
    };
    let ctx = Runner {
        config,
        catalog: &catalog,
        params: &params,
        matcher: &matcher,
        client,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<QueryOutcome> = pool.install(|| {
        queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                log::info!("query {i}: optimizing with {}", config.method.name());
                ctx.optimize(i, q)
            })
            .collect()
    });

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = vec!["report.json".to_string(), "report.csv".to_string()];
    if outcomes.iter().any(|o| !o.traces.is_empty() || o.candidates.is_some()) {
        let dir = out.join("traces");
        fs::create_dir_all(&dir)?;
        for (i, o) in outcomes.iter().enumerate() {
            for (run, t) in &o.traces {
                let name = trace_name(i, *run);
                let f = File::create(dir.join(&name))?;
                t.write_jsonl(BufWriter::new(f))?;
                files.push(format!("traces/{name}"));
            }
            if let Some(c) = &o.candidates {
                let name = format!("q{i:04}-candidates.json");
                let rows: Vec<_> = c
                    .iter()
                    .map(|c| serde_json::json!({"plan": c.plan_text, "valid": c.valid, "cost": c.valid.then_some(c.cost)}))
                    .collect();
                write_json(&dir.join(&name), &rows)?;
                files.push(format!("traces/{name}"));
            }
        }
    }

    let sup = Supervisor::new(&catalog, &params, &matcher);
    let mut results: Vec<Option<Result<String, String>>> = outcomes.into_iter().map(|o| Some(o.result)).collect();
    let report = evaluate_method(
        config.method.name(),
        &queries,
        |i, _| results[i].take().expect("each query is scored once"),
        &sup,
        &config.sim,
    )
    .context("scoring the optimized plans")?;

    write_json(&out.join("report.json"), &report)?;
    fs::write(out.join("report.csv"), report.queries_csv())?;
    let corpus = PathBuf::from(corpus_path);
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            prompt_version: PROMPT_VERSION,
            corpus: &corpus,
            queries: queries.len(),
            config,
            files,
        },
    )?;
    Ok(report)
}
