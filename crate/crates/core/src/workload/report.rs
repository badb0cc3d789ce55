use serde::{Deserialize, Serialize};

use super::sim::{simulate_time, SimProfile};
use crate::cost::CostError;
use crate::gcd::Supervisor;
use crate::plan::{serialize_plan, PlanNode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub initial: String,
    /// Text returned by the method; empty if it failed outright.
    pub optimized: String,
    pub valid: bool,
    #[serde(default)]
    pub errors: Vec<String>,
    pub est_cost_init: f64,
    pub est_cost_opt: Option<f64>,
    pub t_init: f64,
    /// Equals `t_init` when the optimized plan is invalid.
    pub t_opt: f64,
}

impl QueryRecord {
    /// Relative improvement; zero when the initial plan takes no time.
    pub fn poi(&self) -> f64 {
        if self.t_init > 0.0 {
            (self.t_init - self.t_opt) / self.t_init
        } else {
            0.0
        }
    }

    pub fn toi(&self) -> f64 {
        self.t_init - self.t_opt
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub queries: usize,
    pub valid: usize,
    pub avg_time_init: f64,
    pub avg_time: f64,
    pub poi: f64,
    pub toi: f64,
    pub vr: f64,
}

impl MethodSummary {
    pub fn from_records(method: &str, records: &[QueryRecord]) -> Self {
        let n = records.len();
        let mean = |f: &dyn Fn(&QueryRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let valid = records.iter().filter(|r| r.valid).count();
        MethodSummary {
            method: method.to_string(),
            queries: n,
            valid,
            avg_time_init: mean(&|r| r.t_init),
            avg_time: mean(&|r| r.t_opt),
            poi: mean(&QueryRecord::poi),
            toi: mean(&QueryRecord::toi),
            vr: if n == 0 { 0.0 } else { valid as f64 / n as f64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub summary: MethodSummary,
    pub profile: SimProfile,
    pub queries: Vec<QueryRecord>,
}

impl OptimizationReport {
    /// Per-query CSV rows, with a header.
    pub fn queries_csv(&self) -> String {
        let mut s = String::from("index,valid,est_cost_init,est_cost_opt,t_init,t_opt,poi,toi\n");
        for r in &self.queries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.index,
                r.valid,
                r.est_cost_init,
                r.est_cost_opt.map(|c| c.to_string()).unwrap_or_default(),
                r.t_init,
                r.t_opt,
                r.poi(),
                r.toi()
            ));
        }
        s
    }
}

/// Applies `optimize` to every query and scores the results. A method
/// failure or an invalid plan counts as no improvement.
pub fn evaluate_method<F>(
    method: &str,
    queries: &[PlanNode],
    mut optimize: F,
    sup: &Supervisor<'_>,
    profile: &SimProfile,
) -> Result<OptimizationReport, CostError>
where
    F: FnMut(usize, &PlanNode) -> Result<String, String>,
{
    let mut records = Vec::with_capacity(queries.len());
    for (index, q) in queries.iter().enumerate() {
        let est_cost_init = sup.cost(q)?;
        let t_init = simulate_time(q, sup.catalog, sup.params, profile)?;
        let mut rec = QueryRecord {
            index,
            initial: serialize_plan(q),
            optimized: String::new(),
            valid: false,
            errors: Vec::new(),
            est_cost_init,
            est_cost_opt: None,
            t_init,
            t_opt: t_init,
        };
        match optimize(index, q) {
            Ok(text) => {
                match sup.check(&text, q) {
                    Ok(plan) => {
                        rec.valid = true;
                        rec.est_cost_opt = Some(sup.cost(&plan)?);
                        rec.t_opt = simulate_time(&plan, sup.catalog, sup.params, profile)?;
                    }
                    Err(errors) => rec.errors = errors.iter().map(ToString::to_string).collect(),
                }
                rec.optimized = text;
            }
            Err(e) => rec.errors.push(e),
        }
        records.push(rec);
    }
    Ok(OptimizationReport {
        summary: MethodSummary::from_records(method, &records),
        profile: *profile,
        queries: records,
    })
}
