//! Catalog statistics and the per-operator cost model.
//!
//! Every non-scan operator `r` costs `rho[r] * sum(N_i)` over its children
//! and outputs `alpha[r] * sum(N_i)` rows; scans output their table's row
//! count and cost nothing. A plan's cost is the sum over all of its nodes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{ColumnRef, Ident, Operator, OperatorKind, PlanNode};

/// Absolute tolerance below which two plan costs compare equal.
pub const COST_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("unknown table {0}")]
    UnknownTable(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    pub row_count: u64,
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub unique_columns: Vec<String>,
    #[serde(default)]
    pub image_columns: Vec<String>,
}

impl TableStats {
    pub fn has_column(&self, column: &Ident) -> bool {
        self.columns.iter().any(|c| Ident::new(c.as_str()) == *column)
    }

    pub fn is_image_column(&self, column: &Ident) -> bool {
        self.image_columns
            .iter()
            .any(|c| Ident::new(c.as_str()) == *column)
    }

    pub fn is_unique_column(&self, column: &Ident) -> bool {
        self.unique_columns
            .iter()
            .any(|c| Ident::new(c.as_str()) == *column)
    }
}

/// Table statistics, keyed by table name. Lookups ignore ASCII case.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    pub tables: BTreeMap<String, TableStats>,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    pub fn with_table(mut self, name: &str, stats: TableStats) -> Self {
        self.tables.insert(name.to_string(), stats);
        self
    }

    pub fn table(&self, name: &Ident) -> Option<&TableStats> {
        self.tables
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name.as_str()))
            .map(|(_, v)| v)
    }

    pub fn has_column(&self, col: &ColumnRef) -> bool {
        self.table(&col.table).is_some_and(|t| t.has_column(&col.column))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, t) in &self.tables {
            if !Ident::is_valid(name) {
                return Err(ConfigError::Invalid(format!("bad table name {name:?}")));
            }
            for c in t.unique_columns.iter().chain(&t.image_columns) {
                if !t.columns.contains(c) {
                    return Err(ConfigError::Invalid(format!(
                        "column {name}.{c} is flagged but not listed in columns"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let catalog: Catalog = read_json(path)?;
        catalog.validate()?;
        Ok(catalog)
    }

    /// Total rows across tables that carry an image column (one image per row).
    pub fn image_count(&self) -> u64 {
        self.tables
            .values()
            .filter(|t| !t.image_columns.is_empty())
            .map(|t| t.row_count)
            .sum()
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// One value per non-scan operator kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerKind {
    #[serde(rename = "Select")]
    pub select: f64,
    #[serde(rename = "Join")]
    pub join: f64,
    #[serde(rename = "ObjectDetection")]
    pub detection: f64,
    #[serde(rename = "ObjectCounting")]
    pub counting: f64,
}

impl PerKind {
    /// Value for `kind`; scans have none.
    pub fn get(&self, kind: OperatorKind) -> Option<f64> {
        match kind {
            OperatorKind::TableScan => None,
            OperatorKind::Select => Some(self.select),
            OperatorKind::Join => Some(self.join),
            OperatorKind::ObjectDetection => Some(self.detection),
            OperatorKind::ObjectCounting => Some(self.counting),
        }
    }

    pub fn map(&self, f: impl Fn(OperatorKind, f64) -> f64) -> PerKind {
        PerKind {
            select: f(OperatorKind::Select, self.select),
            join: f(OperatorKind::Join, self.join),
            detection: f(OperatorKind::ObjectDetection, self.detection),
            counting: f(OperatorKind::ObjectCounting, self.counting),
        }
    }
}

/// Per-row cost factors (`rho`) and selectivities (`alpha`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub rho: PerKind,
    pub alpha: PerKind,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            rho: PerKind {
                select: 1.0,
                join: 5.0,
                detection: 100.0,
                counting: 200.0,
            },
            // Detection selectivity above 0.5 makes dropping a detection
            // under a counting on the same object cheaper, since
            // rho_det + alpha_det * rho_count must exceed rho_count.
            alpha: PerKind {
                select: 0.5,
                join: 0.8,
                detection: 0.6,
                counting: 0.3,
            },
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.rho;
        if !(r.select > 0.0 && r.select < r.join && r.join < r.detection && r.detection < r.counting) {
            return Err(ConfigError::Invalid(
                "rho must satisfy 0 < Select < Join < ObjectDetection < ObjectCounting".into(),
            ));
        }
        for kind in OperatorKind::FILTERS {
            let a = self.alpha.get(kind).unwrap_or(1.0);
            if !(a > 0.0 && a <= 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "alpha[{kind}] = {a} is outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let params: CostParams = read_json(path)?;
        params.validate()?;
        Ok(params)
    }
}

fn scan_rows(table: &Ident, catalog: &Catalog) -> Result<f64, CostError> {
    catalog
        .table(table)
        .map(|t| t.row_count as f64)
        .ok_or_else(|| CostError::UnknownTable(table.to_string()))
}

fn input_rows(node: &PlanNode, catalog: &Catalog, params: &CostParams) -> Result<f64, CostError> {
    node.children()
        .map(|c| output_rows(c, catalog, params))
        .sum()
}

/// Estimated output cardinality of `node`.
pub fn output_rows(node: &PlanNode, catalog: &Catalog, params: &CostParams) -> Result<f64, CostError> {
    match &node.op {
        Operator::TableScan { table } => scan_rows(table, catalog),
        op => {
            let alpha = params.alpha.get(op.kind()).unwrap_or(1.0);
            Ok(alpha * input_rows(node, catalog, params)?)
        }
    }
}

/// Cost of `node` alone, excluding its descendants.
pub fn node_cost(node: &PlanNode, catalog: &Catalog, params: &CostParams) -> Result<f64, CostError> {
    match &node.op {
        Operator::TableScan { table } => {
            scan_rows(table, catalog)?;
            Ok(0.0)
        }
        op => {
            let rho = params.rho.get(op.kind()).unwrap_or(0.0);
            Ok(rho * input_rows(node, catalog, params)?)
        }
    }
}

/// Total cost with per-operator `(rho, alpha)` supplied by `factors`.
/// Computed bottom-up in one pass.
pub fn plan_cost_with<F>(plan: &PlanNode, catalog: &Catalog, factors: &F) -> Result<f64, CostError>
where
    F: Fn(&Operator) -> (f64, f64),
{
    cost_and_rows(plan, catalog, factors).map(|(c, _)| c)
}

fn cost_and_rows<F>(node: &PlanNode, catalog: &Catalog, factors: &F) -> Result<(f64, f64), CostError>
where
    F: Fn(&Operator) -> (f64, f64),
{
    if let Operator::TableScan { table } = &node.op {
        return Ok((0.0, scan_rows(table, catalog)?));
    }
    let mut child_cost = 0.0;
    let mut rows_in = 0.0;
    for child in node.children() {
        let (c, n) = cost_and_rows(child, catalog, factors)?;
        child_cost += c;
        rows_in += n;
    }
    let (rho, alpha) = factors(&node.op);
    Ok((child_cost + rho * rows_in, alpha * rows_in))
}

impl CostParams {
    /// `(rho, alpha)` for one operator.
    pub fn factors(&self, op: &Operator) -> (f64, f64) {
        let kind = op.kind();
        (
            self.rho.get(kind).unwrap_or(0.0),
            self.alpha.get(kind).unwrap_or(1.0),
        )
    }
}

pub fn plan_cost(plan: &PlanNode, catalog: &Catalog, params: &CostParams) -> Result<f64, CostError> {
    plan_cost_with(plan, catalog, &|op: &Operator| params.factors(op))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostOrdering {
    ACheaper,
    BCheaper,
    Equal,
}

pub fn compare_costs(a: f64, b: f64) -> CostOrdering {
    if (a - b).abs() <= COST_EPSILON {
        CostOrdering::Equal
    } else if a < b {
        CostOrdering::ACheaper
    } else {
        CostOrdering::BCheaper
    }
}

pub fn compare_plans(
    a: &PlanNode,
    b: &PlanNode,
    catalog: &Catalog,
    params: &CostParams,
) -> Result<CostOrdering, CostError> {
    Ok(compare_costs(
        plan_cost(a, catalog, params)?,
        plan_cost(b, catalog, params)?,
    ))
}

impl From<CostOrdering> for Ordering {
    fn from(o: CostOrdering) -> Self {
        match o {
            CostOrdering::ACheaper => Ordering::Less,
            CostOrdering::BCheaper => Ordering::Greater,
            CostOrdering::Equal => Ordering::Equal,
        }
    }
}

/// Renders a cost the way feedback and prompts show it.
pub fn render_cost(cost: f64) -> String {
    format!("{cost:.2}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_operator;

    fn catalog() -> Catalog {
        Catalog::new()
            .with_table(
                "T",
                TableStats {
                    row_count: 1000,
                    columns: vec!["a".into(), "img".into()],
                    image_columns: vec!["img".into()],
                    ..Default::default()
                },
            )
            .with_table(
                "U",
                TableStats {
                    row_count: 2000,
                    columns: vec!["k".into()],
                    ..Default::default()
                },
            )
    }

    #[test]
    fn scan_is_free_and_outputs_rows() {
        let p = PlanNode::scan("T");
        let params = CostParams::default();
        assert_eq!(output_rows(&p, &catalog(), &params).unwrap(), 1000.0);
        assert_eq!(node_cost(&p, &catalog(), &params).unwrap(), 0.0);
        assert_eq!(plan_cost(&p, &catalog(), &params).unwrap(), 0.0);
    }

    #[test]
    fn unknown_table() {
        let p = PlanNode::scan("Nope");
        assert!(matches!(
            plan_cost(&p, &catalog(), &CostParams::default()),
            Err(CostError::UnknownTable(_))
        ));
    }

    #[test]
    fn counting_node_cost() {
        // 500-row input to a counting with rho = 200.
        let mut params = CostParams::default();
        params.alpha.select = 0.5;
        let sel = PlanNode::unary(parse_operator("Select(T.a > 1)").unwrap(), PlanNode::scan("T"));
        let count = PlanNode::unary(
            parse_operator("Object counting(T.img: how many dogs are there?: 1)").unwrap(),
            sel,
        );
        assert_eq!(node_cost(&count, &catalog(), &params).unwrap(), 100_000.0);
    }

    #[test]
    fn default_params_valid() {
        CostParams::default().validate().unwrap();
        let mut bad = CostParams::default();
        bad.rho.join = 0.5;
        assert!(bad.validate().is_err());
        let mut bad = CostParams::default();
        bad.alpha.select = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn catalog_validation() {
        let mut c = catalog();
        c.tables.get_mut("T").unwrap().image_columns.push("ghost".into());
        assert!(c.validate().is_err());
        assert_eq!(catalog().image_count(), 1000);
    }
}
