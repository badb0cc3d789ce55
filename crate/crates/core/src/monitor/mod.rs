//! Plan validity: structural checks by subtree pattern matching, plus an
//! equivalence check against the initial plan.

mod equivalence;
mod similarity;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::Catalog;
use crate::plan::{parse_plan, referenced_tables, ColumnRef, NodePath, Operator, OperatorKind, PlanNode};

pub use equivalence::{check_equivalence, predicate_closure_covers, Constraints, VisualAtom};
pub use similarity::{
    cosine, tfidf_cosine, BackendError, CountEmbedding, Embedding, EmbeddingProvider, Lexicon,
    PhraseMatcher, RemoteEmbedding, RemoteEmbeddingConfig, SimilarityReport, SIMILARITY_THRESHOLD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    Arity,
    UnknownTable,
    UnknownColumn,
    PredicateScope,
    NonImageColumn,
    NegativeThreshold,
    LeafNotScan,
    Unparseable,
    Inequivalent,
}

impl ErrorKind {
    /// Kinds detected without reference to the initial plan.
    pub const STRUCTURAL: [ErrorKind; 8] = [
        ErrorKind::Arity,
        ErrorKind::UnknownTable,
        ErrorKind::UnknownColumn,
        ErrorKind::PredicateScope,
        ErrorKind::NonImageColumn,
        ErrorKind::NegativeThreshold,
        ErrorKind::LeafNotScan,
        ErrorKind::Unparseable,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanError {
    pub kind: ErrorKind,
    /// Offending node; absent for `Unparseable` and `Inequivalent`.
    pub location: Option<NodePath>,
    pub detail: String,
}

impl PlanError {
    fn at(kind: ErrorKind, path: &NodePath, detail: impl Into<String>) -> Self {
        PlanError {
            kind,
            location: Some(path.clone()),
            detail: detail.into(),
        }
    }

    pub fn unparseable(detail: impl Into<String>) -> Self {
        PlanError {
            kind: ErrorKind::Unparseable,
            location: None,
            detail: detail.into(),
        }
    }

    pub fn inequivalent(detail: impl Into<String>) -> Self {
        PlanError {
            kind: ErrorKind::Inequivalent,
            location: None,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.location {
            Some(p) => write!(f, "{:?} at {p}: {}", self.kind, self.detail),
            None => write!(f, "{:?}: {}", self.kind, self.detail),
        }
    }
}

fn check_column(
    col: &ColumnRef,
    needs_image: bool,
    catalog: &Catalog,
    path: &NodePath,
    errors: &mut Vec<PlanError>,
) {
    let Some(table) = catalog.table(&col.table) else {
        errors.push(PlanError::at(
            ErrorKind::UnknownTable,
            path,
            format!("{col} names unknown table {}", col.table),
        ));
        return;
    };
    if !table.has_column(&col.column) {
        errors.push(PlanError::at(
            ErrorKind::UnknownColumn,
            path,
            format!("unknown column {col}"),
        ));
    } else if needs_image && !table.is_image_column(&col.column) {
        errors.push(PlanError::at(
            ErrorKind::NonImageColumn,
            path,
            format!("{col} is not an image column"),
        ));
    }
}

/// Every structural defect in `plan`. Empty means structurally valid.
pub fn check_structure(plan: &PlanNode, catalog: &Catalog) -> Vec<PlanError> {
    let mut errors = Vec::new();
    for (path, node) in plan.walk() {
        let kind = node.op.kind();
        let arity_ok = match kind.arity() {
            0 => node.child_count() == 0,
            1 => node.left.is_some() && node.right.is_none(),
            _ => node.left.is_some() && node.right.is_some(),
        };
        if !arity_ok {
            errors.push(PlanError::at(
                ErrorKind::Arity,
                &path,
                format!(
                    "{kind} needs {} child(ren), found left={} right={}",
                    kind.arity(),
                    node.left.is_some(),
                    node.right.is_some()
                ),
            ));
        }
        if node.child_count() == 0 && kind != OperatorKind::TableScan {
            errors.push(PlanError::at(
                ErrorKind::LeafNotScan,
                &path,
                format!("leaf {kind} is not a table scan"),
            ));
        }
        let below = referenced_tables(node);
        match &node.op {
            Operator::TableScan { table } => {
                if catalog.table(table).is_none() {
                    errors.push(PlanError::at(
                        ErrorKind::UnknownTable,
                        &path,
                        format!("scan of unknown table {table}"),
                    ));
                }
            }
            Operator::Select { predicates } => {
                for p in predicates {
                    check_column(&p.target, false, catalog, &path, &mut errors);
                    if !below.contains(&p.target.table) {
                        errors.push(PlanError::at(
                            ErrorKind::PredicateScope,
                            &path,
                            format!("predicate {p} refers to a table not scanned below it"),
                        ));
                    }
                }
            }
            Operator::Join {
                left_key,
                right_key,
            } => {
                check_column(left_key, false, catalog, &path, &mut errors);
                check_column(right_key, false, catalog, &path, &mut errors);
                if let (Some(l), Some(r)) = (node.left.as_deref(), node.right.as_deref()) {
                    let (lt, rt) = (referenced_tables(l), referenced_tables(r));
                    let straight = lt.contains(&left_key.table) && rt.contains(&right_key.table);
                    let crossed = lt.contains(&right_key.table) && rt.contains(&left_key.table);
                    if !straight && !crossed {
                        errors.push(PlanError::at(
                            ErrorKind::PredicateScope,
                            &path,
                            format!("join keys {left_key} = {right_key} do not span its two inputs"),
                        ));
                    }
                }
            }
            Operator::ObjectDetection { target, .. } | Operator::ObjectCounting { target, .. } => {
                check_column(target, true, catalog, &path, &mut errors);
                if !below.contains(&target.table) {
                    errors.push(PlanError::at(
                        ErrorKind::PredicateScope,
                        &path,
                        format!("{kind} targets {target}, a table not scanned below it"),
                    ));
                }
                if let Operator::ObjectCounting { threshold, .. } = &node.op {
                    if *threshold < 0 {
                        errors.push(PlanError::at(
                            ErrorKind::NegativeThreshold,
                            &path,
                            format!("counting threshold {threshold} is negative"),
                        ));
                    }
                }
            }
        }
    }
    errors
}

/// Validity of a parsed candidate: structure first, equivalence only when
/// the structure is clean.
pub fn check_plan(
    candidate: &PlanNode,
    initial: &PlanNode,
    catalog: &Catalog,
    matcher: &PhraseMatcher,
) -> Vec<PlanError> {
    let errors = check_structure(candidate, catalog);
    if !errors.is_empty() {
        return errors;
    }
    check_equivalence(initial, candidate, matcher)
}

/// Validity of a candidate plan document.
pub fn check_error(
    candidate_text: &str,
    initial: &PlanNode,
    catalog: &Catalog,
    matcher: &PhraseMatcher,
) -> Vec<PlanError> {
    match parse_plan(candidate_text) {
        Ok(plan) => check_plan(&plan, initial, catalog, matcher),
        Err(e) => vec![PlanError::unparseable(e.to_string())],
    }
}
