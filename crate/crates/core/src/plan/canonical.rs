//! Canonical form: a normal form under predicate order, object order,
//! identifier case, phrase spacing and join commutativity.

use std::collections::BTreeSet;

use super::{ColumnRef, Ident, Operator, PlanNode, SimplePredicate};

pub fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn lower_ident(id: &Ident) -> Ident {
    Ident::new(id.lowercase())
}

fn lower_col(c: &ColumnRef) -> ColumnRef {
    ColumnRef {
        table: lower_ident(&c.table),
        column: lower_ident(&c.column),
    }
}

fn canonical_op(op: &Operator) -> Operator {
    match op {
        Operator::TableScan { table } => Operator::TableScan {
            table: lower_ident(table),
        },
        Operator::Select { predicates } => {
            let mut predicates: Vec<SimplePredicate> = predicates
                .iter()
                .map(|p| SimplePredicate {
                    target: lower_col(&p.target),
                    comparator: p.comparator,
                    value: p.value.clone(),
                })
                .collect();
            predicates.sort();
            Operator::Select { predicates }
        }
        Operator::Join {
            left_key,
            right_key,
        } => Operator::Join {
            left_key: lower_col(left_key),
            right_key: lower_col(right_key),
        },
        Operator::ObjectDetection { target, objects } => {
            let mut objects: Vec<String> = objects.iter().map(|o| normalize_phrase(o)).collect();
            objects.sort();
            Operator::ObjectDetection {
                target: lower_col(target),
                objects,
            }
        }
        Operator::ObjectCounting {
            target,
            object,
            threshold,
        } => Operator::ObjectCounting {
            target: lower_col(target),
            object: normalize_phrase(object),
            threshold: *threshold,
        },
    }
}

/// Canonical plan, its compact serialization and its scanned tables, built
/// in one bottom-up pass.
fn canon(plan: &PlanNode) -> (PlanNode, String, BTreeSet<Ident>) {
    let mut left = plan.left.as_deref().map(canon);
    let mut right = plan.right.as_deref().map(canon);
    let mut op = canonical_op(&plan.op);
    if let (
        Operator::Join {
            left_key,
            right_key,
        },
        Some(l),
        Some(r),
    ) = (&mut op, left.as_ref(), right.as_ref())
    {
        // Keys follow their sides before the sides are ordered.
        if !l.2.contains(&left_key.table) && l.2.contains(&right_key.table) {
            std::mem::swap(left_key, right_key);
        }
        if r.1 < l.1 {
            std::mem::swap(left_key, right_key);
            std::mem::swap(&mut left, &mut right);
        }
    }
    let mut tables = BTreeSet::new();
    if let Operator::TableScan { table } = &op {
        tables.insert(table.clone());
    }
    let key = format!(
        "{{\"Operator\":{},\"Left_child\":{},\"Right_child\":{}}}",
        serde_json::to_string(&op.to_string()).expect("strings always serialize"),
        left.as_ref().map_or("null", |c| c.1.as_str()),
        right.as_ref().map_or("null", |c| c.1.as_str()),
    );
    let mut child = |c: Option<(PlanNode, String, BTreeSet<Ident>)>| {
        c.map(|(node, _, t)| {
            tables.extend(t);
            Box::new(node)
        })
    };
    let node = PlanNode {
        op,
        left: child(left),
        right: child(right),
    };
    (node, key, tables)
}

pub fn canonicalize(plan: &PlanNode) -> PlanNode {
    canon(plan).0
}

/// Serialized canonical form; equal keys mean equal canonical plans.
pub fn canonical_key(plan: &PlanNode) -> String {
    key_of(plan).0
}

/// Key-only version of [`canon`]; it builds no plan.
fn key_of(plan: &PlanNode) -> (String, Vec<Ident>) {
    let mut left = plan.left.as_deref().map(key_of);
    let mut right = plan.right.as_deref().map(key_of);
    let mut op = canonical_op(&plan.op);
    if let (
        Operator::Join {
            left_key,
            right_key,
        },
        Some(l),
        Some(r),
    ) = (&mut op, left.as_ref(), right.as_ref())
    {
        if !l.1.contains(&left_key.table) && l.1.contains(&right_key.table) {
            std::mem::swap(left_key, right_key);
        }
        if r.0 < l.0 {
            std::mem::swap(left_key, right_key);
            std::mem::swap(&mut left, &mut right);
        }
    }
    let op_json = serde_json::to_string(&op.to_string()).expect("strings always serialize");
    let children_len = left.as_ref().map_or(4, |c| c.0.len()) + right.as_ref().map_or(4, |c| c.0.len());
    let mut key = String::with_capacity(op_json.len() + children_len + 44);
    key.push_str("{\"Operator\":");
    key.push_str(&op_json);
    key.push_str(",\"Left_child\":");
    key.push_str(left.as_ref().map_or("null", |c| c.0.as_str()));
    key.push_str(",\"Right_child\":");
    key.push_str(right.as_ref().map_or("null", |c| c.0.as_str()));
    key.push('}');
    let mut tables = match op {
        Operator::TableScan { table } => vec![table],
        _ => Vec::new(),
    };
    for (_, t) in left.into_iter().chain(right) {
        tables.extend(t);
    }
    (key, tables)
}
