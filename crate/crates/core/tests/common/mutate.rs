//! Seeded injection of one structural defect into a valid plan.

use mmqo_core::cost::Catalog;
use mmqo_core::monitor::ErrorKind;
use mmqo_core::plan::{
    referenced_tables, serialize_plan, ColumnRef, Comparator, Ident, Literal, NodePath, Operator, OperatorKind,
    PlanNode, SimplePredicate,
};
use rand::seq::SliceRandom;
use rand::Rng;

fn sites<F: Fn(&PlanNode) -> bool>(p: &PlanNode, keep: F) -> Vec<NodePath> {
    p.walk().into_iter().filter(|(_, n)| keep(n)).map(|(path, _)| path).collect()
}

fn edit<R: Rng, K, E>(p: &PlanNode, rng: &mut R, keep: K, change: E) -> Option<PlanNode>
where
    K: Fn(&PlanNode) -> bool,
    E: FnOnce(&PlanNode, &mut R) -> Option<PlanNode>,
{
    let path = sites(p, keep).choose(rng)?.clone();
    let node = p.get(&path)?.clone();
    let replacement = change(&node, rng)?;
    p.replace_at(&path, replacement)
}

fn is_kind(k: OperatorKind) -> impl Fn(&PlanNode) -> bool {
    move |n| n.op.kind() == k
}

/// Plan text carrying a defect of `kind`. `None` when the plan offers no
/// site for that defect.
pub fn inject<R: Rng>(kind: ErrorKind, p: &PlanNode, catalog: &Catalog, rng: &mut R) -> Option<String> {
    let mutant = match kind {
        ErrorKind::Unparseable => {
            let text = serialize_plan(p);
            return Some(if rng.gen_bool(0.5) {
                let cut = rng.gen_range(1..text.len() - 1);
                text[..cut].to_string()
            } else {
                text.replacen("\"Operator\"", "\"Operatr\"", 1)
            });
        }
        ErrorKind::Arity => {
            if rng.gen_bool(0.5) {
                edit(p, rng, is_kind(OperatorKind::Join), |n, _| {
                    Some(PlanNode { right: None, ..n.clone() })
                })
            } else {
                edit(
                    p,
                    rng,
                    |n| n.op.kind() != OperatorKind::Join && n.op.kind() != OperatorKind::TableScan,
                    |n, _| {
                        let extra = n.left.clone()?;
                        Some(PlanNode { right: Some(extra), ..n.clone() })
                    },
                )
            }
        }
        ErrorKind::UnknownTable => edit(p, rng, is_kind(OperatorKind::TableScan), |_, rng| {
            Some(PlanNode::scan(format!("ghost_{}", rng.gen_range(0..1000))))
        }),
        ErrorKind::UnknownColumn => edit(p, rng, is_kind(OperatorKind::Select), |n, rng| {
            let Operator::Select { predicates } = &n.op else { return None };
            let mut predicates = predicates.clone();
            let i = rng.gen_range(0..predicates.len());
            predicates[i].target.column = Ident::new("no_such_column");
            Some(PlanNode { op: Operator::Select { predicates }, ..n.clone() })
        }),
        ErrorKind::PredicateScope => edit(p, rng, is_kind(OperatorKind::TableScan), |n, rng| {
            let here = referenced_tables(n);
            let others: Vec<(&String, _)> = catalog
                .tables
                .iter()
                .filter(|(name, _)| !here.contains(&Ident::new(name.as_str())))
                .collect();
            let (name, stats) = others.choose(rng)?;
            let column = stats.columns.iter().find(|c| !stats.image_columns.contains(c))?;
            let pred = SimplePredicate::new(
                ColumnRef::new(name.as_str(), column.as_str()),
                Comparator::Gt,
                Literal::Int(rng.gen_range(0..100)),
            );
            Some(PlanNode::unary(Operator::Select { predicates: vec![pred] }, n.clone()))
        }),
        ErrorKind::NonImageColumn => edit(p, rng, |n| n.op.kind().is_visual(), |n, rng| {
            let target = n.op.visual_target()?.clone();
            let stats = catalog.table(&target.table)?;
            let plain: Vec<&String> = stats.columns.iter().filter(|c| !stats.image_columns.contains(c)).collect();
            let column = Ident::new(plain.choose(rng)?.as_str());
            let retarget = ColumnRef { column, ..target };
            let op = match &n.op {
                Operator::ObjectDetection { objects, .. } => Operator::ObjectDetection {
                    target: retarget,
                    objects: objects.clone(),
                },
                Operator::ObjectCounting { object, threshold, .. } => Operator::ObjectCounting {
                    target: retarget,
                    object: object.clone(),
                    threshold: *threshold,
                },
                _ => return None,
            };
            Some(PlanNode { op, ..n.clone() })
        }),
        ErrorKind::NegativeThreshold => edit(p, rng, is_kind(OperatorKind::ObjectCounting), |n, rng| {
            let Operator::ObjectCounting { target, object, .. } = &n.op else { return None };
            Some(PlanNode {
                op: Operator::ObjectCounting {
                    target: target.clone(),
                    object: object.clone(),
                    threshold: -rng.gen_range(1..10),
                },
                ..n.clone()
            })
        }),
        ErrorKind::LeafNotScan => edit(p, rng, is_kind(OperatorKind::TableScan), |n, rng| {
            let Operator::TableScan { table } = &n.op else { return None };
            let stats = catalog.table(table)?;
            let column = stats.columns.iter().find(|c| !stats.image_columns.contains(c))?;
            let pred = SimplePredicate::new(
                ColumnRef::new(table.as_str(), column.as_str()),
                Comparator::Lt,
                Literal::Int(rng.gen_range(0..100)),
            );
            Some(PlanNode::leaf(Operator::Select { predicates: vec![pred] }))
        }),
        ErrorKind::Inequivalent => None,
    }?;
    Some(serialize_plan(&mutant))
}
