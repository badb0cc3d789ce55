//! Policy-driven plan rewrites.
//!
//! Three policies, each a family of single-step rewrites:
//!
//! - **Movement**: expensive operators belong near the root. Adjacent unary
//!   filters are swapped when the child is costlier per row than its parent,
//!   and filters are pushed below or pulled above joins wherever their
//!   tables allow.
//! - **Merge**: a parent/child pair of same-type filters on the same target
//!   collapses into one operator.
//! - **Removal**: of two adjacent filters on the same target, the one with
//!   the looser condition goes.
//!
//! Every rewrite preserves the plan's constraint set, so its result passes
//! the error monitor against the source plan.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{Catalog, CostParams};
use crate::monitor::PhraseMatcher;
use crate::plan::{
    canonical_key, referenced_tables, NodePath, Operator, OperatorKind, PlanNode, SimplePredicate, Step,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    Movement,
    Merge,
    Removal,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Movement => "movement",
            Policy::Merge => "merge",
            Policy::Removal => "removal",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rewrite {
    pub policy: Policy,
    pub site: NodePath,
    pub description: String,
    pub result: PlanNode,
}

fn is_filter(kind: OperatorKind) -> bool {
    matches!(
        kind,
        OperatorKind::Select | OperatorKind::ObjectDetection | OperatorKind::ObjectCounting
    )
}

/// The node's only child, when it is a well-formed unary operator.
fn unary_child(node: &PlanNode) -> Option<&PlanNode> {
    match (&node.left, &node.right) {
        (Some(c), None) if is_filter(node.op.kind()) => Some(c),
        _ => None,
    }
}

fn rewrite(plan: &PlanNode, policy: Policy, site: &NodePath, subtree: PlanNode, description: String) -> Rewrite {
    Rewrite {
        policy,
        site: site.clone(),
        description,
        result: plan
            .replace_at(site, subtree)
            .expect("site comes from walking the same plan"),
    }
}

/// Policy 1 rewrites.
pub fn enumerate_moves(plan: &PlanNode, params: &CostParams) -> Vec<Rewrite> {
    let mut out = Vec::new();
    let rho = |k: OperatorKind| params.rho.get(k).unwrap_or(0.0);
    for (path, node) in plan.walk() {
        if let Some(child) = unary_child(node) {
            // (a) adjacent unary filters out of cost order.
            if let Some(grandchild) = unary_child(child) {
                if rho(child.op.kind()) > rho(node.op.kind()) {
                    let swapped = PlanNode::unary(
                        child.op.clone(),
                        PlanNode::unary(node.op.clone(), grandchild.clone()),
                    );
                    out.push(rewrite(
                        plan,
                        Policy::Movement,
                        &path,
                        swapped,
                        format!("run {} before {}", node.op.kind(), child.op.kind()),
                    ));
                }
            }
            // (b) push a filter below a join into the side holding its tables.
            if let (OperatorKind::Join, Some(jl), Some(jr)) =
                (child.op.kind(), child.left.as_deref(), child.right.as_deref())
            {
                let needs = node.op.referenced_tables();
                for (step, side) in [(Step::Left, jl), (Step::Right, jr)] {
                    if needs.is_subset(&referenced_tables(side)) {
                        let pushed = PlanNode::unary(node.op.clone(), side.clone());
                        let mut join = child.clone();
                        match step {
                            Step::Left => join.left = Some(Box::new(pushed)),
                            Step::Right => join.right = Some(Box::new(pushed)),
                        }
                        out.push(rewrite(
                            plan,
                            Policy::Movement,
                            &path,
                            join,
                            format!("push {} below the join ({step:?} side)", node.op.kind()),
                        ));
                    }
                }
            }
        }
        // (b') pull a filter that sits directly under a join above it.
        if let (OperatorKind::Join, Some(_), Some(_)) =
            (node.op.kind(), node.left.as_deref(), node.right.as_deref())
        {
            for step in [Step::Left, Step::Right] {
                let side = node.child(step).expect("checked above");
                if let Some(inner) = unary_child(side) {
                    let mut join = node.clone();
                    let slot = match step {
                        Step::Left => &mut join.left,
                        Step::Right => &mut join.right,
                    };
                    *slot = Some(Box::new(inner.clone()));
                    let lifted = PlanNode::unary(side.op.clone(), join);
                    out.push(rewrite(
                        plan,
                        Policy::Movement,
                        &path,
                        lifted,
                        format!("pull {} above the join ({step:?} side)", side.op.kind()),
                    ));
                }
            }
        }
    }
    out
}

fn single_table(preds: &[SimplePredicate]) -> Option<&crate::plan::Ident> {
    let first = &preds.first()?.target.table;
    preds.iter().all(|p| &p.target.table == first).then_some(first)
}

/// Policy 2 rewrites.
pub fn enumerate_merges(plan: &PlanNode, matcher: &PhraseMatcher) -> Vec<Rewrite> {
    let mut out = Vec::new();
    for (path, node) in plan.walk() {
        let Some(child) = unary_child(node) else { continue };
        let Some(grandchild) = unary_child(child) else { continue };
        match (&node.op, &child.op) {
            (Operator::Select { predicates: upper }, Operator::Select { predicates: lower }) => {
                let mut all = upper.clone();
                for q in lower {
                    if !all.contains(q) {
                        all.push(q.clone());
                    }
                }
                if single_table(&all).is_some() {
                    let merged = PlanNode::unary(Operator::Select { predicates: all }, grandchild.clone());
                    out.push(rewrite(
                        plan,
                        Policy::Merge,
                        &path,
                        merged,
                        "merge adjacent selections on the same table".into(),
                    ));
                }
            }
            (
                Operator::ObjectDetection {
                    target: t1,
                    objects: upper,
                },
                Operator::ObjectDetection {
                    target: t2,
                    objects: lower,
                },
            ) if t1 == t2 => {
                let mut objects = upper.clone();
                for o in lower {
                    if !objects.iter().any(|x| matcher.same_object(x, o)) {
                        objects.push(o.clone());
                    }
                }
                let merged = PlanNode::unary(
                    Operator::ObjectDetection {
                        target: t1.clone(),
                        objects,
                    },
                    grandchild.clone(),
                );
                out.push(rewrite(
                    plan,
                    Policy::Merge,
                    &path,
                    merged,
                    format!("merge adjacent object detections on {t1}"),
                ));
            }
            _ => {}
        }
    }
    out
}

/// Drops the unary node at `path`, splicing its child into its place.
fn without_node(plan: &PlanNode, path: &NodePath) -> PlanNode {
    let node = plan.get(path).expect("path from walk");
    let child = node.left.as_deref().expect("unary node").clone();
    plan.replace_at(path, child).expect("path from walk")
}

fn drop_predicate(node: &PlanNode, idx: usize) -> PlanNode {
    let Operator::Select { predicates } = &node.op else {
        unreachable!("caller passes selections")
    };
    if predicates.len() == 1 {
        return node.left.as_deref().expect("unary").clone();
    }
    let mut kept = predicates.clone();
    kept.remove(idx);
    PlanNode {
        op: Operator::Select { predicates: kept },
        left: node.left.clone(),
        right: None,
    }
}

/// Predicates of `preds` made redundant by another predicate in `within`
/// (`same` when both lists are the same node; then of two identical
/// predicates only the later one counts as redundant).
fn redundant(preds: &[SimplePredicate], within: &[SimplePredicate], same: bool) -> Vec<usize> {
    (0..preds.len())
        .filter(|&j| {
            within.iter().enumerate().any(|(i, p)| {
                if same && i == j {
                    return false;
                }
                let mutual = preds[j].implies(p);
                p.implies(&preds[j]) && (!mutual || !same || i < j)
            })
        })
        .collect()
}

/// Policy 3 rewrites.
pub fn enumerate_removals(plan: &PlanNode, matcher: &PhraseMatcher) -> Vec<Rewrite> {
    let mut out = Vec::new();
    for (path, node) in plan.walk() {
        // Looser predicate inside one selection.
        if let (Operator::Select { predicates }, Some(_)) = (&node.op, unary_child(node)) {
            for j in redundant(predicates, predicates, true) {
                out.push(rewrite(
                    plan,
                    Policy::Removal,
                    &path,
                    drop_predicate(node, j),
                    format!("drop {} (implied by a stricter predicate)", predicates[j]),
                ));
            }
        }
        let Some(child) = unary_child(node) else { continue };
        let child_path = path.child(Step::Left);
        match (&node.op, &child.op) {
            (Operator::Select { predicates: upper }, Operator::Select { predicates: lower })
                if child.left.is_some() =>
            {
                for j in redundant(lower, upper, false) {
                    let replaced = plan
                        .replace_at(&child_path, drop_predicate(child, j))
                        .expect("path from walk");
                    out.push(Rewrite {
                        policy: Policy::Removal,
                        site: child_path.clone(),
                        description: format!("drop {} (implied by its parent)", lower[j]),
                        result: replaced,
                    });
                }
                for j in redundant(upper, lower, false) {
                    if lower.iter().any(|p| p == &upper[j]) {
                        // Identical predicates: removing the lower copy suffices.
                        continue;
                    }
                    out.push(rewrite(
                        plan,
                        Policy::Removal,
                        &path,
                        drop_predicate(node, j),
                        format!("drop {} (implied by its child)", upper[j]),
                    ));
                }
            }
            (
                Operator::ObjectCounting {
                    target: t1,
                    object: o1,
                    threshold: th1,
                },
                Operator::ObjectCounting {
                    target: t2,
                    object: o2,
                    threshold: th2,
                },
            ) if t1 == t2 && matcher.same_object(o1, o2) => {
                let (site, dropped) = if th1 < th2 {
                    (path.clone(), *th1)
                } else {
                    (child_path.clone(), *th2)
                };
                out.push(Rewrite {
                    policy: Policy::Removal,
                    site: site.clone(),
                    description: format!("drop the looser count of {o1} (threshold {dropped})"),
                    result: without_node(plan, &site),
                });
            }
            (
                Operator::ObjectCounting {
                    target: tc,
                    object,
                    threshold,
                },
                Operator::ObjectDetection { target: td, objects },
            ) if tc == td && *threshold >= 0 && objects.iter().all(|o| matcher.same_object(o, object)) => {
                out.push(Rewrite {
                    policy: Policy::Removal,
                    site: child_path.clone(),
                    description: format!("drop detection covered by the count of {object}"),
                    result: without_node(plan, &child_path),
                });
            }
            (
                Operator::ObjectDetection { target: td, objects },
                Operator::ObjectCounting {
                    target: tc,
                    object,
                    threshold,
                },
            ) if tc == td && *threshold >= 0 && objects.iter().all(|o| matcher.same_object(o, object)) => {
                out.push(Rewrite {
                    policy: Policy::Removal,
                    site: path.clone(),
                    description: format!("drop detection covered by the count of {object}"),
                    result: without_node(plan, &path),
                });
            }
            _ => {}
        }
    }
    out
}

/// All rewrites, ordered by policy then site, deduplicated by canonical
/// form; rewrites that leave the canonical form unchanged are dropped.
pub fn all_rewrites(
    plan: &PlanNode,
    catalog: &Catalog,
    params: &CostParams,
    matcher: &PhraseMatcher,
) -> Vec<Rewrite> {
    all_rewrites_keyed(plan, catalog, params, matcher)
        .into_iter()
        .map(|(r, _)| r)
        .collect()
}

/// [`all_rewrites`] paired with each result's canonical key.
pub fn all_rewrites_keyed(
    plan: &PlanNode,
    _catalog: &Catalog,
    params: &CostParams,
    matcher: &PhraseMatcher,
) -> Vec<(Rewrite, String)> {
    let mut all = enumerate_moves(plan, params);
    all.extend(enumerate_merges(plan, matcher));
    all.extend(enumerate_removals(plan, matcher));
    all.sort_by(|a, b| (a.policy, &a.site).cmp(&(b.policy, &b.site)));
    let mut seen = HashSet::new();
    seen.insert(canonical_key(plan));
    all.into_iter()
        .map(|r| {
            let key = canonical_key(&r.result);
            (r, key)
        })
        .filter(|(_, key)| seen.insert(key.clone()))
        .collect()
}
