//! Constraint-set equivalence for conjunctive select/join/visual plans.
//!
//! Under inner joins and conjunctive filters, a plan's result is fixed by
//! its scanned tables, its join keys and its filter conditions; placement
//! does not matter once the structure is valid. Two plans are equivalent
//! when each side's every filter condition is implied by some condition on
//! the other side, which admits removal of subsumed filters and rejects
//! both dropped and added constraints.

use super::{PhraseMatcher, PlanError};
use crate::plan::{scanned_tables, ColumnRef, Ident, Operator, PlanNode, SimplePredicate};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VisualAtom {
    Detect {
        target: ColumnRef,
        object: String,
    },
    Count {
        target: ColumnRef,
        object: String,
        threshold: i64,
    },
}

impl VisualAtom {
    pub fn target(&self) -> &ColumnRef {
        match self {
            VisualAtom::Detect { target, .. } | VisualAtom::Count { target, .. } => target,
        }
    }

    pub fn object(&self) -> &str {
        match self {
            VisualAtom::Detect { object, .. } | VisualAtom::Count { object, .. } => object,
        }
    }

    /// Whether rows passing `self` always pass `other`. Counting more than
    /// `t >= 0` objects implies detecting the object; detection never
    /// implies a count.
    pub fn implies(&self, other: &VisualAtom, matcher: &PhraseMatcher) -> bool {
        if self.target() != other.target() {
            return false;
        }
        let kinds_ok = match (self, other) {
            (VisualAtom::Count { threshold: a, .. }, VisualAtom::Count { threshold: b, .. }) => a >= b,
            (VisualAtom::Count { threshold, .. }, VisualAtom::Detect { .. }) => *threshold >= 0,
            (VisualAtom::Detect { .. }, VisualAtom::Detect { .. }) => true,
            (VisualAtom::Detect { .. }, VisualAtom::Count { .. }) => false,
        };
        kinds_ok && matcher.same_object(self.object(), other.object())
    }
}

impl std::fmt::Display for VisualAtom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VisualAtom::Detect { target, object } => write!(f, "detect {object:?} on {target}"),
            VisualAtom::Count {
                target,
                object,
                threshold,
            } => write!(f, "count {object:?} > {threshold} on {target}"),
        }
    }
}

/// Everything a conjunctive plan asserts about its result.
#[derive(Clone, Debug, Default)]
pub struct Constraints {
    pub scans: Vec<Ident>,
    /// Unordered key pairs, each stored smaller-first, sorted.
    pub joins: Vec<(ColumnRef, ColumnRef)>,
    pub predicates: Vec<SimplePredicate>,
    pub visual: Vec<VisualAtom>,
}

impl Constraints {
    pub fn of(plan: &PlanNode) -> Self {
        let mut c = Constraints {
            scans: scanned_tables(plan),
            ..Default::default()
        };
        for (_, node) in plan.walk() {
            match &node.op {
                Operator::TableScan { .. } => {}
                Operator::Select { predicates } => c.predicates.extend(predicates.iter().cloned()),
                Operator::Join {
                    left_key,
                    right_key,
                } => {
                    let pair = if left_key <= right_key {
                        (left_key.clone(), right_key.clone())
                    } else {
                        (right_key.clone(), left_key.clone())
                    };
                    c.joins.push(pair);
                }
                Operator::ObjectDetection { target, objects } => {
                    c.visual.extend(objects.iter().map(|o| VisualAtom::Detect {
                        target: target.clone(),
                        object: o.clone(),
                    }))
                }
                Operator::ObjectCounting {
                    target,
                    object,
                    threshold,
                } => c.visual.push(VisualAtom::Count {
                    target: target.clone(),
                    object: object.clone(),
                    threshold: *threshold,
                }),
            }
        }
        c.joins.sort();
        c
    }
}

/// First predicate of `required` that no predicate of `available` implies.
pub fn predicate_closure_covers<'a>(
    available: &[SimplePredicate],
    required: &'a [SimplePredicate],
) -> Option<&'a SimplePredicate> {
    required
        .iter()
        .find(|r| !available.iter().any(|a| a.implies(r)))
}

fn visual_uncovered<'a>(
    available: &[VisualAtom],
    required: &'a [VisualAtom],
    matcher: &PhraseMatcher,
) -> Option<&'a VisualAtom> {
    required
        .iter()
        .find(|r| !available.iter().any(|a| a.implies(r, matcher)))
}

fn fmt_idents(ids: &[Ident]) -> String {
    ids.iter().map(Ident::to_string).collect::<Vec<_>>().join(", ")
}

/// Empty iff `candidate` computes the same result as `initial`.
pub fn check_equivalence(
    initial: &PlanNode,
    candidate: &PlanNode,
    matcher: &PhraseMatcher,
) -> Vec<PlanError> {
    let a = Constraints::of(initial);
    let b = Constraints::of(candidate);
    if a.scans != b.scans {
        return vec![PlanError::inequivalent(format!(
            "scanned tables differ: initial [{}], candidate [{}]",
            fmt_idents(&a.scans),
            fmt_idents(&b.scans)
        ))];
    }
    if a.joins != b.joins {
        let missing = a
            .joins
            .iter()
            .find(|j| !b.joins.contains(j))
            .or_else(|| b.joins.iter().find(|j| !a.joins.contains(j)));
        let detail = match missing {
            Some((l, r)) => format!("join {l} = {r} is not matched"),
            None => "join key multiplicities differ".to_string(),
        };
        return vec![PlanError::inequivalent(detail)];
    }
    if let Some(p) = predicate_closure_covers(&b.predicates, &a.predicates) {
        return vec![PlanError::inequivalent(format!(
            "predicate {p} is no longer enforced"
        ))];
    }
    if let Some(p) = predicate_closure_covers(&a.predicates, &b.predicates) {
        return vec![PlanError::inequivalent(format!(
            "predicate {p} is not part of the initial query"
        ))];
    }
    if let Some(v) = visual_uncovered(&b.visual, &a.visual, matcher) {
        return vec![PlanError::inequivalent(format!("{v} is no longer enforced"))];
    }
    if let Some(v) = visual_uncovered(&a.visual, &b.visual, matcher) {
        return vec![PlanError::inequivalent(format!(
            "{v} is not part of the initial query"
        ))];
    }
    Vec::new()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_operator;

    fn filter(op: &str, child: PlanNode) -> PlanNode {
        PlanNode::unary(parse_operator(op).unwrap(), child)
    }

    #[test]
    fn reflexive() {
        let p = filter("Select(T.a > 5)", PlanNode::scan("T"));
        assert!(check_equivalence(&p, &p, &PhraseMatcher::default()).is_empty());
    }

    #[test]
    fn dropped_predicate_rejected() {
        let p = filter("Select(T.a > 5)", PlanNode::scan("T"));
        let errors = check_equivalence(&p, &PlanNode::scan("T"), &PhraseMatcher::default());
        assert_eq!(errors.len(), 1);
        assert!(errors[0].detail.contains("T.a > 5"));
    }

    #[test]
    fn subsumed_predicate_may_go() {
        let p = filter("Select(T.a > 5)", filter("Select(T.a > 7)", PlanNode::scan("T")));
        let q = filter("Select(T.a > 7)", PlanNode::scan("T"));
        assert!(check_equivalence(&p, &q, &PhraseMatcher::default()).is_empty());
        let weaker = filter("Select(T.a > 5)", PlanNode::scan("T"));
        assert!(!check_equivalence(&p, &weaker, &PhraseMatcher::default()).is_empty());
    }

    #[test]
    fn stronger_candidate_rejected() {
        let p = filter("Select(T.a > 5)", PlanNode::scan("T"));
        let q = filter("Select(T.a > 9)", PlanNode::scan("T"));
        assert!(!check_equivalence(&p, &q, &PhraseMatcher::default()).is_empty());
    }

    #[test]
    fn counting_covers_detection() {
        let p = filter(
            "Object counting(T.img: how many men are there?: 1)",
            filter("Object detection(T.img: is there any man?)", PlanNode::scan("T")),
        );
        let q = filter("Object counting(T.img: how many men are there?: 1)", PlanNode::scan("T"));
        let m = PhraseMatcher::default();
        assert!(check_equivalence(&p, &q, &m).is_empty());
        // The reverse direction drops the count.
        let r = filter("Object detection(T.img: is there any man?)", PlanNode::scan("T"));
        assert!(!check_equivalence(&p, &r, &m).is_empty());
    }

    #[test]
    fn different_objects_rejected() {
        let p = filter("Object detection(T.img: are there men?)", PlanNode::scan("T"));
        let q = filter("Object detection(T.img: are there women?)", PlanNode::scan("T"));
        assert!(!check_equivalence(&p, &q, &PhraseMatcher::default()).is_empty());
    }
}
