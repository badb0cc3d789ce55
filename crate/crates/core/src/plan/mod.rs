//! Plan-tree IR for conjunctive multi-modal queries.
//!
//! A plan is a binary tree over five operator kinds: table scans at the
//! leaves, relational `Select`/`Join`, and the two visual filters
//! (object detection and object counting) that run over image-path columns.
//! Plans travel as JSON documents with the keys `Operator`, `Left_child`
//! and `Right_child`; the operator itself is a short string in the
//! `Select(T.a > 5 AND ...)` / `Object counting(T.c: how many X are there?: 2)`
//! notation.

mod canonical;
mod parse;
mod serialize;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

pub use canonical::{canonical_key, canonicalize, normalize_phrase};
pub use parse::{parse_operator, parse_plan, ParseError};
pub use serialize::{serialize_plan, serialize_plan_pretty, to_json_value};

/// Table or column identifier. Comparison ignores ASCII case, the way
/// unquoted SQL identifiers behave; the original spelling is kept for output.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ident(String);

impl Ident {
    pub fn new(name: impl Into<String>) -> Self {
        Ident(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn lowercase(&self) -> String {
        self.0.to_ascii_lowercase()
    }

    pub fn is_valid(name: &str) -> bool {
        !name.is_empty()
            && name
                .chars()
                .all(|c| !c.is_whitespace() && c != '.' && c != '(' && c != ')' && c != ':')
    }
}

impl PartialEq for Ident {
    fn eq(&self, other: &Self) -> bool {
        self.0.eq_ignore_ascii_case(&other.0)
    }
}

impl Eq for Ident {}

impl Hash for Ident {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for b in self.0.bytes() {
            state.write_u8(b.to_ascii_lowercase());
        }
    }
}

impl Ord for Ident {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .bytes()
            .map(|b| b.to_ascii_lowercase())
            .cmp(other.0.bytes().map(|b| b.to_ascii_lowercase()))
    }
}

impl PartialOrd for Ident {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Ident {
    fn from(s: &str) -> Self {
        Ident::new(s)
    }
}

/// `Table.column`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub table: Ident,
    pub column: Ident,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: Ident::new(table),
            column: Ident::new(column),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub const ALL: [Comparator; 6] = [
        Comparator::Eq,
        Comparator::Ne,
        Comparator::Lt,
        Comparator::Le,
        Comparator::Gt,
        Comparator::Ge,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        matches!(
            self,
            Comparator::Lt | Comparator::Le | Comparator::Gt | Comparator::Ge
        )
    }

    /// Evaluates `lhs <op> rhs`.
    pub fn holds<T: PartialOrd + ?Sized>(self, lhs: &T, rhs: &T) -> bool {
        match self {
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Predicate constant. Decimals always render with a fractional part so that
/// they re-parse as decimals.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Literal {
    Int(i64),
    Decimal(OrderedFloat<f64>),
    Str(String),
}

impl Literal {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Int(v) => Some(*v as f64),
            Literal::Decimal(v) => Some(v.0),
            Literal::Str(_) => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, Literal::Str(_))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Decimal(v) => {
                let s = format!("{}", v.0);
                if s.contains('.') || s.contains("inf") || s.contains("NaN") {
                    f.write_str(&s)
                } else {
                    write!(f, "{s}.0")
                }
            }
            Literal::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

/// `Table.column <comp> <value>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SimplePredicate {
    pub target: ColumnRef,
    pub comparator: Comparator,
    pub value: Literal,
}

impl SimplePredicate {
    pub fn new(target: ColumnRef, comparator: Comparator, value: Literal) -> Self {
        SimplePredicate {
            target,
            comparator,
            value,
        }
    }

    /// Whether every row satisfying `self` also satisfies `other`.
    ///
    /// Only same-column pairs can subsume each other. Same-direction bounds
    /// chain (`> 7` implies `> 5`), an equality implies every bound it
    /// satisfies, and mixed-direction pairs never subsume.
    pub fn implies(&self, other: &SimplePredicate) -> bool {
        if self.target != other.target {
            return false;
        }
        if self == other {
            return true;
        }
        use Comparator::*;
        match (&self.value, &other.value) {
            (Literal::Str(a), Literal::Str(b)) => match (self.comparator, other.comparator) {
                (Eq, Ne) => a != b,
                _ => false,
            },
            (va, vb) => {
                let (Some(a), Some(b)) = (va.as_f64(), vb.as_f64()) else {
                    return false;
                };
                match (self.comparator, other.comparator) {
                    (Eq, op) => op.holds(&a, &b),
                    (Gt, Gt) | (Gt, Ge) | (Ge, Ge) => a >= b,
                    (Ge, Gt) => a > b,
                    (Lt, Lt) | (Lt, Le) | (Le, Le) => a <= b,
                    (Le, Lt) => a < b,
                    (Ne, Ne) => a == b,
                    _ => false,
                }
            }
        }
    }
}

impl fmt::Display for SimplePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.target, self.comparator, self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorKind {
    TableScan,
    Select,
    Join,
    ObjectDetection,
    ObjectCounting,
}

impl OperatorKind {
    pub const FILTERS: [OperatorKind; 4] = [
        OperatorKind::Select,
        OperatorKind::Join,
        OperatorKind::ObjectDetection,
        OperatorKind::ObjectCounting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::TableScan => "TableScan",
            OperatorKind::Select => "Select",
            OperatorKind::Join => "Join",
            OperatorKind::ObjectDetection => "ObjectDetection",
            OperatorKind::ObjectCounting => "ObjectCounting",
        }
    }

    /// Number of children the operator must have.
    pub fn arity(self) -> usize {
        match self {
            OperatorKind::TableScan => 0,
            OperatorKind::Join => 2,
            _ => 1,
        }
    }

    pub fn is_visual(self) -> bool {
        matches!(
            self,
            OperatorKind::ObjectDetection | OperatorKind::ObjectCounting
        )
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operator {
    TableScan {
        table: Ident,
    },
    Select {
        predicates: Vec<SimplePredicate>,
    },
    Join {
        left_key: ColumnRef,
        right_key: ColumnRef,
    },
    /// Conjunction: a row passes when every listed object is present.
    ObjectDetection {
        target: ColumnRef,
        objects: Vec<String>,
    },
    /// Passes rows whose image holds strictly more than `threshold` objects.
    /// Negative thresholds parse so the error monitor can report them.
    ObjectCounting {
        target: ColumnRef,
        object: String,
        threshold: i64,
    },
}

impl Operator {
    pub fn kind(&self) -> OperatorKind {
        match self {
            Operator::TableScan { .. } => OperatorKind::TableScan,
            Operator::Select { .. } => OperatorKind::Select,
            Operator::Join { .. } => OperatorKind::Join,
            Operator::ObjectDetection { .. } => OperatorKind::ObjectDetection,
            Operator::ObjectCounting { .. } => OperatorKind::ObjectCounting,
        }
    }

    pub fn scan(table: impl Into<String>) -> Self {
        Operator::TableScan {
            table: Ident::new(table),
        }
    }

    /// Tables named by the operator's own predicate, key, or target.
    pub fn referenced_tables(&self) -> BTreeSet<Ident> {
        match self {
            Operator::TableScan { .. } => BTreeSet::new(),
            Operator::Select { predicates } => {
                predicates.iter().map(|p| p.target.table.clone()).collect()
            }
            Operator::Join {
                left_key,
                right_key,
            } => [left_key.table.clone(), right_key.table.clone()]
                .into_iter()
                .collect(),
            Operator::ObjectDetection { target, .. } | Operator::ObjectCounting { target, .. } => {
                std::iter::once(target.table.clone()).collect()
            }
        }
    }

    /// Visual target column, for detection and counting.
    pub fn visual_target(&self) -> Option<&ColumnRef> {
        match self {
            Operator::ObjectDetection { target, .. } | Operator::ObjectCounting { target, .. } => {
                Some(target)
            }
            _ => None,
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operator::TableScan { table } => write!(f, "TableScan({table})"),
            Operator::Select { predicates } => {
                f.write_str("Select(")?;
                for (i, p) in predicates.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str(")")
            }
            Operator::Join {
                left_key,
                right_key,
            } => write!(f, "Join({left_key} = {right_key})"),
            Operator::ObjectDetection { target, objects } => {
                write!(f, "Object detection({target}: are there {}?)", objects.join(" and "))
            }
            Operator::ObjectCounting {
                target,
                object,
                threshold,
            } => write!(
                f,
                "Object counting({target}: how many {object} are there?: {threshold})"
            ),
        }
    }
}

/// One step from a node to a child.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Step {
    Left,
    Right,
}

/// Location of a node, as the sequence of steps taken from the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodePath(pub Vec<Step>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn child(&self, step: Step) -> Self {
        let mut steps = self.0.clone();
        steps.push(step);
        NodePath(steps)
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("/");
        }
        for step in &self.0 {
            f.write_str(match step {
                Step::Left => "/L",
                Step::Right => "/R",
            })?;
        }
        Ok(())
    }
}

/// Binary plan tree. Any child combination is representable so that
/// malformed proposals can be diagnosed instead of rejected outright.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PlanNode {
    pub op: Operator,
    pub left: Option<Box<PlanNode>>,
    pub right: Option<Box<PlanNode>>,
}

impl PlanNode {
    pub fn leaf(op: Operator) -> Self {
        PlanNode {
            op,
            left: None,
            right: None,
        }
    }

    pub fn scan(table: impl Into<String>) -> Self {
        PlanNode::leaf(Operator::scan(table))
    }

    pub fn unary(op: Operator, child: PlanNode) -> Self {
        PlanNode {
            op,
            left: Some(Box::new(child)),
            right: None,
        }
    }

    pub fn binary(op: Operator, left: PlanNode, right: PlanNode) -> Self {
        PlanNode {
            op,
            left: Some(Box::new(left)),
            right: Some(Box::new(right)),
        }
    }

    pub fn children(&self) -> impl Iterator<Item = &PlanNode> {
        self.left.iter().chain(self.right.iter()).map(|c| c.as_ref())
    }

    pub fn child(&self, step: Step) -> Option<&PlanNode> {
        match step {
            Step::Left => self.left.as_deref(),
            Step::Right => self.right.as_deref(),
        }
    }

    pub fn child_count(&self) -> usize {
        self.left.is_some() as usize + self.right.is_some() as usize
    }

    pub fn get(&self, path: &NodePath) -> Option<&PlanNode> {
        path.0.iter().try_fold(self, |node, step| node.child(*step))
    }

    pub fn get_mut(&mut self, path: &NodePath) -> Option<&mut PlanNode> {
        let mut node = self;
        for step in &path.0 {
            node = match step {
                Step::Left => node.left.as_deref_mut()?,
                Step::Right => node.right.as_deref_mut()?,
            };
        }
        Some(node)
    }

    /// Returns a copy with the subtree at `path` replaced.
    pub fn replace_at(&self, path: &NodePath, subtree: PlanNode) -> Option<PlanNode> {
        let mut out = self.clone();
        *out.get_mut(path)? = subtree;
        Some(out)
    }

    /// Pre-order walk yielding every node with its path.
    pub fn walk(&self) -> Vec<(NodePath, &PlanNode)> {
        let mut out = Vec::new();
        let mut stack = vec![(NodePath::root(), self)];
        while let Some((path, node)) = stack.pop() {
            if let Some(r) = node.right.as_deref() {
                stack.push((path.child(Step::Right), r));
            }
            if let Some(l) = node.left.as_deref() {
                stack.push((path.child(Step::Left), l));
            }
            out.push((path, node));
        }
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().map(PlanNode::node_count).sum::<usize>()
    }

    /// Number of non-scan operators.
    pub fn operator_count(&self) -> usize {
        let census = operator_census(self);
        census.total() - census.table_scan
    }
}

impl fmt::Display for PlanNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_plan(self))
    }
}

/// Per-kind node counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub table_scan: usize,
    pub select: usize,
    pub join: usize,
    pub detection: usize,
    pub counting: usize,
}

impl Census {
    pub fn get(&self, kind: OperatorKind) -> usize {
        match kind {
            OperatorKind::TableScan => self.table_scan,
            OperatorKind::Select => self.select,
            OperatorKind::Join => self.join,
            OperatorKind::ObjectDetection => self.detection,
            OperatorKind::ObjectCounting => self.counting,
        }
    }

    pub fn total(&self) -> usize {
        self.table_scan + self.select + self.join + self.detection + self.counting
    }
}

pub fn operator_census(plan: &PlanNode) -> Census {
    let mut census = Census::default();
    for (_, node) in plan.walk() {
        match node.op.kind() {
            OperatorKind::TableScan => census.table_scan += 1,
            OperatorKind::Select => census.select += 1,
            OperatorKind::Join => census.join += 1,
            OperatorKind::ObjectDetection => census.detection += 1,
            OperatorKind::ObjectCounting => census.counting += 1,
        }
    }
    census
}

/// All tables scanned anywhere in the (sub)tree.
pub fn referenced_tables(plan: &PlanNode) -> BTreeSet<Ident> {
    plan.walk()
        .into_iter()
        .filter_map(|(_, n)| match &n.op {
            Operator::TableScan { table } => Some(table.clone()),
            _ => None,
        })
        .collect()
}

/// Scanned tables below every node, keyed by the node's path.
pub fn subtree_tables(plan: &PlanNode) -> Vec<(NodePath, BTreeSet<Ident>)> {
    plan.walk()
        .into_iter()
        .map(|(path, node)| (path, referenced_tables(node)))
        .collect()
}

/// Tables scanned by the leaves, with multiplicity, sorted.
pub fn scanned_tables(plan: &PlanNode) -> Vec<Ident> {
    let mut out: Vec<Ident> = plan
        .walk()
        .into_iter()
        .filter_map(|(_, n)| match &n.op {
            Operator::TableScan { table } => Some(table.clone()),
            _ => None,
        })
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(col: &str, cmp: Comparator, v: i64) -> SimplePredicate {
        SimplePredicate::new(ColumnRef::new("T", col), cmp, Literal::Int(v))
    }

    #[test]
    fn ident_ignores_case() {
        assert_eq!(Ident::new("Table_3"), Ident::new("table_3"));
        assert_eq!(Ident::new("Table_3").cmp(&Ident::new("TABLE_3")), Ordering::Equal);
        assert!(Ident::is_valid("col_1"));
        assert!(!Ident::is_valid("a.b"));
        assert!(!Ident::is_valid("a b"));
        assert!(!Ident::is_valid(""));
    }

    #[test]
    fn decimal_literal_keeps_fraction() {
        assert_eq!(Literal::Decimal(OrderedFloat(3.0)).to_string(), "3.0");
        assert_eq!(Literal::Decimal(OrderedFloat(2.5)).to_string(), "2.5");
        assert_eq!(Literal::Str("it's".into()).to_string(), "'it''s'");
    }

    #[test]
    fn implication_table() {
        use Comparator::*;
        assert!(pred("a", Gt, 7).implies(&pred("a", Gt, 5)));
        assert!(!pred("a", Gt, 5).implies(&pred("a", Gt, 7)));
        assert!(pred("a", Ge, 6).implies(&pred("a", Gt, 5)));
        assert!(!pred("a", Ge, 5).implies(&pred("a", Gt, 5)));
        assert!(pred("a", Eq, 3).implies(&pred("a", Lt, 4)));
        assert!(pred("a", Eq, 3).implies(&pred("a", Ne, 4)));
        assert!(!pred("a", Gt, 3).implies(&pred("a", Lt, 10)));
        assert!(!pred("a", Gt, 7).implies(&pred("b", Gt, 5)));
        assert!(pred("a", Le, 2).implies(&pred("a", Lt, 3)));
    }

    #[test]
    fn walk_is_preorder_with_paths() {
        let plan = PlanNode::binary(
            Operator::Join {
                left_key: ColumnRef::new("A", "k"),
                right_key: ColumnRef::new("B", "k"),
            },
            PlanNode::scan("A"),
            PlanNode::scan("B"),
        );
        let paths: Vec<String> = plan.walk().iter().map(|(p, _)| p.to_string()).collect();
        assert_eq!(paths, vec!["/", "/L", "/R"]);
        assert_eq!(
            referenced_tables(&plan),
            [Ident::new("A"), Ident::new("B")].into_iter().collect()
        );
    }
}
