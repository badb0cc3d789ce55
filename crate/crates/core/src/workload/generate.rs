use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{plan_cost, Catalog, CostError, CostParams, TableStats};
use crate::monitor::check_structure;
use crate::plan::{
    canonical_key, referenced_tables, ColumnRef, Comparator, Ident, Literal, NodePath, Operator, OperatorKind,
    PlanNode, SimplePredicate,
};

/// Objects the visual operators ask about.
pub const OBJECTS: [&str; 10] = [
    "dog", "cat", "man", "woman", "car", "bicycle", "bird", "horse", "boat", "tree",
];

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("no acceptable query after {0} attempts")]
    GenerationExhausted(usize),
    #[error("catalog cannot host generated queries: {0}")]
    UnsuitableCatalog(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorLimits {
    pub max_joins: usize,
    pub max_selects: usize,
    pub max_detections: usize,
    pub max_countings: usize,
    pub min_one_of_each: bool,
    /// Queries with fewer non-scan operators are resampled.
    pub min_operators: usize,
    /// Queries estimated costlier than this are resampled.
    pub max_est_cost: f64,
    /// Resample budget per query.
    pub max_attempts: usize,
}

impl Default for GeneratorLimits {
    fn default() -> Self {
        GeneratorLimits {
            max_joins: 3,
            max_selects: 3,
            max_detections: 2,
            max_countings: 2,
            min_one_of_each: true,
            min_operators: 5,
            max_est_cost: 1e9,
            max_attempts: 200,
        }
    }
}

/// Four tables joinable on `id`, three of them with an image column.
pub fn demo_catalog() -> Catalog {
    let t = |rows: u64, cols: &[&str], img: &[&str]| TableStats {
        row_count: rows,
        columns: cols.iter().map(|s| s.to_string()).collect(),
        unique_columns: vec!["id".into()],
        image_columns: img.iter().map(|s| s.to_string()).collect(),
    };
    Catalog::new()
        .with_table("paintings", t(20_000, &["id", "year", "price", "width", "image"], &["image"]))
        .with_table("artists", t(5_000, &["id", "birth_year", "works", "portrait"], &["portrait"]))
        .with_table("museums", t(800, &["id", "founded", "visitors"], &[]))
        .with_table("exhibits", t(12_000, &["id", "rating", "duration", "photo"], &["photo"]))
}

struct TableInfo {
    name: Ident,
    plain: Vec<Ident>,
    images: Vec<Ident>,
}

struct Schema {
    tables: Vec<TableInfo>,
}

impl Schema {
    fn of(catalog: &Catalog) -> Self {
        let tables = catalog
            .tables
            .iter()
            .map(|(name, t)| {
                let images: Vec<Ident> = t.image_columns.iter().map(Ident::new).collect();
                let plain = t
                    .columns
                    .iter()
                    .map(Ident::new)
                    .filter(|c| !images.contains(c) && !t.is_unique_column(c))
                    .collect();
                TableInfo {
                    name: Ident::new(name),
                    plain,
                    images,
                }
            })
            .collect();
        Schema { tables }
    }

    fn info(&self, name: &Ident) -> &TableInfo {
        self.tables.iter().find(|t| &t.name == name).expect("table from this schema")
    }

    /// Columns shared by two tables, usable as equi-join keys.
    fn join_columns(&self, a: &Ident, b: &Ident, catalog: &Catalog) -> Vec<Ident> {
        let (Some(ta), Some(tb)) = (catalog.table(a), catalog.table(b)) else {
            return Vec::new();
        };
        ta.columns
            .iter()
            .map(Ident::new)
            .filter(|c| tb.has_column(c) && !ta.is_image_column(c) && !tb.is_image_column(c))
            .collect()
    }
}

/// A random structurally valid query from `seed`.
pub fn generate_query(seed: u64, catalog: &Catalog, limits: &GeneratorLimits) -> Result<PlanNode, WorkloadError> {
    let schema = Schema::of(catalog);
    if !schema.tables.iter().any(|t| !t.images.is_empty()) {
        return Err(WorkloadError::UnsuitableCatalog("no image column".into()));
    }
    let params = CostParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..limits.max_attempts.max(1) {
        let Some(plan) = attempt(&mut rng, &schema, catalog, limits) else {
            continue;
        };
        if plan.operator_count() < limits.min_operators {
            continue;
        }
        if plan_cost(&plan, catalog, &params)? > limits.max_est_cost {
            continue;
        }
        if !check_structure(&plan, catalog).is_empty() {
            log::warn!("generator produced an invalid plan; resampling");
            continue;
        }
        return Ok(plan);
    }
    Err(WorkloadError::GenerationExhausted(limits.max_attempts))
}

/// `n` queries with pairwise distinct canonical forms.
pub fn generate_corpus(
    n: usize,
    seed: u64,
    catalog: &Catalog,
    limits: &GeneratorLimits,
) -> Result<Vec<PlanNode>, WorkloadError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let budget = n * 20 + 20;
    let mut i = 0u64;
    while out.len() < n {
        if i as usize >= budget {
            return Err(WorkloadError::GenerationExhausted(budget));
        }
        let plan = generate_query(seed.wrapping_mul(1_000_003).wrapping_add(i), catalog, limits)?;
        i += 1;
        if seen.insert(canonical_key(&plan)) {
            out.push(plan);
        }
    }
    Ok(out)
}

fn count(rng: &mut ChaCha8Rng, max: usize, at_least_one: bool) -> usize {
    let lo = usize::from(at_least_one).min(max);
    rng.gen_range(lo..=max)
}

fn attempt(rng: &mut ChaCha8Rng, schema: &Schema, catalog: &Catalog, limits: &GeneratorLimits) -> Option<PlanNode> {
    let min1 = limits.min_one_of_each;
    let joins = count(rng, limits.max_joins.min(schema.tables.len().saturating_sub(1)), min1);
    let selects = count(rng, limits.max_selects, min1);
    let detections = count(rng, limits.max_detections, min1);
    let countings = count(rng, limits.max_countings, min1);

    let tables = pick_tables(rng, schema, catalog, joins + 1)?;
    let mut plan = build_joins(rng, schema, catalog, &tables)?;

    let mut kinds: Vec<OperatorKind> = std::iter::repeat_n(OperatorKind::Select, selects)
        .chain(std::iter::repeat_n(OperatorKind::ObjectDetection, detections))
        .chain(std::iter::repeat_n(OperatorKind::ObjectCounting, countings))
        .collect();
    kinds.shuffle(rng);
    let mut placed: Vec<Operator> = Vec::new();
    for kind in kinds {
        let op = make_filter(rng, schema, &tables, kind, &placed)?;
        let table = op
            .referenced_tables()
            .into_iter()
            .next()
            .expect("filters reference a table");
        let sites: Vec<NodePath> = plan
            .walk()
            .into_iter()
            .filter(|(_, n)| referenced_tables(n).contains(&table))
            .map(|(p, _)| p)
            .collect();
        let site = sites.choose(rng)?.clone();
        let subtree = plan.get(&site)?.clone();
        plan = plan.replace_at(&site, PlanNode::unary(op.clone(), subtree))?;
        placed.push(op);
    }
    Some(plan)
}

/// `n` distinct tables, connected by join columns, at least one with images.
fn pick_tables(rng: &mut ChaCha8Rng, schema: &Schema, catalog: &Catalog, n: usize) -> Option<Vec<Ident>> {
    let with_images: Vec<&TableInfo> = schema.tables.iter().filter(|t| !t.images.is_empty()).collect();
    let mut chosen = vec![with_images.choose(rng)?.name.clone()];
    while chosen.len() < n {
        let frontier: Vec<&Ident> = schema
            .tables
            .iter()
            .map(|t| &t.name)
            .filter(|t| !chosen.contains(t))
            .filter(|t| chosen.iter().any(|c| !schema.join_columns(c, t, catalog).is_empty()))
            .collect();
        chosen.push((*frontier.choose(rng)?).clone());
    }
    Some(chosen)
}

fn build_joins(rng: &mut ChaCha8Rng, schema: &Schema, catalog: &Catalog, tables: &[Ident]) -> Option<PlanNode> {
    let mut parts: Vec<(PlanNode, BTreeSet<Ident>)> = tables
        .iter()
        .map(|t| (PlanNode::scan(t.as_str()), BTreeSet::from([t.clone()])))
        .collect();
    while parts.len() > 1 {
        let mut options = Vec::new();
        for i in 0..parts.len() {
            for j in 0..parts.len() {
                if i == j {
                    continue;
                }
                for a in &parts[i].1 {
                    for b in &parts[j].1 {
                        for col in schema.join_columns(a, b, catalog) {
                            options.push((i, j, a.clone(), b.clone(), col));
                        }
                    }
                }
            }
        }
        let (i, j, a, b, col) = options.choose(rng)?.clone();
        let (hi, lo) = (i.max(j), i.min(j));
        let part_hi = parts.swap_remove(hi);
        let part_lo = parts.swap_remove(lo);
        let (left, right) = if i > j { (part_hi, part_lo) } else { (part_lo, part_hi) };
        let op = Operator::Join {
            left_key: ColumnRef {
                table: a,
                column: col.clone(),
            },
            right_key: ColumnRef { table: b, column: col },
        };
        let mut names = left.1.clone();
        names.extend(right.1.iter().cloned());
        parts.push((PlanNode::binary(op, left.0, right.0), names));
    }
    parts.pop().map(|(p, _)| p)
}

const COMPARATORS: [Comparator; 6] = [
    Comparator::Gt,
    Comparator::Ge,
    Comparator::Lt,
    Comparator::Le,
    Comparator::Eq,
    Comparator::Ne,
];

/// A predicate on `table`, sometimes a loosened copy of one already placed
/// so that removals have something to find.
fn make_predicate(
    rng: &mut ChaCha8Rng,
    info: &TableInfo,
    placed: &[&SimplePredicate],
) -> Option<SimplePredicate> {
    let mine: Vec<&&SimplePredicate> = placed.iter().filter(|p| p.target.table == info.name).collect();
    if !mine.is_empty() && rng.gen_bool(0.4) {
        let base: SimplePredicate = (**mine.choose(rng)?).clone();
        let slack = rng.gen_range(0..=10);
        let value = match (base.comparator, &base.value) {
            (Comparator::Gt | Comparator::Ge, Literal::Int(v)) => Literal::Int(v - slack),
            (Comparator::Lt | Comparator::Le, Literal::Int(v)) => Literal::Int(v + slack),
            (_, v) => v.clone(),
        };
        return Some(SimplePredicate::new(base.target, base.comparator, value));
    }
    let column = info.plain.choose(rng)?.clone();
    let comparator = *COMPARATORS.choose(rng)?;
    Some(SimplePredicate::new(
        ColumnRef {
            table: info.name.clone(),
            column,
        },
        comparator,
        Literal::Int(rng.gen_range(0..100)),
    ))
}

fn make_filter(
    rng: &mut ChaCha8Rng,
    schema: &Schema,
    tables: &[Ident],
    kind: OperatorKind,
    placed: &[Operator],
) -> Option<Operator> {
    if kind == OperatorKind::Select {
        let hosts: Vec<&TableInfo> = tables
            .iter()
            .map(|t| schema.info(t))
            .filter(|t| !t.plain.is_empty())
            .collect();
        let info = *hosts.choose(rng)?;
        let existing: Vec<&SimplePredicate> = placed
            .iter()
            .filter_map(|op| match op {
                Operator::Select { predicates } => Some(predicates.iter()),
                _ => None,
            })
            .flatten()
            .collect();
        let n = if rng.gen_bool(0.3) { 2 } else { 1 };
        let predicates = (0..n)
            .map(|_| make_predicate(rng, info, &existing))
            .collect::<Option<Vec<_>>>()?;
        return Some(Operator::Select { predicates });
    }

    let targets: Vec<ColumnRef> = tables
        .iter()
        .map(|t| schema.info(t))
        .flat_map(|t| {
            t.images.iter().map(|c| ColumnRef {
                table: t.name.clone(),
                column: c.clone(),
            })
        })
        .collect();
    let target = targets.choose(rng)?.clone();
    let earlier: Vec<&str> = placed
        .iter()
        .filter(|op| op.visual_target() == Some(&target))
        .flat_map(|op| match op {
            Operator::ObjectDetection { objects, .. } => objects.iter().map(String::as_str).collect::<Vec<_>>(),
            Operator::ObjectCounting { object, .. } => vec![object.as_str()],
            _ => Vec::new(),
        })
        .collect();
    let object = |rng: &mut ChaCha8Rng| -> String {
        if !earlier.is_empty() && rng.gen_bool(0.5) {
            earlier.choose(rng).expect("nonempty").to_string()
        } else {
            OBJECTS.choose(rng).expect("nonempty").to_string()
        }
    };
    if kind == OperatorKind::ObjectDetection {
        let mut objects = vec![object(rng)];
        if rng.gen_bool(0.2) {
            let extra = object(rng);
            if !objects.contains(&extra) {
                objects.push(extra);
            }
        }
        Some(Operator::ObjectDetection { target, objects })
    } else {
        let object = object(rng);
        Some(Operator::ObjectCounting {
            target,
            object,
            threshold: rng.gen_range(0..=5),
        })
    }
}
