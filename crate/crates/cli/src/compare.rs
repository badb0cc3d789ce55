use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use mmqo_core::workload::{MethodSummary, OptimizationReport};

use crate::config::read_json;

pub struct Comparison {
    pub rows: Vec<(PathBuf, MethodSummary)>,
}

/// Loads the reports and checks that they cover the same queries, in the
/// same order, under the same simulation profile.
pub fn load(paths: &[PathBuf]) -> Result<Comparison> {
    let mut reports: Vec<(PathBuf, OptimizationReport)> = Vec::with_capacity(paths.len());
    for p in paths {
        let file = if p.is_dir() { p.join("report.json") } else { p.clone() };
        let r: OptimizationReport = read_json(&file).context("not an optimization report")?;
        reports.push((file, r));
    }
    let Some((first_path, first)) = reports.first() else {
        bail!("no reports given");
    };
    for (path, r) in &reports[1..] {
        check_same_corpus(first_path, first, path, r)?;
    }
    Ok(Comparison {
        rows: reports.into_iter().map(|(p, r)| (p, r.summary)).collect(),
    })
}

fn check_same_corpus(pa: &Path, a: &OptimizationReport, pb: &Path, b: &OptimizationReport) -> Result<()> {
    if a.profile != b.profile {
        bail!(
            "{} and {} use different simulation profiles ({:?} vs {:?})",
            pa.display(),
            pb.display(),
            a.profile,
            b.profile
        );
    }
    if a.queries.len() != b.queries.len() {
        bail!(
            "query sets differ: {} has {} queries, {} has {}",
            pa.display(),
            a.queries.len(),
            pb.display(),
            b.queries.len()
        );
    }
    let diff: Vec<usize> = a
        .queries
        .iter()
        .zip(&b.queries)
        .filter(|(x, y)| x.initial != y.initial)
        .map(|(x, _)| x.index)
        .collect();
    if !diff.is_empty() {
        bail!(
            "query sets differ between {} and {} at indices {:?}",
            pa.display(),
            pb.display(),
            diff
        );
    }
    Ok(())
}

impl Comparison {
    pub fn csv(&self) -> String {
        let mut s = String::from("method,report,queries,valid,vr,poi,toi,avg_time_init,avg_time\n");
        for (p, m) in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                m.method,
                p.display(),
                m.queries,
                m.valid,
                m.vr,
                m.poi,
                m.toi,
                m.avg_time_init,
                m.avg_time
            );
        }
        s
    }

    pub fn table(&self) -> String {
        let header = ["Method", "Queries", "PoI", "ToI", "VR", "Avg time", "Avg time (init)"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|(_, m)| {
                [
                    m.method.clone(),
                    m.queries.to_string(),
                    format!("{:.4}", m.poi),
                    format!("{:.2}", m.toi),
                    format!("{:.4}", m.vr),
                    format!("{:.2}", m.avg_time),
                    format!("{:.2}", m.avg_time_init),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, cells: &[&str]| {
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{cell:<w$}");
                } else {
                    let _ = write!(s, "  {cell:>w$}");
                }
            }
            s.push('\n');
        };
        line(&mut s, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut s, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &body {
            line(&mut s, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        s
    }
}
