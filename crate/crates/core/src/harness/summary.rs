//! Final-error tables across seeds.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::trace::{format_float, ErrorTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub seeds: usize,
    /// Mean over seeds of the agent-averaged final error.
    pub final_mean: f64,
    /// Sample standard deviation over seeds (0 for one seed).
    pub std: f64,
    /// `final_mean` over the reference group's; `None` with a single group.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub reference: String,
    pub rows: Vec<SummaryRow>,
}

/// Groups traces by algorithm tag in order of first appearance and compares
/// every group against the first.
pub fn summarize(traces: &[ErrorTrace]) -> Result<Summary> {
    summarize_against(traces, None)
}

/// As [`summarize`], with an explicit reference group.
pub fn summarize_against(traces: &[ErrorTrace], reference: Option<&str>) -> Result<Summary> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces to summarize".into()));
    }
    let mut hashes = traces.iter().map(|t| t.config_hash.as_str()).filter(|h| !h.is_empty());
    if let Some(first) = hashes.next() {
        if let Some(other) = hashes.find(|h| *h != first) {
            return Err(Error::InvalidArgument(format!(
                "traces come from different configs ({first} and {other})"
            )));
        }
    }
    let mut groups: Vec<(String, Vec<(u64, f64)>)> = Vec::new();
    for t in traces {
        let err = t
            .final_mean_error()
            .ok_or_else(|| Error::InvalidArgument(format!("trace {} seed {} has no rows", t.algo, t.seed)))?;
        let idx = match groups.iter().position(|g| g.0 == t.algo) {
            Some(i) => i,
            None => {
                groups.push((t.algo.clone(), Vec::new()));
                groups.len() - 1
            }
        };
        if groups[idx].1.iter().any(|(s, _)| *s == t.seed) {
            return Err(Error::InvalidArgument(format!("duplicate trace {} seed {}", t.algo, t.seed)));
        }
        groups[idx].1.push((t.seed, err));
    }
    let stats: Vec<(String, usize, f64, f64)> = groups
        .into_iter()
        .map(|(name, runs)| {
            let n = runs.len() as f64;
            let mean = runs.iter().map(|r| r.1).sum::<f64>() / n;
            let var = if runs.len() > 1 {
                runs.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (name, runs.len(), mean, var.sqrt())
        })
        .collect();
    let reference = match reference {
        Some(r) => r.to_string(),
        None => stats[0].0.clone(),
    };
    let ref_mean = stats
        .iter()
        .find(|s| s.0 == reference)
        .map(|s| s.2)
        .ok_or_else(|| Error::InvalidArgument(format!("reference group {reference} not among the traces")))?;
    let single = stats.len() == 1;
    let rows = stats
        .into_iter()
        .map(|(group, seeds, final_mean, std)| SummaryRow {
            group,
            seeds,
            final_mean,
            std,
            ratio: (!single).then_some(final_mean / ref_mean),
        })
        .collect();
    Ok(Summary { reference, rows })
}

impl Summary {
    pub fn row(&self, group: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    fn has_ratio(&self) -> bool {
        self.rows.iter().any(|r| r.ratio.is_some())
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.group.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}  {:>5}  {:>12}  {:>12}", "group", "seeds", "final_mean", "std");
        if self.has_ratio() {
            let _ = write!(out, "  {:>8}", "ratio");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<width$}  {:>5}  {:>12.6e}  {:>12.6e}", r.group, r.seeds, r.final_mean, r.std);
            if let Some(ratio) = r.ratio {
                let _ = write!(out, "  {ratio:>8.4}");
            }
            out.push('\n');
        }
        if self.has_ratio() {
            let _ = writeln!(out, "ratio relative to {}", self.reference);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,seeds,final_mean,std");
        if self.has_ratio() {
            out.push_str(",ratio");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{}", r.group, r.seeds, format_float(r.final_mean), format_float(r.std));
            if let Some(ratio) = r.ratio {
                let _ = write!(out, ",{}", format_float(ratio));
            }
            out.push('\n');
        }
        out
    }
}
