use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::run::RunReport;
use crate::error::{Error, Result};
use crate::graph::AttributedGraph;

/// Comment header naming the resolved configuration, one `# ` line each.
pub fn config_header(report: &RunReport, extra: &[String]) -> String {
    let mut out = String::new();
    for line in extra.iter().chain(&report.config.describe()) {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "# clusters_resolved = {}", report.clusters);
    out
}

/// Metrics, selection summary, warnings, timings and per-epoch losses.
pub fn render_report(report: &RunReport, extra: &[String]) -> String {
    let mut out = config_header(report, extra);
    let _ = writeln!(out, "[metrics]");
    match &report.metrics {
        Some(m) => {
            let _ = writeln!(out, "acc {:.6}\nnmi {:.6}\nari {:.6}", m.acc, m.nmi, m.ari);
        }
        None => {
            let _ = writeln!(out, "unavailable (no ground-truth labels)");
        }
    }
    if let Some(m) = &report.selected_metrics {
        let _ = writeln!(out, "selected_acc {:.6}\nselected_nmi {:.6}\nselected_ari {:.6}", m.acc, m.nmi, m.ari);
    }
    let _ = writeln!(out, "selected_nodes {}", report.selected.len());
    let _ = writeln!(out, "[warnings]");
    for w in &report.warnings {
        let _ = writeln!(out, "{w}");
    }
    let _ = writeln!(out, "[timings]");
    for (phase, t) in &report.timings {
        let _ = writeln!(out, "{} {:.3}s", phase.name(), t.as_secs_f64());
    }
    let _ = writeln!(out, "[losses]");
    for r in &report.losses {
        let _ = writeln!(out, "{} {} {}", r.phase.name(), r.epoch, r.loss);
    }
    out
}

pub fn render_labels(report: &RunReport, graph: &AttributedGraph, extra: &[String]) -> String {
    let mut out = config_header(report, extra);
    for (id, label) in graph.node_ids().iter().zip(&report.labels) {
        let _ = writeln!(out, "{id} {label}");
    }
    out
}

fn render_embedding<'a>(header: String, ids: impl Iterator<Item = &'a String>, embedding: &Array2<f64>) -> String {
    let mut out = header;
    for (id, row) in ids.zip(embedding.rows()) {
        out.push_str(id);
        for v in row {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

/// Files written for one run.
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub report: PathBuf,
    pub labels: PathBuf,
    pub embeddings: PathBuf,
    pub local_embeddings: PathBuf,
}

/// Writes `report.txt`, `labels.txt`, `embeddings.txt` (global, all
/// nodes) and `local_embeddings.txt` (selected nodes) into `dir`.
pub fn write_run(dir: &Path, report: &RunReport, graph: &AttributedGraph, extra: &[String]) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        report: dir.join("report.txt"),
        labels: dir.join("labels.txt"),
        embeddings: dir.join("embeddings.txt"),
        local_embeddings: dir.join("local_embeddings.txt"),
    };
    let ids = graph.node_ids();
    let selected_ids: Vec<&String> = report.selected.iter().map(|&i| &ids[i]).collect();
    let contents = [
        (&files.report, render_report(report, extra)),
        (&files.labels, render_labels(report, graph, extra)),
        (
            &files.embeddings,
            render_embedding(config_header(report, extra), ids.iter(), &report.global_embedding),
        ),
        (
            &files.local_embeddings,
            render_embedding(config_header(report, extra), selected_ids.into_iter(), &report.local_embedding),
        ),
    ];
    for (path, text) in contents {
        fs::write(path, text).map_err(|e| Error::io(path.as_path(), e))?;
    }
    Ok(files)
}
