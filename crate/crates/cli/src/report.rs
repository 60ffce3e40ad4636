//! AUC table, histograms, ROC plots and checks from scores.csv.

use std::fmt::Write as _;

use cdp_core::imgcore::{write_json, Origin};
use cdp_core::rocstat::{
    auc, auc_table, group_cells, histogram_export, load_scores, roc_curve, write_text, CellKey,
    Grid,
};
use serde_json::{json, Value};

use crate::check::{self, CheckLine};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::qclog::{self, QcSummary};
use crate::workspace::Workspace;

pub struct Evaluation {
    pub summary: Value,
    pub checks: Vec<CheckLine>,
}

fn cell_name(k: &CellKey) -> String {
    format!(
        "{}_{}_{}_{}",
        k.printer,
        k.device,
        k.metric.as_str(),
        k.reference.as_str()
    )
}

pub fn evaluate(ws: &Workspace, cfg: &ExperimentConfig, run_checks: bool) -> Result<Evaluation> {
    let path = ws.scores();
    ws.require(&path, "scores", "score")?;
    let records = load_scores(&path)?;
    let grid = Grid {
        printers: cfg.printer_ids(),
        devices: cfg.device_ids(),
        metrics: cfg.score.metrics.clone(),
        references: cfg.score.references.clone(),
    };
    let table = auc_table(&records, &grid)?;
    table.save(&ws.auc_table())?;
    let report = ws.report_dir();
    for (key, set) in group_cells(&records) {
        let name = cell_name(&key);
        let hist = histogram_export(&set, cfg.evaluate.histogram_bins)?;
        write_json(&report.join("hist").join(format!("{name}.json")), &hist)?;
        if set.positives.is_empty() || set.negatives.is_empty() {
            continue;
        }
        let curve = roc_curve(&set)?;
        let a = auc(&set)?;
        write_text(
            &report.join("roc").join(format!("{name}.svg")),
            &roc_svg(&curve, a, &key.to_string()),
        )?;
    }
    let missing: Vec<String> = table.missing.iter().map(|k| k.to_string()).collect();
    let mut checks = Vec::new();
    if run_checks {
        checks.push(check::puf_baseline(cfg, &records));
        checks.push(check::synthetic_gain(cfg, &records));
        checks.push(check::monotonicity(cfg, &records));
        let mut rows = Vec::new();
        for origin in [Origin::Original, Origin::Fake] {
            let p = ws.qc_log(origin);
            if p.exists() {
                rows.extend(qclog::load(&p)?);
            }
        }
        let qc = QcSummary::of(&rows);
        if qc.injected > 0 {
            checks.push(check::qc_scenario(&qc));
        }
        write_json(&ws.checks(), &checks)?;
    }
    Ok(Evaluation {
        summary: json!({
            "cells": table.cells.len(),
            "expected_cells": grid.cells().len(),
            "missing": missing,
        }),
        checks,
    })
}

const SIZE: f64 = 420.0;
const PAD: f64 = 56.0;

fn px(v: f64) -> f64 {
    PAD + v * (SIZE - 2.0 * PAD)
}

fn py(v: f64) -> f64 {
    SIZE - PAD - v * (SIZE - 2.0 * PAD)
}

/// Standalone ROC plot: axes, chance diagonal, curve and AUC label.
pub fn roc_svg(curve: &[(f64, f64)], auc: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{w}" height="{w}" fill="none" stroke="black"/>"#,
        w = SIZE - 2.0 * PAD
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
            px(v),
            SIZE - PAD + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            PAD - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#,
        SIZE / 2.0,
        SIZE - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">true positive rate</text>"#,
        y = SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let pts: Vec<String> = curve
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">AUC = {auc:.4}</text>"#,
        px(1.0) - 8.0,
        py(0.0) - 10.0
    );
    s.push_str("</svg>\n");
    s
}
