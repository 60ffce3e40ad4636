//! Acceptance checks that can be decided from pipeline outputs.

use std::collections::BTreeSet;
use std::fmt;

use cdp_core::imgcore::Origin;
use cdp_core::rocstat::{auc, Metric, Reference, ScoreRecord, ScoreSet};
use serde::Serialize;

use crate::config::{Cell, ExperimentConfig};
use crate::qclog::QcSummary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub criterion: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(criterion: u32, name: &str, passed: bool, detail: String) -> Self {
        Self {
            criterion,
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {}: {}",
            self.criterion,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// AUC of one cell, optionally restricted to some template ids. `None`
/// when either class is empty.
pub fn cell_auc(
    records: &[ScoreRecord],
    printer: &str,
    device: &str,
    metric: Metric,
    reference: Reference,
    ids: Option<&BTreeSet<u32>>,
) -> Option<f64> {
    let mut set = ScoreSet::new(Vec::new(), Vec::new());
    for r in records {
        if r.printer != printer
            || r.device != device
            || r.metric != metric
            || r.reference != reference
        {
            continue;
        }
        if ids.is_some_and(|ids| !ids.contains(&r.template_id)) {
            continue;
        }
        match r.origin {
            Origin::Original => set.positives.push(r.score),
            Origin::Fake => set.negatives.push(r.score),
        }
    }
    auc(&set).ok()
}

/// The two cells the synthetic-reference check must cover: the first
/// printer on the lowest- and highest-resolution devices.
pub fn designated_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let ladder = cfg.ladder();
    let printer = cfg.profiles.printers[0].id.clone();
    let mut devices = vec![ladder[0].clone()];
    if ladder.len() > 1 {
        devices.push(ladder[ladder.len() - 1].clone());
    }
    devices
        .into_iter()
        .map(|device| Cell {
            printer: printer.clone(),
            device,
        })
        .collect()
}

/// AUC(pcorr, x_e) is exactly 1 in every cell.
pub fn puf_baseline(cfg: &ExperimentConfig, records: &[ScoreRecord]) -> CheckLine {
    let mut bad = Vec::new();
    let mut n = 0;
    for c in cfg.all_cells() {
        n += 1;
        match cell_auc(
            records,
            &c.printer,
            &c.device,
            Metric::Pcorr,
            Reference::Xe,
            None,
        ) {
            Some(1.0) => {}
            Some(a) => bad.push(format!("{}/{}={a:.6}", c.printer, c.device)),
            None => bad.push(format!("{}/{}=missing", c.printer, c.device)),
        }
    }
    let detail = if bad.is_empty() {
        format!("AUC(pcorr, x_e) = 1.000000 in all {n} cells")
    } else {
        format!("cells below 1: {}", bad.join(", "))
    };
    CheckLine::new(1, "PUF baseline", bad.is_empty(), detail)
}

/// AUC(pcorr, x_hat) against AUC(pcorr, t) on the held-out templates of
/// every cell that has synthetic scores; the designated cells must be
/// among them.
pub fn synthetic_gain(cfg: &ExperimentConfig, records: &[ScoreRecord]) -> CheckLine {
    let ev = &cfg.evaluate;
    let mut cells: BTreeSet<(String, String)> = BTreeSet::new();
    for r in records {
        if r.reference == Reference::Xhat && r.metric == Metric::Pcorr {
            cells.insert((r.printer.clone(), r.device.clone()));
        }
    }
    let mut passed = true;
    let mut parts = Vec::new();
    for c in designated_cells(cfg) {
        if !cells.contains(&(c.printer.clone(), c.device.clone())) {
            passed = false;
            parts.push(format!("{}/{} has no x_hat scores", c.printer, c.device));
        }
    }
    for (p, d) in &cells {
        let ids: BTreeSet<u32> = records
            .iter()
            .filter(|r| &r.printer == p && &r.device == d && r.reference == Reference::Xhat)
            .map(|r| r.template_id)
            .collect();
        let at = cell_auc(records, p, d, Metric::Pcorr, Reference::T, Some(&ids));
        let ax = cell_auc(records, p, d, Metric::Pcorr, Reference::Xhat, Some(&ids));
        let (Some(at), Some(ax)) = (at, ax) else {
            passed = false;
            parts.push(format!("{p}/{d} lacks one class"));
            continue;
        };
        let ok = ax >= at && (at >= ev.xhat_gain_below || ax - at >= ev.xhat_min_gain);
        passed &= ok;
        parts.push(format!(
            "{p}/{d} t={at:.4} xhat={ax:.4}{}",
            if ok { "" } else { " (fails)" }
        ));
    }
    CheckLine::new(2, "synthetic reference gain", passed, parts.join(", "))
}

/// AUC(pcorr, t) along the device ladder, per printer: at most one adjacent
/// inversion, no larger than the tolerance.
pub fn monotonicity(cfg: &ExperimentConfig, records: &[ScoreRecord]) -> CheckLine {
    let ladder = cfg.ladder();
    let tol = cfg.evaluate.monotonic_tolerance;
    let mut passed = true;
    let mut parts = Vec::new();
    for p in cfg.printer_ids() {
        let aucs: Vec<Option<f64>> = ladder
            .iter()
            .map(|d| cell_auc(records, &p, d, Metric::Pcorr, Reference::T, None))
            .collect();
        if aucs.iter().any(Option::is_none) {
            passed = false;
            parts.push(format!("{p}: missing cells"));
            continue;
        }
        let aucs: Vec<f64> = aucs.into_iter().flatten().collect();
        let drops: Vec<f64> = aucs
            .windows(2)
            .filter(|w| w[1] < w[0])
            .map(|w| w[0] - w[1])
            .collect();
        let ok = drops.len() <= 1 && drops.iter().all(|&d| d <= tol);
        passed &= ok;
        let list: Vec<String> = aucs.iter().map(|a| format!("{a:.3}")).collect();
        parts.push(format!(
            "{p}: [{}]{}",
            list.join(" "),
            if ok { "" } else { " (fails)" }
        ));
    }
    CheckLine::new(3, "resolution monotonicity", passed, parts.join("; "))
}

/// Injected heavy blur is caught and clean captures pass.
pub fn qc_scenario(summary: &QcSummary) -> CheckLine {
    let caught = summary.injected_discard_rate();
    let clean = summary.clean_discard_rate();
    let passed = summary.injected > 0 && caught >= 0.90 && clean <= 0.01;
    CheckLine::new(
        10,
        "QC blur scenario",
        passed,
        format!(
            "injected {} discarded {:.1}%, clean {} discarded {:.2}%",
            summary.injected,
            100.0 * caught,
            summary.clean,
            100.0 * clean
        ),
    )
}
