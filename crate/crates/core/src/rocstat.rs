//! ROC curves, AUC, score histograms and the AUC table.
//!
//! Originals are the positive class and a higher score means "more likely
//! original". No decision threshold is ever chosen here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
pub use crate::imgcore::Origin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    T,
    Xhat,
    Xe,
}

impl Reference {
    pub const ALL: [Reference; 3] = [Reference::T, Reference::Xhat, Reference::Xe];

    pub fn as_str(self) -> &'static str {
        match self {
            Reference::T => "t",
            Reference::Xhat => "xhat",
            Reference::Xe => "xe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Pcorr,
    Ssim,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Pcorr, Metric::Ssim];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Pcorr => "pcorr",
            Metric::Ssim => "ssim",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub printer: String,
    pub device: String,
    pub reference: Reference,
    pub metric: Metric,
    pub origin: Origin,
    pub template_id: u32,
    pub instance: u32,
    pub repetition: u32,
    pub score: f64,
}

impl ScoreRecord {
    pub fn key(&self) -> CellKey {
        CellKey {
            printer: self.printer.clone(),
            device: self.device.clone(),
            metric: self.metric,
            reference: self.reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub printer: String,
    pub device: String,
    pub metric: Metric,
    pub reference: Reference,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.printer, self.device, self.metric, self.reference
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub key: Option<CellKey>,
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl ScoreSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        Self {
            key: None,
            positives,
            negatives,
        }
    }

    fn check(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(CoreError::invalid(format!(
                "ROC needs both classes (originals: {}, fakes: {})",
                self.positives.len(),
                self.negatives.len()
            )));
        }
        if self
            .positives
            .iter()
            .chain(&self.negatives)
            .any(|v| !v.is_finite())
        {
            return Err(CoreError::invalid("non-finite score"));
        }
        Ok(())
    }
}

/// ROC points at every distinct threshold, from (0,0) to (1,1).
pub fn roc_curve(s: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    s.check()?;
    let mut all: Vec<(f64, bool)> = s
        .positives
        .iter()
        .map(|&v| (v, true))
        .chain(s.negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (s.positives.len() as f64, s.negatives.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
    }
    Ok(points)
}

/// Trapezoidal area under the ROC curve.
pub fn auc(s: &ScoreSet) -> Result<f64> {
    let pts = roc_curve(s)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// Collects records into one score set per cell.
pub fn group_cells(records: &[ScoreRecord]) -> BTreeMap<CellKey, ScoreSet> {
    let mut cells: BTreeMap<CellKey, ScoreSet> = BTreeMap::new();
    for r in records {
        let key = r.key();
        let set = cells.entry(key.clone()).or_insert_with(|| ScoreSet {
            key: Some(key),
            positives: Vec::new(),
            negatives: Vec::new(),
        });
        match r.origin {
            Origin::Original => set.positives.push(r.score),
            Origin::Fake => set.negatives.push(r.score),
        }
    }
    cells
}

/// The experiment grid a table is expected to cover.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub printers: Vec<String>,
    pub devices: Vec<String>,
    pub metrics: Vec<Metric>,
    pub references: Vec<Reference>,
}

impl Grid {
    /// The grid spanned by whatever cells appear in the records.
    pub fn observed(records: &[ScoreRecord]) -> Self {
        let mut printers = Vec::new();
        let mut devices = Vec::new();
        for r in records {
            if !printers.contains(&r.printer) {
                printers.push(r.printer.clone());
            }
            if !devices.contains(&r.device) {
                devices.push(r.device.clone());
            }
        }
        let metrics: BTreeSet<Metric> = records.iter().map(|r| r.metric).collect();
        let references: BTreeSet<Reference> = records.iter().map(|r| r.reference).collect();
        Self {
            printers,
            devices,
            metrics: metrics.into_iter().collect(),
            references: references.into_iter().collect(),
        }
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for p in &self.printers {
            for d in &self.devices {
                for &m in &self.metrics {
                    for &r in &self.references {
                        out.push(CellKey {
                            printer: p.clone(),
                            device: d.clone(),
                            metric: m,
                            reference: r,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucTable {
    pub grid: Grid,
    pub cells: BTreeMap<CellKey, f64>,
    /// Grid cells with no records or only one class.
    pub missing: Vec<CellKey>,
}

pub fn auc_table(records: &[ScoreRecord], grid: &Grid) -> Result<AucTable> {
    let groups = group_cells(records);
    let mut cells = BTreeMap::new();
    let mut missing = Vec::new();
    for key in grid.cells() {
        match groups.get(&key) {
            Some(set) if !set.positives.is_empty() && !set.negatives.is_empty() => {
                cells.insert(key, auc(set)?);
            }
            _ => missing.push(key),
        }
    }
    Ok(AucTable {
        grid: grid.clone(),
        cells,
        missing,
    })
}

impl AucTable {
    pub fn get(
        &self,
        printer: &str,
        device: &str,
        metric: Metric,
        reference: Reference,
    ) -> Option<f64> {
        self.cells
            .get(&CellKey {
                printer: printer.to_string(),
                device: device.to_string(),
                metric,
                reference,
            })
            .copied()
    }

    /// Nested printer -> device -> metric -> reference map. AUCs carry six
    /// decimals; missing cells are `null`.
    pub fn to_json(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).expect("string serializes");
        let mut out = String::from("{\n");
        for (pi, p) in self.grid.printers.iter().enumerate() {
            out.push_str(&format!("  {}: {{\n", q(p)));
            for (di, d) in self.grid.devices.iter().enumerate() {
                out.push_str(&format!("    {}: {{\n", q(d)));
                for (mi, &m) in self.grid.metrics.iter().enumerate() {
                    out.push_str(&format!("      {}: {{", q(m.as_str())));
                    let entries: Vec<String> = self
                        .grid
                        .references
                        .iter()
                        .map(|&r| {
                            let v = self
                                .get(p, d, m, r)
                                .map_or("null".to_string(), |a| format!("{a:.6}"));
                            format!("{}: {v}", q(r.as_str()))
                        })
                        .collect();
                    out.push_str(&entries.join(", "));
                    out.push('}');
                    out.push_str(if mi + 1 < self.grid.metrics.len() {
                        ",\n"
                    } else {
                        "\n"
                    });
                }
                out.push_str("    }");
                out.push_str(if di + 1 < self.grid.devices.len() {
                    ",\n"
                } else {
                    "\n"
                });
            }
            out.push_str("  }");
            out.push_str(if pi + 1 < self.grid.printers.len() {
                ",\n"
            } else {
                "\n"
            });
        }
        out.push_str("}\n");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    /// Reads back the nested map written by [`AucTable::save`].
    pub fn load(path: &Path) -> Result<BTreeMap<CellKey, Option<f64>>> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CoreError::Parse {
            path: path.to_path_buf(),
            detail: format!("line {}, column {}: {e}", e.line(), e.column()),
        })?;
        let bad = |what: &str| CoreError::Parse {
            path: path.to_path_buf(),
            detail: format!("unexpected structure at {what}"),
        };
        let mut out = BTreeMap::new();
        for (p, devs) in v.as_object().ok_or_else(|| bad("root"))? {
            for (d, mets) in devs.as_object().ok_or_else(|| bad(p))? {
                for (m, refs) in mets.as_object().ok_or_else(|| bad(d))? {
                    let metric = Metric::parse(m).ok_or_else(|| bad(m))?;
                    for (r, val) in refs.as_object().ok_or_else(|| bad(m))? {
                        let reference = Reference::parse(r).ok_or_else(|| bad(r))?;
                        out.insert(
                            CellKey {
                                printer: p.clone(),
                                device: d.clone(),
                                metric,
                                reference,
                            },
                            val.as_f64(),
                        );
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub originals: Vec<u64>,
    pub fakes: Vec<u64>,
}

/// Shared-edge histogram of both classes over the observed range. The last
/// bin is closed on the right.
pub fn histogram_export(s: &ScoreSet, n_bins: usize) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(CoreError::invalid("histogram needs at least 2 bins"));
    }
    let all: Vec<f64> = s.positives.iter().chain(&s.negatives).copied().collect();
    if all.is_empty() {
        return Err(CoreError::invalid("histogram of an empty score set"));
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| {
            if i == n_bins {
                hi
            } else {
                lo + i as f64 * width
            }
        })
        .collect();
    let bin = |v: f64| (((v - lo) / width).floor() as usize).min(n_bins - 1);
    let count = |vals: &[f64]| {
        let mut c = vec![0u64; n_bins];
        vals.iter().for_each(|&v| c[bin(v)] += 1);
        c
    };
    Ok(Histogram {
        edges,
        originals: count(&s.positives),
        fakes: count(&s.negatives),
    })
}

pub const SCORES_HEADER: &str =
    "printer,device,reference,metric,origin,template_id,instance,repetition,score";

pub fn scores_to_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.printer,
            r.device,
            r.reference,
            r.metric,
            r.origin.as_str(),
            r.template_id,
            r.instance,
            r.repetition,
            r.score
        ));
    }
    out
}

pub fn save_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    write_text(path, &scores_to_csv(records))
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_scores(&text).map_err(|(line, detail)| CoreError::Parse {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    })
}

fn parse_scores(text: &str) -> std::result::Result<Vec<ScoreRecord>, (usize, String)> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SCORES_HEADER => {}
        _ => return Err((1, format!("expected header {SCORES_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err((n, format!("expected 9 fields, found {}", f.len())));
        }
        let int = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| (n, format!("bad {what} {s:?}")))
        };
        let score: f64 = f[8]
            .parse()
            .map_err(|_| (n, format!("bad score {:?}", f[8])))?;
        if !score.is_finite() {
            return Err((n, "non-finite score".into()));
        }
        out.push(ScoreRecord {
            printer: f[0].to_string(),
            device: f[1].to_string(),
            reference: Reference::parse(f[2]).ok_or((n, format!("bad reference {:?}", f[2])))?,
            metric: Metric::parse(f[3]).ok_or((n, format!("bad metric {:?}", f[3])))?,
            origin: Origin::parse(f[4]).ok_or((n, format!("bad origin {:?}", f[4])))?,
            template_id: int(f[5], "template_id")?,
            instance: int(f[6], "instance")?,
            repetition: int(f[7], "repetition")?,
            score,
        });
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}
