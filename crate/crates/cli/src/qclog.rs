//! Per-capture QC decisions, one CSV per origin.

use std::collections::BTreeMap;
use std::path::Path;

use cdp_core::imgcore::Origin;

use crate::error::{LabError, Result};

pub const QC_HEADER: &str = "printer,device,origin,template_id,instance,repetition,decision,reason,injected,sharpness,contrast";

#[derive(Debug, Clone, PartialEq)]
pub struct QcRow {
    pub printer: String,
    pub device: String,
    pub origin: Origin,
    pub template_id: u32,
    pub instance: u32,
    pub repetition: u32,
    pub kept: bool,
    /// Empty when kept.
    pub reason: String,
    /// Whether blur was injected on purpose.
    pub injected: bool,
    pub sharpness: f64,
    pub contrast: f64,
}

impl QcRow {
    fn sort_key(&self) -> (&str, &str, Origin, u32, u32, u32) {
        (
            &self.printer,
            &self.device,
            self.origin,
            self.template_id,
            self.instance,
            self.repetition,
        )
    }
}

pub fn sort_rows(rows: &mut [QcRow]) {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn save(path: &Path, rows: &[QcRow]) -> Result<()> {
    let mut out = String::from(QC_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.printer,
            r.device,
            r.origin.as_str(),
            r.template_id,
            r.instance,
            r.repetition,
            if r.kept { "keep" } else { "discard" },
            r.reason,
            r.injected,
            r.sharpness,
            r.contrast
        ));
    }
    cdp_core::rocstat::write_text(path, &out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<QcRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut lines = text.lines();
    let perr = |line: usize, detail: String| LabError::Parse {
        path: path.display().to_string(),
        detail: format!("line {line}: {detail}"),
    };
    if lines.next() != Some(QC_HEADER) {
        return Err(perr(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(perr(n, format!("expected 11 fields, got {}", f.len())));
        }
        let int = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| perr(n, format!("bad {what} {s:?}")))
        };
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| perr(n, format!("bad {what} {s:?}")))
        };
        rows.push(QcRow {
            printer: f[0].to_string(),
            device: f[1].to_string(),
            origin: Origin::parse(f[2]).ok_or_else(|| perr(n, format!("bad origin {:?}", f[2])))?,
            template_id: int(f[3], "template_id")?,
            instance: int(f[4], "instance")?,
            repetition: int(f[5], "repetition")?,
            kept: match f[6] {
                "keep" => true,
                "discard" => false,
                other => return Err(perr(n, format!("bad decision {other:?}"))),
            },
            reason: f[7].to_string(),
            injected: f[8]
                .parse()
                .map_err(|_| perr(n, format!("bad injected flag {:?}", f[8])))?,
            sharpness: num(f[9], "sharpness")?,
            contrast: num(f[10], "contrast")?,
        });
    }
    Ok(rows)
}

pub type CaptureKey = (String, String, Origin, u32, u32);

/// Kept repetitions per (printer, device, origin, template, instance),
/// ascending.
pub fn kept_reps(rows: &[QcRow]) -> BTreeMap<CaptureKey, Vec<u32>> {
    let mut out: BTreeMap<CaptureKey, Vec<u32>> = BTreeMap::new();
    for r in rows {
        let reps = out
            .entry((
                r.printer.clone(),
                r.device.clone(),
                r.origin,
                r.template_id,
                r.instance,
            ))
            .or_default();
        if r.kept {
            reps.push(r.repetition);
        }
    }
    for reps in out.values_mut() {
        reps.sort_unstable();
    }
    out
}

/// Discard rates split by whether blur was injected.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct QcSummary {
    pub injected: usize,
    pub injected_discarded: usize,
    pub clean: usize,
    pub clean_discarded: usize,
}

impl QcSummary {
    pub fn of(rows: &[QcRow]) -> Self {
        let mut s = QcSummary {
            injected: 0,
            injected_discarded: 0,
            clean: 0,
            clean_discarded: 0,
        };
        for r in rows {
            if r.injected {
                s.injected += 1;
                s.injected_discarded += usize::from(!r.kept);
            } else {
                s.clean += 1;
                s.clean_discarded += usize::from(!r.kept);
            }
        }
        s
    }

    pub fn injected_discard_rate(&self) -> f64 {
        self.injected_discarded as f64 / self.injected.max(1) as f64
    }

    pub fn clean_discard_rate(&self) -> f64 {
        self.clean_discarded as f64 / self.clean.max(1) as f64
    }
}
