//! Registration of captures to the template grid.
//!
//! A capture is first resampled to template resolution (the scale factor is
//! read off the size ratio), then an exhaustive integer shift search picks
//! the translation that maximizes pcorr against the template.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::filters::sample_bilinear;
use crate::imgcore::{Raster, Template};
use crate::metrics::pcorr_slices;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub search_radius: u32,
    pub peak_floor: f64,
    /// Parabolic refinement around the integer peak.
    pub subpixel: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            search_radius: 3,
            peak_floor: 0.05,
            subpixel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Capture content on the template grid, edge-clamped.
    pub aligned: Raster,
    /// Content at template pixel `p` was found at `p + shift`.
    pub shift: (i32, i32),
    pub peak: f64,
    pub subpixel: Option<(f64, f64)>,
}

/// Bilinear resampling of a capture onto a `width x height` grid.
pub fn resample_to_grid(y: &Raster, width: usize, height: usize) -> Raster {
    if y.dims() == (width, height) {
        return y.clone();
    }
    let sx = y.width() as f64 / width as f64;
    let sy = y.height() as f64 / height as f64;
    Raster::from_fn(width, height, |x, yy| {
        sample_bilinear(
            y,
            (x as f64 + 0.5) * sx - 0.5,
            (yy as f64 + 0.5) * sy - 0.5,
            None,
        )
    })
}

fn candidates(r: i32) -> Vec<(i32, i32)> {
    let mut c: Vec<(i32, i32)> = (-r..=r)
        .flat_map(|dx| (-r..=r).map(move |dy| (dx, dy)))
        .collect();
    c.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));
    c
}

fn shifted_interior(img: &Raster, r: usize, dx: i32, dy: i32) -> Vec<f64> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity((w - 2 * r) * (h - 2 * r));
    for y in r..h - r {
        let sy = (y as i32 + dy) as usize;
        for x in r..w - r {
            out.push(img.get((x as i32 + dx) as usize, sy));
        }
    }
    out
}

/// Vertex offset of the parabola through three samples, in [-0.5, 0.5].
fn parabolic(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

pub fn register(y: &Raster, t: &Template, cfg: &AlignConfig) -> Result<Registration> {
    let (w, h) = (t.width(), t.height());
    let r = cfg.search_radius as usize;
    if 4 * r + 2 > w.min(h) {
        return Err(CoreError::invalid(format!(
            "search radius {r} too large for a {w}x{h} template"
        )));
    }
    let grid = resample_to_grid(y, w, h);
    let reference = t.to_raster();
    let target = shifted_interior(&reference, r, 0, 0);
    let ri = r as i32;
    let mut scores = std::collections::HashMap::new();
    let mut best: Option<((i32, i32), f64)> = None;
    for (dx, dy) in candidates(ri) {
        let probe = shifted_interior(&grid, r, dx, dy);
        let s = match pcorr_slices(&probe, &target) {
            Ok(s) => s,
            Err(CoreError::UndefinedCorrelation) => 0.0,
            Err(e) => return Err(e),
        };
        scores.insert((dx, dy), s);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some(((dx, dy), s));
        }
    }
    let ((dx, dy), peak) = best.expect("at least one candidate");
    if !(peak >= cfg.peak_floor) {
        return Err(CoreError::RegistrationFailed {
            peak,
            floor: cfg.peak_floor,
        });
    }
    let subpixel = cfg.subpixel.then(|| {
        let at = |x: i32, y: i32| scores.get(&(x, y)).copied();
        let ox = match (at(dx - 1, dy), at(dx + 1, dy)) {
            (Some(l), Some(rr)) => parabolic(l, peak, rr),
            _ => 0.0,
        };
        let oy = match (at(dx, dy - 1), at(dx, dy + 1)) {
            (Some(l), Some(rr)) => parabolic(l, peak, rr),
            _ => 0.0,
        };
        (dx as f64 + ox, dy as f64 + oy)
    });
    let aligned = match subpixel {
        Some((sx, sy)) => Raster::from_fn(w, h, |x, yy| {
            sample_bilinear(&grid, x as f64 + sx, yy as f64 + sy, None)
        }),
        None => Raster::from_fn(w, h, |x, yy| {
            let sx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
            let sy = (yy as i32 + dy).clamp(0, h as i32 - 1) as usize;
            grid.get(sx, sy)
        }),
    };
    Ok(Registration {
        aligned,
        shift: (dx, dy),
        peak,
        subpixel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationFailure {
    pub capture: String,
    pub template_id: u32,
    pub peak: f64,
    pub reason: String,
}

/// Registers every `(label, capture, template)` triple. Failed probes come
/// back as `None` and are listed in the failure log; other errors abort.
pub fn batch_register(
    items: &[(String, &Raster, &Template)],
    cfg: &AlignConfig,
) -> Result<(Vec<Option<Registration>>, Vec<RegistrationFailure>)> {
    let results: Vec<Result<Registration>> = items
        .par_iter()
        .map(|(_, y, t)| register(y, t, cfg))
        .collect();
    let mut aligned = Vec::with_capacity(items.len());
    let mut failures = Vec::new();
    for ((label, _, t), res) in items.iter().zip(results) {
        match res {
            Ok(reg) => aligned.push(Some(reg)),
            Err(CoreError::RegistrationFailed { peak, .. }) => {
                failures.push(RegistrationFailure {
                    capture: label.clone(),
                    template_id: t.id,
                    peak,
                    reason: "peak_below_floor".into(),
                });
                aligned.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((aligned, failures))
}

pub fn write_failure_log(path: &Path, failures: &[RegistrationFailure]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    let mut out = String::from("capture,template_id,peak,reason\n");
    for f in failures {
        out.push_str(&format!(
            "{},{},{},{}\n",
            f.capture, f.template_id, f.peak, f.reason
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut file| file.write_all(out.as_bytes()))
        .map_err(|e| CoreError::io(path, e))
}
