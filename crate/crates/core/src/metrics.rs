//! Similarity metrics used for scoring: Pearson correlation and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imgcore::Raster;

/// Pearson correlation over flattened pixels, two-pass.
///
/// If exactly one input is constant the covariance is zero and the result
/// is 0. Two constant inputs have no defined correlation.
pub fn pcorr(a: &Raster, b: &Raster) -> Result<f64> {
    a.ensure_same_dims(b, "pcorr")?;
    pcorr_slices(a.pixels(), b.pixels())
}

pub fn pcorr_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::invalid(format!(
            "pcorr: length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(CoreError::invalid("pcorr: empty input"));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    match (constant(a), constant(b)) {
        (true, true) => return Err(CoreError::UndefinedCorrelation),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SsimWindow {
    Gaussian { side: usize, sigma: f64 },
    Uniform { side: usize },
}

impl SsimWindow {
    pub fn side(&self) -> usize {
        match *self {
            SsimWindow::Gaussian { side, .. } | SsimWindow::Uniform { side } => side,
        }
    }

    /// Normalized 1-D profile; the 2-D window is its outer product.
    pub fn profile(&self) -> Vec<f64> {
        match *self {
            SsimWindow::Uniform { side } => vec![1.0 / side as f64; side],
            SsimWindow::Gaussian { side, sigma } => {
                let c = (side as f64 - 1.0) / 2.0;
                let w: Vec<f64> = (0..side)
                    .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            }
        }
    }

    /// Full 2-D window, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let p = self.profile();
        p.iter()
            .flat_map(|&wy| p.iter().map(move |&wx| wy * wx))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimParams {
    pub window: SsimWindow,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: SsimWindow::Gaussian {
                side: 11,
                sigma: 1.5,
            },
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn uniform8() -> Self {
        Self {
            window: SsimWindow::Uniform { side: 8 },
            ..Self::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(CoreError::invalid(
                "ssim: k1, k2 and dynamic range must be positive",
            ));
        }
        match self.window {
            SsimWindow::Gaussian { side, sigma } if side == 0 || !(sigma > 0.0) => Err(
                CoreError::invalid("ssim: gaussian window needs side >= 1 and sigma > 0"),
            ),
            SsimWindow::Uniform { side: 0 } => {
                Err(CoreError::invalid("ssim: window side must be >= 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Separable weighted sum over every valid window position.
fn window_filter(src: &[f64], w: usize, h: usize, p: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = p.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = p.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (i, &wt) in p.iter().enumerate() {
            let row = &rows[(y + i) * ow..(y + i + 1) * ow];
            for (o, &r) in out[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                *o += wt * r;
            }
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all valid window positions.
pub fn ssim(a: &Raster, b: &Raster, p: &SsimParams) -> Result<f64> {
    a.ensure_same_dims(b, "ssim")?;
    p.validate()?;
    let (w, h) = a.dims();
    let k = p.window.side();
    if w < k || h < k {
        return Err(CoreError::invalid(format!(
            "ssim: image {w}x{h} is smaller than the {k}x{k} window"
        )));
    }
    let prof = p.window.profile();
    let (pa, pb) = (a.pixels(), b.pixels());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect()
    };
    let (mu_a, ..) = window_filter(pa, w, h, &prof);
    let (mu_b, ..) = window_filter(pb, w, h, &prof);
    let (e_aa, ..) = window_filter(&prod(&|x, _| x * x), w, h, &prof);
    let (e_bb, ..) = window_filter(&prod(&|_, y| y * y), w, h, &prof);
    let (e_ab, ..) = window_filter(&prod(&|x, y| x * y), w, h, &prof);
    let (c1, c2) = (p.c1(), p.c2());
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}
