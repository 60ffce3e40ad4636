//! Parametric print-and-acquire channel.
//!
//! Printing turns a binary template into a fixed latent print: ink spreads
//! into white neighbors (dot gain), the print is slightly blurred, and a
//! per-instance microstructure field is added. The microstructure is drawn
//! once per physical instance, which is what makes an enrolled capture a
//! physically unclonable reference.
//!
//! Acquisition resamples the latent to the device grid, applies the optical
//! PSF, a gamma curve, additive sensor noise and an integer translation.
//! Only acquisition randomness changes between repeated captures.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::filters::{gaussian_blur, laplacian_variance, percentile, sample_bilinear};
use crate::imgcore::{
    read_json, write_json, PhysicalImage, Provenance, Raster, Role, Template, TemplateKind,
};
use crate::rng::{derive_seed, stream, Tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrinterProfile {
    pub id: String,
    /// Fraction of a white pixel darkened when fully surrounded by ink.
    pub dot_gain: f64,
    pub instance_noise_sigma: f64,
    pub print_blur_sigma: f64,
}

impl PrinterProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.dot_gain >= 0.0 && self.print_blur_sigma >= 0.0) {
            return Err(CoreError::invalid(format!(
                "printer {}: parameters must be non-negative",
                self.id
            )));
        }
        if !(self.instance_noise_sigma > 0.0 && self.instance_noise_sigma.is_finite()) {
            return Err(CoreError::invalid(format!(
                "printer {}: instance_noise_sigma must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: String,
    /// Optical blur in capture pixels.
    pub psf_sigma: f64,
    pub acq_noise_sigma: f64,
    pub gamma: f64,
    /// Capture pixels per template pixel.
    pub scale_factor: f64,
    /// Maximum absolute translation in template pixels.
    pub shift_jitter_max: u32,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(CoreError::invalid(format!("device {}: {what}", self.id)));
        if !(self.psf_sigma >= 0.0) {
            return bad("psf_sigma must be non-negative");
        }
        if !(self.acq_noise_sigma >= 0.0) {
            return bad("acq_noise_sigma must be non-negative");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(0.25..=4.0).contains(&self.scale_factor) {
            return bad("scale_factor must lie in [0.25, 4]");
        }
        Ok(())
    }

    /// Capture dimensions for a template of the given size.
    pub fn capture_dims(&self, width: usize, height: usize) -> (usize, usize) {
        let s = |n: usize| ((n as f64 * self.scale_factor).round() as usize).max(1);
        (s(width), s(height))
    }
}

/// Printer and device profiles, as read from the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSet {
    pub printers: Vec<PrinterProfile>,
    pub devices: Vec<DeviceProfile>,
}

impl ProfileSet {
    pub fn validate(&self) -> Result<()> {
        self.printers
            .iter()
            .try_for_each(PrinterProfile::validate)?;
        self.devices.iter().try_for_each(DeviceProfile::validate)
    }

    pub fn printer(&self, id: &str) -> Result<&PrinterProfile> {
        self.printers
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| CoreError::invalid(format!("unknown printer {id:?}")))
    }

    pub fn device(&self, id: &str) -> Result<&DeviceProfile> {
        self.devices
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| CoreError::invalid(format!("unknown device {id:?}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: Self = read_json(path)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

impl Default for ProfileSet {
    /// Two enrollment printers and the seven-device acquisition ladder.
    /// Device values were tuned with the calibration sweep so that the
    /// template-reference AUC rises from about 0.7 (xs_wide) to 1.0.
    fn default() -> Self {
        let printer = |id: &str, dot_gain, instance_noise_sigma, print_blur_sigma| PrinterProfile {
            id: id.to_string(),
            dot_gain,
            instance_noise_sigma,
            print_blur_sigma,
        };
        let device = |id: &str, psf_sigma, acq_noise_sigma, gamma, scale_factor| DeviceProfile {
            id: id.to_string(),
            psf_sigma,
            acq_noise_sigma,
            gamma,
            scale_factor,
            shift_jitter_max: 3,
        };
        Self {
            printers: vec![
                printer("HPI55", 0.10, 0.15, 0.25),
                printer("HPI76", 0.07, 0.135, 0.225),
            ],
            devices: vec![
                device("xs_wide", 1.7, 0.006, 1.15, 1.0),
                device("12_wide", 1.4, 0.006, 1.1, 1.0),
                device("14_wide", 1.2, 0.006, 1.1, 1.0),
                device("15_wide", 1.0, 0.006, 1.05, 1.0),
                device("epson", 0.3, 0.005, 1.0, 2.0),
                device("14_macro", 0.8, 0.006, 1.05, 1.5),
                device("15_macro", 0.6, 0.006, 1.0, 2.0),
            ],
        }
    }
}

/// A printed object: the latent print is fixed at print time.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalInstance {
    pub template_id: u32,
    pub printer_id: String,
    pub instance: u32,
    pub latent: PhysicalImage,
}

const DOT_GAIN_WEIGHTS: [(i64, i64, f64); 8] = [
    (-1, 0, 0.15),
    (1, 0, 0.15),
    (0, -1, 0.15),
    (0, 1, 0.15),
    (-1, -1, 0.10),
    (1, -1, 0.10),
    (-1, 1, 0.10),
    (1, 1, 0.10),
];

/// Ink spreading into white pixels from their 8 neighbors.
fn apply_dot_gain(t: &Template, dot_gain: f64) -> Raster {
    let (w, h) = (t.width() as i64, t.height() as i64);
    let bits = t.bits();
    Raster::from_fn(t.width(), t.height(), |x, y| {
        if bits[y * t.width() + x] == 1 {
            return 0.0;
        }
        if dot_gain == 0.0 {
            return 1.0;
        }
        let spread: f64 = DOT_GAIN_WEIGHTS
            .iter()
            .filter_map(|&(dx, dy, wt)| {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                (xx >= 0 && xx < w && yy >= 0 && yy < h && bits[(yy * w + xx) as usize] == 1)
                    .then_some(wt)
            })
            .sum();
        (1.0 - dot_gain * spread).max(0.0)
    })
}

/// Print instance 0 of `t`.
pub fn print(
    t: &Template,
    printer: &PrinterProfile,
    instance_seed: u64,
) -> Result<PhysicalInstance> {
    print_instance(t, printer, 0, instance_seed)
}

pub fn print_instance(
    t: &Template,
    printer: &PrinterProfile,
    instance: u32,
    instance_seed: u64,
) -> Result<PhysicalInstance> {
    printer.validate()?;
    let inked = apply_dot_gain(t, printer.dot_gain);
    let mut latent = gaussian_blur(&inked, printer.print_blur_sigma);
    let normal = Normal::new(0.0, printer.instance_noise_sigma)
        .map_err(|e| CoreError::invalid(e.to_string()))?;
    let mut rng = stream(instance_seed);
    latent
        .pixels_mut()
        .iter_mut()
        .for_each(|v| *v += normal.sample(&mut rng));
    let role = match t.kind {
        TemplateKind::Original => Role::OriginalX,
        TemplateKind::Estimated => Role::FakeF,
    };
    let latent = PhysicalImage::new(
        latent,
        Provenance {
            role,
            template_id: t.id,
            printer_id: printer.id.clone(),
            device_id: None,
            instance,
            repetition: None,
        },
    )?;
    Ok(PhysicalInstance {
        template_id: t.id,
        printer_id: printer.id.clone(),
        instance,
        latent,
    })
}

/// One acquisition of a physical instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub image: PhysicalImage,
    /// Injected translation in template pixels: capture content at template
    /// coordinate `p` shows the latent at `p - true_shift`.
    pub true_shift: (i32, i32),
}

pub fn acquire(
    inst: &PhysicalInstance,
    device: &DeviceProfile,
    repetition: u32,
    rep_seed: u64,
) -> Result<Capture> {
    device.validate()?;
    let mut rng = stream(rep_seed);
    let j = device.shift_jitter_max as i32;
    let shift = (rng.gen_range(-j..=j), rng.gen_range(-j..=j));
    let latent = inst.latent.raster();
    let (cw, ch) = device.capture_dims(latent.width(), latent.height());
    let s = device.scale_factor;
    let (dx, dy) = (shift.0 as f64, shift.1 as f64);
    let resampled = Raster::from_fn(cw, ch, |x, y| {
        let u = (x as f64 + 0.5) / s - 0.5 - dx;
        let v = (y as f64 + 0.5) / s - 0.5 - dy;
        sample_bilinear(latent, u, v, Some(1.0))
    });
    let mut img = gaussian_blur(&resampled, device.psf_sigma);
    if device.gamma != 1.0 {
        img.pixels_mut()
            .iter_mut()
            .for_each(|v| *v = v.clamp(0.0, 1.0).powf(device.gamma));
    }
    if device.acq_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, device.acq_noise_sigma)
            .map_err(|e| CoreError::invalid(e.to_string()))?;
        img.pixels_mut()
            .iter_mut()
            .for_each(|v| *v += normal.sample(&mut rng));
    }
    let image = PhysicalImage::new(
        img,
        Provenance {
            role: Role::CaptureY,
            template_id: inst.template_id,
            printer_id: inst.printer_id.clone(),
            device_id: Some(device.id.clone()),
            instance: inst.instance,
            repetition: Some(repetition),
        },
    )?;
    Ok(Capture {
        image,
        true_shift: shift,
    })
}

pub fn rep_seed(seed: u64, rep: u32) -> u64 {
    derive_seed(seed, &[Tag::Str("rep"), Tag::Int(rep as u64)])
}

pub fn capture_repeats(
    inst: &PhysicalInstance,
    device: &DeviceProfile,
    n_reps: u32,
    seed: u64,
) -> Result<Vec<Capture>> {
    if n_reps == 0 {
        return Err(CoreError::invalid("n_reps must be at least 1"));
    }
    (0..n_reps)
        .map(|r| acquire(inst, device, r, rep_seed(seed, r)))
        .collect()
}

/// Simulates a defocused or shaken capture.
pub fn inject_blur(img: &Raster, sigma: f64) -> Raster {
    gaussian_blur(img, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcThresholds {
    /// Minimum Laplacian variance.
    pub blur: f64,
    /// Minimum p99 - p1 intensity range.
    pub contrast: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcReason {
    Blur,
    Contrast,
}

impl QcReason {
    pub fn as_str(self) -> &'static str {
        match self {
            QcReason::Blur => "blur",
            QcReason::Contrast => "contrast",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok,
    /// Every capture failed; not an error, but callers should warn.
    AllDiscarded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcOutcome {
    pub kept: Vec<usize>,
    pub discarded: Vec<(usize, QcReason)>,
    pub status: QcStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcMeasures {
    pub sharpness: f64,
    pub contrast: f64,
}

pub fn qc_measures(img: &Raster) -> QcMeasures {
    QcMeasures {
        sharpness: laplacian_variance(img),
        contrast: percentile(img.pixels(), 99.0) - percentile(img.pixels(), 1.0),
    }
}

/// Splits captures into kept and discarded indices. A capture failing both
/// checks is attributed to the one it misses by the larger factor; exact
/// ties (a flat image fails both completely) count as `contrast`.
pub fn quality_control(captures: &[&Raster], thresholds: QcThresholds) -> Result<QcOutcome> {
    if captures.is_empty() {
        return Err(CoreError::invalid(
            "quality control needs at least one capture",
        ));
    }
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for (i, img) in captures.iter().enumerate() {
        let m = qc_measures(img);
        let contrast_fail = m.contrast < thresholds.contrast;
        let blur_fail = m.sharpness < thresholds.blur;
        match (contrast_fail, blur_fail) {
            (false, false) => kept.push(i),
            (true, false) => discarded.push((i, QcReason::Contrast)),
            (false, true) => discarded.push((i, QcReason::Blur)),
            (true, true) => {
                let reason = if m.sharpness / thresholds.blur < m.contrast / thresholds.contrast {
                    QcReason::Blur
                } else {
                    QcReason::Contrast
                };
                discarded.push((i, reason));
            }
        }
    }
    let status = if kept.is_empty() {
        QcStatus::AllDiscarded
    } else {
        QcStatus::Ok
    };
    Ok(QcOutcome {
        kept,
        discarded,
        status,
    })
}

/// Thresholds at `factor` times the 1st percentile of each measure over a
/// clean calibration run.
pub fn calibrate_qc(clean: &[&Raster], factor: f64) -> Result<QcThresholds> {
    if clean.is_empty() {
        return Err(CoreError::invalid("QC calibration needs clean captures"));
    }
    let measures: Vec<QcMeasures> = clean.iter().map(|r| qc_measures(r)).collect();
    let sharp: Vec<f64> = measures.iter().map(|m| m.sharpness).collect();
    let contrast: Vec<f64> = measures.iter().map(|m| m.contrast).collect();
    Ok(QcThresholds {
        blur: factor * percentile(&sharp, 1.0),
        contrast: factor * percentile(&contrast, 1.0),
    })
}
