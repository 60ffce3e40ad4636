//! Template-estimation attack: capture an original, estimate its digital
//! template, reprint the estimate.

use rayon::prelude::*;

use crate::align::{register, AlignConfig};
use crate::channel::{acquire, print_instance, DeviceProfile, PhysicalInstance, PrinterProfile};
use crate::error::{CoreError, Result};
use crate::imgcore::{Raster, Template, TemplateKind};
use crate::pix2pix::Generator;

const OTSU_BINS: usize = 256;

#[derive(Debug, Clone)]
pub enum EstimatorSpec {
    ThresholdOtsu,
    /// U-Net mapping an aligned capture to a whiteness map; pixels below
    /// `threshold` become ink.
    LearnedUnet {
        network: Box<Generator>,
        threshold: f64,
    },
}

impl EstimatorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EstimatorSpec::LearnedUnet { threshold, .. }
                if !(*threshold > 0.0 && *threshold < 1.0) =>
            {
                Err(CoreError::invalid(format!(
                    "estimator threshold must lie in (0,1), got {threshold}"
                )))
            }
            _ => Ok(()),
        }
    }
}

fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Otsu's threshold over a 256-bin histogram of [0,1] intensities. Returns
/// the last bin of the dark class.
pub fn otsu_bin(values: &[f64]) -> Result<usize> {
    let mut hist = [0u64; OTSU_BINS];
    values.iter().for_each(|&v| hist[bin_of(v)] += 1);
    let total = values.len() as f64;
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(CoreError::DegenerateHistogram(
            "probe intensities occupy a single histogram bin".into(),
        ));
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let between = w0 * w1 * (sum0 / w0 - (sum_all - sum0) / w1).powi(2);
        if between > best.0 {
            best = (between, k);
        }
    }
    Ok(best.1)
}

/// Binary estimate of the digital template from an aligned probe.
pub fn estimate_template(
    probe: &Raster,
    width: usize,
    height: usize,
    est: &EstimatorSpec,
) -> Result<Template> {
    est.validate()?;
    if probe.dims() != (width, height) {
        return Err(CoreError::invalid(format!(
            "probe is {}x{}, expected an aligned {width}x{height} image",
            probe.width(),
            probe.height()
        )));
    }
    let bits: Vec<u8> = match est {
        EstimatorSpec::ThresholdOtsu => {
            let k = otsu_bin(probe.pixels())?;
            probe
                .pixels()
                .iter()
                .map(|&v| (bin_of(v) <= k) as u8)
                .collect()
        }
        EstimatorSpec::LearnedUnet { network, threshold } => {
            let out = network.forward(probe)?;
            out.pixels()
                .iter()
                .map(|&v| (v < *threshold) as u8)
                .collect()
        }
    };
    Template::new(0, width, height, bits, TemplateKind::Estimated)
}

/// Reprints an estimate with the attacker's printer and fresh
/// microstructure.
pub fn make_fake(
    t_hat: &Template,
    attacker_printer: &PrinterProfile,
    instance: u32,
    instance_seed: u64,
) -> Result<PhysicalInstance> {
    if t_hat.kind != TemplateKind::Estimated {
        return Err(CoreError::invalid(
            "make_fake expects an estimated template",
        ));
    }
    print_instance(t_hat, attacker_printer, instance, instance_seed)
}

/// Seeds for one attacked template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackSeeds {
    pub capture: u64,
    pub fake_print: u64,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub t_hat: Template,
    pub fake: PhysicalInstance,
    pub bit_error_rate: f64,
}

/// Attacks every original: one capture on `device`, registration against
/// the true template, estimation, and a reprint tagged with the original's
/// template id.
pub fn run_attack(
    originals: &[(&Template, &PhysicalInstance, AttackSeeds)],
    device: &DeviceProfile,
    estimator: &EstimatorSpec,
    attacker_printer: &PrinterProfile,
    align: &AlignConfig,
) -> Result<Vec<AttackOutcome>> {
    estimator.validate()?;
    originals
        .par_iter()
        .map(|(t, inst, seeds)| {
            let cap = acquire(inst, device, 0, seeds.capture)?;
            let reg = register(cap.image.raster(), t, align)?;
            let mut t_hat = estimate_template(&reg.aligned, t.width(), t.height(), estimator)?;
            t_hat.id = t.id;
            let bit_error_rate = t.hamming(&t_hat) as f64 / t.bits().len() as f64;
            let fake = make_fake(&t_hat, attacker_printer, 0, seeds.fake_print)?;
            Ok(AttackOutcome {
                t_hat,
                fake,
                bit_error_rate,
            })
        })
        .collect()
}
