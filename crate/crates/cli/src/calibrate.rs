//! Device-ladder tuning: scale the psf of every non-attack device by a
//! common factor until AUC(pcorr, t) spans a target range.

use std::collections::BTreeMap;

use cdp_core::align::register;
use cdp_core::attack::{run_attack, AttackSeeds, EstimatorSpec};
use cdp_core::channel::{capture_repeats, print_instance, PhysicalInstance, ProfileSet};
use cdp_core::imgcore::{generate_dataset, write_json};
use cdp_core::metrics::pcorr;
use cdp_core::rng::{derive_seed, Tag};
use cdp_core::rocstat::{auc, ScoreSet};
use cdp_core::{CoreError, Raster, Template};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::workspace::Workspace;

#[derive(Debug, Clone)]
pub struct CalibrateArgs {
    pub target_min: f64,
    pub target_max: f64,
    pub multipliers: Vec<f64>,
    pub n_templates: usize,
}

impl Default for CalibrateArgs {
    fn default() -> Self {
        Self {
            target_min: 0.65,
            target_max: 1.0,
            multipliers: vec![0.8, 0.9, 1.0, 1.1, 1.2],
            n_templates: 48,
        }
    }
}

pub type LadderAuc = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub multiplier: f64,
    pub auc: LadderAuc,
    pub min: f64,
    pub max: f64,
    pub error: f64,
}

pub fn scaled_profiles(profiles: &ProfileSet, attack_device: &str, m: f64) -> ProfileSet {
    let mut out = profiles.clone();
    for d in &mut out.devices {
        if d.id != attack_device {
            d.psf_sigma *= m;
        }
    }
    out
}

fn aligned_scores(
    cfg: &ExperimentConfig,
    t: &Template,
    caps: impl Iterator<Item = Raster>,
    reference: &Raster,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for y in caps {
        match register(&y, t, &cfg.align) {
            Ok(reg) => out.push(pcorr(
                &reg.aligned.crop_margin(cfg.score.margin)?,
                reference,
            )?),
            Err(CoreError::RegistrationFailed { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// AUC(pcorr, t) per printer and device on a small in-memory run with the
/// Otsu attack and no QC.
pub fn ladder_t_auc(cfg: &ExperimentConfig, n_templates: usize) -> Result<LadderAuc> {
    let seed = derive_seed(cfg.seed, &[Tag::Str("calibrate")]);
    let d = &cfg.dataset;
    let (templates, _) = generate_dataset(seed, n_templates, d.template_size, d.black_fraction)?;
    let attack_dev = cfg.profiles.device(&cfg.attack.device)?;
    let mut out = LadderAuc::new();
    for printer in &cfg.profiles.printers {
        let p = Tag::Str(&printer.id);
        let originals: Vec<PhysicalInstance> = templates
            .par_iter()
            .map(|t| {
                print_instance(
                    t,
                    printer,
                    0,
                    derive_seed(seed, &[Tag::Str("print"), p, Tag::Int(t.id.into())]),
                )
            })
            .collect::<cdp_core::Result<_>>()?;
        let attacker = match &cfg.attack.attacker_printer {
            Some(id) => cfg.profiles.printer(id)?,
            None => printer,
        };
        let jobs: Vec<_> = templates
            .iter()
            .zip(&originals)
            .map(|(t, inst)| {
                let id = Tag::Int(t.id.into());
                let seeds = AttackSeeds {
                    capture: derive_seed(seed, &[Tag::Str("attack"), p, id]),
                    fake_print: derive_seed(seed, &[Tag::Str("fake"), p, id]),
                };
                (t, inst, seeds)
            })
            .collect();
        let fakes = run_attack(
            &jobs,
            attack_dev,
            &EstimatorSpec::ThresholdOtsu,
            attacker,
            &cfg.align,
        )?;
        let row = out.entry(printer.id.clone()).or_default();
        for dev in &cfg.profiles.devices {
            let per: Vec<(Vec<f64>, Vec<f64>)> = templates
                .par_iter()
                .zip(&originals)
                .zip(&fakes)
                .map(|((t, orig), fake)| -> Result<(Vec<f64>, Vec<f64>)> {
                    let reference = t.to_raster().crop_margin(cfg.score.margin)?;
                    let cap = |inst: &PhysicalInstance, origin: &str| {
                        let s = derive_seed(
                            seed,
                            &[
                                Tag::Str("capture"),
                                p,
                                Tag::Str(&dev.id),
                                Tag::Str(origin),
                                Tag::Int(t.id.into()),
                            ],
                        );
                        capture_repeats(inst, dev, cfg.dataset.n_reps, s)
                    };
                    let o = cap(orig, "original")?
                        .into_iter()
                        .skip(1)
                        .map(|c| c.image.into_raster());
                    let f = cap(&fake.fake, "fake")?
                        .into_iter()
                        .map(|c| c.image.into_raster());
                    Ok((
                        aligned_scores(cfg, t, o, &reference)?,
                        aligned_scores(cfg, t, f, &reference)?,
                    ))
                })
                .collect::<Result<_>>()?;
            let mut set = ScoreSet::new(Vec::new(), Vec::new());
            for (o, f) in per {
                set.positives.extend(o);
                set.negatives.extend(f);
            }
            row.insert(dev.id.clone(), auc(&set)?);
        }
    }
    Ok(out)
}

pub fn calibrate(ws: &Workspace, cfg: &ExperimentConfig, args: &CalibrateArgs) -> Result<Value> {
    if args.multipliers.is_empty()
        || args
            .multipliers
            .iter()
            .any(|m| !(*m > 0.0 && m.is_finite()))
    {
        return Err(LabError::Usage("multipliers must be positive".into()));
    }
    if !(args.target_min <= args.target_max) || args.n_templates < 2 {
        return Err(LabError::Usage(
            "need target_min <= target_max and at least 2 templates".into(),
        ));
    }
    let mut sweep = Vec::new();
    for &m in &args.multipliers {
        let mut c = cfg.clone();
        c.profiles = scaled_profiles(&cfg.profiles, &cfg.attack.device, m);
        c.validate()?;
        let aucs = ladder_t_auc(&c, args.n_templates)?;
        let all: Vec<f64> = aucs.values().flat_map(|r| r.values().copied()).collect();
        let min = all.iter().copied().fold(f64::INFINITY, f64::min);
        let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let error = (min - args.target_min).abs() + (max - args.target_max).abs();
        eprintln!("calibrate: psf x{m}: AUC(pcorr, t) in [{min:.3}, {max:.3}]");
        sweep.push(SweepPoint {
            multiplier: m,
            auc: aucs,
            min,
            max,
            error,
        });
    }
    let best = sweep
        .iter()
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .expect("sweep is nonempty");
    let tuned = scaled_profiles(&cfg.profiles, &cfg.attack.device, best.multiplier);
    let dir = ws.calibrate_dir();
    write_json(&dir.join("sweep.json"), &sweep)?;
    tuned.save(&dir.join("profiles.json"))?;
    let mut tuned_cfg = cfg.clone();
    tuned_cfg.profiles = tuned;
    write_json(&dir.join("config.json"), &tuned_cfg)?;
    Ok(json!({
        "multiplier": best.multiplier,
        "min": best.min,
        "max": best.max,
        "config": ws.relative(&dir.join("config.json")),
    }))
}
