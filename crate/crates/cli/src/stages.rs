//! Pipeline stages. Each one reads the previous stages' files from the
//! workspace and writes its own.

use std::collections::BTreeMap;

use cdp_autodiff::{AdamConfig, Checkpoint};
use cdp_core::align::{register, write_failure_log, RegistrationFailure};
use cdp_core::attack::{run_attack, AttackSeeds, EstimatorSpec};
use cdp_core::channel::{
    acquire, calibrate_qc, capture_repeats, inject_blur, print_instance, quality_control,
    DeviceProfile, PhysicalInstance, PrinterProfile, QcThresholds,
};
use cdp_core::imgcore::{
    generate_dataset, load_physical, load_raster, load_template, read_json, save_physical,
    save_raster, save_template, split_dataset, write_json, DatasetManifest, Origin,
};
use cdp_core::metrics::{pcorr, ssim};
use cdp_core::pix2pix::{save_history, synthesize_all, train, train_l1, Generator, TrainingPair};
use cdp_core::rng::{derive_seed, stream, Tag};
use cdp_core::rocstat::{save_scores, Metric, Reference, ScoreRecord};
use cdp_core::{CoreError, Raster, Template};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Cell, EstimatorKind, ExperimentConfig};
use crate::error::{LabError, Result};
use crate::qclog::{self, QcRow, QcSummary};
use crate::workspace::Workspace;

pub fn load_manifest(ws: &Workspace) -> Result<DatasetManifest> {
    let path = ws.dataset().manifest();
    ws.require(&path, "dataset manifest", "gen")?;
    Ok(DatasetManifest::load(&path)?)
}

pub fn load_templates(ws: &Workspace, ids: &[u32]) -> Result<Vec<Template>> {
    let layout = ws.dataset();
    ids.iter()
        .map(|&id| {
            let path = layout.template(id);
            ws.require(&path, &format!("template {id}"), "gen")?;
            Ok(load_template(&path)?)
        })
        .collect()
}

fn load_thresholds(ws: &Workspace) -> Result<BTreeMap<String, QcThresholds>> {
    let path = ws.qc_thresholds();
    ws.require(&path, "QC thresholds", "simulate")?;
    Ok(read_json(&path)?)
}

fn load_qc(ws: &Workspace, origin: Origin) -> Result<Vec<QcRow>> {
    let path = ws.qc_log(origin);
    let command = match origin {
        Origin::Original => "simulate",
        Origin::Fake => "attack",
    };
    ws.require(&path, &format!("{} QC log", origin.as_str()), command)?;
    qclog::load(&path)
}

fn print_seed(cfg: &ExperimentConfig, printer: &str, id: u32, instance: u32) -> u64 {
    derive_seed(
        cfg.seed,
        &[
            Tag::Str("print"),
            Tag::Str(printer),
            Tag::Int(id.into()),
            Tag::Int(instance.into()),
        ],
    )
}

fn capture_seed(
    cfg: &ExperimentConfig,
    printer: &str,
    device: &str,
    origin: Origin,
    id: u32,
    instance: u32,
) -> u64 {
    derive_seed(
        cfg.seed,
        &[
            Tag::Str("capture"),
            Tag::Str(printer),
            Tag::Str(device),
            Tag::Str(origin.as_str()),
            Tag::Int(id.into()),
            Tag::Int(instance.into()),
        ],
    )
}

/// Templates and the train/test split.
pub fn gen(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Value> {
    let d = &cfg.dataset;
    let (templates, manifest) =
        generate_dataset(cfg.seed, d.n_templates, d.template_size, d.black_fraction)?;
    let mut manifest = split_dataset(&manifest, d.train_fraction, cfg.seed)?;
    manifest.printer_ids = cfg.printer_ids();
    manifest.device_ids = cfg.device_ids();
    let layout = ws.dataset();
    for t in &templates {
        save_template(t, &layout.template(t.id))?;
    }
    manifest.save(&layout.manifest())?;
    write_json(&ws.config(), cfg)?;
    Ok(json!({
        "templates": templates.len(),
        "train": manifest.split.train_ids.len(),
        "test": manifest.split.test_ids.len(),
    }))
}

/// Per-device QC thresholds from separately seeded clean prints of the
/// first few templates.
fn calibrate_thresholds(
    cfg: &ExperimentConfig,
    templates: &[Template],
) -> Result<BTreeMap<String, QcThresholds>> {
    let n = cfg.qc.calibration_templates.clamp(1, templates.len());
    let mut out = BTreeMap::new();
    for dev in &cfg.profiles.devices {
        let mut clean: Vec<Raster> = Vec::new();
        for printer in &cfg.profiles.printers {
            let caps: Vec<Vec<Raster>> = templates[..n]
                .par_iter()
                .map(|t| -> Result<Vec<Raster>> {
                    let id = Tag::Int(t.id.into());
                    let inst = print_instance(
                        t,
                        printer,
                        0,
                        derive_seed(
                            cfg.seed,
                            &[Tag::Str("qc_calibration"), Tag::Str(&printer.id), id],
                        ),
                    )?;
                    let seed = derive_seed(
                        cfg.seed,
                        &[
                            Tag::Str("qc_calibration"),
                            Tag::Str(&printer.id),
                            Tag::Str(&dev.id),
                            id,
                        ],
                    );
                    Ok(capture_repeats(&inst, dev, cfg.dataset.n_reps, seed)?
                        .into_iter()
                        .map(|c| c.image.into_raster())
                        .collect())
                })
                .collect::<Result<_>>()?;
            clean.extend(caps.into_iter().flatten());
        }
        let refs: Vec<&Raster> = clean.iter().collect();
        out.insert(dev.id.clone(), calibrate_qc(&refs, cfg.qc.factor)?);
    }
    Ok(out)
}

/// Captures every device's repetitions of `inst`, optionally replaces a
/// random subset with a heavily blurred copy, saves them under the
/// enrollment printer and runs QC.
fn capture_and_qc(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    printer: &str,
    origin: Origin,
    inst: &PhysicalInstance,
    thresholds: &BTreeMap<String, QcThresholds>,
) -> Result<Vec<QcRow>> {
    let layout = ws.dataset();
    let id = inst.template_id;
    let mut rows = Vec::new();
    for dev in &cfg.profiles.devices {
        let thr = *thresholds.get(&dev.id).ok_or_else(|| {
            LabError::Config(format!(
                "no QC thresholds for device {}; rerun simulate",
                dev.id
            ))
        })?;
        let seed = capture_seed(cfg, printer, &dev.id, origin, id, inst.instance);
        let mut images = Vec::new();
        let mut injected = Vec::new();
        for cap in capture_repeats(inst, dev, cfg.dataset.n_reps, seed)? {
            let rep = cap.image.provenance.repetition.unwrap_or(0);
            let mut img = cap.image.into_raster();
            let hit = cfg.qc.inject_fraction > 0.0 && {
                let s = derive_seed(
                    cfg.seed,
                    &[
                        Tag::Str("qc_inject"),
                        Tag::Str(printer),
                        Tag::Str(&dev.id),
                        Tag::Str(origin.as_str()),
                        Tag::Int(id.into()),
                        Tag::Int(inst.instance.into()),
                        Tag::Int(rep.into()),
                    ],
                );
                stream(s).gen::<f64>() < cfg.qc.inject_fraction
            };
            if hit {
                img = inject_blur(&img, cfg.qc.inject_sigma);
            }
            save_raster(
                &img,
                &layout.capture(printer, &dev.id, origin, id, inst.instance, rep),
            )?;
            images.push((rep, img));
            injected.push(hit);
        }
        let refs: Vec<&Raster> = images.iter().map(|(_, r)| r).collect();
        let outcome = quality_control(&refs, thr)?;
        for (i, (rep, img)) in images.iter().enumerate() {
            let m = cdp_core::channel::qc_measures(img);
            let reason = outcome
                .discarded
                .iter()
                .find(|(j, _)| *j == i)
                .map(|(_, r)| r.as_str().to_string());
            rows.push(QcRow {
                printer: printer.to_string(),
                device: dev.id.clone(),
                origin,
                template_id: id,
                instance: inst.instance,
                repetition: *rep,
                kept: reason.is_none(),
                reason: reason.unwrap_or_default(),
                injected: injected[i],
                sharpness: m.sharpness,
                contrast: m.contrast,
            });
        }
    }
    Ok(rows)
}

/// Original prints, their captures on every device, and QC.
pub fn simulate(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Value> {
    let manifest = load_manifest(ws)?;
    let templates = load_templates(ws, &manifest.template_ids())?;
    let thresholds = calibrate_thresholds(cfg, &templates)?;
    write_json(&ws.qc_thresholds(), &thresholds)?;
    let layout = ws.dataset();
    let mut rows = Vec::new();
    for printer in &cfg.profiles.printers {
        let per: Vec<Vec<QcRow>> = templates
            .par_iter()
            .map(|t| {
                let inst = print_instance(t, printer, 0, print_seed(cfg, &printer.id, t.id, 0))?;
                save_physical(
                    &inst.latent,
                    &layout.physical(&printer.id, Origin::Original, t.id, 0),
                )?;
                capture_and_qc(ws, cfg, &printer.id, Origin::Original, &inst, &thresholds)
            })
            .collect::<Result<_>>()?;
        rows.extend(per.into_iter().flatten());
    }
    qclog::sort_rows(&mut rows);
    qclog::save(&ws.qc_log(Origin::Original), &rows)?;
    Ok(json!({ "captures": rows.len(), "qc": QcSummary::of(&rows) }))
}

fn load_original(ws: &Workspace, printer: &str, id: u32) -> Result<PhysicalInstance> {
    let path = ws.dataset().physical(printer, Origin::Original, id, 0);
    ws.require(&path, &format!("original print {printer}/{id}"), "simulate")?;
    Ok(PhysicalInstance {
        template_id: id,
        printer_id: printer.to_string(),
        instance: 0,
        latent: load_physical(&path)?,
    })
}

/// The attacker's learned estimator: an L1-trained U-Net from aligned
/// attack-device captures of training originals to their templates.
fn train_estimator(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    printer: &str,
    train: &[(&Template, &PhysicalInstance)],
    device: &DeviceProfile,
) -> Result<Generator> {
    let pairs: Vec<TrainingPair> = train
        .par_iter()
        .map(|(t, inst)| -> Result<Option<TrainingPair>> {
            let seed = derive_seed(
                cfg.seed,
                &[
                    Tag::Str("attack_train"),
                    Tag::Str(printer),
                    Tag::Int(t.id.into()),
                ],
            );
            let cap = acquire(inst, device, 0, seed)?;
            match register(cap.image.raster(), t, &cfg.align) {
                Ok(reg) => Ok(Some(TrainingPair {
                    template: reg.aligned,
                    target: t.to_raster(),
                })),
                Err(CoreError::RegistrationFailed { .. }) => Ok(None),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let seed = derive_seed(cfg.seed, &[Tag::Str("estimator"), Tag::Str(printer)]);
    let (gen, _) = train_l1(
        &pairs,
        cfg.attack.estimator_generator,
        cfg.attack.estimator_epochs,
        AdamConfig::default(),
        seed,
    )?;
    let step = (cfg.attack.estimator_epochs * pairs.len()) as u64;
    gen.to_checkpoint(step, json!({ "role": "estimator", "printer": printer }))
        .save(&ws.estimator(printer))
        .map_err(CoreError::from)?;
    Ok(gen)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSummary {
    pub device: String,
    pub estimator: EstimatorKind,
    /// Mean bit error rate of the estimated templates per enrollment printer.
    pub mean_bit_error_rate: BTreeMap<String, f64>,
    pub bit_error_rate: BTreeMap<String, Vec<(u32, f64)>>,
}

/// Template estimation from one capture of each original, reprints, and
/// captures of the fakes on every device.
pub fn attack(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Value> {
    let manifest = load_manifest(ws)?;
    let templates = load_templates(ws, &manifest.template_ids())?;
    let thresholds = load_thresholds(ws)?;
    let device = cfg.profiles.device(&cfg.attack.device)?;
    let layout = ws.dataset();
    let mut rows = Vec::new();
    let mut summary = AttackSummary {
        device: device.id.clone(),
        estimator: cfg.attack.estimator,
        mean_bit_error_rate: BTreeMap::new(),
        bit_error_rate: BTreeMap::new(),
    };
    for printer in &cfg.profiles.printers {
        let originals: Vec<PhysicalInstance> = templates
            .iter()
            .map(|t| load_original(ws, &printer.id, t.id))
            .collect::<Result<_>>()?;
        let estimator = match cfg.attack.estimator {
            EstimatorKind::ThresholdOtsu => EstimatorSpec::ThresholdOtsu,
            EstimatorKind::LearnedUnet => {
                let train_ids = &manifest.split.train_ids;
                let train: Vec<(&Template, &PhysicalInstance)> = templates
                    .iter()
                    .zip(&originals)
                    .filter(|(t, _)| train_ids.contains(&t.id))
                    .collect();
                let network = train_estimator(ws, cfg, &printer.id, &train, device)?;
                EstimatorSpec::LearnedUnet {
                    network: Box::new(network),
                    threshold: cfg.attack.threshold,
                }
            }
        };
        let attacker: &PrinterProfile = match &cfg.attack.attacker_printer {
            Some(id) => cfg.profiles.printer(id)?,
            None => printer,
        };
        let jobs: Vec<(&Template, &PhysicalInstance, AttackSeeds)> = templates
            .iter()
            .zip(&originals)
            .map(|(t, inst)| {
                let id = Tag::Int(t.id.into());
                let seeds = AttackSeeds {
                    capture: derive_seed(
                        cfg.seed,
                        &[Tag::Str("attack"), Tag::Str(&printer.id), id],
                    ),
                    fake_print: derive_seed(
                        cfg.seed,
                        &[Tag::Str("fake"), Tag::Str(&printer.id), id, Tag::Int(0)],
                    ),
                };
                (t, inst, seeds)
            })
            .collect();
        let outcomes = run_attack(&jobs, device, &estimator, attacker, &cfg.align)?;
        let per: Vec<Vec<QcRow>> = outcomes
            .par_iter()
            .map(|o| {
                save_physical(
                    &o.fake.latent,
                    &layout.physical(&printer.id, Origin::Fake, o.t_hat.id, 0),
                )?;
                capture_and_qc(ws, cfg, &printer.id, Origin::Fake, &o.fake, &thresholds)
            })
            .collect::<Result<_>>()?;
        rows.extend(per.into_iter().flatten());
        let bers: Vec<(u32, f64)> = outcomes
            .iter()
            .map(|o| (o.t_hat.id, o.bit_error_rate))
            .collect();
        let mean = bers.iter().map(|(_, b)| b).sum::<f64>() / bers.len().max(1) as f64;
        summary.mean_bit_error_rate.insert(printer.id.clone(), mean);
        summary.bit_error_rate.insert(printer.id.clone(), bers);
    }
    qclog::sort_rows(&mut rows);
    qclog::save(&ws.qc_log(Origin::Fake), &rows)?;
    write_json(&ws.attack_summary(), &summary)?;
    Ok(json!({
        "captures": rows.len(),
        "mean_bit_error_rate": summary.mean_bit_error_rate,
        "qc": QcSummary::of(&rows),
    }))
}

/// Cells to train when none are named on the command line.
pub fn resolve_cells(cfg: &ExperimentConfig, named: &[Cell]) -> Result<Vec<Cell>> {
    let cells = if named.is_empty() {
        cfg.cells_to_train()
    } else {
        named.to_vec()
    };
    for c in &cells {
        cfg.profiles
            .printer(&c.printer)
            .map_err(crate::error::config_err)?;
        cfg.profiles
            .device(&c.device)
            .map_err(crate::error::config_err)?;
    }
    Ok(cells)
}

/// The designated enrollment capture and the remaining probe repetitions.
fn enrollment_split(reps: Option<&Vec<u32>>) -> Option<(u32, Vec<u32>)> {
    let reps = reps?;
    let (&first, rest) = reps.split_first()?;
    Some((first, rest.to_vec()))
}

/// Training pairs for one cell: template and the aligned enrollment capture
/// of each training template.
pub fn training_pairs(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    cell: &Cell,
) -> Result<(Vec<u32>, Vec<TrainingPair>)> {
    let manifest = load_manifest(ws)?;
    let templates = load_templates(ws, &manifest.split.train_ids)?;
    let kept = qclog::kept_reps(&load_qc(ws, Origin::Original)?);
    let layout = ws.dataset();
    let mut ids = Vec::new();
    let mut pairs = Vec::new();
    for t in &templates {
        let key = (
            cell.printer.clone(),
            cell.device.clone(),
            Origin::Original,
            t.id,
            0,
        );
        let Some((rep, _)) = enrollment_split(kept.get(&key)) else {
            continue;
        };
        let path = layout.capture(&cell.printer, &cell.device, Origin::Original, t.id, 0, rep);
        ws.require(&path, "capture", "simulate")?;
        match register(&load_raster(&path)?, t, &cfg.align) {
            Ok(reg) => {
                ids.push(t.id);
                pairs.push(TrainingPair {
                    template: t.to_raster(),
                    target: reg.aligned,
                });
            }
            Err(CoreError::RegistrationFailed { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok((ids, pairs))
}

/// pix2pix training for each cell.
pub fn train_cells(ws: &Workspace, cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Value> {
    let results: Vec<Value> = cells
        .par_iter()
        .map(|cell| -> Result<Value> {
            let (ids, pairs) = training_pairs(ws, cfg, cell)?;
            let mut tc = cfg.train.clone();
            tc.seed = derive_seed(
                cfg.seed,
                &[
                    Tag::Str("train"),
                    Tag::Str(&cell.printer),
                    Tag::Str(&cell.device),
                    Tag::Int(cfg.train.seed),
                ],
            );
            let ckdir = (tc.checkpoint_every > 0).then(|| {
                ws.model_dir(&cell.printer, &cell.device)
                    .join("checkpoints")
            });
            let used = tc.n_pairs.unwrap_or(pairs.len()).min(pairs.len());
            let out = train(&pairs, &tc, ckdir.as_deref())?;
            let step = (tc.epochs * used.div_ceil(tc.batch_size.max(1))) as u64;
            let meta = json!({
                "printer": cell.printer,
                "device": cell.device,
                "template_ids": &ids[..used],
                "master_seed": cfg.seed,
            });
            out.generator
                .to_checkpoint(step, meta.clone())
                .save(&ws.generator(&cell.printer, &cell.device))
                .map_err(CoreError::from)?;
            out.discriminator
                .to_checkpoint(step, meta)
                .save(&ws.discriminator(&cell.printer, &cell.device))
                .map_err(CoreError::from)?;
            save_history(&ws.loss_history(&cell.printer, &cell.device), &out.history)?;
            let last = out.history.last();
            Ok(json!({
                "cell": cell,
                "pairs": used,
                "final_l1": last.map(|e| e.loss_l1),
            }))
        })
        .collect::<Result<_>>()?;
    Ok(Value::Array(results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProvenance {
    pub printer: String,
    pub device: String,
    pub checkpoint: String,
    pub step: u64,
    pub template_ids: Vec<u32>,
}

fn checkpoint_cell(ck: &Checkpoint) -> (Option<&str>, Option<&str>) {
    let meta = ck.config.get("meta");
    let get = |k: &str| meta.and_then(|m| m.get(k)).and_then(Value::as_str);
    (get("printer"), get("device"))
}

/// x_hat for every held-out template of each cell.
pub fn synth(ws: &Workspace, _cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Value> {
    let manifest = load_manifest(ws)?;
    let test = load_templates(ws, &manifest.split.test_ids)?;
    let layout = ws.dataset();
    let mut out = Vec::new();
    for cell in cells {
        let path = ws.generator(&cell.printer, &cell.device);
        ws.require(
            &path,
            &format!("generator for {}/{}", cell.printer, cell.device),
            "train",
        )?;
        let ck = Checkpoint::load(&path).map_err(CoreError::from)?;
        let (p, d) = checkpoint_cell(&ck);
        if p != Some(cell.printer.as_str()) || d != Some(cell.device.as_str()) {
            return Err(LabError::Provenance(format!(
                "{} was trained for {}/{}, not {}/{}",
                path.display(),
                p.unwrap_or("?"),
                d.unwrap_or("?"),
                cell.printer,
                cell.device
            )));
        }
        let gen = Generator::from_checkpoint(&ck)?;
        let images = synthesize_all(&gen, &test, &cell.printer, &cell.device, Some(&layout))?;
        let prov = SynthProvenance {
            printer: cell.printer.clone(),
            device: cell.device.clone(),
            checkpoint: ws.relative(&path),
            step: ck.step,
            template_ids: test.iter().map(|t| t.id).collect(),
        };
        write_json(&ws.synth_provenance(&cell.printer, &cell.device), &prov)?;
        out.push(json!({ "cell": cell, "images": images.len() }));
    }
    Ok(Value::Array(out))
}

/// Synthetic references available for a cell, after provenance checks.
fn synthetic_ids(ws: &Workspace, printer: &str, device: &str) -> Result<Option<Vec<u32>>> {
    let path = ws.synth_provenance(printer, device);
    if !path.exists() {
        return Ok(None);
    }
    let prov: SynthProvenance = read_json(&path)?;
    if prov.printer != printer || prov.device != device {
        return Err(LabError::Provenance(format!(
            "{} holds x_hat for {}/{}, expected {printer}/{device}",
            path.display(),
            prov.printer,
            prov.device
        )));
    }
    Ok(Some(prov.template_ids))
}

struct CellJob<'a> {
    printer: &'a str,
    device: &'a str,
    template: &'a Template,
    xhat: bool,
}

fn score_one(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    job: &CellJob<'_>,
    kept: &BTreeMap<qclog::CaptureKey, Vec<u32>>,
) -> Result<(Vec<ScoreRecord>, Vec<RegistrationFailure>)> {
    let layout = ws.dataset();
    let t = job.template;
    let margin = cfg.score.margin;
    let mut failures = Vec::new();
    let mut align = |origin: Origin, rep: u32| -> Result<Option<Raster>> {
        let path = layout.capture(job.printer, job.device, origin, t.id, 0, rep);
        ws.require(
            &path,
            "capture",
            if origin == Origin::Original {
                "simulate"
            } else {
                "attack"
            },
        )?;
        match register(&load_raster(&path)?, t, &cfg.align) {
            Ok(reg) => Ok(Some(reg.aligned.crop_margin(margin)?)),
            Err(CoreError::RegistrationFailed { peak, .. }) => {
                failures.push(RegistrationFailure {
                    capture: ws.relative(&path),
                    template_id: t.id,
                    peak,
                    reason: "peak_below_floor".into(),
                });
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    };
    let key = |origin| {
        (
            job.printer.to_string(),
            job.device.to_string(),
            origin,
            t.id,
            0u32,
        )
    };
    let Some((enroll_rep, probe_reps)) = enrollment_split(kept.get(&key(Origin::Original))) else {
        return Ok((Vec::new(), failures));
    };
    let enrolled = align(Origin::Original, enroll_rep)?;
    let mut probes: Vec<(Origin, u32, Raster)> = Vec::new();
    for rep in probe_reps {
        if let Some(img) = align(Origin::Original, rep)? {
            probes.push((Origin::Original, rep, img));
        }
    }
    for &rep in kept.get(&key(Origin::Fake)).into_iter().flatten() {
        if let Some(img) = align(Origin::Fake, rep)? {
            probes.push((Origin::Fake, rep, img));
        }
    }
    let template_ref = t.to_raster().crop_margin(margin)?;
    let xhat_ref = if job.xhat {
        let path = layout.synthetic(job.printer, job.device, t.id);
        ws.require(&path, "synthetic reference", "synth")?;
        Some(load_raster(&path)?.crop_margin(margin)?)
    } else {
        None
    };
    let mut records = Vec::new();
    for (origin, rep, probe) in &probes {
        for &reference in &cfg.score.references {
            let r = match reference {
                Reference::T => Some(&template_ref),
                Reference::Xhat => xhat_ref.as_ref(),
                Reference::Xe => enrolled.as_ref(),
            };
            let Some(r) = r else { continue };
            for &metric in &cfg.score.metrics {
                let score = match metric {
                    Metric::Pcorr => pcorr(probe, r)?,
                    Metric::Ssim => ssim(probe, r, &cfg.score.ssim)?,
                };
                records.push(ScoreRecord {
                    printer: job.printer.to_string(),
                    device: job.device.to_string(),
                    reference,
                    metric,
                    origin: *origin,
                    template_id: t.id,
                    instance: 0,
                    repetition: *rep,
                    score,
                });
            }
        }
    }
    Ok((records, failures))
}

fn record_order(a: &ScoreRecord, b: &ScoreRecord) -> std::cmp::Ordering {
    (
        &a.printer,
        &a.device,
        a.reference,
        a.metric,
        a.origin,
        a.template_id,
        a.instance,
        a.repetition,
    )
        .cmp(&(
            &b.printer,
            &b.device,
            b.reference,
            b.metric,
            b.origin,
            b.template_id,
            b.instance,
            b.repetition,
        ))
}

/// Scores every kept probe against each reference. Probes are the kept
/// original repetitions other than the enrollment capture, and every kept
/// fake repetition; fakes are compared with the true original's enrollment.
pub fn score(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Value> {
    let manifest = load_manifest(ws)?;
    let templates = load_templates(ws, &manifest.template_ids())?;
    let mut rows = load_qc(ws, Origin::Original)?;
    rows.extend(load_qc(ws, Origin::Fake)?);
    let kept = qclog::kept_reps(&rows);
    let want_xhat = cfg.score.references.contains(&Reference::Xhat);
    let mut jobs = Vec::new();
    let mut xhat_cells = Vec::new();
    for printer in &cfg.profiles.printers {
        for dev in &cfg.profiles.devices {
            let xhat_ids = if want_xhat {
                synthetic_ids(ws, &printer.id, &dev.id)?
            } else {
                None
            };
            if xhat_ids.is_some() {
                xhat_cells.push(format!("{}/{}", printer.id, dev.id));
            }
            for t in &templates {
                jobs.push(CellJob {
                    printer: &printer.id,
                    device: &dev.id,
                    template: t,
                    xhat: xhat_ids.as_ref().is_some_and(|ids| ids.contains(&t.id)),
                });
            }
        }
    }
    let results: Vec<(Vec<ScoreRecord>, Vec<RegistrationFailure>)> = jobs
        .par_iter()
        .map(|job| score_one(ws, cfg, job, &kept))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in results {
        records.extend(r);
        failures.extend(f);
    }
    records.sort_by(record_order);
    failures.sort_by(|a, b| a.capture.cmp(&b.capture));
    save_scores(&ws.scores(), &records)?;
    write_failure_log(&ws.align_failures(), &failures)?;
    Ok(json!({
        "records": records.len(),
        "align_failures": failures.len(),
        "xhat_cells": xhat_cells,
    }))
}
