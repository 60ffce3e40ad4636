//! Experiment configuration: one JSON document, with dotted-path overrides.

use std::path::Path;

use cdp_core::align::AlignConfig;
use cdp_core::channel::ProfileSet;
use cdp_core::metrics::SsimParams;
use cdp_core::pix2pix::{GeneratorConfig, TrainConfig};
use cdp_core::rocstat::{Metric, Reference};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, LabError, Result};

pub const SEED_ENV: &str = "CDP_LAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_templates: usize,
    pub template_size: usize,
    pub black_fraction: f64,
    pub train_fraction: f64,
    pub n_reps: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_templates: 144,
            template_size: 64,
            black_fraction: 0.5,
            train_fraction: 0.278,
            n_reps: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    ThresholdOtsu,
    LearnedUnet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Device the attacker captures originals with.
    pub device: String,
    pub estimator: EstimatorKind,
    /// Printer used for fakes; `None` reuses the enrollment printer.
    pub attacker_printer: Option<String>,
    /// Binarization threshold of the learned estimator.
    pub threshold: f64,
    pub estimator_generator: GeneratorConfig,
    pub estimator_epochs: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            device: "epson".into(),
            estimator: EstimatorKind::ThresholdOtsu,
            attacker_printer: None,
            threshold: 0.5,
            estimator_generator: GeneratorConfig {
                depth: 3,
                base_channels: 16,
            },
            estimator_epochs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcConfig {
    /// Thresholds are this factor times the calibration percentile.
    pub factor: f64,
    pub calibration_templates: usize,
    /// Fraction of captures replaced by a heavily blurred version.
    pub inject_fraction: f64,
    pub inject_sigma: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            calibration_templates: 24,
            inject_fraction: 0.0,
            inject_sigma: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Pixels cropped from every side of aligned probes and references.
    pub margin: usize,
    pub metrics: Vec<Metric>,
    pub references: Vec<Reference>,
    pub ssim: SsimParams,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            margin: 8,
            metrics: Metric::ALL.to_vec(),
            references: Reference::ALL.to_vec(),
            ssim: SsimParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub histogram_bins: usize,
    pub monotonic_tolerance: f64,
    pub xhat_min_gain: f64,
    /// Cells with AUC(pcorr, t) below this must gain at least
    /// `xhat_min_gain` from the synthetic reference.
    pub xhat_gain_below: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            histogram_bins: 20,
            monotonic_tolerance: 0.01,
            xhat_min_gain: 0.05,
            xhat_gain_below: 0.95,
        }
    }
}

/// A (printer, device) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub printer: String,
    pub device: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub profiles: ProfileSet,
    pub attack: AttackConfig,
    pub qc: QcConfig,
    pub align: AlignConfig,
    pub train: TrainConfig,
    /// Cells that get a generator in `run`; `None` trains every cell.
    pub train_cells: Option<Vec<Cell>>,
    pub score: ScoreConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: DatasetConfig::default(),
            profiles: ProfileSet::default(),
            attack: AttackConfig::default(),
            qc: QcConfig::default(),
            align: AlignConfig {
                search_radius: 3,
                peak_floor: 0.05,
                subpixel: false,
            },
            train: TrainConfig::default(),
            train_cells: None,
            score: ScoreConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn parse_err(source: &str, e: serde_json::Error) -> LabError {
    LabError::Config(format!(
        "{source}: line {}, column {}: {e}",
        e.line(),
        e.column()
    ))
}

impl ExperimentConfig {
    /// Loads a config file (or the defaults), applies `--set` overrides and
    /// then the seed environment variable.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    LabError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                // typed parse first so unknown fields report a line
                let cfg: Self = serde_json::from_str(&text)
                    .map_err(|e| parse_err(&p.display().to_string(), e))?;
                serde_json::to_value(cfg).expect("config serializes")
            }
            None => serde_json::to_value(Self::default()).expect("default config serializes"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let source = path.map_or("config".to_string(), |p| p.display().to_string());
        let mut cfg: Self = serde_json::from_value(value)
            .map_err(|e| LabError::Config(format!("{source}: {e}")))?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.seed = seed.trim().parse().map_err(|_| {
                LabError::Config(format!("{SEED_ENV}={seed:?} is not an unsigned integer"))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.profiles.validate().map_err(config_err)?;
        self.train.validate().map_err(config_err)?;
        self.score.ssim.validate().map_err(config_err)?;
        let d = &self.dataset;
        if d.n_reps < 2 {
            return Err(LabError::Config(
                "dataset.n_reps must be at least 2 (one enrollment capture plus probes)".into(),
            ));
        }
        if self.profiles.printers.is_empty() || self.profiles.devices.is_empty() {
            return Err(LabError::Config(
                "profiles need at least one printer and one device".into(),
            ));
        }
        self.profiles
            .device(&self.attack.device)
            .map_err(config_err)?;
        if let Some(p) = &self.attack.attacker_printer {
            self.profiles.printer(p).map_err(config_err)?;
        }
        let max_jitter = self
            .profiles
            .devices
            .iter()
            .map(|d| d.shift_jitter_max)
            .max()
            .unwrap_or(0);
        if self.align.search_radius < max_jitter {
            return Err(LabError::Config(format!(
                "align.search_radius {} is below the largest device shift_jitter_max {max_jitter}",
                self.align.search_radius
            )));
        }
        if d.n_templates < 2 || !(0.0..1.0).contains(&d.train_fraction) {
            return Err(LabError::Config(
                "dataset needs at least 2 templates and train_fraction in [0, 1)".into(),
            ));
        }
        if 2 * self.score.margin + 8 > d.template_size {
            return Err(LabError::Config(format!(
                "score.margin {} leaves too little of a {}-pixel template",
                self.score.margin, d.template_size
            )));
        }
        if let Some(cells) = &self.train_cells {
            for c in cells {
                self.profiles.printer(&c.printer).map_err(config_err)?;
                self.profiles.device(&c.device).map_err(config_err)?;
            }
        }
        Ok(())
    }

    pub fn printer_ids(&self) -> Vec<String> {
        self.profiles
            .printers
            .iter()
            .map(|p| p.id.clone())
            .collect()
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.profiles.devices.iter().map(|d| d.id.clone()).collect()
    }

    pub fn all_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for p in self.printer_ids() {
            for d in self.device_ids() {
                out.push(Cell {
                    printer: p.clone(),
                    device: d,
                });
            }
        }
        out
    }

    pub fn cells_to_train(&self) -> Vec<Cell> {
        self.train_cells.clone().unwrap_or_else(|| self.all_cells())
    }

    /// Device ids ordered from largest to smallest psf_sigma.
    pub fn ladder(&self) -> Vec<String> {
        let mut devs = self.profiles.devices.clone();
        devs.sort_by(|a, b| b.psf_sigma.total_cmp(&a.psf_sigma));
        devs.into_iter().map(|d| d.id).collect()
    }
}

/// Applies one `dotted.path=value` override. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<()> {
    let (path, raw) = item.split_once('=').ok_or_else(|| {
        LabError::Usage(format!(
            "override {item:?} must look like path.to.field=value"
        ))
    })?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(LabError::Usage(format!(
            "override path {path:?} has an empty segment"
        )));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        node = match node {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()))
            }
            serde_json::Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| {
                    LabError::Usage(format!("override {path:?}: {key:?} is not an array index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    LabError::Usage(format!(
                        "override {path:?}: index {idx} out of range ({len})"
                    ))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            serde_json::Value::Null => {
                *node = serde_json::Value::Object(Default::default());
                let serde_json::Value::Object(map) = node else {
                    unreachable!()
                };
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()))
            }
            _ => {
                return Err(LabError::Usage(format!(
                    "override {path:?}: {:?} is not an object",
                    keys[..i].join(".")
                )))
            }
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut v, "train.lambda_l1=50").unwrap();
        apply_override(&mut v, "profiles.devices.0.psf_sigma=2.5").unwrap();
        apply_override(&mut v, "attack.device=15_macro").unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(cfg.train.lambda_l1, 50.0);
        assert_eq!(cfg.profiles.devices[0].psf_sigma, 2.5);
        assert_eq!(cfg.attack.device, "15_macro");
        assert!(apply_override(&mut v, "no_equals").is_err());
        assert!(apply_override(&mut v, "seed.x=1").is_err());
        assert!(apply_override(&mut v, "profiles.devices.99.psf_sigma=1").is_err());
    }

    #[test]
    fn ladder_orders_by_psf() {
        let cfg = ExperimentConfig::default();
        let l = cfg.ladder();
        assert_eq!(l.first().unwrap(), "xs_wide");
        assert_eq!(l.last().unwrap(), "epson");
    }

    #[test]
    fn unknown_field_is_reported_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "{\n  \"seed\": 3,\n  \"bogus\": 1\n}").unwrap();
        let err = ExperimentConfig::resolve(Some(&p), &[])
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
        std::fs::write(&p, "{\n  \"seed\": ,\n}").unwrap();
        let err = ExperimentConfig::resolve(Some(&p), &[])
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
