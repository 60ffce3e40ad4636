//! Where each stage reads and writes inside an experiment directory.

use std::path::{Path, PathBuf};

use cdp_core::imgcore::{DatasetLayout, Origin};

use crate::error::{LabError, Result};

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset(&self) -> DatasetLayout {
        DatasetLayout::new(self.root.join("dataset"))
    }

    /// Resolved config written by `gen` and used as the base by later stages.
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn qc_thresholds(&self) -> PathBuf {
        self.root.join("qc").join("thresholds.json")
    }

    pub fn qc_log(&self, origin: Origin) -> PathBuf {
        self.root
            .join("qc")
            .join(format!("{}.csv", origin.as_str()))
    }

    pub fn attack_summary(&self) -> PathBuf {
        self.root.join("attack").join("summary.json")
    }

    pub fn estimator(&self, printer: &str) -> PathBuf {
        self.root
            .join("models")
            .join("estimator")
            .join(format!("{printer}.ckpt"))
    }

    pub fn model_dir(&self, printer: &str, device: &str) -> PathBuf {
        self.root.join("models").join(printer).join(device)
    }

    pub fn generator(&self, printer: &str, device: &str) -> PathBuf {
        self.model_dir(printer, device).join("generator.ckpt")
    }

    pub fn discriminator(&self, printer: &str, device: &str) -> PathBuf {
        self.model_dir(printer, device).join("discriminator.ckpt")
    }

    pub fn loss_history(&self, printer: &str, device: &str) -> PathBuf {
        self.model_dir(printer, device).join("loss.csv")
    }

    pub fn synth_provenance(&self, printer: &str, device: &str) -> PathBuf {
        self.dataset()
            .synthetic_dir(printer, device)
            .join("provenance.json")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }

    pub fn align_failures(&self) -> PathBuf {
        self.root.join("align_failures.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn auc_table(&self) -> PathBuf {
        self.report_dir().join("auc_table.json")
    }

    pub fn checks(&self) -> PathBuf {
        self.report_dir().join("checks.json")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn calibrate_dir(&self) -> PathBuf {
        self.root.join("calibrate")
    }

    /// Path relative to the workspace root, for logs that should not depend
    /// on where the workspace lives.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    pub(crate) fn require(&self, path: &Path, what: &str, command: &'static str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(LabError::Missing {
                what: what.to_string(),
                path: path.to_path_buf(),
                command,
            })
        }
    }
}
