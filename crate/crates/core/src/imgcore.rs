//! Templates, physical images, dataset manifests and their on-disk layout.
//!
//! Images are persisted as 16-bit grayscale PNG (0 = black, 65535 = white).
//! Provenance is carried by the directory layout rather than image metadata:
//!
//! ```text
//! dataset/manifest.json
//! dataset/templates/t_{id:04}.png
//! dataset/physical/{printer}/{original|fake}/x_{id:04}_{instance}.png
//! dataset/captures/{printer}/{device}/{original|fake}/y_{id:04}_{instance}_{rep}.png
//! dataset/synthetic/{printer}/{device}/xhat_{id:04}.png
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, stream, Tag};

/// Row-major grayscale pixels, 0 = black, 1 = white.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(CoreError::invalid(format!(
                "raster {width}x{height} cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn clamp01(mut self) -> Self {
        self.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Drop `margin` pixels from every side.
    pub fn crop_margin(&self, margin: usize) -> Result<Raster> {
        if 2 * margin >= self.width || 2 * margin >= self.height {
            return Err(CoreError::invalid(format!(
                "margin {margin} leaves nothing of a {}x{} raster",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width - 2 * margin, self.height - 2 * margin);
        Ok(Raster::from_fn(w, h, |x, y| {
            self.get(x + margin, y + margin)
        }))
    }

    pub fn ensure_same_dims(&self, other: &Raster, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(CoreError::invalid(format!(
                "{what}: dimension mismatch {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Original,
    Estimated,
}

/// Binary digital pattern. `bits[i] == 1` marks black ink.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template {
    pub id: u32,
    width: usize,
    height: usize,
    bits: Vec<u8>,
    pub kind: TemplateKind,
}

impl Template {
    pub fn new(
        id: u32,
        width: usize,
        height: usize,
        bits: Vec<u8>,
        kind: TemplateKind,
    ) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(CoreError::invalid(format!(
                "template {width}x{height} cannot hold {} bits",
                bits.len()
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(CoreError::invalid(format!(
                "template bit {pos} is {}, not 0/1",
                bits[pos]
            )));
        }
        Ok(Self {
            id,
            width,
            height,
            bits,
            kind,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn black_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn hamming(&self, other: &Template) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Ink-free rendering: black pixels 0, white pixels 1.
    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| 1.0 - b as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    OriginalX,
    EnrolledXe,
    FakeF,
    SyntheticXhat,
    CaptureY,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub role: Role,
    pub template_id: u32,
    pub printer_id: String,
    pub device_id: Option<String>,
    pub instance: u32,
    pub repetition: Option<u32>,
}

/// A continuous-tone image with the experiment coordinates it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalImage {
    raster: Raster,
    pub provenance: Provenance,
}

impl PhysicalImage {
    /// Rejects non-finite pixels and clamps the rest to `[0, 1]`.
    pub fn new(raster: Raster, provenance: Provenance) -> Result<Self> {
        if raster.pixels.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::invalid("physical image has non-finite pixels"));
        }
        if provenance.role == Role::SyntheticXhat && provenance.device_id.is_none() {
            return Err(CoreError::invalid("synthetic image requires a device id"));
        }
        Ok(Self {
            raster: raster.clamp01(),
            provenance,
        })
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn width(&self) -> usize {
        self.raster.width
    }

    pub fn height(&self) -> usize {
        self.raster.height
    }
}

fn check_shape(width: usize, height: usize) -> Result<()> {
    if width < 4 || height < 4 {
        return Err(CoreError::invalid(format!(
            "template must be at least 4x4, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Exactly `floor(black_fraction·w·h)` black pixels placed by a seeded
/// uniform permutation.
pub fn generate_template(
    seed: u64,
    width: usize,
    height: usize,
    black_fraction: f64,
) -> Result<Template> {
    check_shape(width, height)?;
    if !(black_fraction > 0.0 && black_fraction < 1.0) {
        return Err(CoreError::invalid(format!(
            "black fraction must lie in (0, 1), got {black_fraction}"
        )));
    }
    let n = width * height;
    let n_black = (black_fraction * n as f64).floor() as usize;
    let mut bits = vec![0u8; n];
    bits[..n_black].fill(1);
    bits.shuffle(&mut stream(seed));
    Template::new(0, width, height, bits, TemplateKind::Original)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcDecision {
    Keep,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcLogEntry {
    pub capture: String,
    pub decision: QcDecision,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_templates: usize,
    pub template_size: usize,
    pub black_fraction: f64,
    pub printer_ids: Vec<String>,
    pub device_ids: Vec<String>,
    pub split: Split,
    pub qc_log: Vec<QcLogEntry>,
}

impl DatasetManifest {
    pub fn template_ids(&self) -> Vec<u32> {
        (0..self.n_templates as u32).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// `n` distinct square templates with per-template seeds derived from `seed`.
pub fn generate_dataset(
    seed: u64,
    n: usize,
    size: usize,
    black_fraction: f64,
) -> Result<(Vec<Template>, DatasetManifest)> {
    if n < 2 {
        return Err(CoreError::invalid(format!(
            "dataset needs at least 2 templates, got {n}"
        )));
    }
    let mut seen = HashSet::with_capacity(n);
    let mut templates = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = generate_template(
            derive_seed(seed, &[Tag::Str("template"), Tag::Int(i as u64)]),
            size,
            size,
            black_fraction,
        )?;
        t.id = i as u32;
        if !seen.insert(t.bits.clone()) {
            return Err(CoreError::Internal(format!(
                "template {i} duplicates an earlier one; regenerate with a different master seed"
            )));
        }
        templates.push(t);
    }
    let manifest = DatasetManifest {
        seed,
        n_templates: n,
        template_size: size,
        black_fraction,
        printer_ids: Vec::new(),
        device_ids: Vec::new(),
        split: Split {
            train_ids: Vec::new(),
            test_ids: (0..n as u32).collect(),
        },
        qc_log: Vec::new(),
    };
    Ok((templates, manifest))
}

/// Seeded shuffle of all template ids, then a prefix of
/// `round(train_fraction·n)` ids becomes the training set.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CoreError::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = manifest.n_templates;
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(CoreError::invalid(format!(
            "train fraction {train_fraction} of {n} templates leaves an empty train or test set"
        )));
    }
    let mut ids = manifest.template_ids();
    ids.shuffle(&mut stream(derive_seed(seed, &[Tag::Str("split")])));
    let mut train_ids = ids[..n_train].to_vec();
    let mut test_ids = ids[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(DatasetManifest {
        split: Split {
            train_ids,
            test_ids,
        },
        ..manifest.clone()
    })
}

/// Directory layout of a dataset rooted at `root`.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    root: PathBuf,
}

/// Origin of a physical instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Fake,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Fake => "fake",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Origin::Original),
            "fake" => Some(Origin::Fake),
            _ => None,
        }
    }
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn template(&self, id: u32) -> PathBuf {
        self.root.join("templates").join(format!("t_{id:04}.png"))
    }

    pub fn physical(&self, printer: &str, origin: Origin, id: u32, instance: u32) -> PathBuf {
        self.root
            .join("physical")
            .join(printer)
            .join(origin.as_str())
            .join(format!("x_{id:04}_{instance}.png"))
    }

    pub fn capture(
        &self,
        printer: &str,
        device: &str,
        origin: Origin,
        id: u32,
        instance: u32,
        rep: u32,
    ) -> PathBuf {
        self.root
            .join("captures")
            .join(printer)
            .join(device)
            .join(origin.as_str())
            .join(format!("y_{id:04}_{instance}_{rep}.png"))
    }

    pub fn synthetic_dir(&self, printer: &str, device: &str) -> PathBuf {
        self.root.join("synthetic").join(printer).join(device)
    }

    pub fn synthetic(&self, printer: &str, device: &str, id: u32) -> PathBuf {
        self.synthetic_dir(printer, device)
            .join(format!("xhat_{id:04}.png"))
    }
}

fn parse_err(path: &Path, detail: impl Into<String>) -> CoreError {
    CoreError::Parse {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        parse_err(
            path,
            format!("{e} (line {}, column {})", e.line(), e.column()),
        )
    })
}

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn write_gray16(path: &Path, width: usize, height: usize, data: Vec<u16>) -> Result<()> {
    ensure_parent(path)?;
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        width as u32,
        height as u32,
        data,
    )
    .ok_or_else(|| CoreError::Internal("pixel buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => CoreError::io(path, io),
            other => parse_err(path, other.to_string()),
        })
}

fn read_gray16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CoreError::io(path, io),
        other => parse_err(path, other.to_string()),
    })?;
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.into_raw()))
}

pub fn save_raster(raster: &Raster, path: &Path) -> Result<()> {
    let data = raster.pixels.iter().map(|&v| quantize(v)).collect();
    write_gray16(path, raster.width, raster.height, data)
}

pub fn load_raster(path: &Path) -> Result<Raster> {
    let (w, h, data) = read_gray16(path)?;
    Raster::new(w, h, data.into_iter().map(|v| v as f64 / 65535.0).collect())
}

pub fn save_template(t: &Template, path: &Path) -> Result<()> {
    let data = t
        .bits
        .iter()
        .map(|&b| if b == 1 { 0 } else { u16::MAX })
        .collect();
    write_gray16(path, t.width, t.height, data)
}

/// Loads a template; the id is taken from a `t_{id}.png` file name when
/// present, otherwise 0.
pub fn load_template(path: &Path) -> Result<Template> {
    let (w, h, data) = read_gray16(path)?;
    let mut bits = Vec::with_capacity(data.len());
    for (offset, v) in data.into_iter().enumerate() {
        bits.push(match v {
            0 => 1,
            u16::MAX => 0,
            other => {
                return Err(parse_err(
                    path,
                    format!("non-binary pixel value {other} at pixel offset {offset}"),
                ))
            }
        });
    }
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("t_"))
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    Template::new(id, w, h, bits, TemplateKind::Original)
}

pub fn save_physical(img: &PhysicalImage, path: &Path) -> Result<()> {
    save_raster(&img.raster, path)
}

/// Loads a physical image and recovers its provenance from the dataset
/// layout conventions.
pub fn load_physical(path: &Path) -> Result<PhysicalImage> {
    let provenance = provenance_from_path(path)?;
    PhysicalImage::new(load_raster(path)?, provenance)
}

fn numbered(path: &Path, stem: &str, prefix: &str, count: usize) -> Result<Vec<u32>> {
    let rest = stem
        .strip_prefix(prefix)
        .ok_or_else(|| parse_err(path, format!("file name must start with {prefix:?}")))?;
    let nums: Vec<u32> = rest
        .split('_')
        .map(|p| {
            p.parse()
                .map_err(|_| parse_err(path, format!("bad number {p:?} in file name")))
        })
        .collect::<Result<_>>()?;
    if nums.len() != count {
        return Err(parse_err(
            path,
            format!("expected {count} numbers in file name"),
        ));
    }
    Ok(nums)
}

pub fn provenance_from_path(path: &Path) -> Result<Provenance> {
    let parts: Vec<&str> = path.iter().filter_map(|c| c.to_str()).collect();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| parse_err(path, "missing file name"))?;
    let n = parts.len();
    let at = |k: usize| -> Option<&str> { n.checked_sub(k).map(|i| parts[i]) };
    let origin_role = |s: Option<&str>| -> Result<Origin> {
        s.and_then(Origin::parse)
            .ok_or_else(|| parse_err(path, "expected an original/fake directory"))
    };
    if at(4) == Some("physical") {
        let origin = origin_role(at(2))?;
        let nums = numbered(path, stem, "x_", 2)?;
        return Ok(Provenance {
            role: match origin {
                Origin::Original => Role::OriginalX,
                Origin::Fake => Role::FakeF,
            },
            template_id: nums[0],
            printer_id: at(3).unwrap_or_default().to_string(),
            device_id: None,
            instance: nums[1],
            repetition: None,
        });
    }
    if at(5) == Some("captures") {
        origin_role(at(2))?;
        let nums = numbered(path, stem, "y_", 3)?;
        return Ok(Provenance {
            role: Role::CaptureY,
            template_id: nums[0],
            printer_id: at(4).unwrap_or_default().to_string(),
            device_id: Some(at(3).unwrap_or_default().to_string()),
            instance: nums[1],
            repetition: Some(nums[2]),
        });
    }
    if at(4) == Some("synthetic") {
        let nums = numbered(path, stem, "xhat_", 1)?;
        return Ok(Provenance {
            role: Role::SyntheticXhat,
            template_id: nums[0],
            printer_id: at(3).unwrap_or_default().to_string(),
            device_id: Some(at(2).unwrap_or_default().to_string()),
            instance: 0,
            repetition: None,
        });
    }
    Err(parse_err(path, "path does not follow the dataset layout"))
}
