use cdp_autodiff::{Checkpoint, Graph, NamedTensor, Tensor, Var};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imgcore::Raster;
use crate::rng::stream;

const SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 32,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(CoreError::invalid(
                "generator depth and base_channels must be positive",
            ));
        }
        Ok(())
    }

    pub fn check_size(&self, width: usize, height: usize) -> Result<()> {
        let m = 1usize << self.depth;
        if !width.is_multiple_of(m) || !height.is_multiple_of(m) {
            return Err(CoreError::invalid(format!(
                "generator depth {} needs sides divisible by {m}, got {width}x{height}",
                self.depth
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level.min(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub n_layers: usize,
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            n_layers: 3,
            base_channels: 32,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.base_channels == 0 {
            return Err(CoreError::invalid(
                "discriminator n_layers and base_channels must be positive",
            ));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level.min(3)
    }

    /// Side of the patch probability grid for a square input of side `n`.
    pub fn output_side(&self, n: usize) -> Option<usize> {
        let mut s = n;
        for _ in 0..self.n_layers {
            s = cdp_autodiff::conv_output_size(s, 4, 2, 1)?;
        }
        s = cdp_autodiff::conv_output_size(s, 4, 1, 1)?;
        cdp_autodiff::conv_output_size(s, 4, 1, 1).filter(|&v| v >= 1)
    }
}

fn init_params(shapes: &[(String, Vec<usize>)], seed: u64) -> Vec<NamedTensor> {
    let mut rng = stream(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    shapes
        .iter()
        .map(|(name, shape)| {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                Tensor::from_fn(shape, |_| normal.sample(&mut rng))
            };
            NamedTensor {
                name: name.clone(),
                tensor,
            }
        })
        .collect()
}

fn bind(params: &[NamedTensor], g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
    params
        .iter()
        .map(|p| {
            let t = p.tensor.clone();
            Ok(if trainable {
                g.param(t)?
            } else {
                g.constant(t)?
            })
        })
        .collect()
}

fn restore(
    ck: &Checkpoint,
    kind: &str,
    expected: &[(String, Vec<usize>)],
) -> Result<Vec<NamedTensor>> {
    if ck.config.get("network").and_then(|v| v.as_str()) != Some(kind) {
        return Err(CoreError::invalid(format!(
            "checkpoint does not hold a {kind}"
        )));
    }
    if ck.tensors.len() != expected.len() {
        return Err(CoreError::invalid(format!(
            "checkpoint has {} tensors, {kind} needs {}",
            ck.tensors.len(),
            expected.len()
        )));
    }
    for (t, (name, shape)) in ck.tensors.iter().zip(expected) {
        if &t.name != name || t.tensor.shape() != shape.as_slice() {
            return Err(CoreError::invalid(format!(
                "checkpoint tensor {} {:?} does not match {name} {shape:?}",
                t.name,
                t.tensor.shape()
            )));
        }
    }
    Ok(ck.tensors.clone())
}

fn config_value<T: Serialize>(kind: &str, cfg: &T, meta: serde_json::Value) -> serde_json::Value {
    serde_json::json!({ "network": kind, "architecture": cfg, "meta": meta })
}

/// Template raster scaled to [-1, 1] as a `[1, 1, H, W]` tensor.
pub fn template_input(t: &Raster) -> Tensor {
    image_tensor(t, true)
}

pub(crate) fn image_tensor(img: &Raster, centered: bool) -> Tensor {
    let data = img
        .pixels()
        .iter()
        .map(|&v| if centered { 2.0 * v - 1.0 } else { v })
        .collect();
    Tensor::new(vec![1, 1, img.height(), img.width()], data).expect("shape matches raster")
}

/// U-Net generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: Vec<NamedTensor>,
}

impl Generator {
    fn shapes(cfg: &GeneratorConfig) -> Vec<(String, Vec<usize>)> {
        let mut s = Vec::new();
        for i in 0..cfg.depth {
            let cin = if i == 0 { 1 } else { cfg.channels(i - 1) };
            let cout = cfg.channels(i);
            s.push((format!("enc{i}.weight"), vec![cout, cin, 4, 4]));
            s.push((format!("enc{i}.bias"), vec![cout]));
        }
        for i in (0..cfg.depth).rev() {
            let cin = if i == cfg.depth - 1 {
                cfg.channels(i)
            } else {
                2 * cfg.channels(i)
            };
            let cout = if i == 0 { 1 } else { cfg.channels(i - 1) };
            s.push((format!("dec{i}.weight"), vec![cin, cout, 4, 4]));
            s.push((format!("dec{i}.bias"), vec![cout]));
        }
        s
    }

    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: init_params(&Self::shapes(&config), seed),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        bind(&self.params, g, trainable)
    }

    /// Builds the forward pass on `g`. `input` is `[N, 1, H, W]` in [-1, 1];
    /// the output is `[N, 1, H, W]` in (0, 1).
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], input: Var) -> Result<Var> {
        let shape = g.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(CoreError::invalid(format!(
                "generator input must be [N,1,H,W], got {shape:?}"
            )));
        }
        self.config.check_size(shape[3], shape[2])?;
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = input;
        for i in 0..d {
            h = g.conv2d(h, vars[2 * i], Some(vars[2 * i + 1]), 2, 1)?;
            let spatial = g.value(h).shape()[2] * g.value(h).shape()[3];
            if i > 0 && spatial > 1 {
                h = g.instance_norm(h, NORM_EPS)?;
            }
            h = g.leaky_relu(h, SLOPE)?;
            skips.push(h);
        }
        for (k, i) in (0..d).rev().enumerate() {
            let (w, b) = (vars[2 * d + 2 * k], vars[2 * d + 2 * k + 1]);
            h = g.conv2d_transpose(h, w, Some(b), 2, 1)?;
            if i == 0 {
                return Ok(g.sigmoid(h)?);
            }
            h = g.instance_norm(h, NORM_EPS)?;
            h = g.leaky_relu(h, SLOPE)?;
            h = g.concat_channels(h, skips[i - 1])?;
        }
        unreachable!("decoder always reaches level 0")
    }

    /// Inference on one template raster (1 = white).
    pub fn forward(&self, t: &Raster) -> Result<Raster> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let input = g.constant(template_input(t))?;
        let out = self.forward_graph(&mut g, &vars, input)?;
        Raster::new(t.width(), t.height(), g.value(out).data().to_vec())
    }

    pub fn to_checkpoint(&self, step: u64, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            config: config_value("generator", &self.config, meta),
            step,
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: GeneratorConfig = ck
            .config
            .get("architecture")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| CoreError::invalid("checkpoint lacks a generator architecture"))?;
        config.validate()?;
        let params = restore(ck, "generator", &Self::shapes(&config))?;
        Ok(Self { config, params })
    }
}

/// PatchGAN discriminator conditioned on the template.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: Vec<NamedTensor>,
}

impl Discriminator {
    fn shapes(cfg: &DiscriminatorConfig) -> Vec<(String, Vec<usize>)> {
        let mut s = Vec::new();
        let mut cin = 2;
        for i in 0..=cfg.n_layers {
            let cout = cfg.channels(i);
            s.push((format!("layer{i}.weight"), vec![cout, cin, 4, 4]));
            s.push((format!("layer{i}.bias"), vec![cout]));
            cin = cout;
        }
        s.push(("out.weight".into(), vec![1, cin, 4, 4]));
        s.push(("out.bias".into(), vec![1]));
        s
    }

    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: init_params(&Self::shapes(&config), seed),
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        bind(&self.params, g, trainable)
    }

    /// Patch probabilities for `template` (in [-1, 1]) and `image` (in
    /// [0, 1]), both `[N, 1, H, W]`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        template: Var,
        image: Var,
    ) -> Result<Var> {
        let (ts, is) = (
            g.value(template).shape().to_vec(),
            g.value(image).shape().to_vec(),
        );
        if ts != is {
            return Err(CoreError::invalid(format!(
                "discriminator inputs differ in shape: {ts:?} vs {is:?}"
            )));
        }
        if ts.len() != 4 || self.config.output_side(ts[2].min(ts[3])).is_none() {
            return Err(CoreError::invalid(format!(
                "input {ts:?} too small for a {}-layer discriminator",
                self.config.n_layers
            )));
        }
        let img = g.scale(image, 2.0)?;
        let img = g.offset(img, -1.0)?;
        let mut h = g.concat_channels(template, img)?;
        let n = self.config.n_layers;
        for i in 0..=n {
            let stride = if i < n { 2 } else { 1 };
            h = g.conv2d(h, vars[2 * i], Some(vars[2 * i + 1]), stride, 1)?;
            if i > 0 {
                h = g.instance_norm(h, NORM_EPS)?;
            }
            h = g.leaky_relu(h, SLOPE)?;
        }
        let h = g.conv2d(h, vars[2 * n + 2], Some(vars[2 * n + 3]), 1, 1)?;
        Ok(g.sigmoid(h)?)
    }

    /// Patch probability grid for one (template, image) pair.
    pub fn forward(&self, t: &Raster, img: &Raster) -> Result<Tensor> {
        t.ensure_same_dims(img, "discriminator")?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let tv = g.constant(template_input(t))?;
        let iv = g.constant(image_tensor(img, false))?;
        let out = self.forward_graph(&mut g, &vars, tv, iv)?;
        Ok(g.value(out).clone())
    }

    pub fn to_checkpoint(&self, step: u64, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            config: config_value("discriminator", &self.config, meta),
            step,
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: DiscriminatorConfig = ck
            .config
            .get("architecture")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| CoreError::invalid("checkpoint lacks a discriminator architecture"))?;
        config.validate()?;
        let params = restore(ck, "discriminator", &Self::shapes(&config))?;
        Ok(Self { config, params })
    }
}
