use std::path::Path;

use cdp_autodiff::{adam_step, AdamConfig, AdamState, AutodiffError, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{discriminator_loss, generator_loss, LossWeights};
use super::network::{
    image_tensor, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
};
use crate::error::{CoreError, Result};
use crate::imgcore::{
    save_physical, DatasetLayout, PhysicalImage, Provenance, Raster, Role, Template,
};
use crate::rng::{derive_seed, stream, Tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub lambda_l1: f64,
    pub extra_ssim_weight: f64,
    pub extra_l2_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Number of training pairs N; `None` uses every pair supplied.
    pub n_pairs: Option<usize>,
    /// Write checkpoints every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            lambda_l1: 100.0,
            extra_ssim_weight: 0.0,
            extra_l2_weight: 0.0,
            epochs: 200,
            batch_size: 1,
            seed: 0,
            adam: AdamConfig::default(),
            n_pairs: Some(40),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_l1: self.lambda_l1,
            extra_l2_weight: self.extra_l2_weight,
            extra_ssim_weight: self.extra_ssim_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.weights().validate(true)?;
        if self.batch_size == 0 {
            return Err(CoreError::invalid("batch_size must be at least 1"));
        }
        if self.n_pairs == Some(0) {
            return Err(CoreError::invalid("n_pairs must be at least 1"));
        }
        Ok(())
    }
}

/// A template (as a raster, 1 = white) and its physical target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub template: Raster,
    pub target: Raster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_l1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: Vec<EpochLoss>,
}

fn stack(images: &[&Raster], centered: bool) -> Tensor {
    let (w, h) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        data.extend_from_slice(image_tensor(img, centered).data());
    }
    Tensor::new(vec![images.len(), 1, h, w], data).expect("stacked shape")
}

fn collect_grads(g: &Graph, vars: &[Var]) -> Vec<Vec<f64>> {
    vars.iter()
        .map(|&v| {
            g.grad(v)
                .map_or_else(|| vec![0.0; g.value(v).numel()], <[f64]>::to_vec)
        })
        .collect()
}

fn apply(
    params: &mut [cdp_autodiff::NamedTensor],
    grads: &[Vec<f64>],
    state: &mut AdamState,
) -> Result<()> {
    let mut tensors: Vec<Tensor> = params.iter().map(|p| p.tensor.clone()).collect();
    adam_step(&mut tensors, grads, state)?;
    for (p, t) in params.iter_mut().zip(tensors) {
        p.tensor = t;
    }
    Ok(())
}

fn select_pairs(
    pairs: &[TrainingPair],
    n_pairs: Option<usize>,
) -> Result<&[TrainingPair]> {
    if pairs.is_empty() {
        return Err(CoreError::invalid("training needs at least one pair"));
    }
    let dims = pairs[0].template.dims();
    for p in pairs {
        if p.template.dims() != dims || p.target.dims() != dims {
            return Err(CoreError::invalid(
                "all training images must share the template size",
            ));
        }
    }
    Ok(&pairs[..n_pairs.unwrap_or(pairs.len()).min(pairs.len())])
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(derive_seed(
        seed,
        &[Tag::Str("epoch"), Tag::Int(epoch as u64)],
    )));
    order
}

fn diverged(epoch: usize, step: usize) -> impl Fn(CoreError) -> CoreError {
    move |e| match e {
        CoreError::Autodiff(source @ AutodiffError::NonFinite { .. }) => {
            CoreError::TrainingDiverged {
                epoch,
                step,
                source,
            }
        }
        other => other,
    }
}

/// Alternating adversarial training: one discriminator step on
/// `L_D`, then one generator step on `L_G`, per batch.
pub fn train(
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pairs = select_pairs(pairs, cfg.n_pairs)?;
    let (w, h) = pairs[0].template.dims();
    cfg.generator.check_size(w, h)?;
    let mut gen = Generator::new(
        cfg.generator,
        derive_seed(cfg.seed, &[Tag::Str("init"), Tag::Str("generator")]),
    )?;
    let mut disc = Discriminator::new(
        cfg.discriminator,
        derive_seed(cfg.seed, &[Tag::Str("init"), Tag::Str("discriminator")]),
    )?;
    if disc.config.output_side(w.min(h)).is_none() {
        return Err(CoreError::invalid(format!(
            "{w}x{h} images are too small for a {}-layer discriminator",
            disc.config.n_layers
        )));
    }
    let gen_tensors: Vec<Tensor> = gen.params.iter().map(|p| p.tensor.clone()).collect();
    let disc_tensors: Vec<Tensor> = disc.params.iter().map(|p| p.tensor.clone()).collect();
    let mut g_state = AdamState::new(cfg.adam, &gen_tensors);
    let mut d_state = AdamState::new(cfg.adam, &disc_tensors);
    let weights = cfg.weights();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(pairs.len(), cfg.seed, epoch);
        let (mut sum_d, mut sum_g, mut sum_l1, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut run = || -> Result<(f64, f64, f64)> {
                let ts: Vec<&Raster> = batch.iter().map(|&i| &pairs[i].template).collect();
                let xs: Vec<&Raster> = batch.iter().map(|&i| &pairs[i].target).collect();
                let t_in = stack(&ts, true);
                let x_in = stack(&xs, false);

                // Generator forward, kept for the generator step.
                let mut gg = Graph::new();
                let g_vars = gen.bind(&mut gg, true)?;
                let t_var = gg.constant(t_in.clone())?;
                let x_var = gg.constant(x_in.clone())?;
                let xhat = gen.forward_graph(&mut gg, &g_vars, t_var)?;

                // Discriminator step on a detached x_hat.
                let mut dg = Graph::new();
                let d_vars = disc.bind(&mut dg, true)?;
                let dt = dg.constant(t_in)?;
                let dx = dg.constant(x_in)?;
                let dxhat = dg.constant(gg.value(xhat).clone())?;
                let real = disc.forward_graph(&mut dg, &d_vars, dt, dx)?;
                let fake = disc.forward_graph(&mut dg, &d_vars, dt, dxhat)?;
                let loss_d = discriminator_loss(&mut dg, real, fake)?;
                dg.backward(loss_d)?;
                let loss_d_val = dg.value(loss_d).data()[0];
                apply(&mut disc.params, &collect_grads(&dg, &d_vars), &mut d_state)?;

                // Generator step against the updated discriminator.
                let frozen = disc.bind(&mut gg, false)?;
                let d_fake = disc.forward_graph(&mut gg, &frozen, t_var, xhat)?;
                let loss = generator_loss(&mut gg, Some(d_fake), x_var, xhat, &weights)?;
                gg.backward(loss.total)?;
                let out = (
                    loss_d_val,
                    gg.value(loss.total).data()[0],
                    gg.value(loss.l1).data()[0],
                );
                apply(&mut gen.params, &collect_grads(&gg, &g_vars), &mut g_state)?;
                Ok(out)
            };
            let (ld, lg, l1) = run().map_err(diverged(epoch, step))?;
            sum_d += ld;
            sum_g += lg;
            sum_l1 += l1;
            batches += 1;
            step += 1;
        }
        let n = batches as f64;
        history.push(EpochLoss {
            epoch,
            loss_d: sum_d / n,
            loss_g: sum_g / n,
            loss_l1: sum_l1 / n,
        });
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0
                && (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)
            {
                let meta = serde_json::json!({ "epoch": epoch, "train": cfg });
                gen.to_checkpoint(step as u64, meta.clone())
                    .save(&dir.join(format!("generator_e{epoch:04}.ckpt")))?;
                disc.to_checkpoint(step as u64, meta)
                    .save(&dir.join(format!("discriminator_e{epoch:04}.ckpt")))?;
            }
        }
    }
    Ok(TrainOutcome {
        generator: gen,
        discriminator: disc,
        history,
    })
}

/// Supervised L1-only training of a U-Net mapping `template` to `target`.
/// Used for the learned template estimator.
pub fn train_l1(
    pairs: &[TrainingPair],
    gcfg: GeneratorConfig,
    epochs: usize,
    adam: AdamConfig,
    seed: u64,
) -> Result<(Generator, Vec<EpochLoss>)> {
    let pairs = select_pairs(pairs, None)?;
    let (w, h) = pairs[0].template.dims();
    gcfg.check_size(w, h)?;
    let mut gen = Generator::new(
        gcfg,
        derive_seed(seed, &[Tag::Str("init"), Tag::Str("estimator")]),
    )?;
    let tensors: Vec<Tensor> = gen.params.iter().map(|p| p.tensor.clone()).collect();
    let mut state = AdamState::new(adam, &tensors);
    let weights = LossWeights {
        lambda_l1: 1.0,
        ..LossWeights::default()
    };
    let mut history = Vec::with_capacity(epochs);
    let mut step = 0usize;
    for epoch in 1..=epochs {
        let mut sum = 0.0;
        for &i in &epoch_order(pairs.len(), seed, epoch) {
            let mut run = || -> Result<f64> {
                let mut g = Graph::new();
                let vars = gen.bind(&mut g, true)?;
                let t = g.constant(image_tensor(&pairs[i].template, true))?;
                let x = g.constant(image_tensor(&pairs[i].target, false))?;
                let xhat = gen.forward_graph(&mut g, &vars, t)?;
                let loss = generator_loss(&mut g, None, x, xhat, &weights)?;
                g.backward(loss.total)?;
                let v = g.value(loss.l1).data()[0];
                apply(&mut gen.params, &collect_grads(&g, &vars), &mut state)?;
                Ok(v)
            };
            sum += run().map_err(diverged(epoch, step))?;
            step += 1;
        }
        let l1 = sum / pairs.len() as f64;
        history.push(EpochLoss {
            epoch,
            loss_d: 0.0,
            loss_g: l1,
            loss_l1: l1,
        });
    }
    Ok((gen, history))
}

pub fn save_history(path: &Path, history: &[EpochLoss]) -> Result<()> {
    let mut out = String::from("epoch,loss_d,loss_g,loss_l1\n");
    for e in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.loss_d, e.loss_g, e.loss_l1
        ));
    }
    crate::rocstat::write_text(path, &out)
}

pub fn load_history(path: &Path) -> Result<Vec<EpochLoss>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let perr = |line: usize, d: &str| CoreError::Parse {
        path: path.to_path_buf(),
        detail: format!("line {line}: {d}"),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(perr(i + 1, "expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| perr(i + 1, "bad number"));
        out.push(EpochLoss {
            epoch: f[0].parse().map_err(|_| perr(i + 1, "bad epoch"))?,
            loss_d: num(f[1])?,
            loss_g: num(f[2])?,
            loss_l1: num(f[3])?,
        });
    }
    Ok(out)
}

/// Generates and persists x_hat for every template.
pub fn synthesize_all(
    gen: &Generator,
    templates: &[Template],
    printer: &str,
    device: &str,
    layout: Option<&DatasetLayout>,
) -> Result<Vec<PhysicalImage>> {
    use rayon::prelude::*;
    let images: Vec<PhysicalImage> = templates
        .par_iter()
        .map(|t| {
            let raster = gen.forward(&t.to_raster())?;
            PhysicalImage::new(
                raster,
                Provenance {
                    role: Role::SyntheticXhat,
                    template_id: t.id,
                    printer_id: printer.to_string(),
                    device_id: Some(device.to_string()),
                    instance: 0,
                    repetition: None,
                },
            )
        })
        .collect::<Result<_>>()?;
    if let Some(layout) = layout {
        for img in &images {
            save_physical(
                img,
                &layout.synthetic(printer, device, img.provenance.template_id),
            )?;
        }
    }
    Ok(images)
}
