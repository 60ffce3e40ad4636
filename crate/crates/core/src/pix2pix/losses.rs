use cdp_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::SsimParams;

/// Probability clamp applied inside every log.
pub const PROB_EPS: f64 = 1e-7;

/// `-mean log D(t, x) - mean log(1 - D(t, x_hat))`.
pub fn discriminator_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let ones = g.constant(Tensor::full(g.value(d_real).shape(), 1.0))?;
    let zeros = g.constant(Tensor::zeros(g.value(d_fake).shape()))?;
    let real = g.bce_loss(d_real, ones, PROB_EPS)?;
    let fake = g.bce_loss(d_fake, zeros, PROB_EPS)?;
    Ok(g.add(real, fake)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub extra_l2_weight: f64,
    pub extra_ssim_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            extra_l2_weight: 0.0,
            extra_ssim_weight: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, adversarial: bool) -> Result<()> {
        let w = [self.lambda_l1, self.extra_l2_weight, self.extra_ssim_weight];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CoreError::invalid(
                "loss weights must be finite and non-negative",
            ));
        }
        if !adversarial && w.iter().all(|&v| v == 0.0) {
            return Err(CoreError::invalid(
                "at least one loss weight must be positive",
            ));
        }
        Ok(())
    }
}

pub struct GeneratorLoss {
    pub total: Var,
    /// Unweighted mean |x - G(t)|.
    pub l1: Var,
}

/// `-mean log D(t, G(t)) + lambda·mean|x - G(t)|` plus the optional L2 and
/// SSIM terms. With `d_fake = None` the adversarial term is dropped.
pub fn generator_loss(
    g: &mut Graph,
    d_fake: Option<Var>,
    x: Var,
    xhat: Var,
    w: &LossWeights,
) -> Result<GeneratorLoss> {
    w.validate(d_fake.is_some())?;
    let l1 = g.l1_loss(xhat, x)?;
    let mut total = g.scale(l1, w.lambda_l1)?;
    if let Some(d) = d_fake {
        let ones = g.constant(Tensor::full(g.value(d).shape(), 1.0))?;
        let adv = g.bce_loss(d, ones, PROB_EPS)?;
        total = g.add(adv, total)?;
    }
    if w.extra_l2_weight > 0.0 {
        let l2 = g.mse_loss(xhat, x)?;
        let l2 = g.scale(l2, w.extra_l2_weight)?;
        total = g.add(total, l2)?;
    }
    if w.extra_ssim_weight > 0.0 {
        let s = ssim_graph(g, x, xhat, &SsimParams::default())?;
        let dissim = g.scale(s, -w.extra_ssim_weight)?;
        let dissim = g.offset(dissim, w.extra_ssim_weight)?;
        total = g.add(total, dissim)?;
    }
    Ok(GeneratorLoss { total, l1 })
}

/// Differentiable mean SSIM of two `[N, 1, H, W]` images over valid window
/// positions.
pub fn ssim_graph(g: &mut Graph, a: Var, b: Var, p: &SsimParams) -> Result<Var> {
    p.validate()?;
    let shape = g.value(a).shape().to_vec();
    if shape != g.value(b).shape() || shape.len() != 4 || shape[1] != 1 {
        return Err(CoreError::invalid(format!(
            "ssim_graph needs matching [N,1,H,W] inputs, got {shape:?} and {:?}",
            g.value(b).shape()
        )));
    }
    let k = p.window.side();
    if shape[2] < k || shape[3] < k {
        return Err(CoreError::invalid(
            "ssim_graph: image smaller than the window",
        ));
    }
    let win = g.constant(Tensor::new(vec![1, 1, k, k], p.window.weights())?)?;
    let filt = |g: &mut Graph, v: Var| g.conv2d(v, win, None, 1, 0);
    let mu_a = filt(g, a)?;
    let mu_b = filt(g, b)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = filt(g, aa)?;
    let e_bb = filt(g, bb)?;
    let e_ab = filt(g, ab)?;
    let ma2 = g.mul(mu_a, mu_a)?;
    let mb2 = g.mul(mu_b, mu_b)?;
    let mab = g.mul(mu_a, mu_b)?;
    let va = g.sub(e_aa, ma2)?;
    let vb = g.sub(e_bb, mb2)?;
    let cov = g.sub(e_ab, mab)?;
    let n1 = g.scale(mab, 2.0)?;
    let n1 = g.offset(n1, p.c1())?;
    let n2 = g.scale(cov, 2.0)?;
    let n2 = g.offset(n2, p.c2())?;
    let d1 = g.add(ma2, mb2)?;
    let d1 = g.offset(d1, p.c1())?;
    let d2 = g.add(va, vb)?;
    let d2 = g.offset(d2, p.c2())?;
    let num = g.mul(n1, n2)?;
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map)?)
}
