//! Adversarial and reconstruction losses against scalar re-implementations.

use cdp_autodiff::{Graph, Tensor};
use cdp_core::pix2pix::{discriminator_loss, generator_loss, LossWeights, PROB_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-12;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ld_oracle(real: &[f64], fake: &[f64]) -> f64 {
    -mean(real.iter().map(|&p| clamp(p).ln())) - mean(fake.iter().map(|&p| (1.0 - clamp(p)).ln()))
}

fn lg_oracle(fake: &[f64], x: &[f64], xhat: &[f64], lambda: f64, l2: f64) -> f64 {
    let adv = -mean(fake.iter().map(|&p| clamp(p).ln()));
    let l1 = mean(x.iter().zip(xhat).map(|(a, b)| (a - b).abs()));
    let sq = mean(x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)));
    adv + lambda * l1 + l2 * sq
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen::<f64>())
}

/// Worst absolute error of L_D over 100 random patch maps.
pub fn discriminator_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..3);
        let side = rng.gen_range(1..7);
        let shape = [n, 1, side, side];
        let real = tensor(&mut rng, &shape);
        let fake = tensor(&mut rng, &shape);
        let mut g = Graph::new();
        let (r, f) = (
            g.constant(real.clone()).unwrap(),
            g.constant(fake.clone()).unwrap(),
        );
        let l = discriminator_loss(&mut g, r, f).unwrap();
        let got = g.value(l).data()[0];
        worst = worst.max((got - ld_oracle(real.data(), fake.data())).abs());
    }
    worst
}

/// Worst error of L_G over 100 random inputs, relative once the loss
/// exceeds 1 (lambda = 100 puts it near 30).
pub fn generator_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let side = rng.gen_range(2..9);
        let img = [1, 1, side * 2, side * 2];
        let patch = [1, 1, side, side];
        let d_fake = tensor(&mut rng, &patch);
        let x = tensor(&mut rng, &img);
        let xhat = tensor(&mut rng, &img);
        let lambda = if i % 10 == 0 { 0.0 } else { 100.0 };
        let l2 = if i % 2 == 0 {
            0.0
        } else {
            rng.gen_range(0.0..5.0)
        };
        let w = LossWeights {
            lambda_l1: lambda,
            extra_l2_weight: l2,
            extra_ssim_weight: 0.0,
        };
        let mut g = Graph::new();
        let d = g.constant(d_fake.clone()).unwrap();
        let xv = g.constant(x.clone()).unwrap();
        let hv = g.constant(xhat.clone()).unwrap();
        let loss = generator_loss(&mut g, Some(d), xv, hv, &w).unwrap();
        let got = g.value(loss.total).data()[0];
        let want = lg_oracle(d_fake.data(), x.data(), xhat.data(), lambda, l2);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    worst
}

/// L_D with D = 0.5 on both inputs.
pub fn balanced_discriminator_loss() -> f64 {
    let mut g = Graph::new();
    let half = g.constant(Tensor::full(&[1, 1, 6, 6], 0.5)).unwrap();
    let l = discriminator_loss(&mut g, half, half).unwrap();
    g.value(l).data()[0]
}
