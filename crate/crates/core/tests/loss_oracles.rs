//! Adversarial and reconstruction losses against scalar re-implementations.

#[path = "support/losses.rs"]
mod losses;

use cdp_autodiff::{Graph, Tensor};
use cdp_core::pix2pix::{discriminator_loss, generator_loss, LossWeights, PROB_EPS};
use losses::{balanced_discriminator_loss, discriminator_worst, generator_worst, TOL};

#[test]
fn discriminator_loss_matches_oracle() {
    let e = discriminator_worst();
    assert!(e < TOL, "{e:e}");
}

#[test]
fn generator_loss_matches_oracle() {
    let e = generator_worst();
    assert!(e < TOL, "{e:e}");
}

#[test]
fn closed_forms() {
    assert!((balanced_discriminator_loss() - 2.0 * 2f64.ln()).abs() < 1e-12);

    // perfect discriminator and ideal generator limits
    let eps = PROB_EPS;
    let mut g = Graph::new();
    let hi = g.constant(Tensor::full(&[1, 1, 4, 4], 1.0 - eps)).unwrap();
    let lo = g.constant(Tensor::full(&[1, 1, 4, 4], eps)).unwrap();
    let ld = discriminator_loss(&mut g, hi, lo).unwrap();
    assert!(g.value(ld).data()[0] < 1e-6);
    let x = g.constant(Tensor::full(&[1, 1, 8, 8], 0.3)).unwrap();
    let lg = generator_loss(&mut g, Some(hi), x, x, &LossWeights::default()).unwrap();
    assert!(g.value(lg.total).data()[0] < 1e-6);

    // reconstruction terms with no weight and no adversary is an error
    let zero = LossWeights {
        lambda_l1: 0.0,
        extra_l2_weight: 0.0,
        extra_ssim_weight: 0.0,
    };
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 8, 8], 0.3)).unwrap();
    assert!(generator_loss(&mut g, None, x, x, &zero).is_err());
}
