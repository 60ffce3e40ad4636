//! Direct re-implementations of pcorr and SSIM.

use cdp_core::metrics::{pcorr, ssim, SsimParams, SsimWindow};
use cdp_core::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-10;

pub fn random_raster(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster {
    Raster::from_fn(w, h, |_, _| rng.gen::<f64>())
}

/// Single-pass textbook formula.
fn pcorr_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

/// Window weights built from scratch, not from the library.
fn window(p: &SsimParams) -> (usize, Vec<f64>) {
    match p.window {
        SsimWindow::Uniform { side } => (side, vec![1.0 / (side * side) as f64; side * side]),
        SsimWindow::Gaussian { side, sigma } => {
            let c = (side - 1) as f64 / 2.0;
            let mut w = Vec::with_capacity(side * side);
            for y in 0..side {
                for x in 0..side {
                    let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
                    w.push((-d2 / (2.0 * sigma * sigma)).exp());
                }
            }
            let s: f64 = w.iter().sum();
            (side, w.into_iter().map(|v| v / s).collect())
        }
    }
}

/// Mean of the SSIM index over every valid window position, each window
/// computed from its own weighted moments.
fn ssim_oracle(a: &Raster, b: &Raster, p: &SsimParams) -> f64 {
    let (side, w) = window(p);
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let (nx, ny) = (a.width() - side + 1, a.height() - side + 1);
    let mut total = 0.0;
    for oy in 0..ny {
        for ox in 0..nx {
            let at = |img: &Raster, i: usize| img.get(ox + i % side, oy + i / side);
            let mu_a: f64 = (0..side * side).map(|i| w[i] * at(a, i)).sum();
            let mu_b: f64 = (0..side * side).map(|i| w[i] * at(b, i)).sum();
            let var_a: f64 = (0..side * side)
                .map(|i| w[i] * (at(a, i) - mu_a).powi(2))
                .sum();
            let var_b: f64 = (0..side * side)
                .map(|i| w[i] * (at(b, i) - mu_b).powi(2))
                .sum();
            let cov: f64 = (0..side * side)
                .map(|i| w[i] * (at(a, i) - mu_a) * (at(b, i) - mu_b))
                .sum();
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    total / (nx * ny) as f64
}

/// Worst SSIM error over 50 random 16x16 pairs for each window.
pub fn ssim_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for params in [SsimParams::default(), SsimParams::uniform8()] {
        for _ in 0..50 {
            let a = random_raster(&mut rng, 16, 16);
            // correlated partner so the structure term is not near zero
            let b = Raster::from_fn(16, 16, |x, y| {
                (0.6 * a.get(x, y) + 0.4 * rng.gen::<f64>()).min(1.0)
            });
            let got = ssim(&a, &b, &params).unwrap();
            worst = worst.max((got - ssim_oracle(&a, &b, &params)).abs());
        }
    }
    worst
}

/// Worst pcorr error over 200 random pairs of random sizes.
pub fn pcorr_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let w = rng.gen_range(2..40);
        let h = rng.gen_range(2..40);
        let a = random_raster(&mut rng, w, h);
        let b = Raster::from_fn(w, h, |x, y| {
            a.get(x, y) * rng.gen_range(-1.0..1.0) + rng.gen::<f64>()
        });
        let got = pcorr(&a, &b).unwrap();
        worst = worst.max((got - pcorr_oracle(a.pixels(), b.pixels())).abs());
    }
    worst
}

/// Largest distance from 1 of either metric on an image against itself.
pub fn identity_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a = random_raster(&mut rng, 20, 17);
        for p in [SsimParams::default(), SsimParams::uniform8()] {
            worst = worst.max((ssim(&a, &a, &p).unwrap() - 1.0).abs());
        }
        worst = worst.max((pcorr(&a, &a).unwrap() - 1.0).abs());
    }
    worst
}
