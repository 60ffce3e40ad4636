//! Composed generator and discriminator gradients against finite differences.

use cdp_autodiff::{Graph, Tensor};
use cdp_core::imgcore::generate_template;
use cdp_core::pix2pix::{
    discriminator_loss, generator_loss, template_input, Discriminator, DiscriminatorConfig,
    Generator, GeneratorConfig, LossWeights,
};
use cdp_core::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-5;

pub fn small_nets() -> (Generator, Discriminator) {
    let g = Generator::new(
        GeneratorConfig {
            depth: 2,
            base_channels: 4,
        },
        1,
    )
    .unwrap();
    let d = Discriminator::new(
        DiscriminatorConfig {
            n_layers: 2,
            base_channels: 4,
        },
        2,
    )
    .unwrap();
    (g, d)
}

pub fn image(t: &Raster) -> Tensor {
    Tensor::new(vec![1, 1, t.height(), t.width()], t.pixels().to_vec()).unwrap()
}

fn loss_g(gen: &Generator, disc: &Discriminator, t: &Raster, x: &Raster) -> f64 {
    let mut g = Graph::new();
    let gv = gen.bind(&mut g, false).unwrap();
    let dv = disc.bind(&mut g, false).unwrap();
    let tv = g.constant(template_input(t)).unwrap();
    let xv = g.constant(image(x)).unwrap();
    let xhat = gen.forward_graph(&mut g, &gv, tv).unwrap();
    let d = disc.forward_graph(&mut g, &dv, tv, xhat).unwrap();
    let l = generator_loss(&mut g, Some(d), xv, xhat, &LossWeights::default()).unwrap();
    g.value(l.total).data()[0]
}

fn loss_d(gen: &Generator, disc: &Discriminator, t: &Raster, x: &Raster) -> f64 {
    let xhat = gen.forward(t).unwrap();
    let mut g = Graph::new();
    let dv = disc.bind(&mut g, false).unwrap();
    let tv = g.constant(template_input(t)).unwrap();
    let real_in = g.constant(image(x)).unwrap();
    let fake_in = g.constant(image(&xhat)).unwrap();
    let real = disc.forward_graph(&mut g, &dv, tv, real_in).unwrap();
    let fake = disc.forward_graph(&mut g, &dv, tv, fake_in).unwrap();
    let l = discriminator_loss(&mut g, real, fake).unwrap();
    g.value(l).data()[0]
}

/// Step for the composed checks. The networks are piecewise smooth (leaky
/// ReLU, L1), so the step must stay small enough not to cross a kink.
pub const H: f64 = 1e-5;

/// Central differences at h and h/2 combined by one Richardson step.
fn numeric(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    let c = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(h) - f(-h)) / (2.0 * h);
    let a = c(f, h);
    let b = c(f, h / 2.0);
    (4.0 * b - a) / 3.0
}

fn pick(
    rng: &mut ChaCha8Rng,
    params: &[cdp_autodiff::NamedTensor],
    n: usize,
) -> Vec<(usize, usize)> {
    (0..n)
        .map(|_| {
            let k = rng.gen_range(0..params.len());
            (k, rng.gen_range(0..params[k].tensor.numel()))
        })
        .collect()
}

/// Worst relative errors over sampled generator and discriminator parameters.
pub fn composed_worst() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut gen, mut disc) = small_nets();
    let t = generate_template(3, 16, 16, 0.5).unwrap().to_raster();
    let x = Raster::from_fn(16, 16, |xx, yy| {
        0.2 + 0.6 * t.get(xx, yy) + 0.1 * rng.gen::<f64>()
    });

    // generator parameters through D(t, G(t)) and the L1 term
    let mut g = Graph::new();
    let gv = gen.bind(&mut g, true).unwrap();
    let dv = disc.bind(&mut g, false).unwrap();
    let tv = g.constant(template_input(&t)).unwrap();
    let xv = g.constant(image(&x)).unwrap();
    let xhat = gen.forward_graph(&mut g, &gv, tv).unwrap();
    let d = disc.forward_graph(&mut g, &dv, tv, xhat).unwrap();
    let l = generator_loss(&mut g, Some(d), xv, xhat, &LossWeights::default()).unwrap();
    g.backward(l.total).unwrap();
    let mut worst: f64 = 0.0;
    for (k, j) in pick(&mut rng, &gen.params, 5) {
        let analytic = g.grad(gv[k]).unwrap()[j];
        let base = gen.params[k].tensor.data()[j];
        let num = numeric(
            &mut |h| {
                gen.params[k].tensor.data_mut()[j] = base + h;
                let v = loss_g(&gen, &disc, &t, &x);
                gen.params[k].tensor.data_mut()[j] = base;
                v
            },
            H,
        );
        let rel = (analytic - num).abs() / analytic.abs().max(num.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    let gen_worst = worst;

    // discriminator parameters through L_D
    let xhat_img = gen.forward(&t).unwrap();
    let mut g = Graph::new();
    let dv = disc.bind(&mut g, true).unwrap();
    let tv = g.constant(template_input(&t)).unwrap();
    let real_in = g.constant(image(&x)).unwrap();
    let fake_in = g.constant(image(&xhat_img)).unwrap();
    let real = disc.forward_graph(&mut g, &dv, tv, real_in).unwrap();
    let fake = disc.forward_graph(&mut g, &dv, tv, fake_in).unwrap();
    let l = discriminator_loss(&mut g, real, fake).unwrap();
    g.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (k, j) in pick(&mut rng, &disc.params, 5) {
        let analytic = g.grad(dv[k]).unwrap()[j];
        let base = disc.params[k].tensor.data()[j];
        let num = numeric(
            &mut |h| {
                disc.params[k].tensor.data_mut()[j] = base + h;
                let v = loss_d(&gen, &disc, &t, &x);
                disc.params[k].tensor.data_mut()[j] = base;
                v
            },
            H,
        );
        let rel = (analytic - num).abs() / analytic.abs().max(num.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    (gen_worst, worst)
}
