//! Per-op gradient cases checked against central finite differences, h = 1e-3.
//!
//! Each numeric derivative combines the central differences at h and h/2
//! (one Richardson step) so that the O(h²) truncation term of the plain
//! central difference does not dominate the 1e-6 tolerance on ops with large
//! third derivatives (logarithms, normalization).

use cdp_autodiff::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
pub const TOL: f64 = 1e-6;
pub const SHAPES_PER_OP: usize = 10;

/// Scalar objective: sum(weights ⊙ op(inputs)).
fn objective(
    build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    weights: &Tensor,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.constant(t.clone()).unwrap())
        .collect();
    let out = build(&mut g, &vars).unwrap();
    g.value(out)
        .data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Max normwise relative error over all differentiable inputs.
pub fn gradcheck(
    build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: Vec<Tensor>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    let weights = Tensor::from_fn(g.value(out).shape(), |_| rng.gen_range(-1.0..1.0));
    let w = g.constant(weights.clone()).unwrap();
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod).unwrap();
    g.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = g
            .grad(*var)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0; inputs[i].numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let central = |h: f64| {
                let mut plus = inputs.clone();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.clone();
                minus[i].data_mut()[j] -= h;
                (objective(build, &plus, &weights) - objective(build, &minus, &weights)) / (2.0 * h)
            };
            *slot = (4.0 * central(H / 2.0) - central(H)) / 3.0;
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = analytic
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(0.0, f64::max)
            .max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform in ±[lo, hi]: keeps inputs away from kinks at zero.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn rand_nchw(rng: &mut ChaCha8Rng, max_c: usize, min_hw: usize, max_hw: usize) -> [usize; 4] {
    [
        rng.gen_range(1..=2),
        rng.gen_range(1..=max_c),
        rng.gen_range(min_hw..=max_hw),
        rng.gen_range(min_hw..=max_hw),
    ]
}

pub type Case = fn(&mut ChaCha8Rng) -> f64;

/// Worst relative error of one op over its random shapes.
pub fn worst(seed: u64, case: Case) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..SHAPES_PER_OP)
        .map(|_| case(&mut rng))
        .fold(0.0, f64::max)
}

/// Every differentiable op with its seed.
pub fn cases() -> Vec<(&'static str, u64, Case)> {
    vec![
        ("conv2d", 1, |rng| {
            let [n, c, h, w] = rand_nchw(rng, 3, 3, 7);
            let f = rng.gen_range(1..=3);
            let k = rng.gen_range(1..=3usize).min(h).min(w);
            let stride = rng.gen_range(1..=2);
            let padding = rng.gen_range(0..=1);
            let inputs = vec![
                rand_tensor(rng, &[n, c, h, w], -1.0, 1.0),
                rand_tensor(rng, &[f, c, k, k], -1.0, 1.0),
                rand_tensor(rng, &[f], -1.0, 1.0),
            ];
            gradcheck(
                &move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, padding),
                inputs,
                rng,
            )
        }),
        ("conv2d_transpose", 2, |rng| {
            let [n, c, h, w] = rand_nchw(rng, 3, 2, 5);
            let f = rng.gen_range(1..=3);
            let k = rng.gen_range(2..=4usize);
            let stride = rng.gen_range(1..=2);
            let padding = rng.gen_range(0..=1);
            let inputs = vec![
                rand_tensor(rng, &[n, c, h, w], -1.0, 1.0),
                rand_tensor(rng, &[c, f, k, k], -1.0, 1.0),
                rand_tensor(rng, &[f], -1.0, 1.0),
            ];
            gradcheck(
                &move |g, v| g.conv2d_transpose(v[0], v[1], Some(v[2]), stride, padding),
                inputs,
                rng,
            )
        }),
        ("leaky_relu", 3, |rng| {
            let shape = rand_nchw(rng, 3, 1, 5);
            let slope = rng.gen_range(0.01..0.5);
            let inputs = vec![rand_away_from_zero(rng, &shape, 0.01, 2.0)];
            gradcheck(&move |g, v| g.leaky_relu(v[0], slope), inputs, rng)
        }),
        ("sigmoid", 4, |rng| {
            let shape = rand_nchw(rng, 3, 1, 5);
            let inputs = vec![rand_tensor(rng, &shape, -4.0, 4.0)];
            gradcheck(&|g, v| g.sigmoid(v[0]), inputs, rng)
        }),
        ("tanh", 5, |rng| {
            let shape = rand_nchw(rng, 3, 1, 5);
            let inputs = vec![rand_tensor(rng, &shape, -2.0, 2.0)];
            gradcheck(&|g, v| g.tanh(v[0]), inputs, rng)
        }),
        ("instance_norm", 6, |rng| {
            let shape = rand_nchw(rng, 3, 2, 5);
            let inputs = vec![rand_tensor(rng, &shape, -1.5, 1.5)];
            gradcheck(&|g, v| g.instance_norm(v[0], 1e-5), inputs, rng)
        }),
        ("concat_channels", 7, |rng| {
            let [n, ca, h, w] = rand_nchw(rng, 3, 1, 5);
            let cb = rng.gen_range(1..=3);
            let inputs = vec![
                rand_tensor(rng, &[n, ca, h, w], -1.0, 1.0),
                rand_tensor(rng, &[n, cb, h, w], -1.0, 1.0),
            ];
            gradcheck(&|g, v| g.concat_channels(v[0], v[1]), inputs, rng)
        }),
        ("l1_loss", 8, |rng| {
            let shape = rand_nchw(rng, 3, 1, 5);
            let a = rand_tensor(rng, &shape, -1.0, 1.0);
            let delta = rand_away_from_zero(rng, &shape, 0.01, 1.0);
            let b = Tensor::from_fn(&shape, |i| a.data()[i] + delta.data()[i]);
            gradcheck(&|g, v| g.l1_loss(v[0], v[1]), vec![a, b], rng)
        }),
        ("mse_loss", 9, |rng| {
            let shape = rand_nchw(rng, 3, 1, 5);
            let inputs = vec![
                rand_tensor(rng, &shape, -1.0, 1.0),
                rand_tensor(rng, &shape, -1.0, 1.0),
            ];
            gradcheck(&|g, v| g.mse_loss(v[0], v[1]), inputs, rng)
        }),
        ("bce_loss", 10, |rng| {
            let shape = rand_nchw(rng, 3, 1, 5);
            let inputs = vec![
                rand_tensor(rng, &shape, 0.05, 0.95),
                rand_tensor(rng, &shape, 0.0, 1.0),
            ];
            gradcheck(&|g, v| g.bce_loss(v[0], v[1], 1e-7), inputs, rng)
        }),
        ("add/sub/mul/div/scale/offset", 11, |rng| {
            let shape = rand_nchw(rng, 2, 1, 4);
            let factor = rng.gen_range(-2.0..2.0);
            let inputs = vec![
                rand_tensor(rng, &shape, -1.0, 1.0),
                rand_tensor(rng, &shape, 0.5, 1.5),
            ];
            gradcheck(
                &move |g, v| {
                    let s = g.add(v[0], v[1])?;
                    let d = g.sub(v[0], v[1])?;
                    let m = g.mul(s, d)?;
                    let q = g.div(m, v[1])?;
                    let sc = g.scale(q, factor)?;
                    g.offset(sc, 0.3)
                },
                inputs,
                rng,
            )
        }),
        ("sum/mean", 12, |rng| {
            let shape = rand_nchw(rng, 3, 1, 5);
            let inputs = vec![rand_tensor(rng, &shape, -1.0, 1.0)];
            gradcheck(
                &|g, v| {
                    let sq = g.mul(v[0], v[0])?;
                    let s = g.sum(sq)?;
                    let m = g.mean(v[0])?;
                    g.add(s, m)
                },
                inputs,
                rng,
            )
        }),
    ]
}
