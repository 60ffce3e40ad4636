//! Pairwise Mann-Whitney count as an AUC oracle.

use cdp_core::rocstat::{auc, ScoreSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;

pub fn mann_whitney(s: &ScoreSet) -> f64 {
    let mut wins = 0.0;
    for &p in &s.positives {
        for &n in &s.negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (s.positives.len() * s.negatives.len()) as f64
}

/// Score sets of random sizes; every third one draws from a handful of
/// levels so ties are frequent.
pub fn random_set(rng: &mut ChaCha8Rng, i: usize) -> ScoreSet {
    let np = rng.gen_range(1..60);
    let nn = rng.gen_range(1..60);
    let shift = rng.gen_range(-1.0..1.0);
    let draw = |rng: &mut ChaCha8Rng, s: f64| -> f64 {
        if i.is_multiple_of(3) {
            (rng.gen_range(0..5) as f64 + s.round()) / 4.0
        } else {
            rng.gen::<f64>() + s
        }
    };
    let positives = (0..np).map(|_| draw(rng, shift)).collect();
    let negatives = (0..nn).map(|_| draw(rng, 0.0)).collect();
    ScoreSet::new(positives, negatives)
}

/// Worst gap between the trapezoidal AUC and the pairwise count over 1000
/// random score sets.
pub fn auc_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..1000)
        .map(|i| {
            let s = random_set(&mut rng, i);
            (auc(&s).unwrap() - mann_whitney(&s)).abs()
        })
        .fold(0.0, f64::max)
}
