//! Counter-based random streams.
//!
//! Every Monte Carlo task draws from its own ChaCha stream selected by
//! `(seed, task index)`, so results do not depend on how tasks are scheduled
//! across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, task: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

/// Uniform draw in the half-open interval `(0, 1]`.
pub fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Number of Bernoulli(`p_leave`) trials up to and including the first success.
pub fn geometric_trials<R: Rng>(rng: &mut R, p_leave: f64) -> u64 {
    if p_leave >= 1.0 {
        return 1;
    }
    if p_leave <= 0.0 {
        return u64::MAX;
    }
    let u = open_unit(rng);
    let g = (u.ln() / (-p_leave).ln_1p()).ceil();
    if g >= u64::MAX as f64 {
        u64::MAX
    } else {
        (g as u64).max(1)
    }
}

/// Index drawn from cumulative weights `cum` (last entry is the total).
pub fn pick_cumulative<R: Rng>(rng: &mut R, cum: &[f64]) -> usize {
    let total = *cum.last().expect("non-empty weights");
    let u = rng.random::<f64>() * total;
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}
