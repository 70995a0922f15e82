//! Per-trajectory random streams.
//!
//! Trajectory `i` of a run seeded with `master` draws from the ChaCha8
//! stream `(key = master, stream = i)`, so its noise never depends on which
//! worker simulates it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type TrajectoryRng = ChaCha8Rng;

pub fn trajectory_rng(master_seed: u64, index: u64) -> TrajectoryRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Fills `out` with independent `Normal(0, dt)` Wiener increments.
pub fn fill_increments<R: Rng + ?Sized>(rng: &mut R, dt: f64, out: &mut [f64]) {
    let sd = dt.sqrt();
    for w in out {
        let z: f64 = rng.sample(StandardNormal);
        *w = sd * z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |seed, idx| {
            let mut r = trajectory_rng(seed, idx);
            let mut v = [0.0; 8];
            fill_increments(&mut r, 1.0, &mut v);
            v
        };
        assert_eq!(draw(7, 3), draw(7, 3));
        assert_ne!(draw(7, 3), draw(7, 4));
        assert_ne!(draw(7, 3), draw(8, 3));
    }

    #[test]
    fn increments_have_variance_dt() {
        let mut r = trajectory_rng(1, 0);
        let dt = 0.01;
        let mut v = vec![0.0; 200_000];
        fill_increments(&mut r, dt, &mut v);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 5.0 * (dt / n).sqrt());
        assert!((var / dt - 1.0).abs() < 0.02);
    }
}
