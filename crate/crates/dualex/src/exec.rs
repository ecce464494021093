//! Replicate fan-out and seeded random streams.
//!
//! Replicates (Monte Carlo trials, seeds of an experiment, estimator
//! validation draws) are independent, so they run data-parallel when the
//! `parallel` feature is on. Each replicate owns the stream `(seed, index)`,
//! which makes results identical in both modes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Random stream `index` of `seed`. Streams never overlap.
pub fn stream_rng(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// `Parallel` when the feature is compiled in, otherwise `Sequential`.
    pub fn available(self) -> ExecMode {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecMode::Sequential
        }
    }
}

/// Map `f` over `0..count`, keeping output order.
pub fn map_indexed<T, F>(mode: ExecMode, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode.available() {
        ExecMode::Sequential => (0..count).map(f).collect(),
        ExecMode::Parallel => par_map(count, f),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(count: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(count: usize, f: F) -> Vec<T> {
    (0..count).map(f).collect()
}

/// Run `f` on one replicate stream per index: `f(index, rng)`.
pub fn map_replicates<T, F>(mode: ExecMode, seed: u64, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut Rng) -> T + Sync + Send,
{
    map_indexed(mode, count, |i| {
        let mut rng = stream_rng(seed, i as u64);
        f(i, &mut rng)
    })
}
