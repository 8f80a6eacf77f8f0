//! Counter-based random streams and deterministic fan-out.
//!
//! A [`StreamKey`] names a family of independent ChaCha8 streams. Each
//! replicate draws from `key.stream(index)`, so the numbers a replicate sees
//! depend only on `(master seed, derivation labels, index)` and never on how
//! replicates are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// The generator handed to samplers.
pub type Stream = ChaCha8Rng;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "FRET_THREADS";

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    domain: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, domain: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child key for a numbered sub-task (an ε index, a replicate block, ...).
    pub fn derive(self, label: u64) -> Self {
        let mut state = self.domain ^ label.rotate_left(17);
        let mixed = splitmix64(&mut state) ^ splitmix64(&mut state).rotate_left(32);
        Self {
            seed: self.seed,
            domain: mixed,
        }
    }

    /// Child key for a named purpose ("nu0", "theorem1", ...).
    pub fn derive_str(self, label: &str) -> Self {
        self.derive(fnv1a(label))
    }

    /// The `index`-th stream of this key.
    pub fn stream(&self, index: u64) -> Stream {
        let mut key = [0u8; 32];
        let mut seed_state = self.seed;
        let mut domain_state = self.domain;
        for (k, chunk) in key.chunks_exact_mut(8).enumerate() {
            let word = if k < 2 {
                splitmix64(&mut seed_state)
            } else {
                splitmix64(&mut domain_state)
            };
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

/// Worker count requested through `FRET_THREADS`, if set and valid.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Run `f` on a dedicated pool of `workers` threads (or the global pool).
///
/// Results never depend on the worker count: every parallel map in this crate
/// is index-ordered and every replicate owns its stream.
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// Index-ordered parallel map over replicates `0..n`.
pub fn map_replicates<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}
