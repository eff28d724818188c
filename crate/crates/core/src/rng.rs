//! Deterministic random-number streams.
//!
//! Every Monte Carlo run is keyed by a single 64-bit trial seed. Within a
//! trial each noise source gets its own stream:
//!
//! * the common Brownian factor `V` draws from a ChaCha stream derived
//!   from the trial seed alone, so a finite-pool run, a moment-solver run
//!   and a weighted-cloud run launched with the same trial seed see the
//!   *same* `V` path — the coupling the convergence and cross-check
//!   harnesses rely on;
//! * each name of a finite pool and each weighted-cloud particle gets its
//!   own PCG stream (16-byte state; clouds can hold millions of
//!   particles, so per-entity generators must stay small).
//!
//! All derivations are pure functions of `(trial seed, kind, entity)`, so
//! every ensemble is reproducible regardless of how trials are scheduled
//! across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_pcg::Pcg64Mcg;

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed derived from the master seed and the trial index.
pub fn trial_seed(master: u64, trial_index: u64) -> u64 {
    splitmix64(master ^ trial_index.wrapping_mul(0xA24B_AED4_963E_E407))
}

const KIND_NAME: u64 = 0x6E61_6D65;
const KIND_CLOUD: u64 = 0x636C_6F75;

/// Noise-stream factory for one trial.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(trial_seed: u64) -> Self {
        Streams { seed: trial_seed }
    }

    /// Stream driving the common factor `V`. One draw per time step.
    pub fn common(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn entity(&self, kind: u64, entity: u64) -> Pcg64Mcg {
        let s = splitmix64(splitmix64(self.seed ^ kind) ^ entity);
        Pcg64Mcg::seed_from_u64(s)
    }

    /// Stream for name `n` in a finite pool: first draw is the standard
    /// exponential default threshold, then one normal per step while alive.
    pub fn name(&self, n: usize) -> Pcg64Mcg {
        self.entity(KIND_NAME, n as u64)
    }

    /// Stream for particle `m` of type class `class_idx` in a weighted cloud.
    pub fn cloud(&self, class_idx: usize, m: usize, particles_per_class: usize) -> Pcg64Mcg {
        self.entity(
            KIND_CLOUD,
            class_idx as u64 * particles_per_class as u64 + m as u64,
        )
    }
}
