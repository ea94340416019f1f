//! Counter-based random streams.
//!
//! Every random draw comes from a stream keyed by `(seed, purpose, trial,
//! step)`, so results do not depend on thread scheduling or worker count.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// The untampered input.
    Sample = 1,
    /// Oracle randomness of one tampering step.
    Oracle = 2,
    /// Mean estimation ahead of an experiment.
    Mean = 3,
    /// Synthetic sequences and estimator-tail draws.
    Synthetic = 4,
    /// Fresh test examples used inside a risk estimate.
    Risk = 5,
    /// Probes that check an external process for determinism.
    Probe = 6,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream_seed(seed: u64, purpose: Purpose, trial: u64, step: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ trial);
    splitmix64(h ^ step)
}

pub fn stream(seed: u64, purpose: Purpose, trial: u64, step: u64) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, purpose, trial, step))
}

/// Streams of a single trial.
#[derive(Clone, Copy, Debug)]
pub struct TrialStreams {
    pub seed: u64,
    pub trial: u64,
}

impl TrialStreams {
    pub fn new(seed: u64, trial: u64) -> Self {
        TrialStreams { seed, trial }
    }

    pub fn sample(&self) -> StreamRng {
        stream(self.seed, Purpose::Sample, self.trial, 0)
    }

    pub fn step(&self, i: usize) -> StreamRng {
        stream(self.seed, Purpose::Oracle, self.trial, i as u64)
    }
}
