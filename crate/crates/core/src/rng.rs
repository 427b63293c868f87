//! Seeded random streams.
//!
//! Every source of randomness in a run draws from its own ChaCha stream so
//! that runs sharing a seed share process and sensor noise exactly, whatever
//! the attacker does with its own stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Random system instance generation.
    Model = 1,
    /// Initial state and process noise.
    Process = 2,
    /// Sensor noise.
    Observation = 3,
    /// Attacker randomness: perturbations and bias draws.
    Attack = 4,
    CalibrationProcess = 5,
    CalibrationObservation = 6,
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
