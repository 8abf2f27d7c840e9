//! Deterministic random streams.
//!
//! Every stochastic step draws from a stream derived from the run seed, a
//! domain tag and an index, so results never depend on iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags separating otherwise identical (seed, index) pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Sample = 1,
    Split = 2,
    Init = 3,
    Shuffle = 4,
    TrainStep = 5,
    McPass = 6,
    SweepNoise = 7,
    Probe = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream `child(seed, domain, index)`.
pub fn child(seed: u64, domain: Domain, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain as u64)));
    rng.set_stream(index);
    rng
}

/// Mixes extra key material (e.g. the bits of an SNR level) into a seed.
pub fn mix(seed: u64, key: u64) -> u64 {
    splitmix64(seed ^ splitmix64(key.wrapping_add(0xA5A5_A5A5)))
}
