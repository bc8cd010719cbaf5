//! Seeded pseudo-random source used for every initialisation and sampling step.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type DetRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> DetRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Independent stream derived from a base seed and a purpose tag.
pub fn derived(seed: u64, stream: u64) -> DetRng {
    seeded(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
