//! Per-stream random generators.
//!
//! Every random quantity of an instance comes from its own stream, keyed by
//! `(seed, instance, role, layer)`. The key is folded through SplitMix64 and
//! seeds a xoshiro256++ generator (`seed_from_u64`, which expands the 64-bit
//! seed with SplitMix64 again). Normals are drawn with `rand_distr`'s
//! ziggurat `StandardNormal`.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Stream = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Weights,
    Bias,
    MaskA,
    MaskB,
    Input,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Weights => 1,
            Role::Bias => 2,
            Role::MaskA => 3,
            Role::MaskB => 4,
            Role::Input => 5,
        }
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_key(seed: u64, instance: u64, role: Role, layer: usize) -> u64 {
    let mut h = splitmix64(seed);
    for part in [instance, role.tag(), layer as u64] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn stream(seed: u64, instance: u64, role: Role, layer: usize) -> Stream {
    Stream::seed_from_u64(stream_key(seed, instance, role, layer))
}
