use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Finalizer from the splitmix64 generator; bijective on u64.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for (root, domain, index). Every consumer of randomness hangs
/// off one root seed through this, so runs replay exactly and a stream can be
/// regenerated (a given epoch's shuffle, a given case) without replaying the
/// others.
pub fn derive_seed(root: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ splitmix64(domain)) ^ index)
}

pub fn rng_stream(root: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, domain, index))
}

pub const DOMAIN_INIT: u64 = 1;
pub const DOMAIN_CASE: u64 = 2;
pub const DOMAIN_SHUFFLE: u64 = 3;
pub const DOMAIN_GRADCHECK: u64 = 4;
pub const DOMAIN_SPLIT: u64 = 5;
