//! Counter-based seed splitting.
//!
//! All randomness in a run derives from one master seed. Independent streams
//! are addressed by a purpose label plus integer indices, so parallel workers
//! can never reorder draws: `stream = mix(master, label, indices)`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap seed mixing.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a over the label bytes.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives the seed for stream `(label, indices)` under `master`.
pub fn stream_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut acc = mix64(master ^ hash_label(label));
    for &ix in indices {
        acc = mix64(acc ^ ix.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    acc
}

/// A generator seeded for stream `(label, indices)` under `master`.
pub fn stream_rng(master: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, label, indices))
}

/// Standard normal draw via Box-Muller; always consumes two uniforms so the
/// stream position stays deterministic.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
