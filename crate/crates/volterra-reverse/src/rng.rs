//! Counter-based Gaussian draws for reproducible parallel Monte Carlo.
//!
//! Every draw is a pure function of `(seed, stream, index)`: the ChaCha12
//! block cipher is keyed by `seed`, the stream id selects an independent
//! stream, and the word position is set to `4 * index` so that each draw
//! owns a disjoint 4-word window (two u64 uniforms). The uniforms feed a
//! Box-Muller cosine transform; no state is shared between draws, so any
//! evaluation order (including parallel) reproduces bit-identical values.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Standard normal draw, pure in `(seed, stream, index)`.
pub fn normal_draw(seed: u64, stream: u64, index: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(4 * index as u128);
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_open(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Map a u64 to (0, 1]: 53 significant bits, never zero (ln stays finite).
fn unit_open(x: u64) -> f64 {
    (((x >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
}
