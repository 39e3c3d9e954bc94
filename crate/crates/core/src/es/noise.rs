//! Seed-addressed Gaussian noise.
//!
//! `derive_noise` is the contract that lets workers and coordinator agree on
//! a perturbation while exchanging only a 64-bit seed: both sides expand the
//! seed through the same SplitMix64 stream and Box–Muller transform, so the
//! vectors match bit for bit. Any change here is a wire-protocol break.

use crate::rng::SplitMix64;

/// Standard-normal vector of length `d`, a pure function of `seed`.
///
/// Draw order is pinned: the SplitMix64 stream yields uniforms in (0, 1]
/// (each raw `u ∈ [0,1)` is mapped through `1 - u`), consumed two at a time
/// by Box–Muller; both outputs of each pair are used in order, and an odd
/// `d` discards the final pair's second output.
pub fn derive_noise(seed: u64, d: usize) -> Vec<f64> {
    assert!(d >= 1, "noise dimension must be >= 1");
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(d);
    while out.len() < d {
        let u1 = rng.next_uniform_open();
        let u2 = rng.next_uniform_open();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        out.push(radius * angle.cos());
        if out.len() < d {
            out.push(radius * angle.sin());
        }
    }
    out
}
