//! Portable random streams.
//!
//! Every run draws from ChaCha8 seeded through `seed_from_u64` and placed on
//! an explicit stream, so traces do not depend on platform or thread count.
//! Gaussian variates use the Box–Muller transform on `(0, 1]` uniforms.

use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on `(0, 1]`.
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Fills `out` with independent standard normal draws, two per Box–Muller pair.
pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_mut(2);
    for chunk in &mut chunks {
        let r = (-2.0 * open_unit(rng).ln()).sqrt();
        let theta = std::f64::consts::TAU * rng.random::<f64>();
        chunk[0] = r * theta.cos();
        if chunk.len() > 1 {
            chunk[1] = r * theta.sin();
        }
    }
}
