//! Desk-scale synthetic dataset mirroring the image benchmarks' causal
//! structure without any image payload: one feature block encodes the
//! pre-noise label, another encodes the spurious code, and optional
//! uniform-noise dimensions pad the input.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::Matrix;
use crate::seed;

use super::{apply_label_noise, assign_spurious_code, EnvSpec, SpuriousDataset};

/// Feature-block widths of the synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SemLayout {
    pub causal_dims: usize,
    pub spurious_dims: usize,
    pub noise_dims: usize,
}

impl Default for SemLayout {
    fn default() -> Self {
        Self {
            causal_dims: 5,
            spurious_dims: 5,
            noise_dims: 2,
        }
    }
}

impl SemLayout {
    pub fn input_dim(&self) -> usize {
        self.causal_dims + self.spurious_dims + self.noise_dims
    }
}

/// Encodes a bit as a jittered level: bit 0 lands in `[0, 0.5)`, bit 1 in
/// `[0.5, 1.0)`, keeping inputs inside `[0,1]` and linearly separable.
fn encode_bit(bit: u8, rng: &mut ChaCha8Rng) -> f64 {
    0.25 + 0.5 * bit as f64 + (rng.gen::<f64>() - 0.5) * 0.5
}

/// Generates one client's synthetic dataset.
///
/// Labels are balanced coin flips before noise. The causal block encodes
/// the pre-noise label (so it predicts `y` at rate `1 - delta` in every
/// environment); the spurious block encodes the code `z` (rate
/// `1 - p_spurious`, which collapses on the test client).
pub fn synth_sem_generate(spec: &EnvSpec, layout: SemLayout, seed: u64) -> Result<SpuriousDataset> {
    spec.validate()?;
    let n = spec.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, 0));

    let y_tilde: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<bool>())).collect();
    let labels = apply_label_noise(&y_tilde, spec.delta, 2, seed::derive(seed, 1));
    let codes = assign_spurious_code(&labels, spec.p_spurious, seed::derive(seed, 2));

    let dim = layout.input_dim();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        for _ in 0..layout.causal_dims {
            data.push(encode_bit(y_tilde[i], &mut rng));
        }
        for _ in 0..layout.spurious_dims {
            data.push(encode_bit(codes[i], &mut rng));
        }
        for _ in 0..layout.noise_dims {
            data.push(rng.gen::<f64>());
        }
    }

    let ds = SpuriousDataset {
        inputs: Matrix::from_vec(n, dim, data)?,
        labels,
        spurious: codes,
        classes: 2,
        provenance: *spec,
    };
    ds.validate()?;
    Ok(ds)
}
