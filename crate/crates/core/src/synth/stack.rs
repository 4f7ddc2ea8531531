use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Layout, SynthConfig};
use crate::corpus::Utterance;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::scrubber::LayerStack;
use crate::sequence::EmbeddingSequence;

/// Planted-phenomena stack.
///
/// Every layer rotates the content+nuisance block by a fixed random
/// rotation. Recovery layers also add `a·tanh(u1·u2/m²)` to the concept dim,
/// re-encoding the concept linearly from the XOR pair. The localization
/// layer writes the utterance mean of the concept dim into the localization
/// dim at the first and last frames only, zeroes the XOR pair and the
/// localization dim elsewhere, and overwrites the concept dim with a content
/// readout.
#[derive(Debug, Clone)]
pub struct SynthStack {
    config: SynthConfig,
    layout: Layout,
    rotations: Vec<Matrix>,
    name: String,
}

impl SynthStack {
    pub fn new(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_57ac);
        let rotations = (0..config.n_layers).map(|_| random_rotation(layout.block, &mut rng)).collect();
        Ok(Self {
            name: format!("synth-{}L", config.n_layers),
            config: config.clone(),
            layout,
            rotations,
        })
    }
}

/// Orthonormalized Gaussian matrix (modified Gram-Schmidt on columns).
fn random_rotation(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect()).collect();
    for j in 0..n {
        for i in 0..j {
            let (done, rest) = cols.split_at_mut(j);
            let dot: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (c, q) in rest[0].iter_mut().zip(&done[i]) {
                *c -= dot * q;
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut m = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

impl LayerStack for SynthStack {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn apply(&self, layer: usize, input: &EmbeddingSequence, _: &Utterance) -> Result<EmbeddingSequence> {
        let lay = self.layout;
        let rot = &self.rotations[layer];
        let mut out = input.clone();
        for frame in out.frames_mut() {
            let rotated = rot.matvec(&frame[..lay.block]);
            frame[..lay.block].copy_from_slice(&rotated);
        }

        let m = self.config.xor_amplitude();
        if self.config.recovery_layers.contains(&layer) && m > 0.0 {
            let gain = 0.5 * self.config.concept_strength;
            for frame in out.frames_mut() {
                frame[lay.concept] += gain * (frame[lay.xor.0] * frame[lay.xor.1] / (m * m)).tanh();
            }
        }

        if self.config.localization_layer == Some(layer) {
            let t = out.len();
            let readout = out.frames().map(|f| f[lay.concept]).sum::<f64>() / t as f64;
            for (i, frame) in out.frames_mut().enumerate() {
                frame[lay.localized] = if i == 0 || i + 1 == t { readout } else { 0.0 };
                frame[lay.xor.0] = 0.0;
                frame[lay.xor.1] = 0.0;
                frame[lay.concept] = frame[0];
            }
        }
        out.layer = layer + 1;
        Ok(out)
    }
}
