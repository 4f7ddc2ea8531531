//! Synthetic corpora and layer stacks with planted ground truth.
//!
//! Frame layout for hidden width `H` and vocabulary size `V`:
//!
//! ```text
//! [0, V)          content: symbol s (1-based) lights dim s-1
//! [V, H-4)        nuisance noise
//! H-4             concept dim (orthogonal placement)
//! H-3, H-2        XOR pair: (s1·m, s2·m) with s1·s2 = class sign
//! H-1             localization dim, written only by the localization layer
//! ```
//!
//! Every dim also carries unit Gaussian noise. Content and nuisance form one
//! block that the stack rotates at every layer; the concept, XOR and
//! localization dims are left in place.

mod ctc;
mod head;
mod stack;

pub use ctc::{ctc_greedy_decode, edit_distance, wer};
pub use head::{downstream_wer_delta, HeadVocab, LinearHead, WerComparison};
pub use stack::SynthStack;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, Utterance, UtteranceIter};
use crate::eraser::LabelEncoding;
use crate::error::{Error, Result};
use crate::sequence::EmbeddingSequence;

/// Where the linear concept is written at the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptPlacement {
    /// Its own dim, orthogonal to the content block.
    Orthogonal,
    /// Along `(e_0 - e_1)/√2`, inside the content subspace, so erasing it
    /// confuses symbols 1 and 2.
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    /// Distance between the two class means along the concept direction,
    /// in units of the noise standard deviation.
    pub concept_strength: f64,
    pub recovery_layers: Vec<usize>,
    pub localization_layer: Option<usize>,
    /// Vocabulary size; also the width of the content subspace.
    pub linguistic_dim: usize,
    pub content_amplitude: f64,
    pub noise: f64,
    pub placement: ConceptPlacement,
    pub utterances_per_speaker: usize,
    /// Every `test_every`-th speaker pair goes to the test split.
    pub test_every: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_utterances: 1200,
            t_min: 20,
            t_max: 60,
            hidden_dim: 32,
            n_layers: 8,
            concept_strength: 5.0,
            recovery_layers: vec![1, 2, 3, 4],
            localization_layer: Some(5),
            linguistic_dim: 8,
            content_amplitude: 8.0,
            noise: 1.0,
            placement: ConceptPlacement::Orthogonal,
            utterances_per_speaker: 4,
            test_every: 3,
            seed: 0,
        }
    }
}

pub const CLASS_NAMES: [&str; 2] = ["female", "male"];

/// Ratio of the XOR pair amplitude to the concept strength.
const XOR_SCALE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub vocab: usize,
    pub block: usize,
    pub concept: usize,
    pub xor: (usize, usize),
    pub localized: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.linguistic_dim < 2 {
            return Err(Error::Config("synthetic vocabulary needs at least 2 symbols".into()));
        }
        if self.linguistic_dim + 4 > self.hidden_dim {
            return Err(Error::Config(format!(
                "hidden_dim {} too small for {} content dims plus 4 concept dims",
                self.hidden_dim, self.linguistic_dim
            )));
        }
        if self.t_min < 3 || self.t_min > self.t_max {
            return Err(Error::Config(format!("invalid length range {}..={}", self.t_min, self.t_max)));
        }
        if self.n_utterances == 0 || self.utterances_per_speaker == 0 || self.test_every < 2 {
            return Err(Error::Config(
                "need utterances, a positive per-speaker count and test_every ≥ 2".into(),
            ));
        }
        if let Some(&bad) = self.recovery_layers.iter().find(|&&j| j >= self.n_layers) {
            return Err(Error::Config(format!("recovery layer {bad} outside 0..{}", self.n_layers)));
        }
        if let Some(loc) = self.localization_layer {
            if loc >= self.n_layers {
                return Err(Error::Config(format!("localization layer {loc} outside 0..{}", self.n_layers)));
            }
            if self.recovery_layers.iter().any(|&j| j >= loc) {
                return Err(Error::Config("localization layer must follow every recovery layer".into()));
            }
        }
        if !(self.concept_strength.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config("concept strength and noise must be finite".into()));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        let h = self.hidden_dim;
        Layout {
            vocab: self.linguistic_dim,
            block: h - 4,
            concept: h - 4,
            xor: (h - 3, h - 2),
            localized: h - 1,
        }
    }

    pub(crate) fn xor_amplitude(&self) -> f64 {
        XOR_SCALE * self.concept_strength
    }

    pub fn speaker_of(&self, i: usize) -> usize {
        i / self.utterances_per_speaker
    }

    pub fn label_of(&self, i: usize) -> usize {
        self.speaker_of(i) % 2
    }

    pub fn split_of(&self, i: usize) -> Split {
        if (self.speaker_of(i) / 2) % self.test_every == self.test_every - 1 {
            Split::Test
        } else {
            Split::Train
        }
    }
}

/// Head vocabulary of the synthetic corpora: blank first, then the symbols.
pub fn synth_vocab(v: usize) -> HeadVocab {
    let mut symbols = vec!["<blank>".to_string()];
    symbols.extend((1..=v).map(|s| format!("w{s}")));
    HeadVocab {
        symbols,
        blank: 0,
        word_delimiter: None,
    }
}

/// Deterministic per-utterance generator; nothing is stored.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    config: SynthConfig,
    labels: LabelEncoding,
    vocab: HeadVocab,
}

impl SynthCorpus {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            labels: LabelEncoding::new(CLASS_NAMES)?,
            vocab: synth_vocab(config.linguistic_dim),
            config,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn vocab(&self) -> &HeadVocab {
        &self.vocab
    }

    pub fn utterance(&self, i: usize) -> Result<Utterance> {
        let cfg = &self.config;
        if i >= cfg.n_utterances {
            return Err(Error::Missing(format!("synthetic utterance {i} of {}", cfg.n_utterances)));
        }
        let lay = cfg.layout();
        let h = cfg.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);

        let t = rng.random_range(cfg.t_min..=cfg.t_max);
        let alignment = symbol_path(&mut rng, t, lay.vocab);
        let mut transcript = Vec::new();
        let mut last = 0;
        for &s in &alignment {
            if s != 0 && s != last {
                transcript.push(self.vocab.symbols[s].clone());
            }
            last = s;
        }

        let label = cfg.label_of(i);
        let sign = if label == 0 { 1.0 } else { -1.0 };
        let s1: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let half = 0.5 * cfg.concept_strength * sign;
        let m = cfg.xor_amplitude();
        let mut frames = vec![0.0; t * h];
        for (frame, &s) in frames.chunks_mut(h).zip(&alignment) {
            for v in frame.iter_mut() {
                *v = cfg.noise * rng.sample::<f64, _>(StandardNormal);
            }
            if s > 0 {
                frame[s - 1] += cfg.content_amplitude;
            }
            match cfg.placement {
                ConceptPlacement::Orthogonal => frame[lay.concept] += half,
                ConceptPlacement::Overlap => {
                    frame[0] += half * std::f64::consts::FRAC_1_SQRT_2;
                    frame[1] -= half * std::f64::consts::FRAC_1_SQRT_2;
                }
            }
            frame[lay.xor.0] += s1 * m;
            frame[lay.xor.1] += s1 * sign * m;
        }
        let id = format!("syn{:05}", i);
        Ok(Utterance {
            states: vec![EmbeddingSequence::new(id.clone(), 0, h, frames)?],
            id,
            speaker: format!("spk{:04}", cfg.speaker_of(i)),
            label,
            split: cfg.split_of(i),
            transcript,
            alignment: Some(alignment),
        })
    }
}

/// Blank first and last frame; runs of 2–3 frames per symbol separated by
/// 1–2 blanks; trailing slack is blank.
fn symbol_path(rng: &mut ChaCha8Rng, t: usize, vocab: usize) -> Vec<usize> {
    let mut path = vec![0];
    loop {
        let run = rng.random_range(2..=3);
        let gap = rng.random_range(1..=2);
        if path.len() + run + 1 > t {
            break;
        }
        let s = rng.random_range(1..=vocab);
        path.extend(std::iter::repeat_n(s, run));
        let gap = gap.min(t - path.len());
        path.extend(std::iter::repeat_n(0, gap));
    }
    path.resize(t, 0);
    path
}

impl Corpus for SynthCorpus {
    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn labels(&self) -> &LabelEncoding {
        &self.labels
    }

    fn len(&self) -> usize {
        self.config.n_utterances
    }

    fn utterances(&self) -> Result<UtteranceIter<'_>> {
        Ok(Box::new((0..self.config.n_utterances).map(move |i| self.utterance(i))))
    }
}
