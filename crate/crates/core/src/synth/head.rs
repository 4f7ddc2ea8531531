//! Linear language-modelling head and the downstream WER comparison.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ctc::{ctc_greedy_decode, edit_distance};
use crate::corpus::{chunked, Corpus, Split};
use crate::eraser::{one_hot, read_exact, Eraser};
use crate::error::{Error, FormatError, Result};
use crate::linalg::{Matrix, SymmetricEigen};
use crate::moments::MomentAccumulator;
use crate::scrubber::{propagate, LayerStack};
use crate::sequence::EmbeddingSequence;

const HEAD_MAGIC: &[u8; 8] = b"SCRBHED1";

/// Output symbols of a head. With a word delimiter, decoded symbols are
/// concatenated and split on it (character vocabularies); without one each
/// symbol is a word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadVocab {
    pub symbols: Vec<String>,
    pub blank: usize,
    pub word_delimiter: Option<String>,
}

impl HeadVocab {
    pub fn words(&self, ids: &[usize]) -> Vec<String> {
        match &self.word_delimiter {
            None => ids.iter().map(|&i| self.symbols[i].clone()).collect(),
            Some(d) => {
                let text: String = ids.iter().map(|&i| self.symbols[i].as_str()).collect();
                text.split(d.as_str())
                    .flat_map(str::split_whitespace)
                    .map(str::to_string)
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `V×H`
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub vocab: HeadVocab,
}

#[derive(Serialize, Deserialize)]
struct HeadHeader {
    version: u32,
    h: usize,
    v: usize,
    #[serde(flatten)]
    vocab: HeadVocab,
}

impl LinearHead {
    pub fn new(weights: Matrix, bias: Vec<f64>, vocab: HeadVocab) -> Result<Self> {
        if bias.len() != weights.rows() || vocab.symbols.len() != weights.rows() {
            return Err(Error::shape("head vocabulary", weights.rows(), vocab.symbols.len()));
        }
        if vocab.blank >= vocab.symbols.len() {
            return Err(Error::Config(format!("blank index {} outside vocabulary", vocab.blank)));
        }
        weights.ensure_finite("head weights")?;
        Ok(Self { weights, bias, vocab })
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Ridge regression from final-layer frames of the unmodified stack to
    /// one-hot frame targets, fit on the train split. The intercept is not
    /// penalized.
    pub fn fit_ridge(stack: &dyn LayerStack, corpus: &dyn Corpus, vocab: HeadVocab, ridge: f64) -> Result<Self> {
        let h = stack.hidden_dim();
        let v = vocab.symbols.len();
        let n = stack.n_layers();
        let mut acc = MomentAccumulator::new(h, v);
        for chunk in chunked(corpus.utterances()?, 64) {
            let chunk = chunk?;
            let parts = chunk
                .par_iter()
                .filter(|u| u.split == Split::Train)
                .map(|u| {
                    let alignment = u
                        .alignment
                        .as_ref()
                        .ok_or_else(|| Error::Missing(format!("utterance {} has no frame alignment", u.id)))?;
                    let state = propagate(stack, &[], u, n)?;
                    if alignment.len() != state.len() {
                        return Err(Error::LabelMisalignment(format!(
                            "utterance {}: {} targets for {} frames",
                            u.id,
                            alignment.len(),
                            state.len()
                        )));
                    }
                    let mut part = MomentAccumulator::new(h, v);
                    for (frame, &target) in state.frames().zip(alignment) {
                        part.update(frame, &one_hot(target, v)?)?;
                    }
                    Ok(part)
                })
                .collect::<Result<Vec<_>>>()?;
            for part in parts {
                acc = acc.merge(&part)?;
            }
        }
        if acc.count() < 2 {
            return Err(Error::InsufficientData("head fit needs aligned train frames".into()));
        }
        let eig = SymmetricEigen::new(&acc.covariance_xx())?;
        let inv = eig.map_values(|l| 1.0 / (l.max(0.0) + ridge));
        let weights = inv.matmul(&acc.covariance_xz()).transpose();
        let shift = weights.matvec(acc.mean_x());
        let bias = acc.mean_z().iter().zip(shift).map(|(m, s)| m - s).collect();
        Self::new(weights, bias, vocab)
    }

    pub fn logits(&self, seq: &EmbeddingSequence) -> Result<Matrix> {
        if seq.width() != self.hidden_dim() {
            return Err(Error::shape("head input width", self.hidden_dim(), seq.width()));
        }
        let v = self.bias.len();
        let mut out = Matrix::zeros(seq.len(), v);
        for (t, frame) in seq.frames().enumerate() {
            let row = self.weights.matvec(frame);
            for (o, (r, b)) in out.row_mut(t).iter_mut().zip(row.iter().zip(&self.bias)) {
                *o = r + b;
            }
        }
        Ok(out)
    }

    pub fn transcribe(&self, seq: &EmbeddingSequence) -> Result<Vec<String>> {
        let ids = ctc_greedy_decode(&self.logits(seq)?, self.vocab.blank)?;
        Ok(self.vocab.words(&ids))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = HeadHeader {
            version: 1,
            h: self.hidden_dim(),
            v: self.bias.len(),
            vocab: self.vocab.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(HEAD_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for x in self.weights.as_slice().iter().chain(&self.bias) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, "head magic")?;
        if &magic != HEAD_MAGIC {
            return Err(FormatError::BadMagic {
                expected: HEAD_MAGIC.to_vec(),
                found: magic.to_vec(),
            }
            .into());
        }
        let mut len = [0u8; 4];
        read_exact(r, &mut len, "head header length")?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        read_exact(r, &mut header, "head header")?;
        let header: HeadHeader = serde_json::from_slice(&header).map_err(|e| FormatError::Header(e.to_string()))?;
        if header.version != 1 {
            return Err(FormatError::UnsupportedVersion(header.version).into());
        }
        let mut values = vec![0.0; header.v * header.h + header.v];
        let mut buf = [0u8; 8];
        for x in values.iter_mut() {
            read_exact(r, &mut buf, "head payload")?;
            *x = f64::from_le_bytes(buf);
        }
        let bias = values.split_off(header.v * header.h);
        Self::new(Matrix::from_vec(header.v, header.h, values)?, bias, header.vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerComparison {
    pub wer_original: f64,
    pub wer_scrubbed: f64,
    pub n_utterances: usize,
    pub n_reference_words: usize,
}

impl WerComparison {
    pub fn delta(&self) -> f64 {
        self.wer_scrubbed - self.wer_original
    }
}

/// Corpus-level WER (total edits over total reference words) on the test
/// split, decoding final-layer states of the unmodified stack and of the
/// scrubbed cascade. An empty `erasers` slice means no scrubbing.
pub fn downstream_wer_delta(
    stack: &dyn LayerStack,
    corpus: &dyn Corpus,
    head: &LinearHead,
    erasers: &[Eraser],
) -> Result<WerComparison> {
    let n = stack.n_layers();
    if !erasers.is_empty() && erasers.len() != n {
        return Err(Error::Missing(format!("scrub run has {} erasers for {n} layers", erasers.len())));
    }
    let mut totals = (0usize, 0usize, 0usize, 0usize);
    for chunk in chunked(corpus.utterances()?, 64) {
        let chunk = chunk?;
        let parts = chunk
            .par_iter()
            .filter(|u| u.split == Split::Test)
            .map(|u| {
                if u.transcript.is_empty() {
                    return Err(Error::Missing(format!("utterance {} has no transcript", u.id)));
                }
                let original = head.transcribe(&propagate(stack, &[], u, n)?)?;
                let scrubbed = if erasers.is_empty() {
                    original.clone()
                } else {
                    head.transcribe(&propagate(stack, erasers, u, n)?)?
                };
                Ok((
                    edit_distance(&u.transcript, &original),
                    edit_distance(&u.transcript, &scrubbed),
                    u.transcript.len(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        for (eo, es, words) in parts {
            totals.0 += eo;
            totals.1 += es;
            totals.2 += words;
            totals.3 += 1;
        }
    }
    if totals.3 == 0 {
        return Err(Error::Empty("test utterances for wer"));
    }
    Ok(WerComparison {
        wer_original: totals.0 as f64 / totals.2 as f64,
        wer_scrubbed: totals.1 as f64 / totals.2 as f64,
        n_utterances: totals.3,
        n_reference_words: totals.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn character_vocab_splits_on_delimiter() {
        let vocab = HeadVocab {
            symbols: ["<pad>", "|", "A", "B"].map(String::from).to_vec(),
            blank: 0,
            word_delimiter: Some("|".into()),
        };
        assert_eq!(vocab.words(&[2, 3, 1, 3, 1]), vec!["AB", "B"]);
    }

    #[test]
    fn head_file_round_trip() {
        let vocab = crate::synth::synth_vocab(2);
        let head = LinearHead::new(
            Matrix::from_rows(&[[1.0, 0.0], [0.5, -2.0], [0.0, 3.0]]).unwrap(),
            vec![0.1, 0.2, 0.3],
            vocab,
        )
        .unwrap();
        let mut buf = Vec::new();
        head.write_to(&mut buf).unwrap();
        assert_eq!(LinearHead::read_from(&mut buf.as_slice()).unwrap(), head);
        assert!(LinearHead::read_from(&mut &buf[..20]).is_err());
    }
}
