//! Labeled utterance sources consumed by the scrubber and the harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eraser::LabelEncoding;
use crate::error::{Error, Result};
use crate::probes::LabeledSet;
use crate::sequence::EmbeddingSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One labeled utterance.
///
/// `states[0]` is the input to the first layer. Dump-backed corpora also
/// carry the recorded outputs of every layer in `states[1..]`; synthetic
/// corpora only provide the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub label: usize,
    pub split: Split,
    pub transcript: Vec<String>,
    /// Per-frame head-vocabulary targets, when known.
    pub alignment: Option<Vec<usize>>,
    pub states: Vec<EmbeddingSequence>,
}

impl Utterance {
    pub fn input(&self) -> &EmbeddingSequence {
        &self.states[0]
    }
}

pub type UtteranceIter<'a> = Box<dyn Iterator<Item = Result<Utterance>> + Send + 'a>;

/// A re-iterable stream of utterances in a fixed order.
pub trait Corpus: Sync {
    fn hidden_dim(&self) -> usize;
    fn labels(&self) -> &LabelEncoding;
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Each call starts a fresh pass from the first utterance.
    fn utterances(&self) -> Result<UtteranceIter<'_>>;
}

/// Small in-memory corpus, mainly for tests and toy runs.
#[derive(Debug, Clone)]
pub struct MemoryCorpus {
    labels: LabelEncoding,
    hidden_dim: usize,
    items: Vec<Utterance>,
}

impl MemoryCorpus {
    pub fn new(labels: LabelEncoding, items: Vec<Utterance>) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("memory corpus"))?;
        let hidden_dim = first.input().width();
        for u in &items {
            if u.states.is_empty() {
                return Err(Error::Missing(format!("utterance {} has no states", u.id)));
            }
            if let Some(s) = u.states.iter().find(|s| s.width() != hidden_dim) {
                return Err(Error::shape("memory corpus width", hidden_dim, s.width()));
            }
            if u.label >= labels.k() {
                return Err(Error::LabelMisalignment(format!(
                    "utterance {} has label {} but only {} classes",
                    u.id,
                    u.label,
                    labels.k()
                )));
            }
        }
        Ok(Self {
            labels,
            hidden_dim,
            items,
        })
    }

    pub fn items(&self) -> &[Utterance] {
        &self.items
    }
}

impl Corpus for MemoryCorpus {
    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn labels(&self) -> &LabelEncoding {
        &self.labels
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn utterances(&self) -> Result<UtteranceIter<'_>> {
        Ok(Box::new(self.items.iter().cloned().map(Ok)))
    }
}

/// Per-utterance metadata in corpus order, used to turn per-utterance
/// feature rows into train/test probe sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Roster {
    pub ids: Vec<String>,
    pub speakers: Vec<String>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl Roster {
    pub fn push(&mut self, u: &Utterance) {
        self.ids.push(u.id.clone());
        self.speakers.push(u.speaker.clone());
        self.labels.push(u.label);
        self.splits.push(u.split);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    /// Errors unless both splits are nonempty and the train split holds at
    /// least two classes.
    pub fn check_usable(&self) -> Result<()> {
        if self.count(Split::Train) == 0 || self.count(Split::Test) == 0 {
            return Err(Error::InsufficientData(format!(
                "corpus needs train and test utterances, got {} and {}",
                self.count(Split::Train),
                self.count(Split::Test)
            )));
        }
        let mut seen: Vec<usize> = self
            .labels
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == Split::Train)
            .map(|(&l, _)| l)
            .collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() < 2 {
            return Err(Error::SingleClass("train split holds a single class".into()));
        }
        Ok(())
    }

    /// Splits `rows` (one per utterance, corpus order) into train and test sets.
    pub fn datasets<R: AsRef<[f64]>>(&self, rows: &[R], n_classes: usize) -> Result<(LabeledSet, LabeledSet)> {
        if rows.len() != self.len() {
            return Err(Error::LabelMisalignment(format!(
                "{} feature rows for {} utterances",
                rows.len(),
                self.len()
            )));
        }
        let pick = |split: Split| -> Result<LabeledSet> {
            let idx: Vec<usize> = (0..self.len()).filter(|&i| self.splits[i] == split).collect();
            let r: Vec<&[f64]> = idx.iter().map(|&i| rows[i].as_ref()).collect();
            LabeledSet::from_rows(&r, idx.iter().map(|&i| self.labels[i]).collect(), n_classes)?
                .with_speakers(idx.iter().map(|&i| self.speakers[i].clone()).collect())
        };
        Ok((pick(Split::Train)?, pick(Split::Test)?))
    }
}

/// Pulls up to `size` items at a time so that chunks can be processed in
/// parallel without materializing the corpus.
pub(crate) fn chunked(iter: UtteranceIter<'_>, size: usize) -> impl Iterator<Item = Result<Vec<Utterance>>> + '_ {
    let mut iter = iter.peekable();
    std::iter::from_fn(move || {
        iter.peek()?;
        let mut chunk = Vec::with_capacity(size);
        for item in iter.by_ref().take(size) {
            match item {
                Ok(u) => chunk.push(u),
                Err(e) => return Some(Err(e)),
            }
        }
        Some(Ok(chunk))
    })
}
