use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{check_speaker_overlap, LabeledSet};
use super::metrics::{majority_baseline_f1, mean_std, random_guess_f1};
use super::{evaluate_probe, LinearHyper, MlpHyper, Probe};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Linear,
    Mlp,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Linear => "linear",
            ProbeKind::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub seeds: Vec<u64>,
    pub linear: LinearHyper,
    pub mlp: MlpHyper,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            linear: LinearHyper::default(),
            mlp: MlpHyper::default(),
        }
    }
}

/// Per-seed macro-F1 scores of one probe family on one train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: ProbeKind,
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Macro-F1 of always predicting the test majority class.
    pub chance_level: f64,
    /// Expected macro-F1 of uniform random guessing on the test labels.
    pub random_chance: f64,
}

impl ProbeReport {
    pub fn best(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Trains one probe per configured seed (in parallel) and scores each on `test`.
pub fn run_probe_suite(kind: ProbeKind, train: &LabeledSet, test: &LabeledSet, config: &ProbeConfig) -> Result<ProbeReport> {
    if config.seeds.is_empty() {
        return Err(Error::Config("probe suite needs at least one seed".into()));
    }
    if train.is_empty() {
        return Err(Error::Empty("probe training set"));
    }
    if test.is_empty() {
        return Err(Error::Empty("probe test set"));
    }
    if train.dim() != test.dim() {
        return Err(Error::shape("probe suite", train.dim(), test.dim()));
    }
    check_speaker_overlap(train, test)?;
    let scores = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let probe = Probe::train(kind, train, seed, config)?;
            evaluate_probe(&probe, test)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&scores);
    Ok(ProbeReport {
        kind,
        seeds: config.seeds.clone(),
        scores,
        mean,
        std,
        n_train: train.len(),
        n_test: test.len(),
        chance_level: majority_baseline_f1(test.labels())?,
        random_chance: random_guess_f1(test.labels())?,
    })
}
