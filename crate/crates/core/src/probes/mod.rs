//! Linear and nonlinear probing classifiers and their multi-seed reports.

mod dataset;
mod linear;
mod metrics;
mod mlp;
mod suite;

pub use dataset::{check_speaker_overlap, LabeledSet, Standardizer};
pub use linear::{LinearHyper, LinearProbe};
pub use metrics::{macro_f1, majority_baseline_f1, mean_std, random_guess_f1};
pub use mlp::{MlpHyper, MlpProbe};
pub use suite::{run_probe_suite, ProbeConfig, ProbeKind, ProbeReport};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Stop when the epoch-average loss improves by less than `tol` (relative)
/// for `patience` consecutive epochs, or after `max_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Convergence {
    pub tol: f64,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            patience: 5,
            max_epochs: 1000,
        }
    }
}

impl Convergence {
    pub(crate) fn tracker(&self) -> ConvergenceTracker {
        ConvergenceTracker {
            tol: self.tol,
            patience: self.patience.max(1),
            best: f64::INFINITY,
            stale: 0,
        }
    }
}

pub(crate) struct ConvergenceTracker {
    tol: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl ConvergenceTracker {
    /// Records one epoch loss; returns `true` once training should stop.
    pub(crate) fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.tol * self.best.abs() {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.best = self.best.min(loss);
        self.stale >= self.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: f64,
}

/// Either probe family behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    Linear(LinearProbe),
    Mlp(MlpProbe),
}

impl Probe {
    pub fn train(kind: ProbeKind, train: &LabeledSet, seed: u64, config: &ProbeConfig) -> Result<Self> {
        Ok(match kind {
            ProbeKind::Linear => Probe::Linear(LinearProbe::train(train, seed, &config.linear)?),
            ProbeKind::Mlp => Probe::Mlp(MlpProbe::train(train, seed, &config.mlp)?),
        })
    }

    pub fn predict(&self, data: &LabeledSet) -> Vec<usize> {
        match self {
            Probe::Linear(p) => p.predict(data),
            Probe::Mlp(p) => p.predict(data),
        }
    }

    pub fn meta(&self) -> TrainingMeta {
        match self {
            Probe::Linear(p) => p.meta,
            Probe::Mlp(p) => p.meta,
        }
    }
}

/// Macro-F1 of a trained probe on a labeled test set.
pub fn evaluate_probe(probe: &Probe, test: &LabeledSet) -> Result<f64> {
    if test.is_empty() {
        return Err(crate::error::Error::Empty("probe test set"));
    }
    macro_f1(test.labels(), &probe.predict(test))
}
