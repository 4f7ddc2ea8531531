use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Feature rows with integer class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
    speakers: Option<Vec<String>>,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::LabelMisalignment(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelMisalignment(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        features.ensure_finite("probe features")?;
        Ok(Self {
            features,
            labels,
            n_classes,
            speakers: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if rows.is_empty() {
            return Self::new(Matrix::zeros(0, 0), labels, n_classes);
        }
        Self::new(Matrix::from_rows(rows)?, labels, n_classes)
    }

    /// Attaches per-row speaker ids used for split-leakage checks.
    pub fn with_speakers(mut self, speakers: Vec<String>) -> Result<Self> {
        if speakers.len() != self.labels.len() {
            return Err(Error::LabelMisalignment(format!(
                "{} speakers for {} rows",
                speakers.len(),
                self.labels.len()
            )));
        }
        self.speakers = Some(speakers);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn speakers(&self) -> Option<&[String]> {
        self.speakers.as_deref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn distinct_classes(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }

    /// Same rows with the labels replaced (e.g. shuffled for a chance control).
    pub fn relabeled(&self, labels: Vec<usize>) -> Result<Self> {
        let mut out = Self::new(self.features.clone(), labels, self.n_classes)?;
        out.speakers = self.speakers.clone();
        Ok(out)
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            features: Matrix::from_vec(idx.len(), self.dim(), data).expect("subset shape"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            speakers: self
                .speakers
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    /// Deterministic stratified split: within each class, every
    /// `test_every`-th row goes to the test side.
    pub fn stratified_split(&self, test_every: usize) -> (Self, Self) {
        let test_every = test_every.max(2);
        let mut seen = vec![0usize; self.n_classes];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &l) in self.labels.iter().enumerate() {
            if seen[l] % test_every == test_every - 1 {
                test.push(i);
            } else {
                train.push(i);
            }
            seen[l] += 1;
        }
        (self.subset(&train), self.subset(&test))
    }

    pub(crate) fn check_trainable(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("probe training set"));
        }
        if self.distinct_classes() < 2 {
            return Err(Error::SingleClass("probe training data has a single class".into()));
        }
        Ok(())
    }
}

/// Rejects a train/test pair sharing any speaker.
pub fn check_speaker_overlap(train: &LabeledSet, test: &LabeledSet) -> Result<()> {
    let (Some(a), Some(b)) = (train.speakers(), test.speakers()) else {
        return Ok(());
    };
    let train_speakers: HashSet<&str> = a.iter().map(String::as_str).collect();
    let mut shared: Vec<&str> = b
        .iter()
        .map(String::as_str)
        .filter(|s| train_speakers.contains(s))
        .collect();
    shared.sort_unstable();
    shared.dedup();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::DataLeak(format!(
            "{} speaker(s) in both splits, e.g. {:?}",
            shared.len(),
            &shared[..shared.len().min(5)]
        )))
    }
}

/// Per-feature affine standardization fit on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &LabeledSet) -> Self {
        let d = data.dim();
        let n = data.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for i in 0..data.len() {
            for (m, v) in mean.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..data.len() {
            for ((s, v), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                // constant columns are only centered
                if sd > 1e-12 * (1.0 + m.abs()) {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    pub fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.inv_std) {
            *o = (v - m) * s;
        }
    }

    pub fn transform(&self, data: &LabeledSet) -> Matrix {
        let mut out = Matrix::zeros(data.len(), data.dim());
        for i in 0..data.len() {
            self.transform_into(data.row(i), out.row_mut(i));
        }
        out
    }
}
