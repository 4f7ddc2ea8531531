//! Temporal reductions of `(T, H)` sequences.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::probes::{check_speaker_overlap, LabeledSet};
use crate::sequence::EmbeddingSequence;

pub const N_SNAPSHOTS: usize = 10;

/// Arithmetic mean over frames.
pub fn mean_pool(seq: &EmbeddingSequence) -> Vec<f64> {
    let mut acc = vec![0.0; seq.width()];
    for frame in seq.frames() {
        for (a, v) in acc.iter_mut().zip(frame) {
            *a += v;
        }
    }
    let t = seq.len() as f64;
    acc.iter_mut().for_each(|a| *a /= t);
    acc
}

/// `round(i·(T−1)/9)` for `i = 0..9`.
///
/// The denominator is odd, so `i·(T−1)/9` never lands exactly on a half and
/// the rounding mode cannot matter; integer arithmetic keeps it exact.
pub fn snapshot_indices(t: usize) -> Result<[usize; N_SNAPSHOTS]> {
    if t == 0 {
        return Err(Error::Empty("snapshot indices of a zero-length sequence"));
    }
    let span = (N_SNAPSHOTS - 1) as u64;
    let mut out = [0; N_SNAPSHOTS];
    for (i, slot) in out.iter_mut().enumerate() {
        let num = 2 * i as u64 * (t as u64 - 1) + span;
        *slot = (num / (2 * span)) as usize;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub positions: [usize; N_SNAPSHOTS],
    /// `10×H`, row `i` copied from frame `positions[i]`.
    pub vectors: Matrix,
}

pub fn extract_snapshots(seq: &EmbeddingSequence) -> Result<SnapshotSet> {
    let positions = snapshot_indices(seq.len())?;
    let h = seq.width();
    let mut data = Vec::with_capacity(N_SNAPSHOTS * h);
    for &p in &positions {
        data.extend_from_slice(seq.frame(p));
    }
    Ok(SnapshotSet {
        positions,
        vectors: Matrix::from_vec(N_SNAPSHOTS, h, data)?,
    })
}

/// Snapshot vectors of one utterance with its label and speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub speaker: String,
    pub label: usize,
    pub snapshots: SnapshotSet,
}

/// Training features at `train_pos` of each train record and test features
/// at `test_pos` of each test record; every snapshot carries its utterance's
/// label.
pub fn build_position_dataset(
    train: &[SnapshotRecord],
    test: &[SnapshotRecord],
    n_classes: usize,
    train_pos: usize,
    test_pos: usize,
) -> Result<(LabeledSet, LabeledSet)> {
    if train_pos >= N_SNAPSHOTS || test_pos >= N_SNAPSHOTS {
        return Err(Error::Config(format!(
            "snapshot positions must be in 0..{N_SNAPSHOTS}, got ({train_pos}, {test_pos})"
        )));
    }
    if train.len() < 2 || test.is_empty() {
        return Err(Error::InsufficientData(format!(
            "position dataset needs at least 2 train and 1 test utterances, got {} and {}",
            train.len(),
            test.len()
        )));
    }
    let gather = |records: &[SnapshotRecord], pos: usize| -> Result<LabeledSet> {
        let rows: Vec<&[f64]> = records.iter().map(|r| r.snapshots.vectors.row(pos)).collect();
        let labels = records.iter().map(|r| r.label).collect();
        LabeledSet::from_rows(&rows, labels, n_classes)?
            .with_speakers(records.iter().map(|r| r.speaker.clone()).collect())
    };
    let train_set = gather(train, train_pos)?;
    let test_set = gather(test, test_pos)?;
    check_speaker_overlap(&train_set, &test_set)?;
    Ok((train_set, test_set))
}
