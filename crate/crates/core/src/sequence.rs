use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One utterance's hidden states at one layer: `T` frames of width `H`,
/// stored row-major. Dumps arrive as `f32`; everything in memory is `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSequence {
    pub utterance_id: String,
    pub layer: usize,
    width: usize,
    frames: Vec<f64>,
}

impl EmbeddingSequence {
    pub fn new(utterance_id: impl Into<String>, layer: usize, width: usize, frames: Vec<f64>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if width == 0 {
            return Err(Error::shape("EmbeddingSequence", "width >= 1", 0));
        }
        if frames.is_empty() {
            return Err(Error::Empty("embedding sequence has no frames"));
        }
        if frames.len() % width != 0 {
            return Err(Error::shape(
                "EmbeddingSequence",
                format!("multiple of width {width}"),
                format!("{} values", frames.len()),
            ));
        }
        if let Some(pos) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "utterance {utterance_id:?}, frame {}, dim {}",
                pos / width,
                pos % width
            )));
        }
        Ok(Self {
            utterance_id,
            layer,
            width,
            frames,
        })
    }

    pub fn from_frames<R: AsRef<[f64]>>(utterance_id: impl Into<String>, layer: usize, rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::shape("EmbeddingSequence::from_frames", width, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(utterance_id, layer, width, data)
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame width `H`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.width..(t + 1) * self.width]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.frames[t * self.width..(t + 1) * self.width]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.frames.chunks_exact(self.width)
    }

    pub fn frames_mut(&mut self) -> impl Iterator<Item = &mut [f64]> + '_ {
        self.frames.chunks_exact_mut(self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.frames
    }

    pub fn into_data(self) -> Vec<f64> {
        self.frames
    }

    /// Same utterance, new layer tag and frame data of identical shape.
    pub fn with_frames(&self, layer: usize, frames: Vec<f64>) -> Result<Self> {
        if frames.len() != self.frames.len() {
            return Err(Error::shape("EmbeddingSequence::with_frames", self.frames.len(), frames.len()));
        }
        Self::new(self.utterance_id.clone(), layer, self.width, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(matches!(EmbeddingSequence::new("u", 0, 2, vec![]), Err(Error::Empty(_))));
        assert!(EmbeddingSequence::new("u", 0, 2, vec![1.0; 3]).is_err());
        let err = EmbeddingSequence::new("utt7", 0, 2, vec![0.0, 1.0, f64::NAN, 0.0]).unwrap_err();
        assert!(err.to_string().contains("utt7"), "{err}");
        let s = EmbeddingSequence::from_frames("u", 3, &[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.width(), 2);
        assert_eq!(s.frame(1), &[3.0, 4.0]);
    }
}
