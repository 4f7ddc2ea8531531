//! Closed-form least-squares concept erasure.
//!
//! Fitting produces the affine map
//!
//! ```text
//! erase(x) = x - A (x - μ),    A = W⁺ P W,
//! W = (Σ_XX^{1/2})⁺,  P = orthogonal projector onto colsp(W Σ_XZ)
//! ```
//!
//! which equalizes every class centroid with the global mean while moving
//! the data as little as possible in mean squared norm. Labels are one-hot
//! encoded; the accumulator centers them implicitly, so for two classes this
//! is the same as a single centered indicator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::linalg::{default_rank_rtol, projector_from_svd, Matrix, Svd, Whitening};
use crate::moments::MomentAccumulator;
use crate::probes::{run_probe_suite, LabeledSet, ProbeConfig, ProbeKind};
use crate::sequence::EmbeddingSequence;

/// Singular values of the whitened cross-covariance below this fraction of
/// `sqrt(tr Σ_ZZ)` are treated as zero. Whitened cross-covariances are
/// bounded by that scale, so this is a scale-free cutoff; without it,
/// round-off in already-erased data would define a spurious direction.
pub const DEFAULT_CROSS_RTOL: f64 = 1e-6;

const ERASER_MAGIC: &[u8; 8] = b"SCRBERS1";

/// Ordered class names with one-hot encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoding {
    classes: Vec<String>,
}

impl LabelEncoding {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.len() < 2 {
            return Err(Error::SingleClass(format!(
                "label encoding needs at least two classes, got {}",
                classes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::Config(format!("duplicate class name {c:?}")));
            }
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn one_hot(&self, class: usize) -> Result<Vec<f64>> {
        one_hot(class, self.k())
    }
}

pub(crate) fn one_hot(class: usize, k: usize) -> Result<Vec<f64>> {
    if class >= k {
        return Err(Error::LabelMisalignment(format!("class {class} outside 0..{k}")));
    }
    let mut z = vec![0.0; k];
    z[class] = 1.0;
    Ok(z)
}

/// Tolerances used when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EraserTolerances {
    /// Relative eigenvalue cutoff for the whitening transform; `None` means
    /// `max(H, k) · ε`.
    pub rank_rtol: Option<f64>,
    pub cross_rtol: f64,
}

impl Default for EraserTolerances {
    fn default() -> Self {
        Self {
            rank_rtol: None,
            cross_rtol: DEFAULT_CROSS_RTOL,
        }
    }
}

impl EraserTolerances {
    pub fn with_rank_rtol(rank_rtol: f64) -> Self {
        Self {
            rank_rtol: Some(rank_rtol),
            ..Self::default()
        }
    }
}

/// A fitted eraser. Immutable; cheap to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Eraser {
    center: Vec<f64>,
    projection: Matrix,
    rank: usize,
    header: EraserHeader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EraserHeader {
    version: u32,
    h: usize,
    k: usize,
    classes: Vec<String>,
    rank: usize,
    rank_rtol: f64,
    cross_rtol: f64,
    n_samples: u64,
}

impl Eraser {
    /// Fits from streamed moments of `(x, one_hot(z))` pairs.
    pub fn fit(acc: &MomentAccumulator, tol: EraserTolerances) -> Result<Self> {
        if acc.count() < 2 {
            return Err(Error::InsufficientData(format!(
                "eraser needs at least 2 samples, got {}",
                acc.count()
            )));
        }
        let h = acc.x_dim();
        let k = acc.z_dim();
        let rank_rtol = tol.rank_rtol.unwrap_or_else(|| default_rank_rtol(h, k));

        let whitening = Whitening::new(&acc.covariance_xx(), rank_rtol)?;
        let whitened_xz = whitening.whiten.matmul(&acc.covariance_xz());
        let svd = Svd::new(&whitened_xz)?;
        let z_scale = acc.covariance_zz().trace().max(0.0).sqrt();
        let threshold = (rank_rtol * svd.max_singular_value()).max(tol.cross_rtol * z_scale);
        let (p, rank) = projector_from_svd(&svd, threshold);

        let projection = if rank == 0 {
            Matrix::zeros(h, h)
        } else {
            whitening.unwhiten.matmul(&p).matmul(&whitening.whiten)
        };
        Ok(Self {
            center: acc.mean_x().to_vec(),
            projection,
            rank,
            header: EraserHeader {
                version: 1,
                h,
                k,
                classes: (0..k).map(|c| c.to_string()).collect(),
                rank,
                rank_rtol,
                cross_rtol: tol.cross_rtol,
                n_samples: acc.count(),
            },
        })
    }

    /// Convenience fit over labeled rows.
    pub fn fit_labeled(data: &LabeledSet, tol: EraserTolerances) -> Result<Self> {
        let mut acc = MomentAccumulator::new(data.dim(), data.n_classes());
        for i in 0..data.len() {
            acc.update(data.row(i), &one_hot(data.labels()[i], data.n_classes())?)?;
        }
        Self::fit(&acc, tol)
    }

    /// Attaches class names for serialization.
    pub fn with_classes(mut self, labels: &LabelEncoding) -> Result<Self> {
        if labels.k() != self.header.k {
            return Err(Error::shape("eraser classes", self.header.k, labels.k()));
        }
        self.header.classes = labels.classes().to_vec();
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// `A = W⁺ P W`.
    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    /// Rank of the whitened cross-covariance that was projected out.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn classes(&self) -> &[String] {
        &self.header.classes
    }

    pub fn n_samples(&self) -> u64 {
        self.header.n_samples
    }

    /// `x - A (x - μ)`.
    pub fn erase(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape("erase", self.dim(), x.len()));
        }
        let mut out = x.to_vec();
        self.erase_in_place(&mut out);
        Ok(out)
    }

    fn erase_in_place(&self, x: &mut [f64]) {
        if self.rank == 0 {
            return;
        }
        let centered: Vec<f64> = x.iter().zip(&self.center).map(|(a, m)| a - m).collect();
        for (i, xi) in x.iter_mut().enumerate() {
            let dot: f64 = self.projection.row(i).iter().zip(&centered).map(|(a, c)| a * c).sum();
            *xi -= dot;
        }
    }

    /// Applies `erase` to every frame independently.
    pub fn erase_sequence(&self, seq: &EmbeddingSequence) -> Result<EmbeddingSequence> {
        if seq.width() != self.dim() {
            return Err(Error::shape("erase_sequence", self.dim(), seq.width()));
        }
        let mut out = seq.clone();
        for frame in out.frames_mut() {
            self.erase_in_place(frame);
        }
        Ok(out)
    }

    pub fn erase_set(&self, data: &LabeledSet) -> Result<LabeledSet> {
        if data.dim() != self.dim() {
            return Err(Error::shape("erase_set", self.dim(), data.dim()));
        }
        let mut features = data.features().clone();
        for i in 0..features.rows() {
            self.erase_in_place(features.row_mut(i));
        }
        let erased = LabeledSet::new(features, data.labels().to_vec(), data.n_classes())?;
        match data.speakers() {
            Some(s) => erased.with_speakers(s.to_vec()),
            None => Ok(erased),
        }
    }

    /// Writes the binary eraser file (layout in `docs/format.md`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(std::io::Error::other)?;
        w.write_all(ERASER_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for v in self.center.iter().chain(self.projection.as_slice()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, "eraser magic")?;
        if &magic != ERASER_MAGIC {
            return Err(FormatError::BadMagic {
                expected: ERASER_MAGIC.to_vec(),
                found: magic.to_vec(),
            }
            .into());
        }
        let mut len = [0u8; 4];
        read_exact(r, &mut len, "eraser header length")?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        read_exact(r, &mut header, "eraser header")?;
        let header: EraserHeader =
            serde_json::from_slice(&header).map_err(|e| FormatError::Header(e.to_string()))?;
        if header.version != 1 {
            return Err(FormatError::UnsupportedVersion(header.version).into());
        }
        let h = header.h;
        let mut values = vec![0.0; h + h * h];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            read_exact(r, &mut buf, "eraser payload")?;
            *v = f64::from_le_bytes(buf);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("eraser payload".into()));
        }
        let projection = Matrix::from_vec(h, h, values.split_off(h))?;
        Ok(Self {
            center: values,
            projection,
            rank: header.rank,
            header,
        })
    }
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(FormatError::Truncated(what)),
        _ => Error::io("<stream>", e),
    })
}

/// Best macro-F1 over the configured seeds of a linear probe trained on the
/// erased rows of a stratified 2/3 split and scored on the remaining third.
/// Compare the result against chance.
pub fn guardedness_check(eraser: &Eraser, data: &LabeledSet, config: &ProbeConfig) -> Result<f64> {
    if data.distinct_classes() < 2 {
        return Err(Error::SingleClass("guardedness check needs two or more classes".into()));
    }
    let erased = eraser.erase_set(data)?;
    let (train, test) = erased.stratified_split(3);
    Ok(run_probe_suite(ProbeKind::Linear, &train, &test, config)?.best())
}
