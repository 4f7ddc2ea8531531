//! Cascade concept scrubbing.
//!
//! An eraser `E_j` is fit on the frames entering layer `j` after every
//! earlier layer has only seen erased inputs:
//!
//! ```text
//! raw_0 = input,   raw_{j+1} = L_j(E_j(raw_j))
//! ```
//!
//! Nothing is held in memory beyond one chunk of utterances, the running
//! moments, and one mean-pooled vector per utterance and layer. Without a
//! cache every pass replays the stack from the input, so the total cost is
//! quadratic in depth. With `cache_dir` set, each pass spills its states at
//! full precision and the next pass resumes from them.

mod cache;
mod stack;

pub use stack::{apply_checked, FnStack, IdentityStack, LayerStack};

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{chunked, Corpus, Roster, Split, Utterance};
use crate::eraser::{one_hot, Eraser, EraserTolerances};
use crate::error::{Error, Result};
use crate::moments::MomentAccumulator;
use crate::pooling::mean_pool;
use crate::probes::{run_probe_suite, ProbeConfig, ProbeKind, ProbeReport};
use crate::sequence::EmbeddingSequence;
use cache::{CacheReader, CacheWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrubConfig {
    pub probes: ProbeConfig,
    pub tolerances: EraserTolerances,
    /// Utterances processed concurrently per step.
    pub chunk_size: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ScrubConfig {
    fn default() -> Self {
        Self {
            probes: ProbeConfig::default(),
            tolerances: EraserTolerances::default(),
            chunk_size: 64,
            cache_dir: None,
        }
    }
}

/// Probe reports for one layer, all on mean-pooled features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTracking {
    pub layer: usize,
    /// Linear probe on the erased input.
    pub input_linear: ProbeReport,
    /// Nonlinear probe on the erased input.
    pub input_mlp: ProbeReport,
    /// Linear probe on the layer's output when fed the erased input.
    pub output_linear: ProbeReport,
    /// Linear probe on the layer's output in the unmodified stack.
    pub baseline: ProbeReport,
}

impl LayerTracking {
    pub fn reports(&self) -> [(&'static str, &ProbeReport); 4] {
        [
            ("input_linear", &self.input_linear),
            ("input_mlp", &self.input_mlp),
            ("output_linear", &self.output_linear),
            ("baseline", &self.baseline),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScrubRun {
    pub stack_name: String,
    pub erasers: Vec<Eraser>,
    pub tracking: Vec<LayerTracking>,
    pub config: ScrubConfig,
}

pub fn eraser_file_name(layer: usize) -> String {
    format!("eraser_layer{layer:03}.bin")
}

impl ScrubRun {
    /// Writes per-layer eraser files, `tracking.csv` and `config.json`.
    /// Returns the written paths.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (j, e) in self.erasers.iter().enumerate() {
            let path = dir.join(eraser_file_name(j));
            e.save(&path)?;
            written.push(path);
        }
        let path = dir.join("tracking.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["layer", "probe_kind", "seed", "f1"])?;
        for t in &self.tracking {
            for (kind, report) in t.reports() {
                for (seed, f1) in report.seeds.iter().zip(&report.scores) {
                    w.write_record([t.layer.to_string(), kind.to_string(), seed.to_string(), f1.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let path = dir.join("config.json");
        let config = serde_json::json!({
            "stack": self.stack_name,
            "n_layers": self.erasers.len(),
            "scrub": self.config,
        });
        fs::write(&path, serde_json::to_vec_pretty(&config)?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }

    /// Loads the eraser files of a previous run.
    pub fn load_erasers(dir: &Path, n_layers: usize) -> Result<Vec<Eraser>> {
        (0..n_layers)
            .map(|j| {
                let path = dir.join(eraser_file_name(j));
                if !path.exists() {
                    return Err(Error::Missing(format!("scrub run has no eraser for layer {j} at {}", path.display())));
                }
                Eraser::load(&path)
            })
            .collect()
    }
}

/// Runs `stack` from the input through layer `upto - 1`, erasing before
/// each layer with the given erasers. `erasers` may be shorter than `upto`
/// for the original, unmodified stack (pass an empty slice).
pub fn propagate(stack: &dyn LayerStack, erasers: &[Eraser], utterance: &Utterance, upto: usize) -> Result<EmbeddingSequence> {
    let mut state = utterance.input().clone();
    for j in 0..upto {
        let input = match erasers.get(j) {
            Some(e) => e.erase_sequence(&state)?,
            None => state,
        };
        state = apply_checked(stack, j, &input, utterance)?;
    }
    Ok(state)
}

/// Pooled vectors of the unmodified stack for every state index `0..=n`.
pub fn original_pooled(stack: &dyn LayerStack, corpus: &dyn Corpus, chunk_size: usize) -> Result<(Roster, Vec<Vec<Vec<f64>>>)> {
    let n = stack.n_layers();
    let mut roster = Roster::default();
    let mut pooled = vec![Vec::with_capacity(corpus.len()); n + 1];
    for chunk in chunked(corpus.utterances()?, chunk_size.max(1)) {
        let chunk = chunk?;
        let rows = chunk
            .par_iter()
            .map(|u| {
                let mut state = u.input().clone();
                let mut rows = vec![mean_pool(&state)];
                for j in 0..n {
                    state = apply_checked(stack, j, &state, u)?;
                    rows.push(mean_pool(&state));
                }
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()?;
        for (u, r) in chunk.iter().zip(rows) {
            roster.push(u);
            for (layer, v) in pooled.iter_mut().zip(r) {
                layer.push(v);
            }
        }
    }
    Ok((roster, pooled))
}

fn sequence_hash(seq: &EmbeddingSequence) -> u64 {
    let mut h = DefaultHasher::new();
    seq.len().hash(&mut h);
    seq.width().hash(&mut h);
    for v in seq.as_slice() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

struct PassOutput {
    pooled: Vec<Vec<f64>>,
    hashes: Vec<u64>,
    /// Hash of the previous layer's state as recomputed in this pass.
    replayed: Vec<Option<u64>>,
    moments: MomentAccumulator,
}

struct Scrubber<'a> {
    stack: &'a dyn LayerStack,
    corpus: &'a dyn Corpus,
    config: &'a ScrubConfig,
    cache_key: Option<(PathBuf, u64)>,
}

impl Scrubber<'_> {
    fn cache_path(&self, layer: usize) -> Option<PathBuf> {
        self.cache_key
            .as_ref()
            .map(|(dir, key)| dir.join(format!("{}-{key:016x}-state{layer:03}.f64", self.stack.name())))
    }

    /// Computes the state entering layer `j` for every utterance.
    fn pass(&self, j: usize, erasers: &[Eraser], fit: bool) -> Result<PassOutput> {
        let h = self.stack.hidden_dim();
        let k = self.corpus.labels().k();
        let mut out = PassOutput {
            pooled: Vec::with_capacity(self.corpus.len()),
            hashes: Vec::with_capacity(self.corpus.len()),
            replayed: Vec::with_capacity(self.corpus.len()),
            moments: MomentAccumulator::new(h, k),
        };
        let mut reader = match (j, self.cache_path(j.wrapping_sub(1))) {
            (1.., Some(prev)) => Some(CacheReader::open(&prev)?),
            _ => None,
        };
        let mut writer = match self.cache_path(j) {
            Some(path) => Some(CacheWriter::create(&path)?),
            None => None,
        };
        let mut checked_cached_layer = false;

        for chunk in chunked(self.corpus.utterances()?, self.config.chunk_size.max(1)) {
            let chunk = chunk?;
            let cached: Vec<Option<EmbeddingSequence>> = match reader.as_mut() {
                Some(r) => chunk
                    .iter()
                    .map(|u| match r.next_record()? {
                        Some(s) if s.utterance_id == u.id => Ok(Some(s)),
                        Some(s) => Err(Error::LabelMisalignment(format!(
                            "cache holds {} where corpus has {}",
                            s.utterance_id, u.id
                        ))),
                        None => Err(Error::Missing(format!("cache ends before utterance {}", u.id))),
                    })
                    .collect::<Result<_>>()?,
                None => vec![None; chunk.len()],
            };
            let results = chunk
                .par_iter()
                .zip(cached)
                .map(|(u, prev)| {
                    let (state, replayed) = match prev {
                        Some(prev) => {
                            let input = erasers[j - 1].erase_sequence(&prev)?;
                            (apply_checked(self.stack, j - 1, &input, u)?, None)
                        }
                        None if j == 0 => (u.input().clone(), None),
                        None => {
                            let prev = propagate(self.stack, erasers, u, j - 1)?;
                            let hash = sequence_hash(&prev);
                            let input = erasers[j - 1].erase_sequence(&prev)?;
                            (apply_checked(self.stack, j - 1, &input, u)?, Some(hash))
                        }
                    };
                    let mut acc = MomentAccumulator::new(h, k);
                    if fit && u.split == Split::Train {
                        let z = one_hot(u.label, k)?;
                        for frame in state.frames() {
                            acc.update(frame, &z)?;
                        }
                    }
                    Ok((state, replayed, acc))
                })
                .collect::<Result<Vec<_>>>()?;

            for (u, (state, replayed, acc)) in chunk.iter().zip(results) {
                if state.width() != h {
                    return Err(Error::shape("scrub state width", h, state.width()));
                }
                if reader.is_some() && !checked_cached_layer {
                    // cached passes never replay, so spot-check one utterance
                    let prev = propagate(self.stack, erasers, u, j - 1)?;
                    let input = erasers[j - 1].erase_sequence(&prev)?;
                    let again = apply_checked(self.stack, j - 1, &input, u)?;
                    if sequence_hash(&again) != sequence_hash(&state) {
                        return Err(Error::NonDeterministic {
                            utterance: u.id.clone(),
                            layer: j - 1,
                        });
                    }
                    checked_cached_layer = true;
                }
                if let Some(w) = writer.as_mut() {
                    w.write(&state)?;
                }
                out.pooled.push(mean_pool(&state));
                out.hashes.push(sequence_hash(&state));
                out.replayed.push(replayed);
                out.moments = out.moments.merge(&acc)?;
            }
        }
        if let Some(w) = writer {
            w.finish()?;
        }
        if let Some(prev) = j.checked_sub(1).and_then(|p| self.cache_path(p)) {
            let _ = fs::remove_file(prev);
        }
        Ok(out)
    }
}

fn config_hash(stack: &dyn LayerStack, corpus: &dyn Corpus, config: &ScrubConfig) -> Result<u64> {
    let mut h = DefaultHasher::new();
    stack.name().hash(&mut h);
    stack.n_layers().hash(&mut h);
    corpus.len().hash(&mut h);
    // content fingerprint: the first utterance's id and input
    if let Some(first) = corpus.utterances()?.next() {
        let first = first?;
        first.id.hash(&mut h);
        first.input().as_slice().iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    serde_json::to_string(&config.tolerances)?.hash(&mut h);
    Ok(h.finish())
}

/// Fits one eraser per layer in cascade and tracks the concept with input,
/// output and baseline probes.
pub fn scrub(stack: &dyn LayerStack, corpus: &dyn Corpus, config: &ScrubConfig) -> Result<ScrubRun> {
    let n = stack.n_layers();
    if n == 0 {
        return Err(Error::Config("layer stack has no layers".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("scrub corpus"));
    }
    if corpus.hidden_dim() != stack.hidden_dim() {
        return Err(Error::shape("corpus width vs stack width", stack.hidden_dim(), corpus.hidden_dim()));
    }
    let k = corpus.labels().k();
    let (roster, baseline) = original_pooled(stack, corpus, config.chunk_size)?;
    roster.check_usable()?;

    let cache_key = match &config.cache_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some((dir.clone(), config_hash(stack, corpus, config)?))
        }
        None => None,
    };
    let scrubber = Scrubber {
        stack,
        corpus,
        config,
        cache_key,
    };

    let mut erasers: Vec<Eraser> = Vec::with_capacity(n);
    let mut tracking = Vec::with_capacity(n);
    let mut previous: Option<PassOutput> = None;
    for j in 0..=n {
        let pass = scrubber.pass(j, &erasers, j < n)?;
        if let Some(prev) = &previous {
            for (i, replayed) in pass.replayed.iter().enumerate() {
                if matches!(replayed, Some(h) if *h != prev.hashes[i]) {
                    return Err(Error::NonDeterministic {
                        utterance: roster.ids[i].clone(),
                        layer: j - 1,
                    });
                }
            }
            let e = &erasers[j - 1];
            let erased_input = prev.pooled.iter().map(|v| e.erase(v)).collect::<Result<Vec<_>>>()?;
            let probe = |rows: &[Vec<f64>], kind: ProbeKind| -> Result<ProbeReport> {
                let (train, test) = roster.datasets(rows, k)?;
                run_probe_suite(kind, &train, &test, &config.probes)
            };
            tracking.push(LayerTracking {
                layer: j - 1,
                input_linear: probe(&erased_input, ProbeKind::Linear)?,
                input_mlp: probe(&erased_input, ProbeKind::Mlp)?,
                output_linear: probe(&pass.pooled, ProbeKind::Linear)?,
                baseline: probe(&baseline[j], ProbeKind::Linear)?,
            });
        }
        if j < n {
            erasers.push(Eraser::fit(&pass.moments, config.tolerances)?.with_classes(corpus.labels())?);
        }
        previous = Some(pass);
    }
    if let Some(path) = scrubber.cache_path(n) {
        let _ = fs::remove_file(path);
    }
    Ok(ScrubRun {
        stack_name: stack.name().to_string(),
        erasers,
        tracking,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MemoryCorpus;
    use crate::eraser::LabelEncoding;

    fn tiny_corpus() -> MemoryCorpus {
        let items = (0..40)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { 1.0 } else { -1.0 };
                let frames: Vec<[f64; 3]> = (0..4)
                    .map(|t| [sign * 3.0 + 0.1 * t as f64, ((i * 7 + t) % 5) as f64, ((i * 3 + t) % 4) as f64])
                    .collect();
                Utterance {
                    id: format!("u{i}"),
                    speaker: format!("s{i}"),
                    label,
                    split: if i % 4 == 3 { Split::Test } else { Split::Train },
                    transcript: vec![],
                    alignment: None,
                    states: vec![EmbeddingSequence::from_frames(format!("u{i}"), 0, &frames).unwrap()],
                }
            })
            .collect();
        MemoryCorpus::new(LabelEncoding::new(["a", "b"]).unwrap(), items).unwrap()
    }

    fn fast_config() -> ScrubConfig {
        let mut c = ScrubConfig::default();
        c.probes.seeds = vec![0];
        c.probes.mlp.hidden = 8;
        c.probes.mlp.convergence.max_epochs = 20;
        c.chunk_size = 7;
        c
    }

    #[test]
    fn identity_stack_yields_one_eraser_per_layer() {
        let stack = IdentityStack {
            n_layers: 2,
            hidden_dim: 3,
        };
        let run = scrub(&stack, &tiny_corpus(), &fast_config()).unwrap();
        assert_eq!(run.erasers.len(), 2);
        assert_eq!(run.tracking.len(), 2);
        assert_eq!(run.erasers[0].rank(), 1);
        // the second layer only ever sees erased data
        assert_eq!(run.erasers[1].rank(), 0);
        assert!(run.tracking[0].baseline.best() > 0.9);
    }

    #[test]
    fn detects_nondeterminism() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = AtomicUsize::new(0);
        let stack = FnStack::new("flaky", 3, 3, |layer, seq: &EmbeddingSequence| {
            let bump = calls.fetch_add(1, Ordering::SeqCst) as f64 * 1e-3;
            let frames = seq.as_slice().iter().map(|v| v + bump).collect();
            seq.with_frames(layer + 1, frames)
        });
        let err = scrub(&stack, &tiny_corpus(), &fast_config()).unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }), "{err}");
    }

    #[test]
    fn cached_and_replayed_runs_agree() {
        let stack = FnStack::new("tanh", 3, 3, |layer, seq: &EmbeddingSequence| {
            let frames = seq.as_slice().iter().enumerate().map(|(i, v)| v + (v * (i % 3) as f64).tanh()).collect();
            seq.with_frames(layer + 1, frames)
        });
        let corpus = tiny_corpus();
        let plain = scrub(&stack, &corpus, &fast_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut cached_config = fast_config();
        cached_config.cache_dir = Some(dir.path().to_path_buf());
        let cached = scrub(&stack, &corpus, &cached_config).unwrap();
        assert_eq!(plain.erasers, cached.erasers);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn run_directory_round_trip() {
        let stack = IdentityStack {
            n_layers: 2,
            hidden_dim: 3,
        };
        let run = scrub(&stack, &tiny_corpus(), &fast_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = run.write_dir(dir.path()).unwrap();
        assert_eq!(written.len(), 4);
        let tracking = fs::read_to_string(dir.path().join("tracking.csv")).unwrap();
        assert_eq!(tracking.lines().count(), 1 + 2 * 4);
        let erasers = ScrubRun::load_erasers(dir.path(), 2).unwrap();
        assert_eq!(erasers, run.erasers);
        assert!(ScrubRun::load_erasers(dir.path(), 3).is_err());
    }
}
