//! Experiment drivers: mean probing, erasure tracking, snapshot and
//! cross-position probing, and the downstream WER comparison.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{chunked, Corpus, Roster, Split};
use crate::error::{Error, Result};
use crate::io::{DumpCorpus, LabelManifest, ReplayStack};
use crate::pooling::{build_position_dataset, extract_snapshots, SnapshotRecord, N_SNAPSHOTS};
use crate::probes::{run_probe_suite, ProbeConfig, ProbeKind, ProbeReport};
use crate::scrubber::{apply_checked, original_pooled, scrub, LayerStack, ScrubConfig, ScrubRun};
use crate::synth::{downstream_wer_delta, HeadVocab, LinearHead, SynthConfig, SynthCorpus, SynthStack, WerComparison};

/// Where utterances and layers come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synth(SynthConfig),
    Dump {
        container: PathBuf,
        manifest: PathBuf,
        #[serde(default)]
        head: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: Source,
    /// State indices to probe; `None` means all.
    pub layers: Option<Vec<usize>>,
    /// State index for cross-position probing; `None` means the last.
    pub cross_layer: Option<usize>,
    pub probes: ProbeConfig,
    pub scrub: ScrubConfig,
    /// Scrub before the WER comparison; when false both WERs come from the
    /// unmodified stack.
    pub scrub_enabled: bool,
    /// Ridge penalty when a head has to be fit.
    pub head_ridge: f64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: Source::Synth(SynthConfig::default()),
            layers: None,
            cross_layer: None,
            probes: ProbeConfig::default(),
            scrub: ScrubConfig::default(),
            scrub_enabled: true,
            head_ridge: 1e-3,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes.seeds.is_empty() {
            return Err(Error::Config("at least one probe seed is required".into()));
        }
        if self.head_ridge < 0.0 || !self.head_ridge.is_finite() {
            return Err(Error::Config("head ridge must be a non-negative number".into()));
        }
        if let Source::Dump { container, manifest, .. } = &self.source {
            for p in [container, manifest] {
                if !p.exists() {
                    return Err(Error::Missing(format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// A corpus, the stack that transforms it, and how to obtain a head.
pub struct Experiment {
    pub corpus: Box<dyn Corpus>,
    pub stack: Box<dyn LayerStack>,
    head_path: Option<PathBuf>,
    /// Output vocabulary for fitting a head from frame alignments.
    vocab: Option<HeadVocab>,
}

impl Experiment {
    pub fn new(corpus: Box<dyn Corpus>, stack: Box<dyn LayerStack>) -> Self {
        Self {
            corpus,
            stack,
            head_path: None,
            vocab: None,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        match &cfg.source {
            Source::Synth(s) => {
                let corpus = SynthCorpus::new(s.clone())?;
                let vocab = corpus.vocab().clone();
                Ok(Self {
                    corpus: Box::new(corpus),
                    stack: Box::new(SynthStack::new(s)?),
                    head_path: None,
                    vocab: Some(vocab),
                })
            }
            Source::Dump {
                container,
                manifest,
                head,
            } => {
                let corpus = DumpCorpus::open(container, LabelManifest::read(manifest, None)?)?;
                let stack = ReplayStack::new(&corpus)?;
                Ok(Self {
                    corpus: Box::new(corpus),
                    stack: Box::new(stack),
                    head_path: head.clone(),
                    vocab: None,
                })
            }
        }
    }

    /// State indices `0..=n_layers`.
    pub fn n_states(&self) -> usize {
        self.stack.n_layers() + 1
    }

    fn resolve_layers(&self, layers: Option<&[usize]>) -> Result<Vec<usize>> {
        let layers = layers.map(<[usize]>::to_vec).unwrap_or_else(|| (0..self.n_states()).collect());
        if let Some(&bad) = layers.iter().find(|&&l| l >= self.n_states()) {
            return Err(Error::Missing(format!("layer {bad} not available; states are 0..{}", self.n_states())));
        }
        if layers.is_empty() {
            return Err(Error::Config("no layers selected".into()));
        }
        Ok(layers)
    }

    /// Loads the head file, or fits a ridge head when the corpus carries
    /// frame alignments.
    pub fn head(&self, ridge: f64) -> Result<LinearHead> {
        if let Some(path) = &self.head_path {
            let head = LinearHead::load(path)?;
            if head.hidden_dim() != self.stack.hidden_dim() {
                return Err(Error::shape("head width", self.stack.hidden_dim(), head.hidden_dim()));
            }
            return Ok(head);
        }
        match &self.vocab {
            Some(vocab) => LinearHead::fit_ridge(self.stack.as_ref(), self.corpus.as_ref(), vocab.clone(), ridge),
            None => Err(Error::Missing("no head file given and no vocabulary to fit one".into())),
        }
    }
}

/// One cell of a result matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
}

impl From<&ProbeReport> for Cell {
    fn from(r: &ProbeReport) -> Self {
        Self {
            mean: r.mean,
            std: r.std,
            seeds: r.seeds.clone(),
            scores: r.scores.clone(),
        }
    }
}

/// Rectangular table of mean macro-F1 values with per-seed detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMatrix {
    pub name: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
    /// Expected macro-F1 of uniform guessing on the test labels.
    pub chance: f64,
}

impl ResultMatrix {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.cells[row][col].mean
    }

    pub fn row_values(&self, row: usize) -> Vec<f64> {
        self.cells[row].iter().map(|c| c.mean).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_labels.len(), self.col_labels.len())
    }

    /// Writes `<name>.csv` (means), `<name>_std.csv` and `<name>_seeds.csv`
    /// (long form: row, column, seed, f1). Returns the paths.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (suffix, pick) in [("", 0), ("_std", 1)] {
            let path = dir.join(format!("{}{suffix}.csv", self.name));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec![String::new()];
            header.extend(self.col_labels.iter().cloned());
            w.write_record(&header)?;
            for (label, row) in self.row_labels.iter().zip(&self.cells) {
                let mut rec = vec![label.clone()];
                rec.extend(row.iter().map(|c| if pick == 0 { c.mean } else { c.std }.to_string()));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        let path = dir.join(format!("{}_seeds.csv", self.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["row", "column", "seed", "f1"])?;
        for (label, row) in self.row_labels.iter().zip(&self.cells) {
            for (col, cell) in self.col_labels.iter().zip(row) {
                for (seed, f1) in cell.seeds.iter().zip(&cell.scores) {
                    w.write_record([label.clone(), col.clone(), seed.to_string(), f1.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
        Ok(paths)
    }
}

fn state_label(j: usize) -> String {
    format!("layer{j}")
}

fn position_labels() -> Vec<String> {
    (0..N_SNAPSHOTS).map(|p| format!("pos{p}")).collect()
}

/// Mean-pooled linear probe per state index.
pub fn run_mean_probing(exp: &Experiment, probes: &ProbeConfig, layers: Option<&[usize]>) -> Result<ResultMatrix> {
    let layers = exp.resolve_layers(layers)?;
    let (roster, pooled) = original_pooled(exp.stack.as_ref(), exp.corpus.as_ref(), 64)?;
    roster.check_usable()?;
    let k = exp.corpus.labels().k();
    let reports = layers
        .iter()
        .map(|&j| {
            let (train, test) = roster.datasets(&pooled[j], k)?;
            run_probe_suite(ProbeKind::Linear, &train, &test, probes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultMatrix {
        name: "mean_probe".into(),
        row_labels: layers.iter().map(|&j| state_label(j)).collect(),
        col_labels: vec!["linear".into()],
        chance: reports[0].random_chance,
        cells: reports.iter().map(|r| vec![Cell::from(r)]).collect(),
    })
}

/// Scrubs and returns the run with its four tracking curves.
pub fn run_tracking(exp: &Experiment, scrub_config: &ScrubConfig) -> Result<(ScrubRun, ResultMatrix)> {
    let run = scrub(exp.stack.as_ref(), exp.corpus.as_ref(), scrub_config)?;
    let matrix = tracking_matrix(&run);
    Ok((run, matrix))
}

pub fn tracking_matrix(run: &ScrubRun) -> ResultMatrix {
    ResultMatrix {
        name: "tracking_curves".into(),
        row_labels: run.tracking.iter().map(|t| state_label(t.layer)).collect(),
        col_labels: ["input_linear", "input_mlp", "output_linear", "baseline"].map(String::from).to_vec(),
        chance: run.tracking.first().map_or(0.5, |t| t.input_linear.random_chance),
        cells: run
            .tracking
            .iter()
            .map(|t| t.reports().iter().map(|(_, r)| Cell::from(*r)).collect())
            .collect(),
    }
}

/// Snapshot records of the unmodified stack at the requested states, split
/// into train and test.
pub fn collect_snapshots(
    stack: &dyn LayerStack,
    corpus: &dyn Corpus,
    layers: &[usize],
) -> Result<Vec<(Vec<SnapshotRecord>, Vec<SnapshotRecord>)>> {
    let deepest = layers.iter().copied().max().unwrap_or(0);
    let mut out: Vec<(Vec<SnapshotRecord>, Vec<SnapshotRecord>)> = vec![Default::default(); layers.len()];
    let mut roster = Roster::default();
    for chunk in chunked(corpus.utterances()?, 64) {
        let chunk = chunk?;
        let per_utt = chunk
            .par_iter()
            .map(|u| {
                let mut state = u.input().clone();
                let mut snaps = vec![None; layers.len()];
                for j in 0..=deepest {
                    if j > 0 {
                        state = apply_checked(stack, j - 1, &state, u)?;
                    }
                    for (slot, _) in layers.iter().enumerate().filter(|(_, &l)| l == j) {
                        snaps[slot] = Some(extract_snapshots(&state)?);
                    }
                }
                Ok(snaps)
            })
            .collect::<Result<Vec<_>>>()?;
        for (u, snaps) in chunk.iter().zip(per_utt) {
            roster.push(u);
            for (slot, s) in snaps.into_iter().enumerate() {
                let record = SnapshotRecord {
                    speaker: u.speaker.clone(),
                    label: u.label,
                    snapshots: s.expect("every requested layer visited"),
                };
                match u.split {
                    Split::Train => out[slot].0.push(record),
                    Split::Test => out[slot].1.push(record),
                }
            }
        }
    }
    roster.check_usable()?;
    Ok(out)
}

fn position_report(
    train: &[SnapshotRecord],
    test: &[SnapshotRecord],
    k: usize,
    p: usize,
    q: usize,
    probes: &ProbeConfig,
) -> Result<ProbeReport> {
    let (tr, te) = build_position_dataset(train, test, k, p, q)?;
    run_probe_suite(ProbeKind::Linear, &tr, &te, probes)
}

/// Linear probes trained and tested at the same snapshot position, per
/// state index.
pub fn run_snapshot_probing(exp: &Experiment, probes: &ProbeConfig, layers: Option<&[usize]>) -> Result<ResultMatrix> {
    let layers = exp.resolve_layers(layers)?;
    let k = exp.corpus.labels().k();
    let snaps = collect_snapshots(exp.stack.as_ref(), exp.corpus.as_ref(), &layers)?;
    let reports = snaps
        .iter()
        .map(|(train, test)| {
            (0..N_SNAPSHOTS)
                .into_par_iter()
                .map(|p| position_report(train, test, k, p, p, probes))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultMatrix {
        name: "snapshot_probe".into(),
        row_labels: layers.iter().map(|&j| state_label(j)).collect(),
        col_labels: position_labels(),
        chance: reports[0][0].random_chance,
        cells: reports.iter().map(|row| row.iter().map(Cell::from).collect()).collect(),
    })
}

/// Cell `(p, q)`: probe trained at position `p`, tested at position `q`.
pub fn run_cross_position(exp: &Experiment, probes: &ProbeConfig, layer: Option<usize>) -> Result<ResultMatrix> {
    let layer = layer.unwrap_or(exp.n_states() - 1);
    let layers = exp.resolve_layers(Some(&[layer]))?;
    let k = exp.corpus.labels().k();
    let snaps = collect_snapshots(exp.stack.as_ref(), exp.corpus.as_ref(), &layers)?;
    let (train, test) = &snaps[0];
    let cells = (0..N_SNAPSHOTS * N_SNAPSHOTS)
        .into_par_iter()
        .map(|i| position_report(train, test, k, i / N_SNAPSHOTS, i % N_SNAPSHOTS, probes))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultMatrix {
        name: format!("cross_position_{}", state_label(layer)),
        row_labels: (0..N_SNAPSHOTS).map(|p| format!("train_pos{p}")).collect(),
        col_labels: (0..N_SNAPSHOTS).map(|p| format!("test_pos{p}")).collect(),
        chance: cells[0].random_chance,
        cells: cells.chunks(N_SNAPSHOTS).map(|row| row.iter().map(Cell::from).collect()).collect(),
    })
}

/// Published WERs (percent) of two large speech models before and after
/// scrubbing, kept for side-by-side display only.
pub const REFERENCE_WER: [(&str, &str, f64, f64); 2] = [
    ("TIMIT", "wav2vec2-large-960h", 23.96, 24.18),
    ("LibriSpeech", "hubert-large-ls960-ft", 2.07, 2.90),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerTable {
    pub corpus: String,
    pub comparison: WerComparison,
    pub reference: Vec<(String, String, f64, f64)>,
}

/// WER through the head on original and scrubbed final states. `erasers`
/// empty means no scrubbing, and both numbers coincide.
pub fn run_wer_comparison(exp: &Experiment, head: &LinearHead, erasers: &[crate::eraser::Eraser]) -> Result<WerTable> {
    let comparison = downstream_wer_delta(exp.stack.as_ref(), exp.corpus.as_ref(), head, erasers)?;
    Ok(WerTable {
        corpus: exp.stack.name().to_string(),
        comparison,
        reference: REFERENCE_WER
            .iter()
            .map(|(d, m, a, b)| (d.to_string(), m.to_string(), *a, *b))
            .collect(),
    })
}

/// Records every file an experiment produced and writes `manifest.json`.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub experiment: String,
    pub files: Vec<PathBuf>,
}

impl OutputManifest {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.files.extend(paths);
    }

    pub fn write_json<T: Serialize>(&mut self, dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(&path, e))?;
        self.files.push(path.clone());
        Ok(path)
    }

    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        self.files.push(path.clone());
        fs::write(&path, serde_json::to_vec_pretty(&self)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
