//! Corpora backed by a container plus manifest, and the stack that replays
//! their recorded layers.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::container::{ContainerHeader, ContainerReader, ContainerWriter, Record};
use super::manifest::{LabelManifest, ManifestRow};
use crate::corpus::{chunked, Corpus, Utterance, UtteranceIter};
use crate::eraser::LabelEncoding;
use crate::error::{Error, Result};
use crate::scrubber::{apply_checked, LayerStack};
use crate::sequence::EmbeddingSequence;

/// Streams utterances from a container, one utterance's records at a time.
#[derive(Debug, Clone)]
pub struct DumpCorpus {
    path: PathBuf,
    header: ContainerHeader,
    manifest: LabelManifest,
}

impl DumpCorpus {
    pub fn open(container: &Path, manifest: LabelManifest) -> Result<Self> {
        let header = ContainerReader::open(container)?.header().clone();
        if header.n_layers == 0 {
            return Err(Error::Missing(format!("container {} stores no layers", container.display())));
        }
        Ok(Self {
            path: container.to_path_buf(),
            header,
            manifest,
        })
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.header
    }

    pub fn manifest(&self) -> &LabelManifest {
        &self.manifest
    }

    /// Number of stored states per utterance.
    pub fn n_states(&self) -> usize {
        self.header.n_layers
    }

    fn assemble(&self, records: Vec<Record>) -> Result<Utterance> {
        let id = records[0].utterance_id.clone();
        let row = self
            .manifest
            .get(&id)
            .ok_or_else(|| Error::Missing(format!("utterance {id} is not in the manifest")))?;
        if records.len() != self.n_states() {
            return Err(Error::Missing(format!(
                "utterance {id} has {} of {} layer records",
                records.len(),
                self.n_states()
            )));
        }
        let mut states = Vec::with_capacity(records.len());
        for (j, r) in records.iter().enumerate() {
            if r.layer as usize != j {
                return Err(Error::Missing(format!("utterance {id}: expected layer {j}, found layer {}", r.layer)));
            }
            if r.frames != records[0].frames {
                return Err(Error::shape("dump frame count across layers", records[0].frames, r.frames));
            }
            states.push(r.to_sequence(self.header.hidden_dim)?);
        }
        Ok(utterance_from(row, self.manifest.label_of(row), states))
    }
}

fn utterance_from(row: &ManifestRow, label: usize, states: Vec<EmbeddingSequence>) -> Utterance {
    Utterance {
        id: row.utterance_id.clone(),
        speaker: row.speaker_id.clone(),
        label,
        split: row.split,
        transcript: row.words(),
        alignment: None,
        states,
    }
}

struct Grouped<R> {
    reader: ContainerReader<R>,
    pending: Option<Record>,
}

impl<R: std::io::Read> Iterator for Grouped<R> {
    type Item = Result<Vec<Record>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut group = match self.pending.take() {
            Some(r) => vec![r],
            None => match self.reader.next()? {
                Ok(r) => vec![r],
                Err(e) => return Some(Err(e)),
            },
        };
        loop {
            match self.reader.next() {
                None => return Some(Ok(group)),
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(r)) if r.utterance_id == group[0].utterance_id => group.push(r),
                Some(Ok(r)) => {
                    self.pending = Some(r);
                    return Some(Ok(group));
                }
            }
        }
    }
}

impl Corpus for DumpCorpus {
    fn hidden_dim(&self) -> usize {
        self.header.hidden_dim
    }

    fn labels(&self) -> &LabelEncoding {
        self.manifest.classes()
    }

    fn len(&self) -> usize {
        self.header.n_utterances
    }

    fn utterances(&self) -> Result<UtteranceIter<'_>> {
        let grouped = Grouped {
            reader: ContainerReader::open(&self.path)?,
            pending: None,
        };
        Ok(Box::new(grouped.map(move |g| g.and_then(|records| self.assemble(records)))))
    }
}

/// Replays recorded layers as a residual map:
/// `L_j(x) = dump_{j+1} + (x - dump_j)`.
///
/// On the recorded input this returns the recorded output exactly; an
/// intervention on the input is carried forward additively, which is the
/// first-order behavior of a residual block.
#[derive(Debug, Clone)]
pub struct ReplayStack {
    n_layers: usize,
    hidden_dim: usize,
    name: String,
}

impl ReplayStack {
    pub fn new(corpus: &DumpCorpus) -> Result<Self> {
        if corpus.n_states() < 2 {
            return Err(Error::Missing("replay needs at least two recorded states per utterance".into()));
        }
        Ok(Self {
            n_layers: corpus.n_states() - 1,
            hidden_dim: corpus.hidden_dim(),
            name: format!("replay-{}L", corpus.n_states() - 1),
        })
    }
}

impl LayerStack for ReplayStack {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_layers(&self) -> usize {
        self.n_layers
    }

    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn apply(&self, layer: usize, input: &EmbeddingSequence, u: &Utterance) -> Result<EmbeddingSequence> {
        let (before, after) = match (u.states.get(layer), u.states.get(layer + 1)) {
            (Some(b), Some(a)) => (b, a),
            _ => return Err(Error::Missing(format!("utterance {} has no recorded layer {}", u.id, layer + 1))),
        };
        if before.len() != input.len() || before.width() != input.width() {
            return Err(Error::shape("replay input", before.len(), input.len()));
        }
        let frames = after
            .as_slice()
            .iter()
            .zip(input.as_slice().iter().zip(before.as_slice()))
            .map(|(a, (x, b))| a + (x - b))
            .collect();
        input.with_frames(layer + 1, frames)
    }
}

/// Writes every state of the unmodified `stack` (input plus each layer's
/// output) for every utterance, together with a manifest. Returns the number
/// of utterances written.
pub fn write_stack_dump(
    stack: &dyn LayerStack,
    corpus: &dyn Corpus,
    container: &Path,
    manifest: &Path,
    metadata: serde_json::Value,
) -> Result<usize> {
    let n = stack.n_layers();
    let header = ContainerHeader::new(stack.hidden_dim(), n + 1, corpus.len(), metadata);
    let mut writer = ContainerWriter::create(container, header)?;
    let classes = corpus.labels();
    let mut rows = Vec::with_capacity(corpus.len());
    for chunk in chunked(corpus.utterances()?, 64) {
        let chunk = chunk?;
        let states = chunk
            .par_iter()
            .map(|u| {
                let mut all = vec![u.input().clone()];
                for j in 0..n {
                    let next = apply_checked(stack, j, &all[j], u)?;
                    all.push(next);
                }
                Ok(all)
            })
            .collect::<Result<Vec<_>>>()?;
        for (u, states) in chunk.iter().zip(states) {
            for (j, s) in states.iter().enumerate() {
                let mut s = s.clone();
                s.utterance_id = u.id.clone();
                s.layer = j;
                writer.write_sequence(&s)?;
            }
            rows.push(ManifestRow {
                utterance_id: u.id.clone(),
                speaker_id: u.speaker.clone(),
                gender: classes.classes()[u.label].clone(),
                split: u.split,
                transcript: u.transcript.join(" "),
            });
        }
    }
    writer.finish()?;
    let count = rows.len();
    LabelManifest::new(rows, Some(classes.clone()))?.write(manifest)?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MemoryCorpus, Split};
    use crate::scrubber::FnStack;

    fn corpus() -> MemoryCorpus {
        let items = (0..4)
            .map(|i| Utterance {
                id: format!("u{i}"),
                speaker: format!("s{i}"),
                label: i % 2,
                split: if i < 2 { Split::Train } else { Split::Test },
                transcript: vec!["a".into(), "b".into()],
                alignment: None,
                states: vec![EmbeddingSequence::from_frames(format!("u{i}"), 0, &[[i as f64, 0.5], [1.0, -2.0]]).unwrap()],
            })
            .collect();
        MemoryCorpus::new(LabelEncoding::new(["F", "M"]).unwrap(), items).unwrap()
    }

    fn doubling() -> impl LayerStack {
        FnStack::new("double", 2, 2, |layer, s: &EmbeddingSequence| {
            s.with_frames(layer + 1, s.as_slice().iter().map(|v| 2.0 * v + 1.0).collect())
        })
    }

    #[test]
    fn dump_then_replay_matches_the_stack() {
        let dir = tempfile::tempdir().unwrap();
        let (c, m) = (dir.path().join("d.scrb"), dir.path().join("m.csv"));
        let source = corpus();
        let stack = doubling();
        assert_eq!(write_stack_dump(&stack, &source, &c, &m, serde_json::json!({})).unwrap(), 4);
        let dump = DumpCorpus::open(&c, LabelManifest::read(&m, None).unwrap()).unwrap();
        let replay = ReplayStack::new(&dump).unwrap();
        assert_eq!(replay.n_layers(), 2);
        let items: Vec<Utterance> = dump.utterances().unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(items.len(), 4);
        assert_eq!(items[3].transcript, vec!["a", "b"]);
        for (u, orig) in items.iter().zip(source.items()) {
            let direct = stack.apply(0, orig.input(), orig).unwrap();
            let replayed = replay.apply(0, u.input(), u).unwrap();
            assert_eq!(replayed.as_slice(), direct.as_slice());
            // an intervention moves the output by the same amount
            let shifted = u.input().with_frames(0, u.input().as_slice().iter().map(|v| v + 0.25).collect()).unwrap();
            let out = replay.apply(0, &shifted, u).unwrap();
            for (a, b) in out.as_slice().iter().zip(replayed.as_slice()) {
                assert!((a - b - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn utterance_missing_from_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (c, m) = (dir.path().join("d.scrb"), dir.path().join("m.csv"));
        write_stack_dump(&doubling(), &corpus(), &c, &m, serde_json::json!({})).unwrap();
        let mut manifest = LabelManifest::read(&m, None).unwrap().rows().to_vec();
        manifest.remove(1);
        let dump = DumpCorpus::open(&c, LabelManifest::new(manifest, None).unwrap()).unwrap();
        let res: Result<Vec<Utterance>> = dump.utterances().unwrap().collect();
        assert!(matches!(res, Err(Error::Missing(_))));
    }
}
