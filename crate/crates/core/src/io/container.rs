//! Streaming reader and writer for embedding containers.
//!
//! ```text
//! "SCRB1"
//! u32 version | u32 H | u32 n_layers | u32 n_utterances
//! u32 metadata_len | metadata_len bytes of UTF-8 JSON
//! n_utterances · n_layers records:
//!     u32 id_len | id bytes | u32 layer | u32 T | T·H f32
//! ```
//!
//! Integers and floats are little-endian. Records of one utterance are
//! contiguous; `n_layers` counts the stored states per utterance.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, FormatError, Result};
use crate::sequence::EmbeddingSequence;

pub const CONTAINER_MAGIC: &[u8; 5] = b"SCRB1";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub version: u32,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_utterances: usize,
    pub metadata: serde_json::Value,
}

impl ContainerHeader {
    pub fn new(hidden_dim: usize, n_layers: usize, n_utterances: usize, metadata: serde_json::Value) -> Self {
        Self {
            version: CONTAINER_VERSION,
            hidden_dim,
            n_layers,
            n_utterances,
            metadata,
        }
    }

    pub fn n_records(&self) -> u64 {
        self.n_layers as u64 * self.n_utterances as u64
    }
}

/// One `(utterance, layer)` record exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub utterance_id: String,
    pub layer: u32,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl Record {
    pub fn to_sequence(&self, hidden_dim: usize) -> Result<EmbeddingSequence> {
        EmbeddingSequence::new(
            self.utterance_id.clone(),
            self.layer as usize,
            hidden_dim,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

pub struct ContainerWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: ContainerHeader,
    written: u64,
}

impl ContainerWriter {
    pub fn create(path: &Path, header: ContainerHeader) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let meta = serde_json::to_vec(&header.metadata)?;
        let res = (|| -> std::io::Result<()> {
            out.write_all(CONTAINER_MAGIC)?;
            for v in [header.version, header.hidden_dim as u32, header.n_layers as u32, header.n_utterances as u32] {
                out.write_all(&v.to_le_bytes())?;
            }
            out.write_all(&(meta.len() as u32).to_le_bytes())?;
            out.write_all(&meta)
        })();
        res.map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            header,
            written: 0,
        })
    }

    /// Writes one record; values are narrowed to `f32`.
    pub fn write_sequence(&mut self, seq: &EmbeddingSequence) -> Result<()> {
        if seq.width() != self.header.hidden_dim {
            return Err(Error::shape("container record width", self.header.hidden_dim, seq.width()));
        }
        let data: Vec<f32> = seq.as_slice().iter().map(|&v| v as f32).collect();
        self.write_raw(&seq.utterance_id, seq.layer as u32, &data)
    }

    pub fn write_raw(&mut self, utterance_id: &str, layer: u32, data: &[f32]) -> Result<()> {
        let h = self.header.hidden_dim;
        if h == 0 || data.len() % h != 0 || data.is_empty() {
            return Err(Error::shape("container record length", format!("positive multiple of {h}"), data.len()));
        }
        if layer as usize >= self.header.n_layers {
            return Err(Error::shape("container record layer", format!("< {}", self.header.n_layers), layer));
        }
        if self.written >= self.header.n_records() {
            return Err(FormatError::CountMismatch {
                declared: self.header.n_records(),
                found: self.written + 1,
            }
            .into());
        }
        let out = &mut self.out;
        let res = (|| -> std::io::Result<()> {
            out.write_all(&(utterance_id.len() as u32).to_le_bytes())?;
            out.write_all(utterance_id.as_bytes())?;
            out.write_all(&layer.to_le_bytes())?;
            out.write_all(&((data.len() / h) as u32).to_le_bytes())?;
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        })();
        res.map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    /// Flushes and checks that the declared record count was written.
    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        if self.written != self.header.n_records() {
            return Err(FormatError::CountMismatch {
                declared: self.header.n_records(),
                found: self.written,
            }
            .into());
        }
        Ok(())
    }
}

/// Yields records one at a time; only the current record is held.
pub struct ContainerReader<R> {
    input: R,
    header: ContainerHeader,
    read: u64,
    bytes: Vec<u8>,
    done: bool,
}

impl ContainerReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(file))
    }
}

fn fill(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Format(FormatError::Truncated(what)),
        _ => Error::io("<container>", e),
    })
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    fill(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

impl<R: Read> ContainerReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        fill(&mut input, &mut magic, "magic")?;
        if &magic != CONTAINER_MAGIC {
            return Err(FormatError::BadMagic {
                expected: CONTAINER_MAGIC.to_vec(),
                found: magic.to_vec(),
            }
            .into());
        }
        let version = read_u32(&mut input, "header")?;
        if version != CONTAINER_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let hidden_dim = read_u32(&mut input, "header")? as usize;
        let n_layers = read_u32(&mut input, "header")? as usize;
        let n_utterances = read_u32(&mut input, "header")? as usize;
        let meta_len = read_u32(&mut input, "metadata length")? as usize;
        let mut meta = vec![0u8; meta_len];
        fill(&mut input, &mut meta, "metadata")?;
        let metadata = serde_json::from_slice(&meta).map_err(|e| FormatError::Header(format!("metadata: {e}")))?;
        if hidden_dim == 0 {
            return Err(FormatError::Header("hidden dim is zero".into()).into());
        }
        Ok(Self {
            input,
            header: ContainerHeader {
                version,
                hidden_dim,
                n_layers,
                n_utterances,
                metadata,
            },
            read: 0,
            bytes: Vec::new(),
            done: false,
        })
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.header
    }

    /// Capacity of the internal record buffer, in bytes.
    pub fn buffer_capacity(&self) -> usize {
        self.bytes.capacity()
    }

    /// Next record, or `None` after the last declared record. Trailing data
    /// and early end of file are errors.
    pub fn next_record(&mut self) -> Result<Option<Record>> {
        if self.done {
            return Ok(None);
        }
        let declared = self.header.n_records();
        if self.read == declared {
            self.done = true;
            let mut probe = [0u8; 1];
            return match self.input.read(&mut probe) {
                Ok(0) => Ok(None),
                Ok(_) => Err(FormatError::TrailingBytes.into()),
                Err(e) => Err(Error::io("<container>", e)),
            };
        }
        let mut first = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.input.read(&mut first[got..]) {
                Ok(0) if got == 0 => {
                    self.done = true;
                    return Err(FormatError::CountMismatch {
                        declared,
                        found: self.read,
                    }
                    .into());
                }
                Ok(0) => return Err(FormatError::Truncated("record id length").into()),
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io("<container>", e)),
            }
        }
        let id_len = u32::from_le_bytes(first) as usize;
        let mut id = vec![0u8; id_len];
        fill(&mut self.input, &mut id, "record id")?;
        let utterance_id = String::from_utf8(id).map_err(|e| FormatError::Header(format!("record id: {e}")))?;
        let layer = read_u32(&mut self.input, "record layer")?;
        let frames = read_u32(&mut self.input, "record length")? as usize;
        if layer as usize >= self.header.n_layers {
            return Err(FormatError::Header(format!(
                "record for {utterance_id} has layer {layer} but only {} layers are declared",
                self.header.n_layers
            ))
            .into());
        }
        if frames == 0 {
            return Err(FormatError::Header(format!("record for {utterance_id} has no frames")).into());
        }
        let h = self.header.hidden_dim;
        let n_bytes = frames * h * 4;
        self.bytes.clear();
        self.bytes.resize(n_bytes, 0);
        fill(&mut self.input, &mut self.bytes, "record frames")?;
        let mut data = Vec::with_capacity(frames * h);
        for (i, chunk) in self.bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(FormatError::NonFiniteFrame {
                    utterance: utterance_id,
                    layer,
                    frame: i / h,
                    dim: i % h,
                }
                .into());
            }
            data.push(v);
        }
        // keep the buffer from holding on to an unusually long record
        if self.bytes.capacity() > 4 * n_bytes.max(1 << 16) {
            self.bytes = Vec::new();
        }
        self.read += 1;
        Ok(Some(Record {
            utterance_id,
            layer,
            frames,
            data,
        }))
    }
}

impl<R: Read> Iterator for ContainerReader<R> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}
