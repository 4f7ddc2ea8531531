//! Full-precision spill files for the cached cascade.
//!
//! Records are `id_len u32 | id | layer u32 | T u32 | H u32 | T·H f64`, all
//! little-endian. 64-bit floats keep cached replays bit-identical to
//! recomputation.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, FormatError, Result};
use crate::eraser::read_exact;
use crate::sequence::EmbeddingSequence;

pub(crate) struct CacheWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CacheWriter {
    pub(crate) fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub(crate) fn write(&mut self, seq: &EmbeddingSequence) -> Result<()> {
        write_record(&mut self.out, seq).map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_record(out: &mut impl Write, seq: &EmbeddingSequence) -> std::io::Result<()> {
    let id = seq.utterance_id.as_bytes();
    out.write_all(&(id.len() as u32).to_le_bytes())?;
    out.write_all(id)?;
    out.write_all(&(seq.layer as u32).to_le_bytes())?;
    out.write_all(&(seq.len() as u32).to_le_bytes())?;
    out.write_all(&(seq.width() as u32).to_le_bytes())?;
    for v in seq.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) struct CacheReader {
    input: BufReader<File>,
}

impl CacheReader {
    pub(crate) fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            input: BufReader::new(file),
        })
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let mut b = [0u8; 4];
        read_exact(&mut self.input, &mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn next_record(&mut self) -> Result<Option<EmbeddingSequence>> {
        let mut b = [0u8; 4];
        match self.input.read_exact(&mut b) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(Error::io("<cache>", e)),
        }
        let mut id = vec![0u8; u32::from_le_bytes(b) as usize];
        read_exact(&mut self.input, &mut id, "cache id")?;
        let id = String::from_utf8(id).map_err(|e| FormatError::Header(e.to_string()))?;
        let layer = self.u32("cache layer")? as usize;
        let t = self.u32("cache length")? as usize;
        let h = self.u32("cache width")? as usize;
        let mut frames = vec![0.0; t * h];
        let mut buf = [0u8; 8];
        for v in frames.iter_mut() {
            read_exact(&mut self.input, &mut buf, "cache frames")?;
            *v = f64::from_le_bytes(buf);
        }
        EmbeddingSequence::new(id, layer, h, frames).map(Some)
    }
}
