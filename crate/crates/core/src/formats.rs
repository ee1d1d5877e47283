//! Little-endian binary containers for matrices and labeled embeddings.
//!
//! ```text
//! matrix:     "WSM1" | rows u32 | cols u32 | rows*cols f64, row-major
//! embeddings: "WSE1" | space u8 (0 penultimate, 1 feature) | count u32 | dim u32
//!             | count * (class_id u32 | dim f64)
//! ```

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{EmbeddingSet, Space};

pub const MATRIX_MAGIC: &[u8; 4] = b"WSM1";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"WSE1";

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(12 + rows * cols * 8);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for r in 0..rows {
        for c in 0..cols {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + set.len() * (4 + 8 * set.dim()));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.push(match set.space() {
        Space::Penultimate => 0,
        Space::Feature => 1,
    });
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    for (class_id, v) in set.records() {
        out.extend_from_slice(&class_id.to_le_bytes());
        for x in v.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset: self.pos, message: message.into() })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.err(format!(
                "truncated {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            self.pos -= 4;
            return self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            ));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let start = self.pos;
        let b = self.take(8, what)?;
        let x = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        if !x.is_finite() {
            return Err(Error::Parse { offset: start, message: format!("non-finite {what}") });
        }
        Ok(x)
    }

    fn expect_len(&self, needed: u64, what: &str) -> Result<()> {
        let remaining = (self.bytes.len() - self.pos) as u64;
        if remaining < needed {
            return self.err(format!("truncated {what}: header promises {needed} bytes, {remaining} remain"));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return self.err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let mut cur = Cursor::new(bytes);
    cur.magic(MATRIX_MAGIC)?;
    let rows = cur.u32("row count")? as usize;
    let cols = cur.u32("column count")? as usize;
    if rows == 0 || cols == 0 {
        return cur.err(format!("empty matrix shape {rows}x{cols}"));
    }
    cur.expect_len(rows as u64 * cols as u64 * 8, "matrix payload")?;
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = cur.f64("matrix entry")?;
        }
    }
    cur.finish()?;
    Ok(m)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut cur = Cursor::new(bytes);
    cur.magic(EMBEDDING_MAGIC)?;
    let space = match cur.u8("space flag")? {
        0 => Space::Penultimate,
        1 => Space::Feature,
        other => {
            cur.pos -= 1;
            return cur.err(format!("space flag {other} is neither 0 nor 1"));
        }
    };
    let count = cur.u32("record count")? as usize;
    let dim = cur.u32("dimension")? as usize;
    if dim == 0 {
        return cur.err("zero embedding dimension");
    }
    cur.expect_len(count as u64 * (4 + 8 * dim as u64), "embedding records")?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = cur.u32("class id")?;
        let mut v = Vector::zeros(dim);
        for x in v.iter_mut() {
            *x = cur.f64("embedding entry")?;
        }
        records.push((class_id, v));
    }
    cur.finish()?;
    EmbeddingSet::new(space, dim, records)
}
