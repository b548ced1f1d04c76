//! Little-endian helpers shared by the binary artifact formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 8]) -> io::Result<()> {
    w.write_all(magic)
}

pub fn read_magic<R: Read>(r: &mut R, magic: &[u8; 8], what: &'static str) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(what, "truncated header"))?;
    if &buf != magic {
        return Err(Error::format(
            what,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_len<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} exceeds u32")))?;
    Ok(write_u32(w, v)?)
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f32_slice<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for &v in values {
        write_f32(w, v as f32)?;
    }
    Ok(())
}

/// Length-prefixed UTF-8 string.
pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_len(w, s.len())?;
    Ok(w.write_all(s.as_bytes())?)
}

pub struct Reader<R> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        Self { inner, what }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::format(self.what, "unexpected end of file"))
    }

    pub fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        read_magic(&mut self.inner, magic, self.what)
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n.checked_mul(4).ok_or_else(|| Error::format(self.what, "size overflow"))?];
        self.fill(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        let mut bytes = vec![0u8; n];
        self.fill(&mut bytes)?;
        String::from_utf8(bytes).map_err(|_| Error::format(self.what, "invalid UTF-8 string"))
    }

    /// Errors unless the stream is exhausted.
    pub fn finish(mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::format(self.what, "trailing bytes")),
        }
    }

    pub fn into_inner(self) -> R {
        self.inner
    }
}
