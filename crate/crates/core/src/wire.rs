//! Length-prefixed binary framing shared by envelopes, certificates, key files
//! and the repository blob.
//!
//! Every field is a big-endian `u32` length followed by that many bytes.
//! Decoders reject truncated input and trailing bytes.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated input: wanted {wanted} bytes at offset {offset}")]
    Truncated { offset: usize, wanted: usize },
    #[error("{0} trailing bytes after last field")]
    TrailingBytes(usize),
    #[error("field `{0}` is not valid UTF-8")]
    Utf8(&'static str),
    #[error("field `{field}` has invalid value")]
    Invalid { field: &'static str },
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn str(&mut self, field: &str) -> &mut Self {
        self.bytes(field.as_bytes())
    }

    /// A list is a count field followed by each element as its own field.
    pub fn str_list<'a>(&mut self, items: impl IntoIterator<Item = &'a str>) -> &mut Self {
        let items: Vec<&str> = items.into_iter().collect();
        self.u32(items.len() as u32);
        for item in items {
            self.str(item);
        }
        self
    }

    pub fn u32(&mut self, value: u32) -> &mut Self {
        self.bytes(&value.to_be_bytes())
    }

    pub fn u64(&mut self, value: u64) -> &mut Self {
        self.bytes(&value.to_be_bytes())
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let out = &self.data[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(WireError::Truncated {
                offset: self.pos,
                wanted: n,
            }),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let len = self.take(4)?;
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        self.take(len)
    }

    pub fn vec(&mut self) -> Result<Vec<u8>, WireError> {
        self.bytes().map(<[u8]>::to_vec)
    }

    pub fn string(&mut self, field: &'static str) -> Result<String, WireError> {
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::Utf8(field))
    }

    pub fn u32(&mut self, field: &'static str) -> Result<u32, WireError> {
        let raw = self.bytes()?;
        let arr: [u8; 4] = raw.try_into().map_err(|_| WireError::Invalid { field })?;
        Ok(u32::from_be_bytes(arr))
    }

    pub fn u64(&mut self, field: &'static str) -> Result<u64, WireError> {
        let raw = self.bytes()?;
        let arr: [u8; 8] = raw.try_into().map_err(|_| WireError::Invalid { field })?;
        Ok(u64::from_be_bytes(arr))
    }

    pub fn str_list(&mut self, field: &'static str) -> Result<Vec<String>, WireError> {
        let count = self.u32(field)? as usize;
        // Each element needs at least its 4-byte prefix.
        if count > self.remaining() / 4 {
            return Err(WireError::Invalid { field });
        }
        (0..count).map(|_| self.string(field)).collect()
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn finish(self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }
}
