//! Packed bit sequences and the on-disk bit-file format.
//!
//! Bits are held LSB-first in `u64` words: bit `i` lives in word `i / 64`
//! at position `i % 64`. On disk the same order is kept at byte
//! granularity (bit `i` is bit `i % 8` of byte `i / 8`), and a JSON sidecar
//! named `<file>.json` records the exact bit count.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitStream {
    words: Vec<u64>,
    len: usize,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(64)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        let (w, b) = (self.len / 64, self.len % 64);
        if b == 0 {
            self.words.push(0);
        }
        self.words[w] |= (bit as u64) << b;
        self.len += 1;
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.words[i / 64] >> (i % 64)) & 1 == 1)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Backing words; bits beyond `len` are always zero.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Bits `[start, end)` as a new stream.
    pub fn slice(&self, start: usize, end: usize) -> BitStream {
        assert!(start <= end && end <= self.len);
        let n = end - start;
        let mut out = BitStream {
            words: (0..n.div_ceil(64))
                .map(|w| self.window64(start + 64 * w))
                .collect(),
            len: n,
        };
        out.clear_tail();
        out
    }

    pub fn extend_from(&mut self, other: &BitStream) {
        if self.len % 64 == 0 {
            self.words.truncate(self.len / 64);
            self.words.extend_from_slice(&other.words);
            self.len += other.len;
        } else {
            for b in other.iter() {
                self.push(b);
            }
        }
    }

    /// 64 bits starting at bit `pos`, zero-padded past the end.
    #[inline]
    pub(crate) fn window64(&self, pos: usize) -> u64 {
        let (w, b) = (pos / 64, pos % 64);
        let lo = self.words.get(w).copied().unwrap_or(0);
        if b == 0 {
            lo
        } else {
            let hi = self.words.get(w + 1).copied().unwrap_or(0);
            (lo >> b) | (hi << (64 - b))
        }
    }

    /// Every bit inverted.
    pub fn complement(&self) -> BitStream {
        let mut out = BitStream {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
        };
        out.clear_tail();
        out
    }

    /// Bits in reverse order.
    pub fn reversed(&self) -> BitStream {
        (0..self.len).rev().map(|i| self.get(i)).collect()
    }

    /// Bitwise XOR of two equal-length streams.
    pub fn xor(&self, other: &BitStream) -> Result<BitStream> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: other.len,
            });
        }
        Ok(BitStream {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
            len: self.len,
        })
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }

    /// Packed bytes, LSB-first within each byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        self.words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(n)
            .collect()
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<BitStream> {
        if len.div_ceil(8) != bytes.len() {
            return Err(Error::Format {
                what: "bit file",
                reason: format!("{} bytes cannot hold exactly {len} bits", bytes.len()),
            });
        }
        let mut words: Vec<u64> = bytes
            .chunks(8)
            .map(|c| {
                let mut buf = [0u8; 8];
                buf[..c.len()].copy_from_slice(c);
                u64::from_le_bytes(buf)
            })
            .collect();
        words.truncate(len.div_ceil(64));
        let mut out = BitStream { words, len };
        out.clear_tail();
        Ok(out)
    }
}

impl FromIterator<bool> for BitStream {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let iter = iter.into_iter();
        let mut out = BitStream::with_capacity(iter.size_hint().0);
        for b in iter {
            out.push(b);
        }
        out
    }
}

impl Extend<bool> for BitStream {
    fn extend<I: IntoIterator<Item = bool>>(&mut self, iter: I) {
        for b in iter {
            self.push(b);
        }
    }
}

/// Parses a string of `0`/`1` characters; `_` and whitespace are ignored.
impl FromStr for BitStream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Format {
                    what: "bit string",
                    reason: format!("unexpected character {other:?}"),
                }),
            })
            .collect()
    }
}

impl fmt::Display for BitStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitStream({self})")
        } else {
            write!(f, "BitStream(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

/// Sidecar header written next to every bit file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitFileHeader {
    pub format: String,
    pub bits: usize,
    pub trailing_bits: usize,
}

pub const BIT_FILE_FORMAT: &str = "packed-lsb-first";

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write_bit_file(path: &Path, bits: &BitStream) -> Result<()> {
    fs::write(path, bits.to_bytes())?;
    let header = BitFileHeader {
        format: BIT_FILE_FORMAT.to_string(),
        bits: bits.len(),
        trailing_bits: bits.len() % 8,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_bit_file(path: &Path) -> Result<BitStream> {
    let bytes = fs::read(path)?;
    let header: BitFileHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if header.format != BIT_FILE_FORMAT {
        return Err(Error::Format {
            what: "bit file header",
            reason: format!("unknown format {:?}", header.format),
        });
    }
    if header.trailing_bits != header.bits % 8 {
        return Err(Error::Format {
            what: "bit file header",
            reason: "trailing bit count disagrees with total".into(),
        });
    }
    BitStream::from_bytes(&bytes, header.bits)
}
