//! Token file layout, all integers little-endian:
//!
//! ```text
//! "MIMT"  u8 version=1  u16 frame_rate_num  u16 frame_rate_den
//! u8 layers  u8 group  u16 codebook_size * layers
//! u32 frames  u16 index * frames * layers   (row-major, 0xFFFF = EMPTY)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rvq::{AudioTokenMatrix, Slot};
use crate::util::ByteReader;

const MAGIC: [u8; 4] = *b"MIMT";
const VERSION: u8 = 1;
const EMPTY: u16 = 0xFFFF;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFile {
    pub frame_rate: (u16, u16),
    pub group: u8,
    pub codebook_sizes: Vec<u16>,
    /// `frames * codebook_sizes.len()` slots, row-major.
    pub slots: Vec<Slot>,
}

impl TokenFile {
    pub fn from_matrix(tokens: &AudioTokenMatrix, group: usize) -> Result<Self> {
        let codebook_sizes = tokens
            .codebook_sizes()
            .iter()
            .map(|&k| u16::try_from(k).map_err(|_| Error::Format(format!("codebook size {k} does not fit in u16"))))
            .collect::<Result<Vec<_>>>()?;
        let group = u8::try_from(group).map_err(|_| Error::Format(format!("group {group} does not fit in u8")))?;
        Ok(Self {
            frame_rate: (25, 1),
            group,
            codebook_sizes,
            slots: tokens.indices().iter().map(|&i| Some(i)).collect(),
        })
    }

    pub fn layers(&self) -> usize {
        self.codebook_sizes.len()
    }

    pub fn frames(&self) -> usize {
        if self.codebook_sizes.is_empty() {
            0
        } else {
            self.slots.len() / self.layers()
        }
    }

    /// Fails if any slot is EMPTY.
    pub fn to_matrix(&self) -> Result<AudioTokenMatrix> {
        let indices = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Format(format!("EMPTY slot at frame {}", i / self.layers()))))
            .collect::<Result<Vec<_>>>()?;
        AudioTokenMatrix::new(self.codebook_sizes.iter().map(|&k| k as usize).collect(), indices)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let layers = u8::try_from(self.layers()).map_err(|_| Error::Format("too many codebooks".into()))?;
        if self.slots.len() % self.layers().max(1) != 0 {
            return Err(Error::Format("slot count is not a multiple of the codebook count".into()));
        }
        let frames = u32::try_from(self.frames()).map_err(|_| Error::Format("too many frames".into()))?;
        let mut buf = Vec::with_capacity(16 + 2 * self.layers() + 2 * self.slots.len());
        buf.extend_from_slice(&MAGIC);
        buf.push(VERSION);
        buf.extend_from_slice(&self.frame_rate.0.to_le_bytes());
        buf.extend_from_slice(&self.frame_rate.1.to_le_bytes());
        buf.push(layers);
        buf.push(self.group);
        for k in &self.codebook_sizes {
            buf.extend_from_slice(&k.to_le_bytes());
        }
        buf.extend_from_slice(&frames.to_le_bytes());
        for s in &self.slots {
            buf.extend_from_slice(&s.unwrap_or(EMPTY).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteReader::new(bytes, "token file");
        cur.magic(MAGIC)?;
        let version = cur.u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported token file version {version}")));
        }
        let frame_rate = (cur.u16()?, cur.u16()?);
        let layers = cur.u8()? as usize;
        let group = cur.u8()?;
        let codebook_sizes = (0..layers).map(|_| cur.u16()).collect::<Result<Vec<_>>>()?;
        let frames = cur.u32()? as usize;
        let mut slots = Vec::with_capacity((frames * layers).min(bytes.len() / 2));
        for i in 0..frames * layers {
            let v = cur.u16()?;
            if v == EMPTY {
                slots.push(None);
            } else if v >= codebook_sizes[i % layers] {
                return Err(Error::IndexOutOfRange {
                    index: v as usize,
                    layer: i % layers,
                    size: codebook_sizes[i % layers] as usize,
                });
            } else {
                slots.push(Some(v));
            }
        }
        cur.finish()?;
        Ok(Self { frame_rate, group, codebook_sizes, slots })
    }
}
