//! Codebook checkpoint, little-endian:
//!
//! ```text
//! "RVQ1"  u32 dim  u32 layers
//! per layer: u32 K  f32 entry * K * dim
//! ```
//!
//! Only the entries are stored; EMA statistics restart from unit counts.

use std::io::{Read, Write};
use std::path::Path;

use super::{Codebook, RvqState};
use crate::error::Result;
use crate::util::ByteReader;

const MAGIC: [u8; 4] = *b"RVQ1";

impl RvqState {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for cb in &self.layers {
            buf.extend_from_slice(&(cb.size() as u32).to_le_bytes());
            for &v in cb.entries() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteReader::new(&bytes, "codebook checkpoint");
        cur.magic(MAGIC)?;
        let dim = cur.u32()? as usize;
        let layers = cur.u32()? as usize;
        let mut books = Vec::with_capacity(layers.min(1024));
        for _ in 0..layers {
            let k = cur.u32()? as usize;
            let entries = cur.f32s(k.saturating_mul(dim))?.into_iter().map(f64::from).collect();
            books.push(Codebook::from_entries(dim, entries)?);
        }
        cur.finish()?;
        RvqState::new(books)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded;
    use crate::Error;

    #[test]
    fn write_read_write_is_byte_identical() {
        let s = RvqState::random(4, &[8, 4, 4], 1.0, &mut seeded(9)).unwrap();
        let mut a = Vec::new();
        s.write_to(&mut a).unwrap();
        assert_eq!(&a[..4], b"RVQ1");
        assert_eq!(a.len(), 12 + 3 * 4 + (8 + 4 + 4) * 4 * 4);
        let back = RvqState::read_from(&a[..]).unwrap();
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(back.codebook_sizes(), vec![8, 4, 4]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let s = RvqState::random(2, &[4], 1.0, &mut seeded(1)).unwrap();
        let mut a = Vec::new();
        s.write_to(&mut a).unwrap();
        let mut bad = a.clone();
        bad[3] = b'2';
        assert!(matches!(RvqState::read_from(&bad[..]), Err(Error::BadMagic { .. })));
        assert!(RvqState::read_from(&a[..a.len() - 2]).is_err());
    }
}
