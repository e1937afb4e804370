//! Named parameter storage and its checkpoint format, little-endian:
//!
//! ```text
//! "MIMP"  u32 count
//! per tensor: u32 name_len  utf8 name  u32 ndim  u32 dim * ndim  f32 value * numel
//! ```

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::Tensor;
use crate::error::{Error, Result};
use crate::util::ByteReader;

const MAGIC: [u8; 4] = *b"MIMP";

/// Tensors keyed by unique name, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTree {
    entries: IndexMap<String, Tensor>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn by_index(&self, i: usize) -> (&str, &Tensor) {
        let (k, v) = self.entries.get_index(i).expect("parameter index");
        (k, v)
    }

    pub fn by_index_mut(&mut self, i: usize) -> (&str, &mut Tensor) {
        let (k, v) = self.entries.get_index_mut(i).expect("parameter index");
        (k, v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteReader::new(&bytes, "parameter checkpoint");
        cur.magic(MAGIC)?;
        let count = cur.u32()? as usize;
        let mut tree = ParamTree::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_owned();
            let ndim = cur.u32()? as usize;
            let shape = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("shape overflow".into()))?;
            let data = cur.f32s(n)?.into_iter().map(f64::from).collect();
            tree.insert(name, Tensor::new(shape, data)?)?;
        }
        cur.finish()?;
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
