use crate::error::{Error, Result};

/// A single audio token slot. `None` is the EMPTY marker used by padding and
/// the delay pattern; it never aliases a real codebook index.
pub type Slot = Option<u16>;

/// M frames by R codebook indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioTokenMatrix {
    codebook_sizes: Vec<usize>,
    indices: Vec<u16>,
}

impl AudioTokenMatrix {
    pub fn new(codebook_sizes: Vec<usize>, indices: Vec<u16>) -> Result<Self> {
        let layers = codebook_sizes.len();
        if layers == 0 {
            return Err(Error::Config("token matrix needs at least one codebook".into()));
        }
        if indices.len() % layers != 0 {
            return Err(Error::Shape {
                op: "AudioTokenMatrix::new",
                detail: format!("{} indices is not a multiple of {} layers", indices.len(), layers),
            });
        }
        for (i, &idx) in indices.iter().enumerate() {
            let layer = i % layers;
            if idx as usize >= codebook_sizes[layer] {
                return Err(Error::IndexOutOfRange {
                    index: idx as usize,
                    layer,
                    size: codebook_sizes[layer],
                });
            }
        }
        Ok(Self { codebook_sizes, indices })
    }

    pub fn empty(codebook_sizes: Vec<usize>) -> Self {
        Self { codebook_sizes, indices: Vec::new() }
    }

    pub fn frames(&self) -> usize {
        self.indices.len() / self.layers()
    }

    pub fn layers(&self) -> usize {
        self.codebook_sizes.len()
    }

    pub fn codebook_sizes(&self) -> &[usize] {
        &self.codebook_sizes
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn row(&self, frame: usize) -> &[u16] {
        let r = self.layers();
        &self.indices[frame * r..(frame + 1) * r]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.indices.chunks(self.layers())
    }

    /// Keeps the first `layers` codebooks of every frame.
    pub fn truncate_layers(&self, layers: usize) -> Self {
        let layers = layers.min(self.layers());
        let indices = self.rows().flat_map(|row| row[..layers].iter().copied()).collect();
        Self { codebook_sizes: self.codebook_sizes[..layers].to_vec(), indices }
    }
}
