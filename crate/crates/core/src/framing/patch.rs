use crate::error::{Error, Result};
use crate::rvq::{AudioTokenMatrix, Slot};

/// `group` consecutive frames of `layers` slots each. Frames past the end of
/// the source matrix are all-EMPTY and counted in `padding`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    layers: usize,
    slots: Vec<Slot>,
    padding: usize,
}

impl Patch {
    pub fn new(layers: usize, slots: Vec<Slot>) -> Result<Self> {
        if layers == 0 || slots.is_empty() || slots.len() % layers != 0 {
            return Err(Error::Shape {
                op: "Patch::new",
                detail: format!("{} slots for {} layers", slots.len(), layers),
            });
        }
        let padding = slots
            .chunks(layers)
            .rev()
            .take_while(|frame| frame.iter().all(Option::is_none))
            .count();
        Ok(Self { layers, slots, padding })
    }

    pub fn from_frames(frames: &[Vec<u16>]) -> Result<Self> {
        let layers = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != layers) {
            return Err(Error::Shape { op: "Patch::from_frames", detail: "ragged frames".into() });
        }
        Self::new(layers, frames.iter().flatten().map(|&i| Some(i)).collect())
    }

    pub fn group(&self) -> usize {
        self.slots.len() / self.layers
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frame(&self, i: usize) -> &[Slot] {
        &self.slots[i * self.layers..(i + 1) * self.layers]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Slot]> {
        self.slots.chunks(self.layers)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Trailing all-EMPTY frames.
    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn is_padded(&self) -> bool {
        self.padding > 0
    }

    pub fn non_empty_slots(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

pub fn patchify(tokens: &AudioTokenMatrix, group: usize) -> Result<Vec<Patch>> {
    if group == 0 {
        return Err(Error::Config("patch group size must be at least 1".into()));
    }
    let layers = tokens.layers();
    let frames = tokens.frames();
    let mut patches = Vec::with_capacity(frames.div_ceil(group));
    for start in (0..frames).step_by(group) {
        let mut slots = Vec::with_capacity(group * layers);
        for f in start..start + group {
            if f < frames {
                slots.extend(tokens.row(f).iter().map(|&i| Some(i)));
            } else {
                slots.extend(std::iter::repeat_n(None, layers));
            }
        }
        patches.push(Patch::new(layers, slots)?);
    }
    Ok(patches)
}

/// Concatenates patches and strips the trailing EMPTY frames added by
/// [`patchify`]. An EMPTY slot anywhere else is an error.
pub fn unpatchify(patches: &[Patch], codebook_sizes: &[usize]) -> Result<AudioTokenMatrix> {
    let Some(first) = patches.first() else {
        return Ok(AudioTokenMatrix::empty(codebook_sizes.to_vec()));
    };
    let (group, layers) = (first.group(), first.layers());
    if layers != codebook_sizes.len() {
        return Err(Error::DimensionMismatch { expected: codebook_sizes.len(), got: layers });
    }
    if let Some(bad) = patches.iter().find(|p| p.group() != group || p.layers() != layers) {
        return Err(Error::Shape {
            op: "unpatchify",
            detail: format!(
                "inconsistent patch shape {}x{} (expected {}x{})",
                bad.group(),
                bad.layers(),
                group,
                layers
            ),
        });
    }
    let mut frames: Vec<&[Slot]> = patches.iter().flat_map(Patch::frames).collect();
    while frames.last().is_some_and(|f| f.iter().all(Option::is_none)) {
        frames.pop();
    }
    let mut indices = Vec::with_capacity(frames.len() * layers);
    for (f, frame) in frames.iter().enumerate() {
        for (layer, slot) in frame.iter().enumerate() {
            match slot {
                Some(i) => indices.push(*i),
                None => {
                    return Err(Error::Format(format!("EMPTY slot inside audio at frame {f}, layer {layer}")))
                }
            }
        }
    }
    AudioTokenMatrix::new(codebook_sizes.to_vec(), indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(frames: usize, layers: usize) -> AudioTokenMatrix {
        let sizes = vec![1024; layers];
        let indices = (0..frames * layers).map(|i| (i * 7 % 1000) as u16).collect();
        AudioTokenMatrix::new(sizes, indices).unwrap()
    }

    #[test]
    fn eight_frames_make_two_patches() {
        let patches = patchify(&matrix(8, 8), 4).unwrap();
        assert_eq!(patches.len(), 2);
        assert!(patches.iter().all(|p| p.group() == 4 && !p.is_padded()));
        // 25 Hz frames grouped by 4 give a 6.25 Hz patch rate
        assert_eq!(super::super::FRAME_RATE_HZ / 4.0, 6.25);
    }

    #[test]
    fn single_group_is_identity() {
        let m = matrix(4, 3);
        let patches = patchify(&m, 4).unwrap();
        assert_eq!(patches.len(), 1);
        let expected: Vec<Slot> = m.indices().iter().map(|&i| Some(i)).collect();
        assert_eq!(patches[0].slots(), &expected[..]);
    }

    #[test]
    fn ten_frames_pad_last_patch() {
        let m = matrix(10, 2);
        let patches = patchify(&m, 4).unwrap();
        assert_eq!(patches.len(), 3);
        assert_eq!(patches[2].padding(), 2);
        assert!(patches[2].frame(2).iter().all(Option::is_none));
        assert!(patches[2].frame(3).iter().all(Option::is_none));
        assert_eq!(patches[2].frame(1), &[Some(m.row(9)[0]), Some(m.row(9)[1])]);
        assert_eq!(unpatchify(&patches, m.codebook_sizes()).unwrap(), m);
    }

    #[test]
    fn empty_inputs() {
        let m = AudioTokenMatrix::empty(vec![8, 8]);
        assert!(patchify(&m, 4).unwrap().is_empty());
        let back = unpatchify(&[], &[8, 8]).unwrap();
        assert_eq!(back.frames(), 0);
        assert!(patchify(&m, 0).is_err());
    }

    #[test]
    fn unpatchify_rejects_mixed_groups() {
        let a = patchify(&matrix(4, 2), 4).unwrap();
        let b = patchify(&matrix(2, 2), 2).unwrap();
        let mixed = vec![a[0].clone(), b[0].clone()];
        assert!(matches!(unpatchify(&mixed, &[1024, 1024]), Err(Error::Shape { .. })));
    }
}
