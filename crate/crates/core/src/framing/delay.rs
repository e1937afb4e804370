use crate::error::{Error, Result};
use crate::rvq::Slot;

use super::Patch;

/// Largest per-codebook delay accepted by [`DelayConfig::new`].
pub const MAX_DELAY: usize = 64;

/// Per-codebook delays, in frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayConfig {
    delays: Vec<usize>,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self { delays: (0..8).collect() }
    }
}

impl DelayConfig {
    pub fn new(delays: Vec<usize>) -> Result<Self> {
        if delays.is_empty() {
            return Err(Error::Config("delay pattern needs at least one codebook".into()));
        }
        if let Some(&d) = delays.iter().find(|&&d| d >= MAX_DELAY) {
            return Err(Error::Config(format!("delay {d} exceeds the maximum of {}", MAX_DELAY - 1)));
        }
        Ok(Self { delays })
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn layers(&self) -> usize {
        self.delays.len()
    }

    pub fn max_delay(&self) -> usize {
        self.delays.iter().copied().max().unwrap_or(0)
    }

    /// Length of a delayed patch: `group + max(D)`.
    pub fn delayed_len(&self, group: usize) -> usize {
        group + self.max_delay()
    }

    /// Source frame for delayed slot `(slot, layer)`, or `None` when the slot
    /// must hold EMPTY.
    pub fn source_frame(&self, slot: usize, layer: usize, group: usize) -> Option<usize> {
        slot.checked_sub(self.delays[layer]).filter(|&f| f < group)
    }
}

/// A patch after the delay transform: `group + max(D)` rows of `layers` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayedPatch {
    layers: usize,
    slots: Vec<Slot>,
}

impl DelayedPatch {
    /// Wraps raw rows without checking them against a delay pattern;
    /// [`delay_remove`] does that.
    pub fn from_slots(layers: usize, slots: Vec<Slot>) -> Result<Self> {
        if layers == 0 || slots.len() % layers != 0 {
            return Err(Error::Shape {
                op: "DelayedPatch::from_slots",
                detail: format!("{} slots for {} layers", slots.len(), layers),
            });
        }
        Ok(Self { layers, slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len() / self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn row(&self, i: usize) -> &[Slot] {
        &self.slots[i * self.layers..(i + 1) * self.layers]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Slot]> {
        self.slots.chunks(self.layers)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [Slot] {
        &mut self.slots
    }

    /// True when every slot the delay rule leaves undefined holds EMPTY.
    pub fn satisfies(&self, delays: &DelayConfig, group: usize) -> bool {
        self.layers == delays.layers()
            && self.len() == delays.delayed_len(group)
            && self.rows().enumerate().all(|(i, row)| {
                row.iter()
                    .enumerate()
                    .all(|(r, s)| s.is_none() || delays.source_frame(i, r, group).is_some())
            })
    }
}

/// `out[i][r] = p[i - d_r][r]` when `0 <= i - d_r < G`, EMPTY otherwise.
pub fn delay_apply(patch: &Patch, delays: &DelayConfig) -> Result<DelayedPatch> {
    let layers = patch.layers();
    if delays.layers() != layers {
        return Err(Error::DimensionMismatch { expected: layers, got: delays.layers() });
    }
    let group = patch.group();
    let len = delays.delayed_len(group);
    let mut slots = vec![None; len * layers];
    for i in 0..len {
        for r in 0..layers {
            if let Some(f) = delays.source_frame(i, r, group) {
                slots[i * layers + r] = patch.frame(f)[r];
            }
        }
    }
    Ok(DelayedPatch { layers, slots })
}

pub fn delay_remove(delayed: &DelayedPatch, delays: &DelayConfig, group: usize) -> Result<Patch> {
    let layers = delayed.layers();
    if delays.layers() != layers {
        return Err(Error::DimensionMismatch { expected: delays.layers(), got: layers });
    }
    if group == 0 || delayed.len() != delays.delayed_len(group) {
        return Err(Error::Shape {
            op: "delay_remove",
            detail: format!(
                "malformed length {} (expected {})",
                delayed.len(),
                delays.delayed_len(group)
            ),
        });
    }
    let mut slots = vec![None; group * layers];
    for (i, row) in delayed.rows().enumerate() {
        for (r, &slot) in row.iter().enumerate() {
            match delays.source_frame(i, r, group) {
                Some(f) => slots[f * layers + r] = slot,
                None if slot.is_some() => return Err(Error::InconsistentDelay { slot: i, layer: r }),
                None => {}
            }
        }
    }
    Patch::new(layers, slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_delays_give_length_eleven() {
        let d = DelayConfig::default();
        assert_eq!(d.delays(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(d.delayed_len(4), 11);
        let frames: Vec<Vec<u16>> = (0..4).map(|f| (0..8).map(|r| (f * 8 + r) as u16).collect()).collect();
        let p = Patch::from_frames(&frames).unwrap();
        assert_eq!(delay_apply(&p, &d).unwrap().len(), 11);
    }

    #[test]
    fn zero_delay_is_identity() {
        let d = DelayConfig::new(vec![0, 0, 0]).unwrap();
        let p = Patch::from_frames(&[vec![1, 2, 3], vec![4, 5, 6]]).unwrap();
        let out = delay_apply(&p, &d).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.slots(), p.slots());
        assert_eq!(delay_remove(&out, &d, 2).unwrap(), p);
    }

    #[test]
    fn two_by_two_substitution() {
        // P = [(a,b),(c,d)], D = [0,1] -> [(a,E),(c,b),(E,d)]
        let (a, b, c, dd) = (10, 11, 12, 13);
        let d = DelayConfig::new(vec![0, 1]).unwrap();
        let p = Patch::from_frames(&[vec![a, b], vec![c, dd]]).unwrap();
        let out = delay_apply(&p, &d).unwrap();
        assert_eq!(
            out.slots(),
            &[Some(a), None, Some(c), Some(b), None, Some(dd)]
        );
        assert!(out.satisfies(&d, 2));
        assert_eq!(delay_remove(&out, &d, 2).unwrap(), p);
    }

    #[test]
    fn tampered_empty_slot_is_rejected() {
        let d = DelayConfig::new(vec![0, 1]).unwrap();
        let p = Patch::from_frames(&[vec![1, 2], vec![3, 4]]).unwrap();
        let mut out = delay_apply(&p, &d).unwrap();
        out.slots_mut()[1] = Some(0);
        assert!(!out.satisfies(&d, 2));
        let err = delay_remove(&out, &d, 2).unwrap_err();
        assert_eq!(err.to_string(), "inconsistent delay pattern at slot (0, 1)");
    }

    #[test]
    fn malformed_length_is_rejected() {
        let d = DelayConfig::new(vec![0, 1]).unwrap();
        let short = DelayedPatch::from_slots(2, vec![None; 4]).unwrap();
        assert!(matches!(delay_remove(&short, &d, 2), Err(Error::Shape { .. })));
    }

    #[test]
    fn oversized_delay_rejected() {
        assert!(DelayConfig::new(vec![0, MAX_DELAY]).is_err());
        assert!(DelayConfig::new(vec![]).is_err());
    }

    fn patch_strategy() -> impl Strategy<Value = (Patch, DelayConfig)> {
        (1usize..=8, 1usize..=8).prop_flat_map(|(group, layers)| {
            (
                proptest::collection::vec(proptest::option::weighted(0.9, 0u16..1024), group * layers),
                proptest::collection::vec(0usize..=7, layers),
            )
                .prop_map(move |(slots, delays)| {
                    (Patch::new(layers, slots).unwrap(), DelayConfig::new(delays).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip((p, d) in patch_strategy()) {
            let out = delay_apply(&p, &d).unwrap();
            prop_assert_eq!(out.len(), p.group() + d.max_delay());
            prop_assert!(out.satisfies(&d, p.group()));
            prop_assert_eq!(delay_remove(&out, &d, p.group()).unwrap(), p);
        }
    }
}
