//! Pseudo masks from bounding-box annotations.
//!
//! A [`MaskRegistry`] maps open-vocabulary findings to the rectangular
//! regions where they may appear. From it, an instruction set resolves to a
//! single binary [`PseudoMask`]: the pixelwise union of every box of every
//! mentioned finding. A finding without annotations deliberately yields the
//! all-ones mask — an edit that cannot be localized is allowed to act
//! anywhere, and the relevance map still narrows it down. Callers may also
//! bypass the registry entirely with a hand-drawn mask via
//! [`user_mask_override`].

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::imaging::check_same_shape;
use crate::instruction::{Finding, InstructionSet};

/// An axis-aligned box over pixel coordinates, half-open on both axes:
/// it covers `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    /// Left edge (inclusive).
    pub x0: usize,
    /// Top edge (inclusive).
    pub y0: usize,
    /// Right edge (exclusive).
    pub x1: usize,
    /// Bottom edge (exclusive).
    pub y1: usize,
}

impl BoundingBox {
    /// Builds a box, rejecting empty or inverted extents.
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidBoundingBox {
                x0,
                y0,
                x1,
                y1,
                reason: "extents must satisfy x0 < x1 and y0 < y1",
            });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Box width in pixels.
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    /// Box height in pixels.
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    /// Covered pixel count.
    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    /// Whether the pixel at `(x, y)` lies inside the box.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Bounding-box annotations for findings on a fixed canvas.
///
/// Immutable once populated; every operation on it is pure, so a registry
/// can be shared freely across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRegistry {
    width: usize,
    height: usize,
    entries: BTreeMap<Finding, Vec<BoundingBox>>,
}

impl MaskRegistry {
    /// Creates an empty registry over a `width x height` canvas.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter {
                name: "canvas",
                reason: "width and height must be at least 1",
            });
        }
        Ok(Self {
            width,
            height,
            entries: BTreeMap::new(),
        })
    }

    /// Canvas width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Canvas height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Records one annotated box for a finding.
    pub fn insert(&mut self, finding: Finding, bounding_box: BoundingBox) -> Result<()> {
        if bounding_box.x1 > self.width || bounding_box.y1 > self.height {
            return Err(Error::InvalidBoundingBox {
                x0: bounding_box.x0,
                y0: bounding_box.y0,
                x1: bounding_box.x1,
                y1: bounding_box.y1,
                reason: "box exceeds the registry canvas",
            });
        }
        self.entries.entry(finding).or_default().push(bounding_box);
        Ok(())
    }

    /// Annotated boxes for a finding, empty when unannotated.
    pub fn boxes(&self, finding: &Finding) -> &[BoundingBox] {
        self.entries.get(finding).map_or(&[], Vec::as_slice)
    }

    /// Iterates over annotated findings in sorted order.
    pub fn findings(&self) -> impl Iterator<Item = &Finding> {
        self.entries.keys()
    }
}

/// A binary region mask sharing the row-major grid layout of images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl PseudoMask {
    /// Wraps a buffer of 0/1 bytes.
    pub fn from_bits(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter {
                name: "dimensions",
                reason: "width and height must be at least 1",
            });
        }
        if data.len() != width * height {
            return Err(Error::BufferSize {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryMask {
                index,
                value: value as f64,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Wraps a float buffer whose values must be exactly 0.0 or 1.0.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len());
        for (index, &value) in values.iter().enumerate() {
            if value == 0.0 {
                data.push(0);
            } else if value == 1.0 {
                data.push(1);
            } else {
                return Err(Error::NonBinaryMask { index, value });
            }
        }
        Self::from_bits(width, height, data)
    }

    /// The everywhere-editable mask.
    pub fn all_ones(width: usize, height: usize) -> Result<Self> {
        Self::from_bits(width, height, vec![1; width * height])
    }

    /// Mask width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Mask height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major 0/1 buffer.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Mask bit at column `x`, row `y`. Panics if out of bounds.
    pub fn get(&self, x: usize, y: usize) -> u8 {
        assert!(x < self.width && y < self.height, "index out of bounds");
        self.data[y * self.width + x]
    }

    /// Number of 1-pixels.
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Nearest-neighbor resize, which preserves binarity by construction.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter {
                name: "dimensions",
                reason: "width and height must be at least 1",
            });
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let scale_x = self.width as f64 / width as f64;
        let scale_y = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height);
        for oy in 0..height {
            let sy = (((oy as f64 + 0.5) * scale_y) as usize).min(self.height - 1);
            for ox in 0..width {
                let sx = (((ox as f64 + 0.5) * scale_x) as usize).min(self.width - 1);
                data.push(self.data[sy * self.width + sx]);
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Union of every annotated box for one finding.
///
/// An unannotated finding yields the all-ones mask: with no spatial prior,
/// the edit may act over the full canvas.
pub fn build_pathology_mask(registry: &MaskRegistry, finding: &Finding) -> PseudoMask {
    let boxes = registry.boxes(finding);
    if boxes.is_empty() {
        return PseudoMask::all_ones(registry.width, registry.height)
            .expect("registry canvas is validated non-empty");
    }
    let mut data = vec![0u8; registry.width * registry.height];
    for bounding_box in boxes {
        for y in bounding_box.y0..bounding_box.y1 {
            let row = y * registry.width;
            data[row + bounding_box.x0..row + bounding_box.x1].fill(1);
        }
    }
    PseudoMask {
        width: registry.width,
        height: registry.height,
        data,
    }
}

/// Resolves the single mask for an instruction set: the pixelwise union of
/// [`build_pathology_mask`] over every mentioned finding.
///
/// Because an unannotated finding contributes all-ones, mixing annotated
/// and unannotated findings yields the all-ones mask.
pub fn resolve_pseudo_mask(registry: &MaskRegistry, instructions: &InstructionSet) -> Result<PseudoMask> {
    if instructions.is_empty() {
        return Err(Error::EmptyInstructions);
    }
    let mut data = vec![0u8; registry.width * registry.height];
    for instruction in instructions {
        let mask = build_pathology_mask(registry, &instruction.finding);
        for (out, bit) in data.iter_mut().zip(mask.data()) {
            *out |= bit;
        }
    }
    Ok(PseudoMask {
        width: registry.width,
        height: registry.height,
        data,
    })
}

/// Validates a caller-supplied mask against the edit canvas and passes it
/// through unchanged, substituting it for the resolved pseudo mask.
pub fn user_mask_override(mask: &PseudoMask, width: usize, height: usize) -> Result<PseudoMask> {
    check_same_shape(width, height, mask.width, mask.height)?;
    Ok(mask.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruction::parse_instruction;
    use proptest::prelude::*;

    fn finding(token: &str) -> Finding {
        Finding::new(token).unwrap()
    }

    fn registry_with(entries: &[(&str, BoundingBox)]) -> MaskRegistry {
        let mut registry = MaskRegistry::new(512, 512).unwrap();
        for (token, bounding_box) in entries {
            registry.insert(finding(token), *bounding_box).unwrap();
        }
        registry
    }

    #[test]
    fn bounding_box_rejects_empty_and_inverted_extents() {
        assert!(BoundingBox::new(10, 10, 10, 20).is_err());
        assert!(BoundingBox::new(10, 10, 20, 10).is_err());
        assert!(BoundingBox::new(30, 10, 20, 40).is_err());
        assert!(BoundingBox::new(0, 0, 1, 1).is_ok());
    }

    #[test]
    fn bounding_box_is_half_open() {
        let bounding_box = BoundingBox::new(10, 20, 30, 40).unwrap();
        assert!(bounding_box.contains(10, 20));
        assert!(bounding_box.contains(29, 39));
        assert!(!bounding_box.contains(30, 20));
        assert!(!bounding_box.contains(10, 40));
        assert_eq!(bounding_box.area(), 20 * 20);
    }

    #[test]
    fn registry_rejects_boxes_beyond_canvas() {
        let mut registry = MaskRegistry::new(100, 100).unwrap();
        let too_wide = BoundingBox::new(50, 50, 101, 60).unwrap();
        assert!(registry.insert(finding("edema"), too_wide).is_err());
        let snug = BoundingBox::new(0, 0, 100, 100).unwrap();
        assert!(registry.insert(finding("edema"), snug).is_ok());
    }

    #[test]
    fn overlapping_boxes_count_by_inclusion_exclusion() {
        // Two 40x40 boxes overlapping in a 10x10 corner: 1600 + 1600 - 100.
        let registry = registry_with(&[
            ("effusion", BoundingBox::new(10, 10, 50, 50).unwrap()),
            ("effusion", BoundingBox::new(40, 40, 80, 80).unwrap()),
        ]);
        let mask = build_pathology_mask(&registry, &finding("effusion"));
        assert_eq!(mask.count_ones(), 3100);
    }

    #[test]
    fn full_canvas_box_yields_all_ones() {
        let registry = registry_with(&[("edema", BoundingBox::new(0, 0, 512, 512).unwrap())]);
        let mask = build_pathology_mask(&registry, &finding("edema"));
        assert_eq!(mask.count_ones(), 512 * 512);
    }

    #[test]
    fn unannotated_finding_yields_all_ones() {
        let registry = registry_with(&[("edema", BoundingBox::new(0, 0, 10, 10).unwrap())]);
        let mask = build_pathology_mask(&registry, &finding("unlisted_thing"));
        assert_eq!(mask.count_ones(), 512 * 512);
    }

    #[test]
    fn resolve_unions_disjoint_findings() {
        let registry = registry_with(&[
            ("effusion", BoundingBox::new(0, 0, 40, 40).unwrap()),
            ("edema", BoundingBox::new(100, 100, 150, 150).unwrap()),
        ]);
        let instructions = parse_instruction("add effusion and then remove edema").unwrap();
        let mask = resolve_pseudo_mask(&registry, &instructions).unwrap();
        assert_eq!(mask.count_ones(), 40 * 40 + 50 * 50);
    }

    #[test]
    fn resolve_single_finding_matches_build() {
        let registry = registry_with(&[("effusion", BoundingBox::new(5, 5, 25, 30).unwrap())]);
        let instructions = parse_instruction("add effusion").unwrap();
        let resolved = resolve_pseudo_mask(&registry, &instructions).unwrap();
        let built = build_pathology_mask(&registry, &finding("effusion"));
        assert_eq!(resolved, built);
    }

    #[test]
    fn resolve_with_unannotated_finding_is_all_ones() {
        let registry = registry_with(&[("effusion", BoundingBox::new(5, 5, 25, 30).unwrap())]);
        let instructions = parse_instruction("add effusion and then add mystery").unwrap();
        let mask = resolve_pseudo_mask(&registry, &instructions).unwrap();
        assert_eq!(mask.count_ones(), 512 * 512);
    }

    #[test]
    fn resolve_rejects_empty_instructions() {
        let registry = registry_with(&[]);
        assert!(matches!(
            resolve_pseudo_mask(&registry, &InstructionSet::empty()),
            Err(Error::EmptyInstructions)
        ));
    }

    #[test]
    fn user_override_checks_shape_and_binarity() {
        let mask = PseudoMask::from_values(4, 4, &[1.0; 16]).unwrap();
        assert_eq!(user_mask_override(&mask, 4, 4).unwrap(), mask);
        assert!(matches!(
            user_mask_override(&mask, 8, 8),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            PseudoMask::from_values(2, 1, &[1.0, 0.5]),
            Err(Error::NonBinaryMask { index: 1, .. })
        ));
    }

    #[test]
    fn nearest_resize_scales_block_masks_exactly() {
        // One marked quadrant: integer upscaling must scale the area by 4.
        let mut bits = vec![0u8; 16];
        for y in 0..2 {
            for x in 0..2 {
                bits[y * 4 + x] = 1;
            }
        }
        let mask = PseudoMask::from_bits(4, 4, bits).unwrap();
        let doubled = mask.resize_nearest(8, 8).unwrap();
        assert_eq!(doubled.count_ones(), 16);
        assert_eq!(doubled.get(3, 3), 1);
        assert_eq!(doubled.get(4, 4), 0);
        let back = doubled.resize_nearest(4, 4).unwrap();
        assert_eq!(back, mask);
    }

    fn arb_box(side: usize) -> impl Strategy<Value = BoundingBox> {
        (0..side - 1, 0..side - 1)
            .prop_flat_map(move |(x0, y0)| {
                (x0 + 1..=side, y0 + 1..=side)
                    .prop_map(move |(x1, y1)| BoundingBox { x0, y0, x1, y1 })
            })
    }

    proptest! {
        #[test]
        fn union_count_matches_brute_force_rasterization(
            boxes in proptest::collection::vec(arb_box(24), 1..6),
        ) {
            let mut registry = MaskRegistry::new(24, 24).unwrap();
            for bounding_box in &boxes {
                registry.insert(finding("sign"), *bounding_box).unwrap();
            }
            let mask = build_pathology_mask(&registry, &finding("sign"));
            let mut expected = 0usize;
            for y in 0..24 {
                for x in 0..24 {
                    if boxes.iter().any(|b| b.contains(x, y)) {
                        expected += 1;
                    }
                }
            }
            prop_assert_eq!(mask.count_ones(), expected);
        }

        #[test]
        fn union_is_monotone_in_added_boxes(
            boxes in proptest::collection::vec(arb_box(24), 1..5),
            extra in arb_box(24),
        ) {
            let mut registry = MaskRegistry::new(24, 24).unwrap();
            for bounding_box in &boxes {
                registry.insert(finding("sign"), *bounding_box).unwrap();
            }
            let before = build_pathology_mask(&registry, &finding("sign"));
            registry.insert(finding("sign"), extra).unwrap();
            let after = build_pathology_mask(&registry, &finding("sign"));
            for (b, a) in before.data().iter().zip(after.data()) {
                prop_assert!(a >= b);
            }
        }

        #[test]
        fn resolve_is_order_independent(
            flip in any::<bool>(),
        ) {
            let registry = registry_with(&[
                ("effusion", BoundingBox::new(3, 3, 60, 60).unwrap()),
                ("edema", BoundingBox::new(40, 10, 90, 55).unwrap()),
                ("nodule", BoundingBox::new(200, 200, 230, 260).unwrap()),
            ]);
            let forward = parse_instruction("add effusion and then remove edema and then add nodule").unwrap();
            let backward = parse_instruction("add nodule and then remove edema and then add effusion").unwrap();
            let (a, b) = if flip { (&forward, &backward) } else { (&backward, &forward) };
            let mask_a = resolve_pseudo_mask(&registry, a).unwrap();
            let mask_b = resolve_pseudo_mask(&registry, b).unwrap();
            prop_assert_eq!(mask_a, mask_b);
        }

        #[test]
        fn nearest_resize_stays_binary(
            bits in proptest::collection::vec(0u8..=1, 36),
            w in 1usize..12,
            h in 1usize..12,
        ) {
            let mask = PseudoMask::from_bits(6, 6, bits).unwrap();
            let resized = mask.resize_nearest(w, h).unwrap();
            prop_assert_eq!(resized.data().len(), w * h);
            for &bit in resized.data() {
                prop_assert!(bit <= 1);
            }
        }
    }
}
