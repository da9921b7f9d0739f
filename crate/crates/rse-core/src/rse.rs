//! Region-specific editing: a relevance map locates where the instruction
//! wants to act, a pseudo mask says where it is *allowed* to act, their
//! product is thresholded into a binary edit mask, and a masked denoising
//! loop rewrites only the masked region — every unmasked pixel of the
//! output is bit-identical to the input.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::diffusion::{
    add_noise, cfg_epsilon, ddim_update, derived_seed, gaussian_latent, sampling_timesteps,
    Conditioning, Denoiser, GuidanceScales, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::imaging::{normalize_map, GrayImage, Latent};
use crate::instruction::InstructionSet;
use crate::maskreg::{resolve_pseudo_mask, user_mask_override, MaskRegistry, PseudoMask};

/// Sub-seed stream for the fixed per-run sampling noise.
const SAMPLING_STREAM: u64 = 0;
/// Sub-seed stream for the relevance-map noise injection.
const RELEVANCE_STREAM: u64 = 1;

/// Where an instruction wants to act: the normalized absolute difference
/// between the text-conditioned and text-free noise predictions at one
/// diffusion step. Values lie in `[0, 1]`; unless the map is identically
/// zero, its maximum is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    map: Latent,
    t_rel: usize,
}

impl RelevanceMap {
    /// Wraps an existing grid as a relevance map.
    ///
    /// Values must lie in `[0, 1]` and the maximum must be exactly 1 unless
    /// every value is zero — the shape `relevance_map` guarantees, enforced
    /// here so re-imported maps carry the same contract.
    pub fn new(map: Latent, t_rel: usize) -> Result<Self> {
        let mut max = 0.0f64;
        for &value in map.data() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter {
                    name: "relevance",
                    reason: "values must lie in [0, 1]",
                });
            }
            max = max.max(value);
        }
        if max != 0.0 && max != 1.0 {
            return Err(Error::InvalidParameter {
                name: "relevance",
                reason: "a nonzero map must attain a maximum of exactly 1",
            });
        }
        if t_rel == 0 {
            return Err(Error::InvalidParameter {
                name: "t_rel",
                reason: "relevance step must be at least 1",
            });
        }
        Ok(Self { map, t_rel })
    }

    /// The underlying grid.
    pub fn map(&self) -> &Latent {
        &self.map
    }

    /// The diffusion step the map was computed at.
    pub fn t_rel(&self) -> usize {
        self.t_rel
    }
}

/// Where an edit is both wanted and allowed: the relevance map gated by the
/// pseudo mask. Zero wherever the pseudo mask is zero, and never above the
/// relevance it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    map: Latent,
}

impl GuidanceMap {
    /// Wraps an existing grid as a guidance map; values must lie in `[0, 1]`.
    pub fn new(map: Latent) -> Result<Self> {
        for &value in map.data() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter {
                    name: "guidance",
                    reason: "values must lie in [0, 1]",
                });
            }
        }
        Ok(Self { map })
    }

    /// The underlying grid.
    pub fn map(&self) -> &Latent {
        &self.map
    }
}

/// The thresholded guidance map: 1 exactly where guidance reached the
/// threshold, together with the threshold that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryEditMask {
    mask: PseudoMask,
    tau: f64,
}

impl BinaryEditMask {
    /// The binary grid.
    pub fn mask(&self) -> &PseudoMask {
        &self.mask
    }

    /// The threshold that produced this mask.
    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Knobs for one editing run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditConfig {
    /// Guidance threshold for the binary mask, in `(0, 1]`.
    pub tau: f64,
    /// Classifier-free guidance weights.
    pub scales: GuidanceScales,
    /// Diffusion step at which relevance is measured.
    pub t_rel: usize,
    /// Number of denoising steps.
    pub steps: usize,
    /// Run seed; sampling and relevance noise use distinct derived streams.
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            scales: GuidanceScales::default(),
            t_rel: 500,
            steps: 50,
            seed: 0,
        }
    }
}

/// Everything an editing run produces: the edited image plus the maps that
/// determined where it was allowed to differ from the input.
#[derive(Debug, Clone, PartialEq)]
pub struct EditOutput {
    /// The edited image.
    pub image: GrayImage,
    /// Relevance gated by the pseudo mask.
    pub guidance: GuidanceMap,
    /// The binary mask that bounded the edit.
    pub mask: BinaryEditMask,
}

/// Measures where the instruction set wants to change the image.
///
/// The input is forward-noised to `t_rel` with seeded Gaussian noise, the
/// denoiser is evaluated with and without the instruction text (both
/// conditioned on the image), and the absolute prediction difference is
/// normalized to `[0, 1]`. An empty instruction set makes both predictions
/// identical, so the map is all-zero; otherwise its maximum is exactly 1.
pub fn relevance_map(
    image: &GrayImage,
    text: &InstructionSet,
    t_rel: usize,
    seed: u64,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<RelevanceMap> {
    sched.check_step(t_rel, 1)?;
    let noise = gaussian_latent(image.width(), image.height(), seed)?;
    let z = add_noise(&image.to_latent(), &noise, t_rel, sched)?;
    let empty = InstructionSet::empty();
    let eps_full = denoiser.epsilon(&z, t_rel, &Conditioning { image, text }, sched)?;
    let eps_image = denoiser.epsilon(
        &z,
        t_rel,
        &Conditioning {
            image,
            text: &empty,
        },
        sched,
    )?;
    let diff: Vec<f64> = eps_full
        .data()
        .iter()
        .zip(eps_image.data())
        .map(|(&f, &i)| (f - i).abs())
        .collect();
    let diff = Latent::new(image.width(), image.height(), diff)?;
    Ok(RelevanceMap {
        map: normalize_map(&diff)?,
        t_rel,
    })
}

/// Gates relevance by the pseudo mask: `G = M ⊙ R` element-wise.
pub fn guidance_map(relevance: &RelevanceMap, mask: &PseudoMask) -> Result<GuidanceMap> {
    crate::imaging::check_same_shape(
        relevance.map.width(),
        relevance.map.height(),
        mask.width(),
        mask.height(),
    )?;
    let data = relevance
        .map
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&r, &m)| f64::from(m) * r)
        .collect();
    Ok(GuidanceMap {
        map: Latent::from_parts_unchecked(relevance.map.width(), relevance.map.height(), data),
    })
}

/// Thresholds a guidance map into the binary edit mask `1(G ≥ tau)`.
/// The comparison is inclusive, so a pixel exactly at the threshold is
/// editable. `tau` must lie in `(0, 1]`.
pub fn binarize(guidance: &GuidanceMap, tau: f64) -> Result<BinaryEditMask> {
    if !tau.is_finite() || tau <= 0.0 || tau > 1.0 {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: "threshold must lie in (0, 1]",
        });
    }
    let bits = guidance
        .map
        .data()
        .iter()
        .map(|&g| u8::from(g >= tau))
        .collect();
    let mask = PseudoMask::from_bits(guidance.map.width(), guidance.map.height(), bits)?;
    Ok(BinaryEditMask { mask, tau })
}

/// Runs one region-specific edit.
///
/// The pseudo mask comes from `user_mask` when given (validated against the
/// image dimensions) and otherwise from the registry, resized to the canvas
/// by nearest neighbor if the registry was built at another resolution.
/// Relevance is computed once, gated, and thresholded; then the sampler
/// runs from a forward-noised copy of the input, and after every denoising
/// step each unmasked pixel is overwritten with the input noised to the new
/// step — reusing one fixed noise draw for the whole run. At step 0 that
/// replacement is the input itself, so unmasked output pixels are
/// bit-identical to the input.
///
/// The run seed drives two independent derived streams, one for the fixed
/// sampling noise and one for the relevance noise; the whole function is
/// deterministic in (inputs, config).
pub fn edit(
    image: &GrayImage,
    text: &InstructionSet,
    user_mask: Option<&PseudoMask>,
    cfg: &EditConfig,
    registry: &MaskRegistry,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<EditOutput> {
    let width = image.width();
    let height = image.height();
    let pseudo = match user_mask {
        Some(mask) => user_mask_override(mask, width, height)?,
        None => {
            let mask = resolve_pseudo_mask(registry, text)?;
            if mask.width() == width && mask.height() == height {
                mask
            } else {
                mask.resize_nearest(width, height)?
            }
        }
    };

    let relevance = relevance_map(
        image,
        text,
        cfg.t_rel,
        derived_seed(cfg.seed, RELEVANCE_STREAM),
        denoiser,
        sched,
    )?;
    let guidance = guidance_map(&relevance, &pseudo)?;
    let mask = binarize(&guidance, cfg.tau)?;

    if cfg.steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "need at least one sampling step",
        });
    }
    if cfg.steps > sched.train_steps() {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "sampling steps cannot exceed the training-step count",
        });
    }

    let eps_fixed = gaussian_latent(width, height, derived_seed(cfg.seed, SAMPLING_STREAM))?;
    let x0 = image.to_latent();
    let mut z = add_noise(&x0, &eps_fixed, sched.train_steps(), sched)?;
    let ladder = sampling_timesteps(sched.train_steps(), cfg.steps);
    for pair in ladder.windows(2) {
        let (t_cur, t_next) = (pair[0], pair[1]);
        let eps = cfg_epsilon(&z, t_cur, image, text, &cfg.scales, denoiser, sched)?;
        let denoised = ddim_update(&z, &eps, t_cur, t_next, sched);
        let anchor = add_noise(&x0, &eps_fixed, t_next, sched)?;
        let data = denoised
            .data()
            .iter()
            .zip(anchor.data())
            .zip(mask.mask().data())
            .map(|((&edited, &kept), &bit)| if bit == 1 { edited } else { kept })
            .collect();
        z = Latent::from_parts_unchecked(width, height, data);
    }

    Ok(EditOutput {
        image: GrayImage::from_latent_clamped(&z),
        guidance,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{BlobSpec, BlobWorld};
    use crate::instruction::{parse_instruction, Finding};
    use crate::maskreg::BoundingBox;
    use alloc::collections::BTreeMap;
    use alloc::vec;
    use proptest::prelude::*;

    fn finding(token: &str) -> Finding {
        Finding::new(token).unwrap()
    }

    fn test_world() -> BlobWorld {
        let mut findings = BTreeMap::new();
        findings.insert(
            finding("spot"),
            BlobSpec {
                center: (20.0, 24.0),
                radius: 9.0,
                amplitude: 0.5,
            },
        );
        findings.insert(
            finding("streak"),
            BlobSpec {
                center: (46.0, 40.0),
                radius: 7.0,
                amplitude: 0.4,
            },
        );
        BlobWorld::new(findings).unwrap()
    }

    fn base_image() -> GrayImage {
        GrayImage::from_fn(64, 64, |x, y| 0.2 + 0.1 * ((x + y) % 7) as f64 / 7.0).unwrap()
    }

    fn full_registry() -> MaskRegistry {
        let mut registry = MaskRegistry::new(64, 64).unwrap();
        registry
            .insert(finding("spot"), BoundingBox::new(8, 12, 32, 36).unwrap())
            .unwrap();
        registry
            .insert(finding("streak"), BoundingBox::new(36, 30, 56, 50).unwrap())
            .unwrap();
        registry
    }

    fn unit_scale_config() -> EditConfig {
        EditConfig {
            scales: GuidanceScales {
                s_image: 1.0,
                s_text: 1.0,
            },
            steps: 12,
            seed: 7,
            ..EditConfig::default()
        }
    }

    fn box_mask(x0: usize, y0: usize, x1: usize, y1: usize) -> PseudoMask {
        let bits = (0..64 * 64)
            .map(|index| {
                let (x, y) = (index % 64, index / 64);
                u8::from(x >= x0 && x <= x1 && y >= y0 && y <= y1)
            })
            .collect();
        PseudoMask::from_bits(64, 64, bits).unwrap()
    }

    #[test]
    fn relevance_of_empty_text_is_all_zero() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let relevance = relevance_map(
            &image,
            &InstructionSet::empty(),
            500,
            11,
            &world,
            &sched,
        )
        .unwrap();
        assert!(relevance.map().data().iter().all(|&v| v == 0.0));
        assert_eq!(relevance.t_rel(), 500);
    }

    #[test]
    fn relevance_localizes_the_instructed_blob() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add spot").unwrap();
        let relevance = relevance_map(&image, &text, 500, 12, &world, &sched).unwrap();
        let spot = *world.blob(&finding("spot")).unwrap();

        // A nonzero map peaks at exactly 1.
        let max = relevance.map().data().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);

        // The argmax lies inside the blob's support.
        let (mut best, mut best_xy) = (-1.0, (0, 0));
        for y in 0..64 {
            for x in 0..64 {
                if relevance.map().get(x, y) > best {
                    best = relevance.map().get(x, y);
                    best_xy = (x, y);
                }
            }
        }
        assert!(spot.contains(best_xy.0, best_xy.1));

        // At least 95% of the above-threshold mass sits within the support
        // dilated by two pixels (for a disk: radius + 2).
        let dilated = spot.radius + 2.0;
        let (mut total, mut inside) = (0.0, 0.0);
        for y in 0..64 {
            for x in 0..64 {
                let value = relevance.map().get(x, y);
                if value < 0.1 {
                    continue;
                }
                total += value;
                let d2 = (x as f64 - spot.center.0).powi(2) + (y as f64 - spot.center.1).powi(2);
                if d2 < dilated * dilated {
                    inside += value;
                }
            }
        }
        assert!(total > 0.0);
        assert!(inside / total >= 0.95, "fraction = {}", inside / total);
    }

    #[test]
    fn relevance_validates_the_step_index() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add spot").unwrap();
        assert!(relevance_map(&image, &text, 0, 1, &world, &sched).is_err());
        assert!(relevance_map(&image, &text, 1001, 1, &world, &sched).is_err());
    }

    #[test]
    fn relevance_wrapper_enforces_its_invariants() {
        let ok = Latent::new(2, 1, vec![0.25, 1.0]).unwrap();
        assert!(RelevanceMap::new(ok, 500).is_ok());
        let zero = Latent::zeros(2, 1).unwrap();
        assert!(RelevanceMap::new(zero, 500).is_ok());
        let no_peak = Latent::new(2, 1, vec![0.25, 0.5]).unwrap();
        assert!(RelevanceMap::new(no_peak, 500).is_err());
        let out_of_range = Latent::new(2, 1, vec![-0.1, 1.0]).unwrap();
        assert!(RelevanceMap::new(out_of_range, 500).is_err());
        let bad_step = Latent::new(2, 1, vec![0.5, 1.0]).unwrap();
        assert!(RelevanceMap::new(bad_step, 0).is_err());
    }

    #[test]
    fn all_ones_mask_makes_guidance_equal_relevance() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add spot").unwrap();
        let relevance = relevance_map(&image, &text, 500, 13, &world, &sched).unwrap();
        let mask = PseudoMask::all_ones(64, 64).unwrap();
        let guidance = guidance_map(&relevance, &mask).unwrap();
        assert_eq!(guidance.map().data(), relevance.map().data());
    }

    #[test]
    fn all_zero_mask_annihilates_guidance() {
        let relevance =
            RelevanceMap::new(Latent::new(2, 2, vec![0.2, 1.0, 0.5, 0.0]).unwrap(), 500).unwrap();
        let mask = PseudoMask::from_bits(2, 2, vec![0; 4]).unwrap();
        let guidance = guidance_map(&relevance, &mask).unwrap();
        assert!(guidance.map().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn guidance_matches_elementwise_product_oracle() {
        let values = [0.1, 0.9, 1.0, 0.3, 0.0, 0.7];
        let relevance =
            RelevanceMap::new(Latent::new(3, 2, values.to_vec()).unwrap(), 250).unwrap();
        let bits = vec![1, 0, 1, 1, 0, 0];
        let mask = PseudoMask::from_bits(3, 2, bits.clone()).unwrap();
        let guidance = guidance_map(&relevance, &mask).unwrap();
        for index in 0..values.len() {
            assert_eq!(
                guidance.map().data()[index],
                f64::from(bits[index]) * values[index]
            );
            // The gate never raises relevance.
            assert!(guidance.map().data()[index] <= values[index]);
        }
    }

    #[test]
    fn guidance_rejects_mismatched_shapes() {
        let relevance =
            RelevanceMap::new(Latent::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap(), 500).unwrap();
        let mask = PseudoMask::all_ones(3, 2).unwrap();
        assert!(matches!(
            guidance_map(&relevance, &mask),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn binarize_uses_an_inclusive_threshold() {
        let guidance = GuidanceMap::new(Latent::new(3, 1, vec![0.05, 0.1, 0.5]).unwrap()).unwrap();
        let mask = binarize(&guidance, 0.1).unwrap();
        assert_eq!(mask.mask().data(), &[0, 1, 1]);
        assert_eq!(mask.tau(), 0.1);
    }

    #[test]
    fn binarize_of_zero_guidance_is_empty() {
        let guidance = GuidanceMap::new(Latent::zeros(4, 4).unwrap()).unwrap();
        for tau in [0.001, 0.1, 1.0] {
            assert_eq!(binarize(&guidance, tau).unwrap().mask().count_ones(), 0);
        }
    }

    #[test]
    fn binarize_at_tau_one_keeps_only_unit_pixels() {
        let guidance =
            GuidanceMap::new(Latent::new(4, 1, vec![0.9999, 1.0, 0.5, 1.0]).unwrap()).unwrap();
        let mask = binarize(&guidance, 1.0).unwrap();
        assert_eq!(mask.mask().data(), &[0, 1, 0, 1]);
    }

    #[test]
    fn binarize_validates_tau() {
        let guidance = GuidanceMap::new(Latent::zeros(2, 2).unwrap()).unwrap();
        for tau in [0.0, -0.5, 1.0 + 1e-9, f64::NAN] {
            assert!(binarize(&guidance, tau).is_err(), "tau = {tau}");
        }
    }

    #[test]
    fn all_zero_user_mask_returns_the_input_bit_exactly() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add severe spot").unwrap();
        let mask = PseudoMask::from_bits(64, 64, vec![0; 64 * 64]).unwrap();
        let out = edit(
            &image,
            &text,
            Some(&mask),
            &unit_scale_config(),
            &full_registry(),
            &world,
            &sched,
        )
        .unwrap();
        assert_eq!(out.image.data(), image.data());
        assert_eq!(out.mask.mask().count_ones(), 0);
        assert!(out.guidance.map().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_canvas_edit_tracks_the_target_up_to_the_threshold_tail() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add moderate spot").unwrap();
        let target = world.target(&image, &text).unwrap();
        let mask = PseudoMask::all_ones(64, 64).unwrap();

        // Thresholding pins low-relevance pixels to the input, and on the
        // blob's fading rim the target differs from the input by up to
        // tau times the peak delta (relevance is the delta normalized by
        // its peak). Masked pixels hit the target exactly; the global
        // deviation obeys the tau bound and shrinks with it.
        let peak_delta = 0.75 * 0.5;
        for tau in [0.1, 0.01] {
            let cfg = EditConfig {
                tau,
                ..unit_scale_config()
            };
            let out = edit(
                &image,
                &text,
                Some(&mask),
                &cfg,
                &full_registry(),
                &world,
                &sched,
            )
            .unwrap();
            let mut worst_masked = 0.0f64;
            let mut worst_global = 0.0f64;
            for y in 0..64 {
                for x in 0..64 {
                    let deviation = (out.image.get(x, y) - target.get(x, y)).abs();
                    worst_global = worst_global.max(deviation);
                    if out.mask.mask().get(x, y) == 1 {
                        worst_masked = worst_masked.max(deviation);
                    }
                }
            }
            assert!(worst_masked <= 1e-6, "tau {tau}: masked {worst_masked}");
            assert!(
                worst_global <= tau * peak_delta + 1e-6,
                "tau {tau}: global {worst_global}"
            );
        }
    }

    #[test]
    fn partial_mask_splits_the_canvas_into_edited_and_preserved() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add spot").unwrap();
        let target = world.target(&image, &text).unwrap();
        // Covers the spot's support ((20, 24), radius 9) with margin.
        let mask = box_mask(8, 12, 32, 36);
        let out = edit(
            &image,
            &text,
            Some(&mask),
            &unit_scale_config(),
            &full_registry(),
            &world,
            &sched,
        )
        .unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let value = out.image.get(x, y);
                if out.mask.mask().get(x, y) == 1 {
                    assert!((value - target.get(x, y)).abs() <= 1e-6, "({x}, {y})");
                } else {
                    assert_eq!(value.to_bits(), image.get(x, y).to_bits(), "({x}, {y})");
                }
            }
        }
        // The edit actually happened: the blob center moved.
        assert!((out.image.get(20, 24) - image.get(20, 24)).abs() > 0.1);
    }

    #[test]
    fn registry_resolution_confines_the_edit_to_the_finding_boxes() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add spot").unwrap();
        let registry = full_registry();
        let out = edit(
            &image,
            &text,
            None,
            &unit_scale_config(),
            &registry,
            &world,
            &sched,
        )
        .unwrap();
        let spot_box = registry.boxes(&finding("spot"))[0];
        for y in 0..64 {
            for x in 0..64 {
                if !spot_box.contains(x, y) {
                    assert_eq!(out.mask.mask().get(x, y), 0);
                    assert_eq!(out.image.get(x, y).to_bits(), image.get(x, y).to_bits());
                }
            }
        }
        assert!(out.mask.mask().count_ones() > 0);
    }

    #[test]
    fn edit_without_mask_or_instructions_fails() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let result = edit(
            &image,
            &InstructionSet::empty(),
            None,
            &unit_scale_config(),
            &full_registry(),
            &world,
            &sched,
        );
        assert!(matches!(result, Err(Error::EmptyInstructions)));
    }

    #[test]
    fn edit_validates_user_mask_shape_and_step_count() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add spot").unwrap();
        let small = PseudoMask::all_ones(32, 32).unwrap();
        assert!(edit(
            &image,
            &text,
            Some(&small),
            &unit_scale_config(),
            &full_registry(),
            &world,
            &sched,
        )
        .is_err());

        let mask = PseudoMask::all_ones(64, 64).unwrap();
        for steps in [0usize, 1001] {
            let cfg = EditConfig {
                steps,
                ..unit_scale_config()
            };
            assert!(edit(
                &image,
                &text,
                Some(&mask),
                &cfg,
                &full_registry(),
                &world,
                &sched,
            )
            .is_err());
        }
    }

    #[test]
    fn edit_is_deterministic_in_inputs_and_seed() {
        let sched = NoiseSchedule::default_linear();
        let world = test_world();
        let image = base_image();
        let text = parse_instruction("add mild streak").unwrap();
        let cfg = EditConfig {
            steps: 8,
            seed: 99,
            ..EditConfig::default()
        };
        let run = || {
            edit(
                &image,
                &text,
                None,
                &cfg,
                &full_registry(),
                &world,
                &sched,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.guidance.map().data(), b.guidance.map().data());
        assert_eq!(a.mask.mask().data(), b.mask.mask().data());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// The module's central contract: unmasked pixels survive the edit
        /// bit-for-bit, whatever the instruction, seed, or mask box — even
        /// at exaggerating guidance scales.
        #[test]
        fn unmasked_pixels_are_preserved_bit_exactly(
            seed in 0u64..10_000,
            which in 0usize..4,
            x0 in 0usize..48,
            y0 in 0usize..48,
            w in 4usize..16,
            h in 4usize..16,
        ) {
            let sched = NoiseSchedule::default_linear();
            let world = test_world();
            let image = base_image();
            let text = parse_instruction(
                ["add spot", "remove streak", "add severe streak",
                 "change the level of spot to minimal"][which],
            ).unwrap();
            let mask = box_mask(x0, y0, (x0 + w).min(63), (y0 + h).min(63));
            let cfg = EditConfig { steps: 4, seed, ..EditConfig::default() };
            let out = edit(
                &image, &text, Some(&mask), &cfg, &full_registry(), &world, &sched,
            ).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    if out.mask.mask().get(x, y) == 0 {
                        prop_assert_eq!(
                            out.image.get(x, y).to_bits(),
                            image.get(x, y).to_bits()
                        );
                    }
                }
            }
        }

        #[test]
        fn raising_tau_never_adds_mask_pixels(
            seed in 0u64..1000,
            tau_lo in 0.05f64..0.5,
            gap in 0.01f64..0.4,
        ) {
            let sched = NoiseSchedule::default_linear();
            let world = test_world();
            let image = base_image();
            let text = parse_instruction("add spot").unwrap();
            let relevance = relevance_map(&image, &text, 500, seed, &world, &sched).unwrap();
            let guidance = guidance_map(
                &relevance,
                &PseudoMask::all_ones(64, 64).unwrap(),
            ).unwrap();
            let low = binarize(&guidance, tau_lo).unwrap();
            let high = binarize(&guidance, tau_lo + gap).unwrap();
            for (l, h) in low.mask().data().iter().zip(high.mask().data()) {
                prop_assert!(h <= l);
            }
        }
    }
}
