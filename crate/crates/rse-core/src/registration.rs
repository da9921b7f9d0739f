//! Rigid alignment of longitudinal image pairs by mutual-information (MI)
//! search, plus the MI acceptance gate that discards poorly aligned pairs.
//!
//! Alignment is restricted to rotation, isotropic scale, and translation.
//! MI is estimated from a joint intensity histogram and reported negated
//! (lower is better), so the acceptance rule reads "discard pairs scoring
//! higher than the threshold". The search is a derivative-free Nelder–Mead
//! simplex from a deterministic set of restart seeds; MI under binning is
//! noisy and near piecewise-constant, which rules out gradient methods.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::imaging::{check_same_shape, GrayImage};

/// A rigid (similarity) transform: rotate by `angle` and scale by `scale`
/// about the image center, then translate by `(tx, ty)` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    /// Rotation in radians, normalized to `(-pi, pi]`.
    pub angle: f64,
    /// Isotropic scale factor, strictly positive.
    pub scale: f64,
    /// Horizontal translation in pixels.
    pub tx: f64,
    /// Vertical translation in pixels.
    pub ty: f64,
}

impl RigidTransform {
    /// The do-nothing transform.
    pub const IDENTITY: RigidTransform = RigidTransform {
        angle: 0.0,
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// Builds a transform, wrapping the angle into `(-pi, pi]` and
    /// rejecting non-finite parameters or non-positive scale.
    pub fn new(angle: f64, scale: f64, tx: f64, ty: f64) -> Result<Self> {
        let transform = Self {
            angle: wrap_angle(angle),
            scale,
            tx,
            ty,
        };
        transform.validate()?;
        Ok(transform)
    }

    fn validate(&self) -> Result<()> {
        let finite = self.angle.is_finite()
            && self.scale.is_finite()
            && self.tx.is_finite()
            && self.ty.is_finite();
        if !finite {
            return Err(Error::InvalidParameter {
                name: "transform",
                reason: "parameters must be finite",
            });
        }
        if self.scale <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "transform",
                reason: "scale must be strictly positive",
            });
        }
        Ok(())
    }
}

fn wrap_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return angle;
    }
    let mut wrapped = angle % core::f64::consts::TAU;
    if wrapped <= -core::f64::consts::PI {
        wrapped += core::f64::consts::TAU;
    } else if wrapped > core::f64::consts::PI {
        wrapped -= core::f64::consts::TAU;
    }
    wrapped
}

/// Negated mutual information in nats; lower means better alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MIScore {
    /// `-I(a; b)`. Mutual information is non-negative, so this is `<= 0`.
    pub value: f64,
}

/// Outcome of [`register_rigid`]: the best transform found, its masked MI
/// score, and whether the pair passed the acceptance gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult {
    /// Transform aligning the moving image onto the fixed one.
    pub transform: RigidTransform,
    /// Score of the aligned pair. Pixels the transform maps outside the
    /// moving image are excluded from the joint histogram rather than
    /// counted as zeros, which would fabricate mutual structure.
    pub score: MIScore,
    /// True exactly when `score.value <= threshold`.
    pub accepted: bool,
}

/// Inverse-warps `image` by a rigid transform with bilinear sampling.
///
/// Output pixel `q` reads the input at `c + R(-angle) * (q - c - t) / scale`
/// where `c` is the image center; samples falling outside the input grid
/// produce zero. The identity transform reproduces the input bit-exactly.
pub fn apply_rigid(image: &GrayImage, transform: &RigidTransform) -> Result<GrayImage> {
    transform.validate()?;
    let (values, _) = warp_with_validity(image, transform, 0.0);
    GrayImage::new(image.width(), image.height(), values)
}

/// Inverse-warp returning the sampled grid plus a per-pixel validity flag
/// (false where the sample position left the input grid). Invalid pixels
/// hold `fill`.
fn warp_with_validity(
    image: &GrayImage,
    transform: &RigidTransform,
    fill: f64,
) -> (Vec<f64>, Vec<bool>) {
    let width = image.width();
    let height = image.height();
    let src = image.data();
    let cx = (width - 1) as f64 / 2.0;
    let cy = (height - 1) as f64 / 2.0;
    let cos = (-transform.angle).cos();
    let sin = (-transform.angle).sin();
    let inv_scale = 1.0 / transform.scale;

    let mut values = vec![fill; width * height];
    let mut valid = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - cx - transform.tx;
            let dy = y as f64 - cy - transform.ty;
            let sx = cx + (cos * dx - sin * dy) * inv_scale;
            let sy = cy + (sin * dx + cos * dy) * inv_scale;
            if sx < 0.0 || sy < 0.0 || sx > (width - 1) as f64 || sy > (height - 1) as f64 {
                continue;
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(width - 1);
            let y1 = (y0 + 1).min(height - 1);
            let fx = sx - sx.floor();
            let fy = sy - sy.floor();
            let a = src[y0 * width + x0];
            let b = src[y0 * width + x1];
            let c = src[y1 * width + x0];
            let d = src[y1 * width + x1];
            let top = a + fx * (b - a);
            let bottom = c + fx * (d - c);
            let index = y * width + x;
            values[index] = top + fy * (bottom - top);
            valid[index] = true;
        }
    }
    (values, valid)
}

fn bin_of(value: f64, bins: usize) -> usize {
    ((value * bins as f64) as usize).min(bins - 1)
}

/// Mutual information of paired samples from a `bins x bins` joint
/// histogram with equal-width bins on `[0, 1]`, in nats.
fn histogram_mi(pairs: impl Iterator<Item = (f64, f64)>, bins: usize) -> f64 {
    let mut joint = vec![0u64; bins * bins];
    let mut rows = vec![0u64; bins];
    let mut cols = vec![0u64; bins];
    let mut n = 0u64;
    for (a, b) in pairs {
        let ia = bin_of(a, bins);
        let ib = bin_of(b, bins);
        joint[ia * bins + ib] += 1;
        rows[ia] += 1;
        cols[ib] += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let n_f = n as f64;
    // p(i,j) ln( p(i,j) / (p(i) p(j)) ) with the n factors folded in.
    let term = |ia: usize, ib: usize| -> f64 {
        let count = joint[ia * bins + ib];
        if count == 0 {
            return 0.0;
        }
        let ratio = (count as f64 * n_f) / (rows[ia] as f64 * cols[ib] as f64);
        count as f64 / n_f * ratio.ln()
    };
    // Accumulate mirrored off-diagonal terms together so the summation
    // order is invariant under histogram transposition, making
    // mutual information exactly symmetric in its arguments.
    let mut information = 0.0;
    for ia in 0..bins {
        information += term(ia, ia);
        for ib in ia + 1..bins {
            information += term(ia, ib) + term(ib, ia);
        }
    }
    information
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::InvalidParameter {
            name: "bins",
            reason: "need at least 2 histogram bins",
        });
    }
    Ok(())
}

/// Negated mutual information between two equal-sized images.
///
/// Intensities are histogrammed into `bins x bins` equal-width bins over
/// `[0, 1]` and `I = sum p(i,j) ln(p(i,j) / (p(i) p(j)))` is returned as
/// `-I` nats, so that lower scores mean stronger dependence.
pub fn mutual_information(a: &GrayImage, b: &GrayImage, bins: usize) -> Result<MIScore> {
    check_same_shape(a.width(), a.height(), b.width(), b.height())?;
    check_bins(bins)?;
    let pairs = a.data().iter().copied().zip(b.data().iter().copied());
    Ok(MIScore {
        value: -histogram_mi(pairs, bins),
    })
}

/// Box constraints for the rigid search, symmetric about the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBounds {
    /// Maximum absolute rotation in radians.
    pub max_angle: f64,
    /// Inclusive scale interval.
    pub scale: (f64, f64),
    /// Maximum absolute translation in pixels, per axis.
    pub max_translation: f64,
}

impl Default for SearchBounds {
    /// Typical inter-visit positioning drift: up to 10 degrees of rotation,
    /// 10% scale change, and 20 px of translation.
    fn default() -> Self {
        Self {
            max_angle: 10.0f64.to_radians(),
            scale: (0.9, 1.1),
            max_translation: 20.0,
        }
    }
}

impl SearchBounds {
    fn validate(&self) -> Result<()> {
        let (scale_min, scale_max) = self.scale;
        let finite = self.max_angle.is_finite()
            && scale_min.is_finite()
            && scale_max.is_finite()
            && self.max_translation.is_finite();
        if !finite
            || self.max_angle < 0.0
            || self.max_translation < 0.0
            || scale_min <= 0.0
            || scale_min > scale_max
        {
            return Err(Error::InvalidParameter {
                name: "bounds",
                reason: "search bounds are empty or non-finite",
            });
        }
        Ok(())
    }
}

/// Configuration for [`register_rigid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    /// Search box for the transform parameters.
    pub bounds: SearchBounds,
    /// Joint-histogram bins per axis.
    pub bins: usize,
    /// Acceptance threshold on the negated-MI score. The default of -0.88
    /// assumes the default 64-bin natural-log estimator; retune it if the
    /// estimator parameters change.
    pub threshold: f64,
    /// Number of restart seeds besides the identity.
    pub restarts: usize,
    /// Simplex iterations per start.
    pub max_iterations: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            bounds: SearchBounds::default(),
            bins: 64,
            threshold: -0.88,
            restarts: 8,
            max_iterations: 120,
        }
    }
}

/// Maps normalized search coordinates in `[-1, 1]^4` to a transform.
struct ParamMap {
    max_angle: f64,
    scale_mid: f64,
    scale_half: f64,
    max_translation: f64,
}

impl ParamMap {
    fn new(bounds: &SearchBounds) -> Self {
        Self {
            max_angle: bounds.max_angle,
            scale_mid: (bounds.scale.0 + bounds.scale.1) / 2.0,
            scale_half: (bounds.scale.1 - bounds.scale.0) / 2.0,
            max_translation: bounds.max_translation,
        }
    }

    fn transform(&self, u: &[f64; 4]) -> RigidTransform {
        let clamp = |v: f64| v.clamp(-1.0, 1.0);
        RigidTransform {
            angle: clamp(u[0]) * self.max_angle,
            scale: self.scale_mid + clamp(u[1]) * self.scale_half,
            tx: clamp(u[2]) * self.max_translation,
            ty: clamp(u[3]) * self.max_translation,
        }
    }

    /// Normalized coordinates of the identity transform, clamped into the
    /// search box when the box does not contain it.
    fn identity_seed(&self) -> [f64; 4] {
        let scale_u = if self.scale_half > 0.0 {
            ((1.0 - self.scale_mid) / self.scale_half).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        [0.0, scale_u, 0.0, 0.0]
    }

    /// Inverse of [`ParamMap::transform`], clamping into the search box.
    fn normalize(&self, transform: &RigidTransform) -> [f64; 4] {
        let ratio = |value: f64, extent: f64| {
            if extent > 0.0 {
                (value / extent).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        };
        let scale_u = if self.scale_half > 0.0 {
            ((transform.scale - self.scale_mid) / self.scale_half).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        [
            ratio(transform.angle, self.max_angle),
            scale_u,
            ratio(transform.tx, self.max_translation),
            ratio(transform.ty, self.max_translation),
        ]
    }
}

/// Halves both dimensions by averaging 2x2 blocks (odd trailing rows and
/// columns are dropped). Averages of in-range values stay in range.
fn half_size(image: &GrayImage) -> GrayImage {
    let width = image.width();
    let half_width = width / 2;
    let half_height = image.height() / 2;
    let src = image.data();
    let mut data = Vec::with_capacity(half_width * half_height);
    for y in 0..half_height {
        for x in 0..half_width {
            let (x0, y0) = (2 * x, 2 * y);
            let sum = src[y0 * width + x0]
                + src[y0 * width + x0 + 1]
                + src[(y0 + 1) * width + x0]
                + src[(y0 + 1) * width + x0 + 1];
            data.push(sum / 4.0);
        }
    }
    GrayImage::new(half_width, half_height, data)
        .expect("2x2 block averages of a valid image are a valid image")
}

/// Negated masked MI of `moving` warped by `transform` against `fixed`;
/// pixels the warp maps outside the moving grid are excluded, and pairs
/// with almost no overlap score a flat worst-case zero.
fn alignment_score(
    fixed: &GrayImage,
    moving: &GrayImage,
    transform: &RigidTransform,
    bins: usize,
) -> f64 {
    let min_overlap = 32.min(fixed.data().len());
    let (values, valid) = warp_with_validity(moving, transform, 0.0);
    let overlap = valid.iter().filter(|&&v| v).count();
    if overlap < min_overlap {
        return 0.0;
    }
    let pairs = fixed
        .data()
        .iter()
        .zip(values.iter())
        .zip(valid.iter())
        .filter(|(_, &ok)| ok)
        .map(|((&a, &b), _)| (a, b));
    -histogram_mi(pairs, bins)
}

/// Search box for pyramid level `level` (0 = full resolution): angle and
/// scale bounds are resolution-independent, translations shrink with the
/// image but never below 2 px (or the caller's own tighter bound).
fn level_bounds(bounds: &SearchBounds, level: u32) -> SearchBounds {
    let scaled = bounds.max_translation / f64::from(1 << level);
    SearchBounds {
        max_angle: bounds.max_angle,
        scale: bounds.scale,
        max_translation: scaled.max(bounds.max_translation.min(2.0)),
    }
}

/// Deterministic restart seed `index`: sign patterns over the four search
/// axes at half extent, even-parity corners first, then odd-parity; further
/// indices repeat the pattern at successively halved radii.
fn restart_seed(index: usize) -> [f64; 4] {
    const EVEN: [u8; 8] = [0b0000, 0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100, 0b1111];
    const ODD: [u8; 8] = [0b0001, 0b0010, 0b0100, 0b0111, 0b1000, 0b1011, 0b1101, 0b1110];
    let pattern = if index % 16 < 8 {
        EVEN[index % 16]
    } else {
        ODD[index % 16 - 8]
    };
    let radius = 0.5 / (1 << (index / 16)) as f64;
    let mut seed = [0.0; 4];
    for (axis, value) in seed.iter_mut().enumerate() {
        *value = if pattern >> axis & 1 == 1 { radius } else { -radius };
    }
    seed
}

/// Nelder–Mead simplex minimization with standard coefficients
/// (reflection 1, expansion 2, contraction 0.5, shrink 0.5). The best
/// vertex never regresses, so the result is at least as good as `start`.
fn nelder_mead(
    objective: &mut impl FnMut(&[f64; 4]) -> f64,
    start: [f64; 4],
    step: f64,
    max_iterations: usize,
) -> ([f64; 4], f64) {
    const DIM: usize = 4;
    let mut simplex: Vec<([f64; 4], f64)> = Vec::with_capacity(DIM + 1);
    simplex.push((start, objective(&start)));
    for axis in 0..DIM {
        let mut vertex = start;
        vertex[axis] += step;
        simplex.push((vertex, objective(&vertex)));
    }

    for _ in 0..max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (anchor, best) = simplex[0];
        let worst = simplex[DIM].1;
        let spread = simplex
            .iter()
            .map(|(v, _)| {
                (0..DIM)
                    .map(|axis| (v[axis] - anchor[axis]).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if (worst - best).abs() <= 1e-12 && spread <= 1e-7 {
            break;
        }

        // Centroid of all vertices except the worst.
        let mut centroid = [0.0; DIM];
        for (vertex, _) in &simplex[..DIM] {
            for axis in 0..DIM {
                centroid[axis] += vertex[axis] / DIM as f64;
            }
        }

        let blend = |from: &[f64; 4], toward: &[f64; 4], factor: f64| {
            let mut out = [0.0; DIM];
            for axis in 0..DIM {
                out[axis] = from[axis] + factor * (toward[axis] - from[axis]);
            }
            out
        };

        let reflected = blend(&centroid, &simplex[DIM].0, -1.0);
        let reflected_score = objective(&reflected);
        if reflected_score < simplex[0].1 {
            let expanded = blend(&centroid, &simplex[DIM].0, -2.0);
            let expanded_score = objective(&expanded);
            simplex[DIM] = if expanded_score < reflected_score {
                (expanded, expanded_score)
            } else {
                (reflected, reflected_score)
            };
            continue;
        }
        if reflected_score < simplex[DIM - 1].1 {
            simplex[DIM] = (reflected, reflected_score);
            continue;
        }
        let contracted = blend(&centroid, &simplex[DIM].0, 0.5);
        let contracted_score = objective(&contracted);
        if contracted_score < simplex[DIM].1 {
            simplex[DIM] = (contracted, contracted_score);
            continue;
        }
        // Shrink toward the best vertex.
        let anchor = simplex[0].0;
        for entry in simplex.iter_mut().skip(1) {
            let shrunk = blend(&anchor, &entry.0, 0.5);
            *entry = (shrunk, objective(&shrunk));
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Finds the rigid transform aligning `moving` onto `fixed` by minimizing
/// the negated masked MI, then applies the acceptance gate.
///
/// The search is coarse-to-fine: the pair is repeatedly block-averaged to
/// half size while both sides stay at least 64 px, the expensive
/// multi-start simplex search (identity plus `cfg.restarts` deterministic
/// seeds) runs only on the coarsest level, and each finer level simply
/// re-polishes the upscaled optimum. The reported score and the gate
/// decision always come from full resolution. If the polished result ends
/// up worse than the plain identity alignment, the identity is re-polished
/// and the better of the two wins, so the result is never worse than the
/// identity alignment. Fully deterministic for a given config; safe to run
/// on many pairs in parallel.
pub fn register_rigid(
    fixed: &GrayImage,
    moving: &GrayImage,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    check_same_shape(fixed.width(), fixed.height(), moving.width(), moving.height())?;
    check_bins(cfg.bins)?;
    cfg.bounds.validate()?;
    if !cfg.threshold.is_finite() {
        return Err(Error::InvalidParameter {
            name: "threshold",
            reason: "must be finite",
        });
    }

    struct Level {
        fixed: GrayImage,
        moving: GrayImage,
    }
    let mut levels = vec![Level {
        fixed: fixed.clone(),
        moving: moving.clone(),
    }];
    loop {
        let last = levels.last().expect("at least one level");
        if last.fixed.width().min(last.fixed.height()) < 128 {
            break;
        }
        let next = Level {
            fixed: half_size(&last.fixed),
            moving: half_size(&last.moving),
        };
        levels.push(next);
    }

    // Multi-start search on the coarsest level.
    let coarsest = levels.len() - 1;
    let coarse_map = ParamMap::new(&level_bounds(&cfg.bounds, coarsest as u32));
    let mut current = {
        let level = &levels[coarsest];
        let mut objective = |u: &[f64; 4]| {
            alignment_score(&level.fixed, &level.moving, &coarse_map.transform(u), cfg.bins)
        };
        let mut best = nelder_mead(
            &mut objective,
            coarse_map.identity_seed(),
            0.35,
            cfg.max_iterations,
        );
        for index in 0..cfg.restarts {
            let candidate =
                nelder_mead(&mut objective, restart_seed(index), 0.35, cfg.max_iterations);
            if candidate.1 < best.1 {
                best = candidate;
            }
        }
        coarse_map.transform(&best.0)
    };

    // Walk down to full resolution, doubling translations and re-polishing.
    let mut best_score = f64::INFINITY;
    for index in (0..coarsest + 1).rev() {
        let final_level = index == 0;
        if index != coarsest {
            current = RigidTransform {
                tx: current.tx * 2.0,
                ty: current.ty * 2.0,
                ..current
            };
        } else if !final_level {
            // Coarsest level already searched; nothing to refine here.
            continue;
        }
        let level = &levels[index];
        let map = ParamMap::new(&level_bounds(&cfg.bounds, index as u32));
        let mut objective =
            |u: &[f64; 4]| alignment_score(&level.fixed, &level.moving, &map.transform(u), cfg.bins);
        let (step, iterations) = if final_level {
            (0.05, cfg.max_iterations + 40)
        } else {
            (0.08, cfg.max_iterations / 2 + 20)
        };
        let mut refined = nelder_mead(&mut objective, map.normalize(&current), step, iterations);
        if final_level {
            // Guarantee the search never loses to doing nothing at all.
            let identity = map.identity_seed();
            if objective(&identity) < refined.1 {
                let fallback = nelder_mead(&mut objective, identity, 0.05, cfg.max_iterations + 40);
                if fallback.1 < refined.1 {
                    refined = fallback;
                }
            }
            best_score = refined.1;
        }
        current = map.transform(&refined.0);
    }

    let score = MIScore { value: best_score };
    Ok(RegistrationResult {
        transform: current,
        score,
        accepted: score.value <= cfg.threshold,
    })
}
