//! Grayscale image and float-map containers plus the shared image operations
//! used across registration and editing: edge-preserving bilateral smoothing,
//! max-division map normalization, and half-pixel-aligned bilinear resize.
//!
//! Two container types are distinguished on purpose. [`GrayImage`] holds
//! decoded pixel intensities and enforces the inclusive `[0, 1]` range;
//! [`Latent`] holds unconstrained (but finite) float grids such as noised
//! samples, predicted noise, and relevance maps.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// A grayscale image with intensities in the inclusive range `[0, 1]`.
///
/// Pixels are stored row-major; `(x, y)` addresses column `x` of row `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Wraps a row-major pixel buffer, validating shape and value range.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::BufferSize {
                width,
                height,
                len: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: "image",
                    index,
                    value,
                });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::PixelRange { index, value });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Creates an image where every pixel holds `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        check_dims(width, height)?;
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(Error::PixelRange { index: 0, value });
        }
        Ok(Self {
            width,
            height,
            data: vec![value; width * height],
        })
    }

    /// Creates an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Converts a latent grid to an image by clamping every value to `[0, 1]`.
    pub fn from_latent_clamped(latent: &Latent) -> Self {
        let data = latent.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            width: latent.width(),
            height: latent.height(),
            data,
        }
    }

    /// Image width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Image height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major pixel buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Pixel at column `x`, row `y`. Panics if out of bounds.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.data[y * self.width + x]
    }

    /// Copies the pixel buffer into an unconstrained latent grid.
    pub fn to_latent(&self) -> Latent {
        Latent {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }
}

/// An unconstrained finite float grid sharing [`GrayImage`]'s row-major
/// layout: noised samples, predicted noise, relevance and guidance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Latent {
    /// Wraps a row-major buffer, validating shape and finiteness.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::BufferSize {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "latent",
                index,
                value,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Creates an all-zero grid.
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![0.0; width * height],
        })
    }

    /// Grid width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Grid height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major value buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value at column `x`, row `y`. Panics if out of bounds.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height, "index out of bounds");
        self.data[y * self.width + x]
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }
}

/// Returns an error unless `a` and `b` share a shape.
pub(crate) fn check_same_shape(
    a_width: usize,
    a_height: usize,
    b_width: usize,
    b_height: usize,
) -> Result<()> {
    if a_width != b_width || a_height != b_height {
        return Err(Error::DimensionMismatch {
            expected_width: a_width,
            expected_height: a_height,
            actual_width: b_width,
            actual_height: b_height,
        });
    }
    Ok(())
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter {
            name: "dimensions",
            reason: "width and height must be at least 1",
        });
    }
    Ok(())
}

fn check_sigma(name: &'static str, sigma: f64) -> Result<()> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidParameter {
            name,
            reason: "must be finite and positive",
        });
    }
    Ok(())
}

/// Edge-preserving bilateral smoothing.
///
/// Each output pixel is a normalized weighted average of its neighbors
/// within a square window of radius `ceil(3 * sigma_domain)`. The weight of
/// a neighbor is the product of a spatial Gaussian in pixel distance
/// (`sigma_domain`) and a range Gaussian in intensity difference measured on
/// the 0–255 scale (`sigma_range`). Neighbors outside the image are dropped
/// and the weights of the remaining ones are renormalized, so border pixels
/// average over their true neighborhoods rather than padded values.
pub fn bilateral_filter(image: &GrayImage, sigma_domain: f64, sigma_range: f64) -> Result<GrayImage> {
    check_sigma("sigma_domain", sigma_domain)?;
    check_sigma("sigma_range", sigma_range)?;

    let width = image.width();
    let height = image.height();
    let radius = (3.0 * sigma_domain).ceil() as isize;
    let inv_two_sd2 = 1.0 / (2.0 * sigma_domain * sigma_domain);
    let inv_two_sr2 = 1.0 / (2.0 * sigma_range * sigma_range);

    // Spatial weights depend only on the offset, so compute them once.
    let window = (2 * radius + 1) as usize;
    let mut spatial = vec![0.0f64; window * window];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let d2 = (dx * dx + dy * dy) as f64;
            spatial[(dy + radius) as usize * window + (dx + radius) as usize] =
                (-d2 * inv_two_sd2).exp();
        }
    }

    // The output is a convex combination of input pixels, so mathematically
    // it can never leave the input range; clamp to guard against the few
    // ulps of rounding the accumulation can introduce.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in image.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }

    let src = image.data();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let center = src[y * width + x];
            let mut weight_sum = 0.0;
            let mut delta_sum = 0.0;
            for dy in -radius..=radius {
                let yy = y as isize + dy;
                if yy < 0 || yy >= height as isize {
                    continue;
                }
                for dx in -radius..=radius {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= width as isize {
                        continue;
                    }
                    let value = src[yy as usize * width + xx as usize];
                    let range = (value - center) * 255.0;
                    let weight = spatial
                        [(dy + radius) as usize * window + (dx + radius) as usize]
                        * (-range * range * inv_two_sr2).exp();
                    weight_sum += weight;
                    delta_sum += weight * (value - center);
                }
            }
            // Accumulating deviations from the center keeps a constant
            // neighborhood exactly constant: every term above is zero.
            out.push((center + delta_sum / weight_sum).clamp(lo, hi));
        }
    }
    Ok(GrayImage {
        width,
        height,
        data: out,
    })
}

/// Divides a non-negative map by its maximum so values land in `[0, 1]`.
///
/// An all-zero map is returned unchanged (there is nothing to scale), and
/// normalizing an already-normalized map is an exact no-op because dividing
/// by a maximum of 1 leaves every value bit-identical.
pub fn normalize_map(map: &Latent) -> Result<Latent> {
    let mut max = 0.0f64;
    for (index, &value) in map.data().iter().enumerate() {
        if value < 0.0 {
            return Err(Error::NegativeMapValue { index, value });
        }
        max = max.max(value);
    }
    if max == 0.0 {
        return Ok(map.clone());
    }
    let data = map.data().iter().map(|v| v / max).collect();
    Ok(Latent::from_parts_unchecked(map.width(), map.height(), data))
}

/// Bilinear resize with half-pixel center alignment and edge clamping.
///
/// Destination pixel centers map to source coordinates via
/// `src = (dst + 0.5) * (in_size / out_size) - 0.5`, which keeps the image
/// content centered for any scale factor. Sample positions outside the
/// source grid clamp to the nearest edge pixel. Resizing to the input size
/// returns a bit-identical copy.
pub fn resize(image: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    check_dims(width, height)?;
    if width == image.width() && height == image.height() {
        return Ok(image.clone());
    }

    let src = image.data();
    let in_w = image.width();
    let in_h = image.height();
    let scale_x = in_w as f64 / width as f64;
    let scale_y = in_h as f64 / height as f64;

    let mut out = Vec::with_capacity(width * height);
    for oy in 0..height {
        // Clamp the source coordinate itself so off-grid samples replicate
        // the edge pixel instead of extrapolating.
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (in_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let fy = sy - sy.floor();
        let y1 = (y0 + 1).min(in_h - 1);
        for ox in 0..width {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (in_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let fx = sx - sx.floor();
            let x1 = (x0 + 1).min(in_w - 1);

            // Lerp form: constant inputs stay exactly constant because both
            // differences vanish.
            let a = src[y0 * in_w + x0];
            let b = src[y0 * in_w + x1];
            let c = src[y1 * in_w + x0];
            let d = src[y1 * in_w + x1];
            let top = a + fx * (b - a);
            let bottom = c + fx * (d - c);
            out.push(top + fy * (bottom - top));
        }
    }
    GrayImage::new(width, height, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Brute-force bilateral reference: literal double loop over the window
    /// with explicit bounds checks and value-space (not delta-space)
    /// accumulation.
    fn bilateral_reference(image: &GrayImage, sd: f64, sr: f64) -> Vec<f64> {
        let (w, h) = (image.width(), image.height());
        let radius = (3.0 * sd).ceil() as isize;
        let mut out = Vec::new();
        for y in 0..h as isize {
            for x in 0..w as isize {
                let center = image.get(x as usize, y as usize);
                let mut num = 0.0;
                let mut den = 0.0;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                            continue;
                        }
                        let v = image.get(xx as usize, yy as usize);
                        let spatial = -((dx * dx + dy * dy) as f64) / (2.0 * sd * sd);
                        let diff = (v - center) * 255.0;
                        let range = -(diff * diff) / (2.0 * sr * sr);
                        let weight = (spatial + range).exp();
                        num += weight * v;
                        den += weight;
                    }
                }
                out.push(num / den);
            }
        }
        out
    }

    #[test]
    fn gray_image_rejects_out_of_range_pixels() {
        let err = GrayImage::new(2, 1, vec![0.5, 1.5]).unwrap_err();
        assert!(matches!(err, Error::PixelRange { index: 1, .. }));
        let err = GrayImage::new(2, 1, vec![-0.1, 0.5]).unwrap_err();
        assert!(matches!(err, Error::PixelRange { index: 0, .. }));
    }

    #[test]
    fn gray_image_rejects_bad_shapes() {
        assert!(matches!(
            GrayImage::new(2, 2, vec![0.0; 3]),
            Err(Error::BufferSize { .. })
        ));
        assert!(matches!(
            GrayImage::new(0, 4, Vec::new()),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn latent_rejects_non_finite_values() {
        let err = Latent::new(2, 1, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
        assert!(Latent::new(2, 1, vec![-3.0, 7.5]).is_ok());
    }

    #[test]
    fn from_latent_clamped_clamps_to_unit_range() {
        let latent = Latent::new(3, 1, vec![-0.5, 0.25, 1.5]).unwrap();
        let image = GrayImage::from_latent_clamped(&latent);
        assert_eq!(image.data(), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn bilateral_rejects_non_positive_sigmas() {
        let image = GrayImage::filled(4, 4, 0.5).unwrap();
        assert!(bilateral_filter(&image, 0.0, 50.0).is_err());
        assert!(bilateral_filter(&image, 2.0, -1.0).is_err());
        assert!(bilateral_filter(&image, f64::NAN, 50.0).is_err());
    }

    #[test]
    fn bilateral_keeps_constant_image_exactly() {
        let image = GrayImage::filled(9, 7, 0.37).unwrap();
        let filtered = bilateral_filter(&image, 2.0, 50.0).unwrap();
        assert_eq!(filtered.data(), image.data());
    }

    #[test]
    fn bilateral_impulse_matches_reference() {
        // A centered unit impulse on a 3x3 canvas exercises both the spatial
        // and the range kernel at once.
        let mut data = vec![0.0; 9];
        data[4] = 1.0;
        let image = GrayImage::new(3, 3, data).unwrap();
        let filtered = bilateral_filter(&image, 1.0, 50.0).unwrap();
        let reference = bilateral_reference(&image, 1.0, 50.0);
        for (got, want) in filtered.data().iter().zip(&reference) {
            assert!(close(*got, *want, 1e-12), "got {got}, want {want}");
        }
        // The impulse must be smoothed strictly down, neighbors strictly up.
        assert!(filtered.get(1, 1) < 1.0);
        assert!(filtered.get(0, 0) > 0.0);
    }

    #[test]
    fn bilateral_preserves_strong_edges() {
        // A step edge with a huge intensity gap and a tight range sigma:
        // the filter must not blur across the edge by more than a whisker.
        let image = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { 1.0 }).unwrap();
        let filtered = bilateral_filter(&image, 1.0, 10.0).unwrap();
        for y in 0..8 {
            assert!(filtered.get(3, y) < 1e-6);
            assert!(filtered.get(4, y) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let image = GrayImage::from_fn(5, 4, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
        let resized = resize(&image, 5, 4).unwrap();
        assert_eq!(resized.data(), image.data());
    }

    #[test]
    fn resize_upsamples_gradient_with_half_pixel_centers() {
        // 2x2 horizontal gradient doubled: half-pixel alignment yields
        // samples at source coordinates -0.25, 0.25, 0.75, 1.25, which clamp
        // to the 0..1 edges and interpolate in between.
        let image = GrayImage::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let resized = resize(&image, 4, 4).unwrap();
        let expected_row = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for (x, &expected) in expected_row.iter().enumerate() {
                assert!(
                    close(resized.get(x, y), expected, 1e-12),
                    "pixel ({x}, {y}) = {}",
                    resized.get(x, y)
                );
            }
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        let image = GrayImage::filled(4, 4, 0.5).unwrap();
        assert!(resize(&image, 0, 4).is_err());
        assert!(resize(&image, 4, 0).is_err());
    }

    #[test]
    fn normalize_scales_max_to_exactly_one() {
        let map = Latent::new(2, 2, vec![0.2, 0.4, 0.1, 0.4]).unwrap();
        let normalized = normalize_map(&map).unwrap();
        assert_eq!(normalized.get(1, 0), 1.0);
        assert_eq!(normalized.get(1, 1), 1.0);
        assert!(close(normalized.get(0, 0), 0.5, 1e-15));
    }

    #[test]
    fn normalize_is_idempotent_bitwise() {
        let map = Latent::new(3, 1, vec![0.3, 0.7, 0.05]).unwrap();
        let once = normalize_map(&map).unwrap();
        let twice = normalize_map(&once).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn normalize_keeps_all_zero_map() {
        let map = Latent::zeros(4, 4).unwrap();
        let normalized = normalize_map(&map).unwrap();
        assert_eq!(normalized.data(), map.data());
    }

    #[test]
    fn normalize_rejects_negative_values() {
        let map = Latent::new(2, 1, vec![0.5, -0.25]).unwrap();
        assert!(matches!(
            normalize_map(&map),
            Err(Error::NegativeMapValue { index: 1, .. })
        ));
    }

    fn arb_image(max_side: usize) -> impl Strategy<Value = GrayImage> {
        (1..=max_side, 1..=max_side)
            .prop_flat_map(|(w, h)| {
                proptest::collection::vec(0.0f64..=1.0, w * h)
                    .prop_map(move |data| GrayImage::new(w, h, data).unwrap())
            })
    }

    proptest! {
        #[test]
        fn bilateral_matches_reference_on_random_images(
            image in arb_image(8),
            sd in 0.5f64..2.0,
            sr in 5.0f64..80.0,
        ) {
            let filtered = bilateral_filter(&image, sd, sr).unwrap();
            let reference = bilateral_reference(&image, sd, sr);
            for (got, want) in filtered.data().iter().zip(&reference) {
                prop_assert!(close(*got, *want, 1e-12));
            }
        }

        #[test]
        fn bilateral_output_range_is_bounded_by_input_range(
            image in arb_image(10),
            sd in 0.5f64..2.5,
            sr in 5.0f64..120.0,
        ) {
            let lo = image.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = image.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let filtered = bilateral_filter(&image, sd, sr).unwrap();
            for &v in filtered.data() {
                prop_assert!(v >= lo && v <= hi);
            }
        }

        #[test]
        fn resize_matches_per_pixel_oracle(
            image in arb_image(6),
            out_w in 1usize..9,
            out_h in 1usize..9,
        ) {
            let resized = resize(&image, out_w, out_h).unwrap();
            for oy in 0..out_h {
                for ox in 0..out_w {
                    // Independent scalar oracle for one output pixel.
                    let sx = ((ox as f64 + 0.5) * image.width() as f64 / out_w as f64 - 0.5)
                        .clamp(0.0, (image.width() - 1) as f64);
                    let sy = ((oy as f64 + 0.5) * image.height() as f64 / out_h as f64 - 0.5)
                        .clamp(0.0, (image.height() - 1) as f64);
                    let x0 = sx.floor() as usize;
                    let y0 = sy.floor() as usize;
                    let x1 = (x0 + 1).min(image.width() - 1);
                    let y1 = (y0 + 1).min(image.height() - 1);
                    let fx = sx - sx.floor();
                    let fy = sy - sy.floor();
                    let want = image.get(x0, y0) * (1.0 - fx) * (1.0 - fy)
                        + image.get(x1, y0) * fx * (1.0 - fy)
                        + image.get(x0, y1) * (1.0 - fx) * fy
                        + image.get(x1, y1) * fx * fy;
                    prop_assert!(close(resized.get(ox, oy), want, 1e-12));
                }
            }
        }

        #[test]
        fn resize_round_trip_preserves_constant_images(
            value in 0.0f64..=1.0,
            w in 1usize..8,
            h in 1usize..8,
        ) {
            let image = GrayImage::filled(w, h, value).unwrap();
            let up = resize(&image, 2 * w, 2 * h).unwrap();
            let down = resize(&up, w, h).unwrap();
            prop_assert_eq!(down.data(), image.data());
        }

        #[test]
        fn normalize_lands_in_unit_interval(
            data in proptest::collection::vec(0.0f64..10.0, 1..64),
        ) {
            let map = Latent::new(data.len(), 1, data).unwrap();
            let normalized = normalize_map(&map).unwrap();
            for &v in normalized.data() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
