//! File formats: 8-bit grayscale PNG for images, RGB PNG for the guidance
//! overlay, and raw little-endian `f32` grids with a JSON sidecar for
//! bit-exact map persistence. Every write lands atomically
//! (temp-file-then-rename), so readers never observe partial artifacts.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use image::{ImageFormat, ImageReader, Luma, Rgb};
use serde::{Deserialize, Serialize};

use rse_core::imaging::{GrayImage, Latent};
use rse_core::maskreg::PseudoMask;

use crate::error::{CliError, Result};

/// What a raw float grid holds; stored in the sidecar so a reader can
/// validate it is loading the kind of map it expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// A diffusion-space grid (unbounded values).
    Latent,
    /// A normalized relevance map in `[0, 1]`.
    Relevance,
    /// A gated guidance map in `[0, 1]`.
    Guidance,
    /// A binary mask rendered as 0.0 / 1.0.
    Mask,
}

/// JSON sidecar describing a raw float grid file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSidecar {
    /// Grid width in pixels.
    pub width: usize,
    /// Grid height in pixels.
    pub height: usize,
    /// What the grid holds.
    pub kind: MapKind,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes bytes to a sibling temp file and renames it into place, so the
/// destination is either absent, the old content, or the complete new
/// content — never a torn write.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let directory = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(directory) = directory {
        fs::create_dir_all(directory).map_err(|e| CliError::io(directory, e))?;
    }
    let counter = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut temp = path.as_os_str().to_owned();
    temp.push(format!(".tmp.{}.{}", std::process::id(), counter));
    let temp = PathBuf::from(temp);
    fs::write(&temp, bytes).map_err(|e| CliError::io(&temp, e))?;
    fs::rename(&temp, path).map_err(|e| {
        let _ = fs::remove_file(&temp);
        CliError::io(path, e)
    })
}

/// Loads an image file and converts it to a grayscale float grid,
/// intensities scaled to `[0, 1]`.
pub fn load_gray_png(path: &Path) -> Result<GrayImage> {
    let reader = ImageReader::open(path).map_err(|e| CliError::io(path, e))?;
    let decoded = reader
        .decode()
        .map_err(|e| CliError::io(path, format!("decode failed: {e}")))?;
    let gray = decoded.to_luma8();
    let (width, height) = (gray.width() as usize, gray.height() as usize);
    let data = gray
        .pixels()
        .map(|pixel| f64::from(pixel.0[0]) / 255.0)
        .collect();
    Ok(GrayImage::new(width, height, data)?)
}

fn encode_png<P: image::PixelWithColorType<Subpixel = u8>>(
    path: &Path,
    buffer: &image::ImageBuffer<P, Vec<u8>>,
) -> Result<()> {
    let mut bytes = Cursor::new(Vec::new());
    buffer
        .write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| CliError::io(path, format!("encode failed: {e}")))?;
    atomic_write(path, &bytes.into_inner())
}

/// Saves a grayscale float grid as an 8-bit PNG (values scaled by 255 and
/// rounded).
pub fn save_gray_png(path: &Path, image: &GrayImage) -> Result<()> {
    let buffer = image::ImageBuffer::from_fn(
        image.width() as u32,
        image.height() as u32,
        |x, y| {
            let value = image.get(x as usize, y as usize);
            Luma([(value * 255.0).round() as u8])
        },
    );
    encode_png(path, &buffer)
}

/// Saves a binary mask as an 8-bit PNG with set pixels at 255.
pub fn save_mask_png(path: &Path, mask: &PseudoMask) -> Result<()> {
    let buffer =
        image::ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
            Luma([mask.get(x as usize, y as usize) * 255])
        });
    encode_png(path, &buffer)
}

/// Loads an 8-bit PNG as a binary mask: intensities of 128 and above are
/// set, the rest clear.
pub fn load_mask_png(path: &Path) -> Result<PseudoMask> {
    let image = load_gray_png(path)?;
    let bits = image
        .data()
        .iter()
        .map(|&value| u8::from(value >= 128.0 / 255.0))
        .collect();
    Ok(PseudoMask::from_bits(image.width(), image.height(), bits)?)
}

/// Renders a guidance overlay: the input image in gray, shifted toward
/// pure red in proportion to the guidance value at each pixel.
pub fn save_overlay_png(path: &Path, base: &GrayImage, guidance: &Latent) -> Result<()> {
    if base.width() != guidance.width() || base.height() != guidance.height() {
        return Err(CliError::Config(format!(
            "overlay shapes differ: image {}x{} vs guidance {}x{}",
            base.width(),
            base.height(),
            guidance.width(),
            guidance.height()
        )));
    }
    let buffer =
        image::ImageBuffer::from_fn(base.width() as u32, base.height() as u32, |x, y| {
            let gray = base.get(x as usize, y as usize);
            let heat = guidance.get(x as usize, y as usize).clamp(0.0, 1.0);
            let red = gray + (1.0 - gray) * heat;
            let other = gray * (1.0 - heat);
            Rgb([
                (red * 255.0).round() as u8,
                (other * 255.0).round() as u8,
                (other * 255.0).round() as u8,
            ])
        });
    encode_png(path, &buffer)
}

/// Writes a float grid as raw little-endian `f32` values in row-major
/// order, plus a `.json` sidecar next to it carrying shape and kind.
/// The quantization to `f32` happens here; reading the pair back yields
/// exactly the stored 32-bit values.
pub fn save_raw_map(
    bin_path: &Path,
    data: &[f64],
    width: usize,
    height: usize,
    kind: MapKind,
) -> Result<()> {
    if data.len() != width * height {
        return Err(CliError::Config(format!(
            "raw map length {} does not match {width}x{height}",
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &value in data {
        bytes.extend_from_slice(&(value as f32).to_le_bytes());
    }
    atomic_write(bin_path, &bytes)?;

    let sidecar = MapSidecar {
        width,
        height,
        kind,
    };
    let json = serde_json::to_vec_pretty(&sidecar)
        .map_err(|e| CliError::Config(format!("sidecar serialization failed: {e}")))?;
    atomic_write(&sidecar_path(bin_path), &json)
}

/// Reads a raw float grid and its sidecar, returning the values widened
/// back to `f64` along with the sidecar metadata.
pub fn load_raw_map(bin_path: &Path) -> Result<(Vec<f64>, MapSidecar)> {
    let sidecar_path = sidecar_path(bin_path);
    let sidecar_bytes =
        fs::read(&sidecar_path).map_err(|e| CliError::io(&sidecar_path, e))?;
    let sidecar: MapSidecar = serde_json::from_slice(&sidecar_bytes)
        .map_err(|e| CliError::Config(format!("{}: bad sidecar: {e}", sidecar_path.display())))?;

    let bytes = fs::read(bin_path).map_err(|e| CliError::io(bin_path, e))?;
    let expected = sidecar.width * sidecar.height * 4;
    if bytes.len() != expected {
        return Err(CliError::Config(format!(
            "{}: raw file holds {} bytes, sidecar implies {expected}",
            bin_path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|chunk| f64::from(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]])))
        .collect();
    Ok((data, sidecar))
}

/// The sidecar path for a raw grid file: the same name with `.json`
/// appended to the extension position.
pub fn sidecar_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}
