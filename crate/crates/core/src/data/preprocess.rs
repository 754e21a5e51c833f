use super::pnm::RgbImage;
use super::quality::FUNDUS_THRESHOLD;
use super::DataError;
use crate::autodiff::Tensor;

/// Minimum acceptable side of the detected fundus bounding box, in pixels.
pub const MIN_BBOX_SIDE: usize = 8;

/// Square crop window in source-image coordinates (a pixel spans
/// `[i, i+1)`, so `x0` and `side` are continuous).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

/// Model-ready image: channel-major pixels in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    /// Shape [3, R, R].
    pub pixels: Tensor,
    /// Manifest path of the source image, when known.
    pub source: Option<String>,
}

/// Map an 8-bit sample to [-1, 1]: 0 -> -1, 255 -> +1.
#[inline]
pub fn pixel_to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Find the square window around the thresholded fundus region: bounding box
/// of all pixels with max-channel intensity >= threshold, expanded to a
/// square about its center.
pub fn fundus_crop_box(image: &RgbImage) -> Result<CropBox, DataError> {
    let mut x_min = usize::MAX;
    let mut x_max = 0usize;
    let mut y_min = usize::MAX;
    let mut y_max = 0usize;
    for y in 0..image.height {
        for x in 0..image.width {
            let [r, g, b] = image.get(x, y);
            if r.max(g).max(b) >= FUNDUS_THRESHOLD {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    if x_min == usize::MAX {
        return Err(DataError::NoFundusRegion);
    }
    let w = x_max - x_min + 1;
    let h = y_max - y_min + 1;
    if w < MIN_BBOX_SIDE || h < MIN_BBOX_SIDE {
        return Err(DataError::DegenerateBoundingBox { width: w, height: h });
    }
    let side = w.max(h) as f64;
    let cx = (x_min + x_max + 1) as f64 / 2.0;
    let cy = (y_min + y_max + 1) as f64 / 2.0;
    Ok(CropBox {
        x0: cx - side / 2.0,
        y0: cy - side / 2.0,
        side,
    })
}

/// Bilinear sample of one channel at a continuous point in pixel-center
/// coordinates; outside the frame reads as black.
fn sample_channel(image: &RgbImage, channel: usize, u: f64, v: f64) -> f64 {
    let x0 = u.floor();
    let y0 = v.floor();
    let tx = u - x0;
    let ty = v - y0;
    let mut acc = 0.0;
    for (dy, wy) in [(0i64, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0i64, 1.0 - tx), (1, tx)] {
            let x = x0 as i64 + dx;
            let y = y0 as i64 + dy;
            if x >= 0 && (x as usize) < image.width && y >= 0 && (y as usize) < image.height {
                acc += wx * wy * image.get(x as usize, y as usize)[channel] as f64;
            }
        }
    }
    acc
}

/// Resample a crop window to `resolution` x `resolution` and quantize back to
/// 8 bits. When the window equals the full frame at the same size this is an
/// exact identity.
pub fn resample_crop(image: &RgbImage, crop: &CropBox, resolution: usize) -> RgbImage {
    let mut out = RgbImage::new(resolution, resolution);
    let scale = crop.side / resolution as f64;
    for y in 0..resolution {
        let sy = crop.y0 + (y as f64 + 0.5) * scale - 0.5;
        for x in 0..resolution {
            let sx = crop.x0 + (x as f64 + 0.5) * scale - 0.5;
            let mut rgb = [0u8; 3];
            for (c, slot) in rgb.iter_mut().enumerate() {
                *slot = sample_channel(image, c, sx, sy).round().clamp(0.0, 255.0) as u8;
            }
            out.set(x, y, rgb);
        }
    }
    out
}

/// Convert a preprocessed raster into the channel-major [-1, 1] tensor.
pub fn raster_to_tensor(raster: &RgbImage) -> Tensor {
    let (w, h) = (raster.width, raster.height);
    let mut data = vec![0.0; 3 * w * h];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data[(c * h + y) * w + x] = pixel_to_unit(raster.get(x, y)[c]);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("finite by construction")
}

/// Full preprocessing: threshold, square-crop, resize, and map to [-1, 1].
/// The caller is expected to have run the quality filter already.
pub fn preprocess(image: &RgbImage, resolution: usize) -> Result<PreprocessedImage, DataError> {
    let crop = fundus_crop_box(image)?;
    let raster = resample_crop(image, &crop, resolution);
    Ok(PreprocessedImage {
        pixels: raster_to_tensor(&raster),
        source: None,
    })
}

/// Map a continuous source point through a crop to output pixel-center
/// coordinates, for geometry checks against the generator's plan.
pub fn map_source_point(crop: &CropBox, resolution: usize, x: f64, y: f64) -> (f64, f64) {
    let scale = resolution as f64 / crop.side;
    ((x - crop.x0) * scale - 0.5, (y - crop.y0) * scale - 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bright_frame(size: usize) -> RgbImage {
        let mut img = RgbImage::new(size, size);
        for y in 0..size {
            for x in 0..size {
                img.set(x, y, [((x * 7 + y * 3) % 200) as u8 + 40, 50, 25]);
            }
        }
        img
    }

    #[test]
    fn full_frame_same_size_is_identity_after_value_map() {
        let img = bright_frame(32);
        let out = preprocess(&img, 32).unwrap();
        let data = out.pixels.data();
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let expected = img.get(x, y)[c] as f64 / 127.5 - 1.0;
                    let got = data[(c * 32 + y) * 32 + x];
                    assert!((got - expected).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn value_map_endpoints() {
        assert_eq!(pixel_to_unit(0), -1.0);
        assert_eq!(pixel_to_unit(255), 1.0);
    }

    #[test]
    fn degenerate_bounding_box_is_an_error() {
        let mut img = RgbImage::new(32, 32);
        for y in 10..14 {
            for x in 10..14 {
                img.set(x, y, [200, 100, 50]);
            }
        }
        assert!(matches!(
            preprocess(&img, 32).unwrap_err(),
            DataError::DegenerateBoundingBox { width: 4, height: 4 }
        ));
    }

    #[test]
    fn all_dark_image_has_no_fundus_region() {
        let img = RgbImage::new(16, 16);
        assert!(matches!(
            preprocess(&img, 16).unwrap_err(),
            DataError::NoFundusRegion
        ));
    }

    #[test]
    fn values_stay_in_unit_range() {
        let img = bright_frame(48);
        let out = preprocess(&img, 24).unwrap();
        assert!(out.pixels.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(out.pixels.shape(), &[3, 24, 24]);
    }

    #[test]
    fn preprocess_is_idempotent_on_its_own_output_geometry() {
        let img = bright_frame(48);
        let crop = fundus_crop_box(&img).unwrap();
        let once = resample_crop(&img, &crop, 32);
        let crop2 = fundus_crop_box(&once).unwrap();
        let twice = resample_crop(&once, &crop2, 32);
        for (a, b) in once.pixels.iter().zip(&twice.pixels) {
            assert!((pixel_to_unit(*a) - pixel_to_unit(*b)).abs() < 1e-9);
        }
    }
}
