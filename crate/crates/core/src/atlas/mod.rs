//! Attention heatmaps: per-image extraction at input resolution, grouped
//! cohort means keyed on (eye, refractive-error band), and deterministic
//! PGM/PPM/CSV rendering.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{Eye, GrayImage, ImageRecord, PreprocessedImage, RgbImage};
use crate::model::{AttentionResNet, ModelError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("heatmap is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    MismatchedDims {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("bands {a} and {b} overlap")]
    OverlappingBands { a: String, b: String },
    #[error("band scheme is empty")]
    EmptyScheme,
}

/// A unit-mass attention map at image resolution, with provenance.
#[derive(Debug, Clone)]
pub struct HeatmapImage {
    pub width: usize,
    pub height: usize,
    /// Non-negative weights summing to 1 (after upsampling, renormalized).
    pub weights: Vec<f64>,
    /// Whether the map was renormalized after interpolation.
    pub renormalized: bool,
    pub source_path: String,
    pub model_seed: u64,
    pub eye: Eye,
    pub se_d: f64,
}

impl HeatmapImage {
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Half-open diopter interval [lo, hi) with a directory-safe name.
#[derive(Debug, Clone, PartialEq)]
pub struct SeBand {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl SeBand {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
        }
    }

    pub fn contains(&self, se_d: f64) -> bool {
        self.lo <= se_d && se_d < self.hi
    }
}

/// Non-overlapping set of bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScheme {
    bands: Vec<SeBand>,
}

impl BandScheme {
    pub fn new(bands: Vec<SeBand>) -> Result<Self, AtlasError> {
        if bands.is_empty() {
            return Err(AtlasError::EmptyScheme);
        }
        let mut sorted = bands.clone();
        sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for pair in sorted.windows(2) {
            if pair[1].lo < pair[0].hi {
                return Err(AtlasError::OverlappingBands {
                    a: pair[0].name.clone(),
                    b: pair[1].name.clone(),
                });
            }
        }
        Ok(Self { bands })
    }

    /// Bands used for cohort aggregates: severe myopia below -6 D, a
    /// neutral band around 0, severe hyperopia above +5 D.
    pub fn aggregate_default() -> Self {
        Self::new(vec![
            SeBand::new("severe-myopia", f64::NEG_INFINITY, -6.0),
            SeBand::new("neutral", -0.5, 0.5),
            SeBand::new("severe-hyperopia", 5.0, f64::INFINITY),
        ])
        .expect("default bands are disjoint")
    }

    /// Wider neutral band used when picking individual example images.
    pub fn individual_default() -> Self {
        Self::new(vec![
            SeBand::new("severe-myopia", f64::NEG_INFINITY, -6.0),
            SeBand::new("neutral", -1.0, 1.0),
            SeBand::new("severe-hyperopia", 5.0, f64::INFINITY),
        ])
        .expect("default bands are disjoint")
    }

    pub fn bands(&self) -> &[SeBand] {
        &self.bands
    }

    pub fn band_of(&self, se_d: f64) -> Option<&SeBand> {
        self.bands.iter().find(|b| b.contains(se_d))
    }
}

/// Bilinear resize with edge clamping, in pixel-center convention.
fn bilinear_resize(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dw * dh];
    let sx_scale = sw as f64 / dw as f64;
    let sy_scale = sh as f64 / dh as f64;
    for y in 0..dh {
        let v = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = v.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = v - y0 as f64;
        for x in 0..dw {
            let u = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = u.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = u - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bottom = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out[y * dw + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// Extract one image's attention map: run the model, bilinearly upsample the
/// attention grid to input resolution, and renormalize to unit mass.
pub fn extract_heatmap(
    model: &AttentionResNet,
    image: &PreprocessedImage,
    record: &ImageRecord,
) -> Result<HeatmapImage, AtlasError> {
    let r = model.config().input_resolution;
    let shape = image.pixels.shape().to_vec();
    let batch = crate::autodiff::Tensor::new(
        vec![1, shape[0], shape[1], shape[2]],
        image.pixels.data().to_vec(),
    )
    .map_err(ModelError::from)?;
    let (_, attention) = model.predict(&batch)?;
    let grid = &attention[0];
    let up = bilinear_resize(&grid.weights, grid.width, grid.height, r, r);
    let total: f64 = up.iter().sum();
    let weights: Vec<f64> = up.iter().map(|w| w / total).collect();
    Ok(HeatmapImage {
        width: r,
        height: r,
        weights,
        renormalized: true,
        source_path: record.image_path.clone(),
        model_seed: model.config().seed,
        eye: record.eye,
        se_d: record.label.se_d,
    })
}

/// Attention map of an ensemble: the pixelwise mean of the member maps,
/// mirroring how the ensemble's prediction is the mean of member
/// predictions. Unit mass is preserved by linearity.
pub fn extract_ensemble_heatmap(
    models: &[AttentionResNet],
    image: &PreprocessedImage,
    record: &ImageRecord,
) -> Result<HeatmapImage, AtlasError> {
    let first = models.first().ok_or(ModelError::EmptyEnsemble)?;
    let mut mean = extract_heatmap(first, image, record)?;
    for model in &models[1..] {
        let map = extract_heatmap(model, image, record)?;
        for (acc, v) in mean.weights.iter_mut().zip(&map.weights) {
            *acc += v;
        }
    }
    let k = models.len() as f64;
    for w in &mut mean.weights {
        *w /= k;
    }
    Ok(mean)
}

#[derive(Debug, Clone)]
pub struct AtlasGroup {
    pub eye: Eye,
    pub band: String,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Pixelwise arithmetic mean of the member maps.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SkippedGroup {
    pub eye: Eye,
    pub band: String,
    pub count: usize,
}

/// Aggregation result: groups meeting `min_count`, groups skipped for being
/// too small, and the number of maps outside every band.
#[derive(Debug, Clone)]
pub struct Atlas {
    pub groups: Vec<AtlasGroup>,
    pub skipped: Vec<SkippedGroup>,
    pub out_of_band: usize,
}

impl Atlas {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Group heatmaps by (eye, band) and average each group with at least
/// `min_count` members. Groups below the threshold are reported as skipped,
/// maps outside every band are counted, and iteration order is fixed
/// (left/right x scheme order), so the result is deterministic.
pub fn aggregate_maps(
    maps: &[HeatmapImage],
    scheme: &BandScheme,
    min_count: usize,
) -> Result<Atlas, AtlasError> {
    if let Some(first) = maps.first() {
        for m in maps {
            if m.width != first.width || m.height != first.height {
                return Err(AtlasError::MismatchedDims {
                    got_w: m.width,
                    got_h: m.height,
                    want_w: first.width,
                    want_h: first.height,
                });
            }
        }
    }
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    let mut grouped = 0usize;
    for eye in [Eye::Left, Eye::Right] {
        for band in scheme.bands() {
            let members: Vec<&HeatmapImage> = maps
                .iter()
                .filter(|m| m.eye == eye && band.contains(m.se_d))
                .collect();
            grouped += members.len();
            if members.is_empty() {
                continue;
            }
            if members.len() < min_count {
                skipped.push(SkippedGroup {
                    eye,
                    band: band.name.clone(),
                    count: members.len(),
                });
                continue;
            }
            let (w, h) = (members[0].width, members[0].height);
            let mut mean = vec![0.0; w * h];
            for m in &members {
                for (acc, &v) in mean.iter_mut().zip(&m.weights) {
                    *acc += v;
                }
            }
            let k = members.len() as f64;
            for v in &mut mean {
                *v /= k;
            }
            groups.push(AtlasGroup {
                eye,
                band: band.name.clone(),
                count: members.len(),
                width: w,
                height: h,
                mean,
            });
        }
    }
    Ok(Atlas {
        groups,
        skipped,
        out_of_band: maps.len() - grouped,
    })
}

/// Max-normalize weights to an 8-bit grayscale raster.
pub fn weights_to_gray(weights: &[f64], width: usize, height: usize) -> GrayImage {
    let max = weights.iter().copied().fold(0.0f64, f64::max);
    let mut img = GrayImage::new(width, height);
    if max > 0.0 {
        for (dst, &w) in img.pixels.iter_mut().zip(weights) {
            *dst = (w / max * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    img
}

/// Blend the underlay at 50% and add the max-normalized heatmap into the
/// green channel.
pub fn overlay_on(
    weights: &[f64],
    width: usize,
    height: usize,
    underlay: &RgbImage,
) -> Result<RgbImage, AtlasError> {
    if underlay.width != width || underlay.height != height {
        return Err(AtlasError::MismatchedDims {
            got_w: underlay.width,
            got_h: underlay.height,
            want_w: width,
            want_h: height,
        });
    }
    let max = weights.iter().copied().fold(0.0f64, f64::max);
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let [r, g, b] = underlay.get(x, y);
            let heat = if max > 0.0 {
                weights[y * width + x] / max
            } else {
                0.0
            };
            out.set(
                x,
                y,
                [
                    (r as f64 * 0.5).round() as u8,
                    (g as f64 * 0.5 + heat * 127.5).round().clamp(0.0, 255.0) as u8,
                    (b as f64 * 0.5).round() as u8,
                ],
            );
        }
    }
    Ok(out)
}

/// Lossless CSV of raw weights, one row per pixel row.
pub fn weights_csv(weights: &[f64], width: usize) -> String {
    let mut out = String::new();
    for row in weights.chunks(width) {
        let line: Vec<String> = row.iter().map(|w| w.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Center of mass of a weight grid, in pixel-center coordinates.
pub fn center_of_mass(weights: &[f64], width: usize) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        cx += (i % width) as f64 * w;
        cy += (i / width) as f64 * w;
    }
    (cx / total, cy / total)
}

/// Write the three per-image artifacts: heatmap PGM, 50% overlay PPM, and
/// raw-weight CSV. The diopter value rides along as a header comment rather
/// than burned-in pixels.
pub fn write_heatmap_files(
    dir: &Path,
    stem: &str,
    map: &HeatmapImage,
    underlay: &RgbImage,
) -> Result<[PathBuf; 3], AtlasError> {
    std::fs::create_dir_all(dir)?;
    let annotation = vec![format!("se_d={}", map.se_d)];
    let pgm_path = dir.join(format!("{stem}.pgm"));
    let gray = weights_to_gray(&map.weights, map.width, map.height);
    std::fs::write(&pgm_path, gray.to_pgm_with_comments(&annotation))?;
    let overlay_path = dir.join(format!("{stem}_overlay.ppm"));
    let overlay = overlay_on(&map.weights, map.width, map.height, underlay)?;
    std::fs::write(&overlay_path, overlay.to_ppm_with_comments(&annotation))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, weights_csv(&map.weights, map.width))?;
    Ok([pgm_path, overlay_path, csv_path])
}

/// Write `atlas/<eye>/<band>/mean.pgm` + `mean.csv` per group, plus a
/// `warnings.txt` listing any group skipped for being below the threshold.
pub fn write_atlas(dir: &Path, atlas: &Atlas, min_count: usize) -> Result<(), AtlasError> {
    std::fs::create_dir_all(dir)?;
    for group in &atlas.groups {
        let group_dir = dir.join(group.eye.as_str()).join(&group.band);
        std::fs::create_dir_all(&group_dir)?;
        let gray = weights_to_gray(&group.mean, group.width, group.height);
        let comment = vec![format!("mean of {} maps", group.count)];
        std::fs::write(group_dir.join("mean.pgm"), gray.to_pgm_with_comments(&comment))?;
        std::fs::write(
            group_dir.join("mean.csv"),
            weights_csv(&group.mean, group.width),
        )?;
    }
    if !atlas.skipped.is_empty() || atlas.groups.is_empty() {
        let mut warnings = Vec::new();
        if atlas.groups.is_empty() {
            writeln!(warnings, "no group reached min_count={min_count}; atlas is empty")?;
        }
        for s in &atlas.skipped {
            writeln!(
                warnings,
                "group {}/{}: {} maps, below min_count={min_count}",
                s.eye, s.band, s.count
            )?;
        }
        std::fs::write(dir.join("warnings.txt"), warnings)?;
    }
    Ok(())
}
