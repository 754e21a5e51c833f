use std::path::Path;

use super::manifest::ImageRecord;
use super::pnm::RgbImage;
use super::preprocess::{fundus_crop_box, resample_crop};
use super::quality::{quality_filter, QualityVerdict, RejectReason};
use super::{DataError, Split};

/// A record whose image passed the quality filter and has been cropped,
/// resized, and quantized to the model resolution.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub record: ImageRecord,
    pub raster: RgbImage,
}

/// Outcome of preparing one split: usable records plus quality rejections.
/// Undecodable images abort with an error instead; they are not quality
/// rejections.
#[derive(Debug)]
pub struct PrepareReport {
    pub prepared: Vec<PreparedRecord>,
    pub rejected: Vec<(String, RejectReason)>,
}

/// Load, filter, and preprocess every record of one split.
pub fn prepare_split(
    manifest_path: &Path,
    records: &[ImageRecord],
    split: Split,
    resolution: usize,
) -> Result<PrepareReport, DataError> {
    let mut prepared = Vec::new();
    let mut rejected = Vec::new();
    for record in records.iter().filter(|r| r.split == split) {
        let bytes = std::fs::read(record.resolve_path(manifest_path))?;
        let image = RgbImage::from_ppm(&bytes)?;
        match quality_filter(&image) {
            QualityVerdict::Reject(reason) => {
                rejected.push((record.image_path.clone(), reason));
                continue;
            }
            QualityVerdict::Accept => {}
        }
        let crop = fundus_crop_box(&image)?;
        let raster = resample_crop(&image, &crop, resolution);
        prepared.push(PreparedRecord {
            record: record.clone(),
            raster,
        });
    }
    Ok(PrepareReport { prepared, rejected })
}
