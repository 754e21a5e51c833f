use super::pnm::RgbImage;

/// Intensity (max channel) below which a pixel counts as background.
pub const FUNDUS_THRESHOLD: u8 = 10;
/// Minimum global dynamic range for an acceptable image.
pub const MIN_DYNAMIC_RANGE: u8 = 20;

/// Outcome of the image quality filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityVerdict {
    Accept,
    Reject(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// More than 95% of pixels are darker than the fundus threshold.
    Blank,
    /// Spread between the brightest and darkest sample is below 20/255.
    LowDynamicRange,
    /// The detected fundus region covers less than 30% of the frame.
    SmallFundusRegion,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::Blank => "blank",
            RejectReason::LowDynamicRange => "low dynamic range",
            RejectReason::SmallFundusRegion => "small fundus region",
        })
    }
}

/// Threshold-based stand-in for a clinical quality filter: rejects blank
/// frames, flat frames, and frames whose bright (fundus) region is too small.
pub fn quality_filter(image: &RgbImage) -> QualityVerdict {
    let total = image.width * image.height;
    let mut dark = 0usize;
    let mut min_sample = u8::MAX;
    let mut max_sample = u8::MIN;
    for pixel in image.pixels.chunks_exact(3) {
        let intensity = pixel[0].max(pixel[1]).max(pixel[2]);
        if intensity < FUNDUS_THRESHOLD {
            dark += 1;
        }
        for &s in pixel {
            min_sample = min_sample.min(s);
            max_sample = max_sample.max(s);
        }
    }
    // dark/total > 0.95, exactly, in integers.
    if dark * 20 > total * 19 {
        return QualityVerdict::Reject(RejectReason::Blank);
    }
    if max_sample - min_sample < MIN_DYNAMIC_RANGE {
        return QualityVerdict::Reject(RejectReason::LowDynamicRange);
    }
    // Bright-region fraction < 0.30.
    let bright = total - dark;
    if bright * 10 < total * 3 {
        return QualityVerdict::Reject(RejectReason::SmallFundusRegion);
    }
    QualityVerdict::Accept
}
