//! Dataset ingestion, preprocessing, quality filtering, and the synthetic
//! fundus generator.

mod label;
mod manifest;
mod pnm;
mod prepare;
mod preprocess;
mod quality;
mod synthetic;

pub use label::{spherical_equivalent, Eye, RefractionLabel, Split, SE_LIMIT_D};
pub use manifest::{load_manifest, save_manifest, ImageRecord, MANIFEST_HEADER};
pub use pnm::{GrayImage, PnmError, RgbImage};
pub use prepare::{prepare_split, PrepareReport, PreparedRecord};
pub use preprocess::{
    fundus_crop_box, map_source_point, pixel_to_unit, preprocess, raster_to_tensor, resample_crop,
    CropBox, PreprocessedImage, MIN_BBOX_SIDE,
};
pub use quality::{quality_filter, QualityVerdict, RejectReason, FUNDUS_THRESHOLD};
pub use synthetic::{
    fovea_exclusion_radius, generate_synthetic_dataset, render_scene, sample_scene, se_unit,
    CorruptionKind, GeneratedDataset, GeneratorConfig, SceneSpec, VesselSpec, COHORT_AREDS_LIKE,
    COHORT_BIOBANK_LIKE, CYLINDER_MAX_D, CYLINDER_MIN_D, DEFAULT_TUNE_FRACTION_AREDS,
    DEFAULT_TUNE_FRACTION_BIOBANK, FOVEA_AMP_BASE, FOVEA_AMP_RED_RATIO, FOVEA_AMP_SPAN,
    FOVEA_RADIUS_BASE, FOVEA_RADIUS_SPAN, SE_MAX_D, SE_MIN_D,
};

use thiserror::Error;

/// Errors from dataset loading, preprocessing, and generation.
#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image decode failed: {0}")]
    Decode(#[from] PnmError),
    #[error("manifest header mismatch; found {found:?}")]
    HeaderMismatch { found: String },
    #[error("manifest line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("patient {patient_id} appears in both {first} and {second} splits")]
    PatientSplitConflict {
        patient_id: String,
        first: Split,
        second: Split,
    },
    #[error("label contains a non-finite value")]
    NonFiniteLabel,
    #[error("spherical equivalent {se_d} outside the +/-{SE_LIMIT_D} D sanity bound")]
    LabelOutOfRange { se_d: f64 },
    #[error("se_d {se_d} inconsistent with sphere + 0.5*cylinder = {implied}")]
    LabelInconsistent { se_d: f64, implied: f64 },
    #[error("no pixels above the fundus threshold")]
    NoFundusRegion,
    #[error("fundus bounding box {width}x{height} below the {MIN_BBOX_SIDE} px minimum")]
    DegenerateBoundingBox { width: usize, height: usize },
    #[error("resolution {resolution} below the generator minimum of 32")]
    BadResolution { resolution: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
