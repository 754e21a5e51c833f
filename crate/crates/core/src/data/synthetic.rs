//! Synthetic fundus generator.
//!
//! Renders dark circular fundus frames with an optic disc, vessel arcs, and
//! a foveal blob whose radius and brightness are affine in the drawn
//! spherical equivalent. That makes the label recoverable from the image by
//! construction, both by a closed-form readout of the blob (used as a test
//! oracle) and by a trained model. Everything derives from ChaCha streams
//! keyed on (seed, image index) or (seed, patient index), so output bytes
//! are a pure function of the configuration.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::label::{Eye, RefractionLabel, Split};
use super::manifest::{save_manifest, ImageRecord};
use super::pnm::RgbImage;
use super::DataError;
use crate::seeds::{subseed, tag};

pub const SE_MIN_D: f64 = -8.0;
pub const SE_MAX_D: f64 = 6.0;
pub const CYLINDER_MIN_D: f64 = -2.0;
pub const CYLINDER_MAX_D: f64 = 0.0;

/// Foveal green-channel amplitude is `AMP_BASE + AMP_SPAN * t` where
/// `t = (se - SE_MIN) / (SE_MAX - SE_MIN)`.
pub const FOVEA_AMP_BASE: f64 = 60.0;
pub const FOVEA_AMP_SPAN: f64 = 130.0;
/// Red channel gets this fraction of the green amplitude.
pub const FOVEA_AMP_RED_RATIO: f64 = 0.3;
/// Foveal radius is `(RADIUS_BASE + RADIUS_SPAN * t) * circle_radius`.
pub const FOVEA_RADIUS_BASE: f64 = 0.10;
pub const FOVEA_RADIUS_SPAN: f64 = 0.08;

pub const COHORT_BIOBANK_LIKE: &str = "biobank-like";
pub const COHORT_AREDS_LIKE: &str = "areds-like";

/// Tune fractions used when no explicit tune count is requested.
pub const DEFAULT_TUNE_FRACTION_BIOBANK: f64 = 0.10;
pub const DEFAULT_TUNE_FRACTION_AREDS: f64 = 0.11;

const AMD_RATE: f64 = 0.35;
const CATARACT_SURGERY_RATE: f64 = 0.30;

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub n_train: usize,
    /// Explicit tune-image count; `None` carves the tune split out of the
    /// development pool per cohort at the default fractions.
    pub n_tune: Option<usize>,
    pub n_val: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Fraction of images deliberately rendered unusable, to exercise the
    /// quality filter.
    pub corrupt_fraction: f64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.resolution < 32 {
            return Err(DataError::BadResolution {
                resolution: self.resolution,
            });
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(DataError::InvalidConfig(format!(
                "corrupt_fraction {} outside [0, 1]",
                self.corrupt_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    Blank,
    FlatGray,
    TinyRegion,
}

#[derive(Debug, Clone)]
pub struct VesselSpec {
    pub p0: (f64, f64),
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub width: f64,
}

/// Everything needed to render one image, plus the planted ground truth the
/// test oracles read back.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub image_index: usize,
    pub eye: Eye,
    pub se_d: f64,
    pub cylinder_d: f64,
    pub circle_cx: f64,
    pub circle_cy: f64,
    pub circle_r: f64,
    pub base_rgb: [u8; 3],
    /// Foveal blob center, exact pixel coordinates.
    pub fovea_x: usize,
    pub fovea_y: usize,
    pub fovea_radius: f64,
    /// Peak green-channel amplitude added at the blob center.
    pub fovea_amplitude: f64,
    pub disc_cx: f64,
    pub disc_cy: f64,
    pub disc_rx: f64,
    pub disc_ry: f64,
    pub disc_rgb: [u8; 3],
    pub vessels: Vec<VesselSpec>,
    pub corruption: Option<CorruptionKind>,
}

/// Normalized position of a spherical equivalent within the generator range.
pub fn se_unit(se_d: f64) -> f64 {
    (se_d - SE_MIN_D) / (SE_MAX_D - SE_MIN_D)
}

/// Draw the scene for one image. Deterministic in (seed, image_index).
pub fn sample_scene(
    seed: u64,
    image_index: usize,
    eye: Eye,
    resolution: usize,
    corrupt_fraction: f64,
) -> SceneSpec {
    let mut rng = ChaCha12Rng::seed_from_u64(subseed(seed, tag::IMAGE_SCENE, image_index as u64));
    let res = resolution as f64;

    let se_d = rng.random_range(SE_MIN_D..SE_MAX_D);
    let cylinder_d = rng.random_range(CYLINDER_MIN_D..CYLINDER_MAX_D);
    let t = se_unit(se_d);

    let circle_r = rng.random_range(0.40..0.47) * res;
    let circle_cx = res / 2.0 + rng.random_range(-0.02..0.02) * res;
    let circle_cy = res / 2.0 + rng.random_range(-0.02..0.02) * res;

    let base_rgb = [
        rng.random_range(87..=103u8),
        rng.random_range(33..=43u8),
        rng.random_range(18..=26u8),
    ];

    let jitter = (0.05 * circle_r).round() as i64;
    let fovea_x = (circle_cx.round() as i64 + rng.random_range(-jitter..=jitter)) as usize;
    let fovea_y = (circle_cy.round() as i64 + rng.random_range(-jitter..=jitter)) as usize;
    let fovea_radius = (FOVEA_RADIUS_BASE + FOVEA_RADIUS_SPAN * t) * circle_r;
    let fovea_amplitude = FOVEA_AMP_BASE + FOVEA_AMP_SPAN * t;

    // The optic disc sits on the nasal side: +x for the right eye, -x for
    // the left. Vessel arcades bow toward the temporal side.
    let nasal_sign = match eye {
        Eye::Right => 1.0,
        Eye::Left => -1.0,
    };
    let disc_cx = circle_cx + nasal_sign * 0.55 * circle_r;
    let disc_cy = circle_cy + rng.random_range(-0.06..0.06) * circle_r;
    let disc_rx = 0.16 * circle_r * rng.random_range(0.9..1.1);
    let disc_ry = 0.13 * circle_r * rng.random_range(0.9..1.1);
    let disc_rgb = [
        rng.random_range(231..=239u8),
        rng.random_range(181..=189u8),
        rng.random_range(116..=124u8),
    ];

    let temporal_sign = -nasal_sign;
    let n_vessels = rng.random_range(2..=4usize);
    let mut vessels = Vec::with_capacity(n_vessels);
    for v in 0..n_vessels {
        let vert_sign = if v % 2 == 0 { -1.0 } else { 1.0 };
        let p0 = (
            disc_cx + rng.random_range(-0.05..0.05) * circle_r,
            disc_cy + rng.random_range(-0.05..0.05) * circle_r,
        );
        let p2 = (
            circle_cx + temporal_sign * rng.random_range(0.1..0.7) * circle_r,
            circle_cy + vert_sign * rng.random_range(0.5..0.85) * circle_r,
        );
        let mid = ((p0.0 + p2.0) / 2.0, (p0.1 + p2.1) / 2.0);
        let p1 = (
            mid.0 + temporal_sign * rng.random_range(0.15..0.4) * circle_r,
            mid.1 + vert_sign * rng.random_range(0.0..0.2) * circle_r,
        );
        let width = (0.014 * res * rng.random_range(0.8..1.3)).max(1.0);
        vessels.push(VesselSpec { p0, p1, p2, width });
    }

    let corruption = if rng.random::<f64>() < corrupt_fraction {
        Some(match rng.random_range(0..3u8) {
            0 => CorruptionKind::Blank,
            1 => CorruptionKind::FlatGray,
            _ => CorruptionKind::TinyRegion,
        })
    } else {
        None
    };

    SceneSpec {
        image_index,
        eye,
        se_d,
        cylinder_d,
        circle_cx,
        circle_cy,
        circle_r,
        base_rgb,
        fovea_x,
        fovea_y,
        fovea_radius,
        fovea_amplitude,
        disc_cx,
        disc_cy,
        disc_rx,
        disc_ry,
        disc_rgb,
        vessels,
        corruption,
    }
}

/// Radius around the fovea center that vessels never enter, so the blob
/// readout at the center stays exact.
pub fn fovea_exclusion_radius(circle_r: f64) -> f64 {
    (FOVEA_RADIUS_BASE + FOVEA_RADIUS_SPAN) * circle_r + 2.0
}

pub fn render_scene(scene: &SceneSpec, resolution: usize) -> RgbImage {
    if let Some(kind) = scene.corruption {
        return render_corrupted(kind, resolution);
    }
    let mut canvas = vec![0.0f64; resolution * resolution * 3];
    let at = |x: usize, y: usize| (y * resolution + x) * 3;

    // Fundus disc.
    let r2 = scene.circle_r * scene.circle_r;
    for y in 0..resolution {
        for x in 0..resolution {
            let dx = x as f64 + 0.5 - scene.circle_cx;
            let dy = y as f64 + 0.5 - scene.circle_cy;
            if dx * dx + dy * dy <= r2 {
                let i = at(x, y);
                for c in 0..3 {
                    canvas[i + c] = scene.base_rgb[c] as f64;
                }
            }
        }
    }

    // Optic disc ellipse.
    for y in 0..resolution {
        for x in 0..resolution {
            let ex = (x as f64 + 0.5 - scene.disc_cx) / scene.disc_rx;
            let ey = (y as f64 + 0.5 - scene.disc_cy) / scene.disc_ry;
            let dx = x as f64 + 0.5 - scene.circle_cx;
            let dy = y as f64 + 0.5 - scene.circle_cy;
            if ex * ex + ey * ey <= 1.0 && dx * dx + dy * dy <= r2 {
                let i = at(x, y);
                for c in 0..3 {
                    canvas[i + c] = 0.15 * canvas[i + c] + 0.85 * scene.disc_rgb[c] as f64;
                }
            }
        }
    }

    // Vessels: quadratic Bezier arcs stamped with a round brush, kept out of
    // the foveal exclusion zone and the image background.
    let excl = fovea_exclusion_radius(scene.circle_r);
    let excl2 = excl * excl;
    let vessel_rgb = [70.0, 18.0, 12.0];
    for vessel in &scene.vessels {
        let chord = dist(vessel.p0, vessel.p1) + dist(vessel.p1, vessel.p2);
        let steps = (chord * 3.0).ceil().max(8.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let u = 1.0 - t;
            let px = u * u * vessel.p0.0 + 2.0 * u * t * vessel.p1.0 + t * t * vessel.p2.0;
            let py = u * u * vessel.p0.1 + 2.0 * u * t * vessel.p1.1 + t * t * vessel.p2.1;
            let w = vessel.width;
            let x_lo = (px - w).floor().max(0.0) as usize;
            let x_hi = ((px + w).ceil() as usize).min(resolution - 1);
            let y_lo = (py - w).floor().max(0.0) as usize;
            let y_hi = ((py + w).ceil() as usize).min(resolution - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let cxp = x as f64 + 0.5;
                    let cyp = y as f64 + 0.5;
                    let bdx = cxp - px;
                    let bdy = cyp - py;
                    if bdx * bdx + bdy * bdy > w * w {
                        continue;
                    }
                    let dx = cxp - scene.circle_cx;
                    let dy = cyp - scene.circle_cy;
                    if dx * dx + dy * dy > r2 {
                        continue;
                    }
                    let fx = x as f64 - scene.fovea_x as f64;
                    let fy = y as f64 - scene.fovea_y as f64;
                    if fx * fx + fy * fy <= excl2 {
                        continue;
                    }
                    let i = at(x, y);
                    for c in 0..3 {
                        canvas[i + c] = 0.3 * canvas[i + c] + 0.7 * vessel_rgb[c];
                    }
                }
            }
        }
    }

    // Foveal blob, drawn last and additively: the center pixel reads
    // base + amplitude exactly.
    let rho = scene.fovea_radius;
    let rho2 = rho * rho;
    let reach = rho.ceil() as i64;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let x = scene.fovea_x as i64 + dx;
            let y = scene.fovea_y as i64 + dy;
            if x < 0 || y < 0 || x >= resolution as i64 || y >= resolution as i64 {
                continue;
            }
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 > rho2 {
                continue;
            }
            let profile = {
                let q = 1.0 - d2 / rho2;
                q * q
            };
            let i = at(x as usize, y as usize);
            canvas[i] += FOVEA_AMP_RED_RATIO * scene.fovea_amplitude * profile;
            canvas[i + 1] += scene.fovea_amplitude * profile;
        }
    }

    let mut img = RgbImage::new(resolution, resolution);
    for (dst, src) in img.pixels.iter_mut().zip(&canvas) {
        *dst = src.round().clamp(0.0, 255.0) as u8;
    }
    img
}

fn render_corrupted(kind: CorruptionKind, resolution: usize) -> RgbImage {
    let mut img = RgbImage::new(resolution, resolution);
    match kind {
        CorruptionKind::Blank => {}
        CorruptionKind::FlatGray => img.pixels.fill(128),
        CorruptionKind::TinyRegion => {
            let side = (resolution as f64 * 0.3) as usize;
            let start = (resolution - side) / 2;
            for y in start..start + side {
                for x in start..start + side {
                    img.set(x, y, [200, 180, 90]);
                }
            }
        }
    }
    img
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// One planned image slot before rendering.
#[derive(Debug, Clone)]
struct PlannedImage {
    split: Split,
    patient: usize,
    eye: Eye,
}

fn plan_images(config: &GeneratorConfig) -> Vec<PlannedImage> {
    let mut plan = Vec::new();
    let mut patient = 0usize;
    let push_block = |split: Split, count: usize, patient: &mut usize, plan: &mut Vec<PlannedImage>| {
        let mut remaining = count;
        while remaining > 0 {
            let take = remaining.min(2);
            for e in 0..take {
                plan.push(PlannedImage {
                    split,
                    patient: *patient,
                    eye: if e == 0 { Eye::Left } else { Eye::Right },
                });
            }
            *patient += 1;
            remaining -= take;
        }
    };

    match config.n_tune {
        Some(n_tune) => {
            push_block(Split::Train, config.n_train, &mut patient, &mut plan);
            push_block(Split::Tune, n_tune, &mut patient, &mut plan);
        }
        None => {
            // Carve tune patients out of the development pool at per-cohort
            // fractions, taking the last patients of each cohort.
            let mut dev = Vec::new();
            push_block(Split::Train, config.n_train, &mut patient, &mut dev);
            let dev_patients: Vec<usize> = {
                let mut ids: Vec<usize> = dev.iter().map(|p| p.patient).collect();
                ids.dedup();
                ids
            };
            let mut tune_patients = std::collections::HashSet::new();
            for (cohort_parity, fraction) in [
                (0, DEFAULT_TUNE_FRACTION_BIOBANK),
                (1, DEFAULT_TUNE_FRACTION_AREDS),
            ] {
                let cohort_ids: Vec<usize> = dev_patients
                    .iter()
                    .copied()
                    .filter(|p| p % 2 == cohort_parity)
                    .collect();
                let k = (fraction * cohort_ids.len() as f64).round() as usize;
                for &p in cohort_ids.iter().rev().take(k) {
                    tune_patients.insert(p);
                }
            }
            for mut img in dev {
                if tune_patients.contains(&img.patient) {
                    img.split = Split::Tune;
                }
                plan.push(img);
            }
        }
    }
    push_block(Split::Validation, config.n_val, &mut patient, &mut plan);
    plan
}

fn cohort_of(patient: usize) -> &'static str {
    if patient.is_multiple_of(2) {
        COHORT_BIOBANK_LIKE
    } else {
        COHORT_AREDS_LIKE
    }
}

/// Result of dataset generation: the manifest path and the parsed records.
#[derive(Debug)]
pub struct GeneratedDataset {
    pub manifest_path: PathBuf,
    pub records: Vec<ImageRecord>,
}

/// Generate images and a manifest under `out_dir`. Rerunning with the same
/// configuration produces byte-identical files.
pub fn generate_synthetic_dataset(
    config: &GeneratorConfig,
    out_dir: &Path,
) -> Result<GeneratedDataset, DataError> {
    config.validate()?;
    for split in ["train", "tune", "validation"] {
        std::fs::create_dir_all(out_dir.join("images").join(split))?;
    }

    let plan = plan_images(config);
    let mut records = Vec::with_capacity(plan.len());
    for (image_index, slot) in plan.iter().enumerate() {
        let scene = sample_scene(
            config.seed,
            image_index,
            slot.eye,
            config.resolution,
            config.corrupt_fraction,
        );
        let image = render_scene(&scene, config.resolution);
        let patient_id = format!("p{:06}", slot.patient);
        let rel_path = format!(
            "images/{}/{}_{}.ppm",
            slot.split, patient_id, slot.eye
        );
        std::fs::write(out_dir.join(&rel_path), image.to_ppm())?;

        let cohort = cohort_of(slot.patient);
        let mut patient_rng =
            ChaCha12Rng::seed_from_u64(subseed(config.seed, tag::PATIENT, slot.patient as u64));
        let has_amd = patient_rng.random_bool(AMD_RATE);
        let had_cataract_surgery = patient_rng.random_bool(CATARACT_SURGERY_RATE);
        let (label, amd, cataract) = if cohort == COHORT_BIOBANK_LIKE {
            // Biobank-like rows carry the full prescription and no disease
            // flags; areds-like rows carry only the spherical equivalent.
            let sphere = scene.se_d - 0.5 * scene.cylinder_d;
            (
                RefractionLabel {
                    sphere_d: Some(sphere),
                    cylinder_d: Some(scene.cylinder_d),
                    se_d: scene.se_d,
                },
                None,
                None,
            )
        } else {
            (
                RefractionLabel {
                    sphere_d: None,
                    cylinder_d: None,
                    se_d: scene.se_d,
                },
                Some(has_amd),
                Some(had_cataract_surgery),
            )
        };

        records.push(ImageRecord {
            image_path: rel_path,
            patient_id,
            eye: slot.eye,
            visit: 0,
            cohort: cohort.to_string(),
            split: slot.split,
            label,
            has_amd: amd,
            had_cataract_surgery: cataract,
        });
    }

    let manifest_path = out_dir.join("manifest.csv");
    save_manifest(&manifest_path, &records)?;
    Ok(GeneratedDataset {
        manifest_path,
        records,
    })
}
