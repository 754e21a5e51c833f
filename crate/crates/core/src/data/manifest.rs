use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::label::{spherical_equivalent, Eye, RefractionLabel, Split};
use super::DataError;

/// Exact manifest header, in column order.
pub const MANIFEST_HEADER: [&str; 11] = [
    "image_path",
    "patient_id",
    "eye",
    "visit",
    "cohort",
    "split",
    "sphere_d",
    "cylinder_d",
    "se_d",
    "has_amd",
    "had_cataract_surgery",
];

/// One manifest row: an image with its patient, cohort, split, labels, and
/// optional disease flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// Path of the image, relative to the manifest file's directory.
    pub image_path: String,
    pub patient_id: String,
    pub eye: Eye,
    pub visit: u32,
    pub cohort: String,
    pub split: Split,
    pub label: RefractionLabel,
    pub has_amd: Option<bool>,
    pub had_cataract_surgery: Option<bool>,
}

impl ImageRecord {
    /// Absolute (or manifest-relative) path of the image file.
    pub fn resolve_path(&self, manifest_path: &Path) -> PathBuf {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));
        base.join(&self.image_path)
    }
}

/// Load and validate a manifest. Rows are checked field by field, the
/// spherical equivalent is derived from the components when missing, and a
/// patient appearing in two different splits is an error.
pub fn load_manifest(path: &Path) -> Result<Vec<ImageRecord>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DataError::Io(std::io::Error::other(e.to_string())))?;

    let mut records = Vec::new();
    let mut splits_by_patient: HashMap<String, Split> = HashMap::new();
    let mut rows = reader.records();

    let header = rows
        .next()
        .ok_or_else(|| DataError::HeaderMismatch {
            found: String::from("<empty file>"),
        })?
        .map_err(csv_io)?;
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(DataError::HeaderMismatch {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    for row in rows {
        let row = row.map_err(csv_io)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let record = parse_row(&row, line)?;
        match splits_by_patient.get(&record.patient_id) {
            Some(&existing) if existing != record.split => {
                return Err(DataError::PatientSplitConflict {
                    patient_id: record.patient_id.clone(),
                    first: existing,
                    second: record.split,
                });
            }
            Some(_) => {}
            None => {
                splits_by_patient.insert(record.patient_id.clone(), record.split);
            }
        }
        records.push(record);
    }
    Ok(records)
}

fn csv_io(e: csv::Error) -> DataError {
    DataError::Io(std::io::Error::other(e.to_string()))
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<ImageRecord, DataError> {
    let bad = |message: String| DataError::Row { line, message };
    if row.len() != MANIFEST_HEADER.len() {
        return Err(bad(format!(
            "expected {} fields, got {}",
            MANIFEST_HEADER.len(),
            row.len()
        )));
    }
    let field = |i: usize| row.get(i).unwrap_or("");

    let image_path = field(0).to_string();
    if image_path.is_empty() {
        return Err(bad("image_path is empty".into()));
    }
    let patient_id = field(1).to_string();
    if patient_id.is_empty() {
        return Err(bad("patient_id is empty".into()));
    }
    let eye = Eye::parse(field(2)).ok_or_else(|| bad(format!("bad eye {:?}", field(2))))?;
    let visit: u32 = field(3)
        .parse()
        .map_err(|_| bad(format!("bad visit {:?}", field(3))))?;
    let cohort = field(4).to_string();
    let split =
        Split::parse(field(5)).ok_or_else(|| bad(format!("bad split {:?}", field(5))))?;

    let opt_f64 = |i: usize, name: &str| -> Result<Option<f64>, DataError> {
        let s = field(i);
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| bad(format!("bad {name} {s:?}")))
        }
    };
    let sphere_d = opt_f64(6, "sphere_d")?;
    let cylinder_d = opt_f64(7, "cylinder_d")?;
    let se_given = opt_f64(8, "se_d")?;
    let se_d = match (se_given, sphere_d, cylinder_d) {
        (Some(se), _, _) => se,
        (None, Some(s), Some(c)) => spherical_equivalent(s, c)?,
        (None, _, _) => {
            return Err(bad(
                "se_d is empty and cannot be derived without both sphere_d and cylinder_d".into(),
            ))
        }
    };

    let opt_bool = |i: usize, name: &str| -> Result<Option<bool>, DataError> {
        match field(i) {
            "" => Ok(None),
            "true" => Ok(Some(true)),
            "false" => Ok(Some(false)),
            other => Err(bad(format!("bad {name} {other:?}"))),
        }
    };
    let has_amd = opt_bool(9, "has_amd")?;
    let had_cataract_surgery = opt_bool(10, "had_cataract_surgery")?;

    let label = RefractionLabel {
        sphere_d,
        cylinder_d,
        se_d,
    };
    label
        .validate()
        .map_err(|e| bad(format!("invalid label: {e}")))?;

    Ok(ImageRecord {
        image_path,
        patient_id,
        eye,
        visit,
        cohort,
        split,
        label,
        has_amd,
        had_cataract_surgery,
    })
}

/// Write records in manifest format. Field formatting is deterministic, so
/// identical records always produce identical bytes.
pub fn save_manifest(path: &Path, records: &[ImageRecord]) -> Result<(), DataError> {
    let mut out = Vec::new();
    writeln!(out, "{}", MANIFEST_HEADER.join(",")).expect("write to vec");
    for r in records {
        let opt_num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let opt_bool = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.image_path,
            r.patient_id,
            r.eye,
            r.visit,
            r.cohort,
            r.split,
            opt_num(r.label.sphere_d),
            opt_num(r.label.cylinder_d),
            r.label.se_d,
            opt_bool(r.has_amd),
            opt_bool(r.had_cataract_surgery),
        )
        .expect("write to vec");
    }
    std::fs::write(path, out)?;
    Ok(())
}
