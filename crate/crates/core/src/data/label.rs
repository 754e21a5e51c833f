use super::DataError;

/// Sanity bound on spherical equivalent, in diopters.
pub const SE_LIMIT_D: f64 = 25.0;
/// Tolerance on |se - (sphere + 0.5*cylinder)| when all three are present.
pub const SE_CONSISTENCY_TOL: f64 = 1e-9;

/// Which eye an image shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    pub fn as_str(self) -> &'static str {
        match self {
            Eye::Left => "L",
            Eye::Right => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "L" => Some(Eye::Left),
            "R" => Some(Eye::Right),
            _ => None,
        }
    }
}

impl std::fmt::Display for Eye {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which split a record belongs to. The tune split is the held-out
/// model-selection set; validation is never touched during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Tune,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Tune => "tune",
            Split::Validation => "validation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "tune" => Some(Split::Tune),
            "validation" => Some(Split::Validation),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Refraction measurements in diopters. The spherical equivalent is always
/// present; the sphere/cylinder components are optional because not every
/// cohort records them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefractionLabel {
    pub sphere_d: Option<f64>,
    pub cylinder_d: Option<f64>,
    pub se_d: f64,
}

impl RefractionLabel {
    pub fn validate(&self) -> Result<(), DataError> {
        for v in [Some(self.se_d), self.sphere_d, self.cylinder_d].into_iter().flatten() {
            if !v.is_finite() {
                return Err(DataError::NonFiniteLabel);
            }
        }
        if self.se_d.abs() > SE_LIMIT_D {
            return Err(DataError::LabelOutOfRange { se_d: self.se_d });
        }
        if let (Some(sphere), Some(cylinder)) = (self.sphere_d, self.cylinder_d) {
            let implied = spherical_equivalent(sphere, cylinder)?;
            if (self.se_d - implied).abs() >= SE_CONSISTENCY_TOL {
                return Err(DataError::LabelInconsistent {
                    se_d: self.se_d,
                    implied,
                });
            }
        }
        Ok(())
    }
}

/// Spherical equivalent: sphere + 0.5 * cylinder.
pub fn spherical_equivalent(sphere_d: f64, cylinder_d: f64) -> Result<f64, DataError> {
    if !sphere_d.is_finite() || !cylinder_d.is_finite() {
        return Err(DataError::NonFiniteLabel);
    }
    Ok(sphere_d + 0.5 * cylinder_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spherical_equivalent_matches_hand_values() {
        assert_eq!(spherical_equivalent(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(spherical_equivalent(-2.0, -1.0).unwrap(), -2.5);
        assert_eq!(spherical_equivalent(3.25, -0.5).unwrap(), 3.0);
    }

    #[test]
    fn spherical_equivalent_rejects_non_finite() {
        assert!(spherical_equivalent(f64::NAN, 0.0).is_err());
        assert!(spherical_equivalent(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn label_validation_checks_consistency_and_bounds() {
        let good = RefractionLabel {
            sphere_d: Some(-2.0),
            cylinder_d: Some(-1.0),
            se_d: -2.5,
        };
        good.validate().unwrap();

        let inconsistent = RefractionLabel {
            sphere_d: Some(-2.0),
            cylinder_d: Some(-1.0),
            se_d: -2.0,
        };
        assert!(matches!(
            inconsistent.validate().unwrap_err(),
            DataError::LabelInconsistent { .. }
        ));

        let out_of_range = RefractionLabel {
            sphere_d: None,
            cylinder_d: None,
            se_d: 30.0,
        };
        assert!(matches!(
            out_of_range.validate().unwrap_err(),
            DataError::LabelOutOfRange { .. }
        ));
    }
}
