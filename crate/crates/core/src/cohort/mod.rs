//! Labeled patient cohorts: synthetic generation, preprocessing, bona fide
//! healthy (BFH) detection and rejection-sampling augmentation.

mod augment;
mod bounds;
mod generate;
mod io;
mod preprocess;

pub use augment::{
    augment_bona_fide, split_train_test, Split, AUGMENT_FOLD_PRESETS, DEFAULT_AUGMENT_FOLD, REJECTION_CAP,
};
pub use bounds::{is_bona_fide, BoundRow, FeatureBounds, Interval, BOUNDS_MAGIC, P0_FEATURES};
pub use generate::{generate_cohort, CohortSpec, FeatureSpec, FutureSpec, LabelDist, GENERATION_CAP};
pub use io::{cohort_to_text, parse_cohort, read_cohort, write_cohort, COHORT_MAGIC, SYNTHETIC_ID_PREFIX};
pub use preprocess::{
    filter_complete, preprocess, PreprocessReport, Preprocessed, QuantileNormalizer, MIN_COMPLETENESS,
};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Female, Sex::Male];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            other => Err(Error::Config(format!("unknown sex `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthLabel {
    BonaFideHealthy,
    ApparentlyHealthy,
    Unhealthy,
}

impl HealthLabel {
    pub const ALL: [HealthLabel; 3] = [
        HealthLabel::BonaFideHealthy,
        HealthLabel::ApparentlyHealthy,
        HealthLabel::Unhealthy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HealthLabel::BonaFideHealthy => "bona_fide_healthy",
            HealthLabel::ApparentlyHealthy => "apparently_healthy",
            HealthLabel::Unhealthy => "unhealthy",
        }
    }

    /// Class index used for training (0, 1, 2 in declaration order).
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for HealthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HealthLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bona_fide_healthy" | "bfh" => Ok(HealthLabel::BonaFideHealthy),
            "apparently_healthy" => Ok(HealthLabel::ApparentlyHealthy),
            "unhealthy" => Ok(HealthLabel::Unhealthy),
            other => Err(Error::Config(format!("unknown label `{other}`"))),
        }
    }
}

/// Age strata used for per-age references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    G36to45,
    G46to50,
    G51to55,
    G56to60,
    G61to65,
    G66to75,
}

pub const MIN_AGE: u32 = 36;
pub const MAX_AGE: u32 = 75;

impl AgeGroup {
    pub const ALL: [AgeGroup; 6] = [
        AgeGroup::G36to45,
        AgeGroup::G46to50,
        AgeGroup::G51to55,
        AgeGroup::G56to60,
        AgeGroup::G61to65,
        AgeGroup::G66to75,
    ];

    pub fn from_age(age: u32) -> Option<Self> {
        Some(match age {
            36..=45 => AgeGroup::G36to45,
            46..=50 => AgeGroup::G46to50,
            51..=55 => AgeGroup::G51to55,
            56..=60 => AgeGroup::G56to60,
            61..=65 => AgeGroup::G61to65,
            66..=75 => AgeGroup::G66to75,
            _ => return None,
        })
    }

    /// Inclusive age range.
    pub fn range(self) -> (u32, u32) {
        match self {
            AgeGroup::G36to45 => (36, 45),
            AgeGroup::G46to50 => (46, 50),
            AgeGroup::G51to55 => (51, 55),
            AgeGroup::G56to60 => (56, 60),
            AgeGroup::G61to65 => (61, 65),
            AgeGroup::G66to75 => (66, 75),
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.range();
        write!(f, "[{lo},{hi}]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureDiagnosis {
    pub condition: String,
    pub years_until: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub sex: Sex,
    pub age: u32,
    pub label: HealthLabel,
    /// `None` marks a missing measurement.
    pub features: Vec<Option<f64>>,
    pub future: Option<FutureDiagnosis>,
    /// Produced by augmentation; never used for evaluation.
    pub synthetic: bool,
    /// Latent severity of generated records (not persisted).
    #[serde(skip)]
    pub severity: Option<f64>,
}

impl PatientRecord {
    pub fn age_group(&self) -> AgeGroup {
        AgeGroup::from_age(self.age).expect("record ages are validated on construction")
    }

    pub fn is_complete(&self) -> bool {
        self.features.iter().all(Option::is_some)
    }

    /// All features, failing on the first missing one.
    pub fn dense_features(&self, names: &[String]) -> Result<Vec<f64>> {
        self.features
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.ok_or_else(|| Error::IncompleteRecord {
                    id: self.id.clone(),
                    feature: names.get(j).cloned().unwrap_or_else(|| j.to_string()),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cohort {
    pub feature_names: Vec<String>,
    pub records: Vec<PatientRecord>,
}

impl Cohort {
    /// Validates arity, id uniqueness, age range and finiteness.
    pub fn new(feature_names: Vec<String>, records: Vec<PatientRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if r.features.len() != feature_names.len() {
                return Err(Error::Dimension(format!(
                    "record `{}` has {} features, cohort declares {}",
                    r.id,
                    r.features.len(),
                    feature_names.len()
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Config(format!("duplicate record id `{}`", r.id)));
            }
            if AgeGroup::from_age(r.age).is_none() {
                return Err(Error::Range(format!(
                    "record `{}` has age {} outside [{MIN_AGE},{MAX_AGE}]",
                    r.id, r.age
                )));
            }
            if r.features.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of record `{}`", r.id)));
            }
        }
        Ok(Self { feature_names, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Same feature layout, only the records for which `keep` holds.
    pub fn filter(&self, keep: impl Fn(&PatientRecord) -> bool) -> Cohort {
        Cohort {
            feature_names: self.feature_names.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn real(&self) -> Cohort {
        self.filter(|r| !r.synthetic)
    }

    pub fn with_label(&self, label: HealthLabel) -> Cohort {
        self.filter(|r| r.label == label)
    }

    pub fn count_label(&self, label: HealthLabel) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Dense feature matrix; fails if any value is missing.
    pub fn feature_matrix(&self) -> Result<Matrix> {
        let mut data = Vec::with_capacity(self.records.len() * self.feature_names.len());
        for r in &self.records {
            data.extend(r.dense_features(&self.feature_names)?);
        }
        Matrix::from_vec(self.records.len(), self.feature_names.len(), data)
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label.index()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, age: u32) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            sex: Sex::Female,
            age,
            label: HealthLabel::Unhealthy,
            features: vec![Some(1.0)],
            future: None,
            synthetic: false,
            severity: None,
        }
    }

    #[test]
    fn age_groups_partition_the_range() {
        for age in MIN_AGE..=MAX_AGE {
            let g = AgeGroup::from_age(age).unwrap();
            let (lo, hi) = g.range();
            assert!(lo <= age && age <= hi);
            assert_eq!(
                AgeGroup::ALL
                    .iter()
                    .filter(|x| {
                        let (l, h) = x.range();
                        l <= age && age <= h
                    })
                    .count(),
                1
            );
        }
        assert!(AgeGroup::from_age(35).is_none());
        assert!(AgeGroup::from_age(76).is_none());
    }

    #[test]
    fn cohort_validation() {
        let names = vec!["x".to_string()];
        assert!(Cohort::new(names.clone(), vec![rec("a", 40), rec("b", 70)]).is_ok());
        assert!(Cohort::new(names.clone(), vec![rec("a", 40), rec("a", 41)]).is_err());
        assert!(Cohort::new(names.clone(), vec![rec("a", 30)]).is_err());
        assert!(Cohort::new(vec![], vec![rec("a", 40)]).is_err());
    }

    #[test]
    fn labels_and_sexes_parse() {
        for l in HealthLabel::ALL {
            assert_eq!(l.as_str().parse::<HealthLabel>().unwrap(), l);
        }
        for s in Sex::ALL {
            assert_eq!(s.as_str().parse::<Sex>().unwrap(), s);
        }
        assert!("other".parse::<Sex>().is_err());
    }
}
