//! Completeness filtering, per-sex split and rank-based normalization.

use super::{Cohort, Sex};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Features recorded for fewer than this share of records are dropped.
pub const MIN_COMPLETENESS: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    /// Dropped features with their completeness.
    pub dropped_features: Vec<(String, f64)>,
    /// Ids of records dropped for missing values.
    pub dropped_records: Vec<String>,
    pub retained_female: usize,
    pub retained_male: usize,
}

impl PreprocessReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# nplb-preprocess-report v1\n");
        s.push_str(&format!("retained_female,{}\n", self.retained_female));
        s.push_str(&format!("retained_male,{}\n", self.retained_male));
        for (f, c) in &self.dropped_features {
            s.push_str(&format!("dropped_feature,{f},{c:.4}\n"));
        }
        for id in &self.dropped_records {
            s.push_str(&format!("dropped_record,{id}\n"));
        }
        s
    }
}

/// Drops sparse features, then records with any remaining gap.
pub fn filter_complete(cohort: &Cohort) -> Result<(Cohort, PreprocessReport)> {
    if cohort.is_empty() {
        return Err(Error::EmptyInput("cohort has no records".into()));
    }
    let n = cohort.len() as f64;
    let mut keep = Vec::new();
    let mut report = PreprocessReport::default();
    for (j, name) in cohort.feature_names.iter().enumerate() {
        let present = cohort.records.iter().filter(|r| r.features[j].is_some()).count() as f64;
        let completeness = present / n;
        if completeness >= MIN_COMPLETENESS {
            keep.push(j);
        } else {
            report.dropped_features.push((name.clone(), completeness));
        }
    }
    let names: Vec<String> = keep.iter().map(|&j| cohort.feature_names[j].clone()).collect();
    let mut records = Vec::new();
    for r in &cohort.records {
        let features: Vec<Option<f64>> = keep.iter().map(|&j| r.features[j]).collect();
        if features.iter().all(Option::is_some) {
            let mut r = r.clone();
            r.features = features;
            records.push(r);
        } else {
            report.dropped_records.push(r.id.clone());
        }
    }
    if names.is_empty() || records.is_empty() {
        return Err(Error::EmptyResult(format!(
            "{} of {} features and {} of {} records survive the completeness filter",
            names.len(),
            cohort.feature_names.len(),
            records.len(),
            cohort.len()
        )));
    }
    report.retained_female = records.iter().filter(|r| r.sex == Sex::Female).count();
    report.retained_male = records.len() - report.retained_female;
    Ok((Cohort::new(names, records)?, report))
}

/// Rank-based inverse-normal transform fitted on a reference sample.
///
/// A value's rank (average rank for ties, linear interpolation between
/// neighbours for unseen values) maps to `Φ⁻¹((r - 0.5) / n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileNormalizer {
    pub feature_names: Vec<String>,
    /// Sorted reference values per feature.
    pub reference: Vec<Vec<f64>>,
}

impl QuantileNormalizer {
    pub fn fit(cohort: &Cohort) -> Result<Self> {
        if cohort.is_empty() {
            return Err(Error::EmptyInput("cannot fit a normalizer on an empty cohort".into()));
        }
        let x = cohort.feature_matrix()?;
        let reference = (0..x.cols())
            .map(|j| {
                let mut col = x.column(j);
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        Ok(Self {
            feature_names: cohort.feature_names.clone(),
            reference,
        })
    }

    pub fn n_features(&self) -> usize {
        self.reference.len()
    }

    /// 1-based fractional rank of `x` in feature `j`'s reference sample.
    pub fn rank(&self, j: usize, x: f64) -> f64 {
        let s = &self.reference[j];
        let below = s.partition_point(|&v| v < x);
        let upto = s.partition_point(|&v| v <= x);
        if upto > below {
            return below as f64 + (upto - below + 1) as f64 / 2.0;
        }
        if below == 0 {
            return 1.0;
        }
        if below == s.len() {
            return s.len() as f64;
        }
        let (lo, hi) = (s[below - 1], s[below]);
        let (rl, rh) = (self.rank(j, lo), self.rank(j, hi));
        rl + (rh - rl) * (x - lo) / (hi - lo)
    }

    pub fn transform_value(&self, j: usize, x: f64) -> f64 {
        let n = self.reference[j].len() as f64;
        let u = (self.rank(j, x) - 0.5) / n;
        Normal::standard().inverse_cdf(u)
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_features() {
            return Err(Error::Dimension(format!(
                "row has {} features, normalizer expects {}",
                row.len(),
                self.n_features()
            )));
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| self.transform_value(j, x))
            .collect())
    }

    /// Replaces every feature value; the cohort must be complete.
    pub fn transform_cohort(&self, cohort: &Cohort) -> Result<Cohort> {
        if cohort.feature_names != self.feature_names {
            return Err(Error::Dimension("cohort features differ from the normalizer's".into()));
        }
        let mut out = cohort.clone();
        for r in &mut out.records {
            let dense = r.dense_features(&cohort.feature_names)?;
            r.features = self.transform_row(&dense)?.into_iter().map(Some).collect();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub female: Cohort,
    pub male: Cohort,
    pub female_normalizer: Option<QuantileNormalizer>,
    pub male_normalizer: Option<QuantileNormalizer>,
    pub report: PreprocessReport,
}

impl Preprocessed {
    pub fn by_sex(&self, sex: Sex) -> &Cohort {
        match sex {
            Sex::Female => &self.female,
            Sex::Male => &self.male,
        }
    }

    /// Both sexes back in one cohort (female records first).
    pub fn merged(&self) -> Cohort {
        let mut records = self.female.records.clone();
        records.extend(self.male.records.iter().cloned());
        Cohort {
            feature_names: self.female.feature_names.clone(),
            records,
        }
    }
}

/// Completeness filtering, then per-sex normalization of every feature.
pub fn preprocess(cohort: &Cohort) -> Result<Preprocessed> {
    let (complete, report) = filter_complete(cohort)?;
    let normalize = |sex: Sex| -> Result<(Cohort, Option<QuantileNormalizer>)> {
        let part = complete.filter(|r| r.sex == sex);
        if part.is_empty() {
            return Ok((part, None));
        }
        let norm = QuantileNormalizer::fit(&part)?;
        Ok((norm.transform_cohort(&part)?, Some(norm)))
    };
    let (female, female_normalizer) = normalize(Sex::Female)?;
    let (male, male_normalizer) = normalize(Sex::Male)?;
    Ok(Preprocessed {
        female,
        male,
        female_normalizer,
        male_normalizer,
        report,
    })
}
