//! Rejection-sampling augmentation of the bona fide healthy population and
//! stratified train/test splitting.

use super::bounds::FeatureBounds;
use super::io::SYNTHETIC_ID_PREFIX;
use super::{Cohort, HealthLabel, PatientRecord, Sex};
use crate::error::{Error, Result};
use crate::numeric::{mean, sample_std, RandomSource};

/// Draws per feature value before the bounds are declared infeasible.
pub const REJECTION_CAP: usize = 100_000;
pub const DEFAULT_AUGMENT_FOLD: usize = 3;
pub const AUGMENT_FOLD_PRESETS: [usize; 5] = [0, 1, 3, 5, 10];

/// Appends `fold` synthetic records per real bona fide healthy record.
///
/// Per sex, every feature is modelled as `Normal(μ, σ)` estimated from the real
/// bona fide healthy records of that sex, and each synthetic value is redrawn
/// until it falls inside the feature's normal range.
pub fn augment_bona_fide(
    cohort: &Cohort,
    fold: usize,
    bounds: &FeatureBounds,
    rng: &mut RandomSource,
) -> Result<Cohort> {
    let mut out = cohort.clone();
    if fold == 0 {
        return Ok(out);
    }
    let bfh = cohort.real().with_label(HealthLabel::BonaFideHealthy);
    if bfh.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "augmentation needs at least 2 bona fide healthy records, found {}",
            bfh.len()
        )));
    }
    let mut next = 1usize;
    for sex in Sex::ALL {
        let group = bfh.filter(|r| r.sex == sex);
        if group.is_empty() {
            continue;
        }
        if group.len() < 2 {
            return Err(Error::EmptyInput(format!(
                "augmentation needs at least 2 bona fide healthy {sex} records, found 1"
            )));
        }
        let x = group.feature_matrix()?;
        let params: Vec<(f64, f64)> = (0..x.cols())
            .map(|j| {
                let col = x.column(j);
                (mean(&col), sample_std(&col))
            })
            .collect();
        let intervals: Vec<_> = cohort
            .feature_names
            .iter()
            .map(|f| bounds.interval(HealthLabel::BonaFideHealthy, sex, f))
            .collect();
        for (j, (&(mu, sigma), iv)) in params.iter().zip(&intervals).enumerate() {
            if sigma == 0.0 && !iv.contains(mu) {
                return Err(Error::InfeasibleBounds {
                    feature: cohort.feature_names[j].clone(),
                    reason: format!("{sex} values are constant at {mu}, outside the normal range"),
                });
            }
        }
        let ages: Vec<u32> = group.records.iter().map(|r| r.age).collect();
        for _ in 0..fold * group.len() {
            let mut features = Vec::with_capacity(params.len());
            for (j, (&(mu, sigma), iv)) in params.iter().zip(&intervals).enumerate() {
                let mut draws = 0;
                let z = loop {
                    let z = rng.normal(mu, sigma);
                    draws += 1;
                    if iv.contains(z) {
                        break z;
                    }
                    if draws >= REJECTION_CAP {
                        return Err(Error::InfeasibleBounds {
                            feature: cohort.feature_names[j].clone(),
                            reason: format!(
                                "no draw from Normal({mu:.4}, {sigma:.4}) landed in range after {REJECTION_CAP} attempts"
                            ),
                        });
                    }
                };
                features.push(Some(z));
            }
            out.records.push(PatientRecord {
                id: format!("{SYNTHETIC_ID_PREFIX}{next:06}"),
                sex,
                age: ages[rng.index(ages.len())],
                label: HealthLabel::BonaFideHealthy,
                features,
                future: None,
                synthetic: true,
                severity: None,
            });
            next += 1;
        }
    }
    Cohort::new(out.feature_names, out.records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Cohort,
    pub test: Cohort,
    /// Strata that were too small to split.
    pub warnings: Vec<String>,
}

/// Label-stratified split of the real records; synthetic records all go to train.
///
/// Each stratum of size `n ≥ 2` sends `round(fraction · n)` records (at least
/// one, at most `n - 1`) to train. Record order is preserved in both parts.
pub fn split_train_test(cohort: &Cohort, fraction: f64, rng: &mut RandomSource) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0,1), got {fraction}"
        )));
    }
    let mut in_train = vec![true; cohort.len()];
    let mut warnings = Vec::new();
    for label in HealthLabel::ALL {
        let mut idx: Vec<usize> = (0..cohort.len())
            .filter(|&i| !cohort.records[i].synthetic && cohort.records[i].label == label)
            .collect();
        match idx.len() {
            0 => {}
            1 => warnings.push(format!("stratum `{label}` has a single record; it goes to train")),
            n => {
                rng.shuffle(&mut idx);
                let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
                for &i in &idx[n_train..] {
                    in_train[i] = false;
                }
            }
        }
    }
    let pick = |flag: bool| Cohort {
        feature_names: cohort.feature_names.clone(),
        records: cohort
            .records
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == flag)
            .map(|(r, _)| r.clone())
            .collect(),
    };
    Ok(Split {
        train: pick(true),
        test: pick(false),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, is_bona_fide, CohortSpec};

    fn base(seed: u64) -> Cohort {
        generate_cohort(
            &CohortSpec::clinical([30, 10, 10]),
            &FeatureBounds::clinical_default(),
            &mut RandomSource::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn fold_zero_is_identity() {
        let c = base(1);
        let b = FeatureBounds::clinical_default();
        assert_eq!(augment_bona_fide(&c, 0, &b, &mut RandomSource::new(0)).unwrap(), c);
    }

    #[test]
    fn appends_fold_times_bfh_valid_records() {
        let c = base(2);
        let b = FeatureBounds::clinical_default();
        let a = augment_bona_fide(&c, 3, &b, &mut RandomSource::new(5)).unwrap();
        assert_eq!(a.len(), c.len() + 3 * 30);
        assert_eq!(&a.records[..c.len()], &c.records[..]);
        for r in &a.records[c.len()..] {
            assert!(r.synthetic && r.id.starts_with(SYNTHETIC_ID_PREFIX));
            assert!(is_bona_fide(r, &a.feature_names, &b).unwrap());
        }
    }

    #[test]
    fn constant_feature_outside_range_is_infeasible() {
        let mut c = base(3);
        let j = c.feature_index("crp").unwrap();
        for r in c.records.iter_mut().filter(|r| r.label == HealthLabel::BonaFideHealthy) {
            r.features[j] = Some(50.0);
        }
        let err = augment_bona_fide(&c, 1, &FeatureBounds::clinical_default(), &mut RandomSource::new(0)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBounds { ref feature, .. } if feature == "crp"));
    }

    #[test]
    fn too_few_bfh_rejected() {
        let c = base(4).filter(|r| r.label != HealthLabel::BonaFideHealthy);
        assert!(augment_bona_fide(&c, 1, &FeatureBounds::clinical_default(), &mut RandomSource::new(0)).is_err());
    }

    #[test]
    fn split_seventy_thirty_per_class() {
        let spec = CohortSpec::clinical([10, 10, 10]);
        let c = generate_cohort(&spec, &FeatureBounds::clinical_default(), &mut RandomSource::new(8)).unwrap();
        let s = split_train_test(&c, 0.7, &mut RandomSource::new(1)).unwrap();
        for l in HealthLabel::ALL {
            assert_eq!(s.train.count_label(l), 7);
            assert_eq!(s.test.count_label(l), 3);
        }
        let again = split_train_test(&c, 0.7, &mut RandomSource::new(1)).unwrap();
        assert_eq!(s, again);
        let mut ids: Vec<_> = s
            .train
            .records
            .iter()
            .chain(&s.test.records)
            .map(|r| r.id.clone())
            .collect();
        ids.sort();
        let mut orig: Vec<_> = c.records.iter().map(|r| r.id.clone()).collect();
        orig.sort();
        assert_eq!(ids, orig);
    }

    #[test]
    fn synthetic_records_stay_in_train() {
        let c = base(6);
        let a = augment_bona_fide(&c, 2, &FeatureBounds::clinical_default(), &mut RandomSource::new(2)).unwrap();
        let s = split_train_test(&a, 0.7, &mut RandomSource::new(3)).unwrap();
        assert!(s.test.records.iter().all(|r| !r.synthetic));
        assert_eq!(s.train.records.iter().filter(|r| r.synthetic).count(), 60);
        assert!(split_train_test(&a, 1.0, &mut RandomSource::new(3)).is_err());
    }

    #[test]
    fn singleton_stratum_warns() {
        let c = base(7);
        let keep_one = c
            .records
            .iter()
            .find(|r| r.label == HealthLabel::Unhealthy)
            .unwrap()
            .id
            .clone();
        let c = c.filter(|r| r.label != HealthLabel::Unhealthy || r.id == keep_one);
        let s = split_train_test(&c, 0.7, &mut RandomSource::new(0)).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.train.count_label(HealthLabel::Unhealthy), 1);
    }
}
