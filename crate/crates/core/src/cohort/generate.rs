//! Gaussian synthetic cohorts with clinically consistent labels.

use super::bounds::FeatureBounds;
use super::{Cohort, FutureDiagnosis, HealthLabel, PatientRecord, Sex, MAX_AGE, MIN_AGE};
use crate::error::{Error, Result};
use crate::numeric::RandomSource;
use serde::{Deserialize, Serialize};

/// Draw attempts per record before generation gives up.
pub const GENERATION_CAP: usize = 100_000;

/// Mean and standard deviation of one feature under one label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDist {
    pub mean: f64,
    pub std: f64,
}

impl LabelDist {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
    /// Indexed by `HealthLabel::index()`.
    pub dist: [LabelDist; 3],
    /// Probability that a value is recorded as missing.
    #[serde(default)]
    pub missing_rate: f64,
}

/// Follow-up diagnoses among apparently healthy records.
///
/// Each apparently healthy record carries a latent severity `s ~ U(0,1)` that
/// shifts its feature means from the healthy side towards the unhealthy side.
/// It converts with probability `fraction * ((1 - c) + 2 c s)` (capped at 1),
/// and sooner the larger `s` is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureSpec {
    pub fraction: f64,
    pub conditions: Vec<String>,
    /// Coupling `c` in [0,1] between severity and conversion.
    pub severity_coupling: f64,
}

impl Default for FutureSpec {
    fn default() -> Self {
        Self {
            fraction: 0.3,
            conditions: vec!["diabetes".into(), "hypertension".into(), "cardiovascular".into()],
            severity_coupling: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub features: Vec<FeatureSpec>,
    /// Record counts indexed by `HealthLabel::index()`.
    pub sizes: [usize; 3],
    pub future: FutureSpec,
    pub female_fraction: f64,
}

fn feature(name: &str, unit: &str, bfh: (f64, f64), ah: (f64, f64), unhealthy: (f64, f64)) -> FeatureSpec {
    FeatureSpec {
        name: name.into(),
        unit: unit.into(),
        dist: [
            LabelDist::new(bfh.0, bfh.1),
            LabelDist::new(ah.0, ah.1),
            LabelDist::new(unhealthy.0, unhealthy.1),
        ],
        missing_rate: 0.0,
    }
}

impl CohortSpec {
    /// Seven key lab markers plus five lifestyle/vital features.
    pub fn clinical(sizes: [usize; 3]) -> Self {
        Self {
            features: vec![
                feature("total_cholesterol", "mmol/L", (4.5, 0.4), (5.2, 0.6), (6.0, 0.9)),
                feature("hdl", "mmol/L", (1.6, 0.25), (1.35, 0.3), (1.1, 0.3)),
                feature("ldl", "mmol/L", (2.6, 0.35), (3.2, 0.5), (3.9, 0.7)),
                feature("triglycerides", "mmol/L", (1.1, 0.3), (1.6, 0.5), (2.2, 0.8)),
                feature("fasting_glucose", "mg/dL", (85.0, 7.0), (97.0, 11.0), (110.0, 18.0)),
                feature("hba1c", "mmol/mol", (35.0, 3.0), (40.0, 5.0), (46.0, 7.0)),
                feature("crp", "mg/L", (2.0, 1.5), (4.0, 2.5), (6.0, 4.0)),
                feature("bmi", "kg/m2", (24.0, 3.0), (27.0, 4.0), (30.0, 5.0)),
                feature("systolic_bp", "mmHg", (118.0, 10.0), (128.0, 13.0), (140.0, 16.0)),
                feature("sleep_hours", "h", (7.3, 0.8), (6.9, 1.0), (6.5, 1.2)),
                feature(
                    "met_vigorous",
                    "MET-min/wk",
                    (900.0, 300.0),
                    (600.0, 300.0),
                    (300.0, 250.0),
                ),
                feature(
                    "met_moderate",
                    "MET-min/wk",
                    (1200.0, 350.0),
                    (900.0, 350.0),
                    (600.0, 300.0),
                ),
            ],
            sizes,
            future: FutureSpec::default(),
            female_fraction: 0.5,
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.iter().sum::<usize>() == 0 {
            return Err(Error::Config("cohort sizes are all zero".into()));
        }
        if self.features.is_empty() {
            return Err(Error::Config("cohort spec declares no features".into()));
        }
        for f in &self.features {
            for d in &f.dist {
                if !(d.std > 0.0 && d.std.is_finite() && d.mean.is_finite()) {
                    return Err(Error::Config(format!(
                        "feature `{}` needs a finite mean and a positive std",
                        f.name
                    )));
                }
            }
            if !(0.0..=1.0).contains(&f.missing_rate) {
                return Err(Error::Config(format!("missing rate of `{}` must lie in [0,1]", f.name)));
            }
        }
        let fu = &self.future;
        if !(0.0..=1.0).contains(&fu.fraction) || !(0.0..=1.0).contains(&fu.severity_coupling) {
            return Err(Error::Config(
                "future fraction and severity coupling must lie in [0,1]".into(),
            ));
        }
        if fu.fraction > 0.0 && fu.conditions.is_empty() {
            return Err(Error::Config("future fraction > 0 needs at least one condition".into()));
        }
        if !(0.0..=1.0).contains(&self.female_fraction) {
            return Err(Error::Config("female fraction must lie in [0,1]".into()));
        }
        Ok(())
    }
}

fn draw_values(spec: &CohortSpec, label: HealthLabel, severity: Option<f64>, rng: &mut RandomSource) -> Vec<f64> {
    spec.features
        .iter()
        .map(|f| {
            let d = f.dist[label.index()];
            let mean = match severity {
                Some(s) => {
                    let span =
                        f.dist[HealthLabel::Unhealthy.index()].mean - f.dist[HealthLabel::BonaFideHealthy.index()].mean;
                    d.mean + (s - 0.5) * span
                }
                None => d.mean,
            };
            // Measurements are non-negative; redraw (this terminates quickly for sane specs).
            let mut z = rng.normal(mean, d.std);
            let mut tries = 1;
            while z < 0.0 && tries < GENERATION_CAP {
                z = rng.normal(mean, d.std);
                tries += 1;
            }
            z.max(0.0)
        })
        .collect()
}

fn within(bounds: &FeatureBounds, sex: Sex, names: &[String], values: &[f64]) -> bool {
    names
        .iter()
        .zip(values)
        .all(|(n, &v)| bounds.interval(HealthLabel::BonaFideHealthy, sex, n).contains(v))
}

/// Generates a labeled cohort.
///
/// Bona fide healthy records are redrawn until every bounded feature is inside
/// its normal range, unhealthy records until at least one is outside.
pub fn generate_cohort(spec: &CohortSpec, bounds: &FeatureBounds, rng: &mut RandomSource) -> Result<Cohort> {
    spec.validate()?;
    let names = spec.feature_names();
    let mut records = Vec::with_capacity(spec.sizes.iter().sum());
    let mut next_id = 1usize;
    for label in HealthLabel::ALL {
        for _ in 0..spec.sizes[label.index()] {
            let sex = if rng.bernoulli(spec.female_fraction) {
                Sex::Female
            } else {
                Sex::Male
            };
            let age = MIN_AGE + rng.index((MAX_AGE - MIN_AGE + 1) as usize) as u32;
            let severity = (label == HealthLabel::ApparentlyHealthy).then(|| rng.uniform());
            let mut attempts = 0;
            let values = loop {
                let v = draw_values(spec, label, severity, rng);
                attempts += 1;
                let ok = match label {
                    HealthLabel::BonaFideHealthy => within(bounds, sex, &names, &v),
                    HealthLabel::Unhealthy => !within(bounds, sex, &names, &v),
                    HealthLabel::ApparentlyHealthy => true,
                };
                if ok {
                    break v;
                }
                if attempts >= GENERATION_CAP {
                    return Err(Error::GenerationTimeout {
                        label: label.to_string(),
                        attempts,
                    });
                }
            };
            let future = match severity {
                Some(s) => {
                    let fu = &spec.future;
                    let c = fu.severity_coupling;
                    let p = (fu.fraction * ((1.0 - c) + 2.0 * c * s)).min(1.0);
                    if rng.bernoulli(p) {
                        let condition = fu.conditions[rng.index(fu.conditions.len())].clone();
                        let u = rng.uniform();
                        let years = 0.5 + 9.5 * ((1.0 - c) * u + c * (1.0 - s)) + rng.normal(0.0, 0.25);
                        Some(FutureDiagnosis {
                            condition,
                            years_until: years.max(0.1),
                        })
                    } else {
                        None
                    }
                }
                None => None,
            };
            let features = values
                .into_iter()
                .zip(&spec.features)
                .map(|(v, f)| (f.missing_rate == 0.0 || !rng.bernoulli(f.missing_rate)).then_some(v))
                .collect();
            records.push(PatientRecord {
                id: format!("p{next_id:06}"),
                sex,
                age,
                label,
                features,
                future,
                synthetic: false,
                severity,
            });
            next_id += 1;
        }
    }
    Cohort::new(names, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::is_bona_fide;

    #[test]
    fn only_unhealthy_when_asked() {
        let spec = CohortSpec::clinical([0, 0, 25]);
        let c = generate_cohort(&spec, &FeatureBounds::clinical_default(), &mut RandomSource::new(1)).unwrap();
        assert_eq!(c.len(), 25);
        assert!(c.records.iter().all(|r| r.label == HealthLabel::Unhealthy));
    }

    #[test]
    fn labels_respect_bounds() {
        let b = FeatureBounds::clinical_default();
        let spec = CohortSpec::clinical([60, 40, 60]);
        let c = generate_cohort(&spec, &b, &mut RandomSource::new(2)).unwrap();
        for r in &c.records {
            let bf = is_bona_fide(r, &c.feature_names, &b).unwrap();
            match r.label {
                HealthLabel::BonaFideHealthy => assert!(bf),
                HealthLabel::Unhealthy => assert!(!bf),
                HealthLabel::ApparentlyHealthy => assert!(r.severity.is_some()),
            }
            assert!(r.future.is_none() || r.label == HealthLabel::ApparentlyHealthy);
        }
    }

    #[test]
    fn seeded_generation_replays() {
        let b = FeatureBounds::clinical_default();
        let spec = CohortSpec::clinical([20, 20, 20]);
        let a = generate_cohort(&spec, &b, &mut RandomSource::new(9)).unwrap();
        let c = generate_cohort(&spec, &b, &mut RandomSource::new(9)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn infeasible_spec_times_out() {
        let b = FeatureBounds::clinical_default();
        let mut spec = CohortSpec::clinical([1, 0, 0]);
        spec.features[4].dist[0] = LabelDist::new(500.0, 0.1);
        assert!(matches!(
            generate_cohort(&spec, &b, &mut RandomSource::new(3)),
            Err(Error::GenerationTimeout { .. })
        ));
    }

    #[test]
    fn invalid_specs_rejected() {
        let b = FeatureBounds::clinical_default();
        let mut spec = CohortSpec::clinical([1, 1, 1]);
        spec.features[0].dist[1].std = 0.0;
        assert!(generate_cohort(&spec, &b, &mut RandomSource::new(3)).is_err());
        assert!(generate_cohort(&CohortSpec::clinical([0, 0, 0]), &b, &mut RandomSource::new(3)).is_err());
    }
}
