//! Per-(condition, sex, feature) value intervals and the bounds file format.
//!
//! ```text
//! # nplb-bounds v1
//! condition,sex,feature,unit,lower,upper,lower_closed,upper_closed
//! bona_fide_healthy,female,hdl,mmol/L,1.3,inf,true,false
//! ```
//!
//! `sex` is `female`, `male` or `any`; a sex-specific row overrides an `any` row
//! for the same condition and feature. Bounds accept `inf` / `-inf`. Features
//! without a row are unbounded.

use super::{HealthLabel, PatientRecord, Sex};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const BOUNDS_MAGIC: &str = "# nplb-bounds v1";
const BOUNDS_HEADER: &str = "condition,sex,feature,unit,lower,upper,lower_closed,upper_closed";

/// The seven key lab markers that define the bona fide healthy population.
pub const P0_FEATURES: [&str; 7] = [
    "total_cholesterol",
    "hdl",
    "ldl",
    "triglycerides",
    "fasting_glucose",
    "hba1c",
    "crp",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
    pub upper_closed: bool,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
        lower_closed: false,
        upper_closed: false,
    };

    pub fn closed(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            lower_closed: true,
            upper_closed: true,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let lo = if self.lower_closed {
            x >= self.lower
        } else {
            x > self.lower
        };
        let hi = if self.upper_closed {
            x <= self.upper
        } else {
            x < self.upper
        };
        lo && hi
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lower: self.lower * factor,
            upper: self.upper * factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub condition: HealthLabel,
    /// `None` applies to both sexes.
    pub sex: Option<Sex>,
    pub feature: String,
    pub unit: String,
    pub interval: Interval,
}

/// Lower/upper bound table indexed by condition, sex and feature.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub rows: Vec<BoundRow>,
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_bound(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok().filter(|v: &f64| v.is_finite()),
    }
}

impl FeatureBounds {
    /// Clinically normal ranges for the key markers, for the BFH condition.
    ///
    /// Upper-only ranges get a physical floor of 0 since concentrations are non-negative.
    pub fn clinical_default() -> Self {
        let bfh = HealthLabel::BonaFideHealthy;
        let row = |sex: Option<Sex>, feature: &str, unit: &str, interval: Interval| BoundRow {
            condition: bfh,
            sex,
            feature: feature.into(),
            unit: unit.into(),
            interval,
        };
        let at_most = |u: f64| Interval::closed(0.0, u);
        let below = |u: f64| Interval {
            upper_closed: false,
            ..Interval::closed(0.0, u)
        };
        let at_least = |l: f64| Interval {
            upper: f64::INFINITY,
            upper_closed: false,
            ..Interval::closed(l, 0.0)
        };
        Self {
            rows: vec![
                row(None, "total_cholesterol", "mmol/L", at_most(5.18)),
                row(Some(Sex::Male), "hdl", "mmol/L", at_least(1.0)),
                row(Some(Sex::Female), "hdl", "mmol/L", at_least(1.3)),
                row(None, "ldl", "mmol/L", at_most(3.3)),
                row(None, "triglycerides", "mmol/L", at_most(1.7)),
                row(None, "fasting_glucose", "mg/dL", Interval::closed(70.0, 100.0)),
                row(None, "hba1c", "mmol/mol", below(42.0)),
                row(None, "crp", "mg/L", below(10.0)),
            ],
        }
    }

    /// Interval for `(condition, sex, feature)`, unbounded when no row matches.
    pub fn interval(&self, condition: HealthLabel, sex: Sex, feature: &str) -> Interval {
        let mut generic = None;
        for r in &self.rows {
            if r.condition != condition || r.feature != feature {
                continue;
            }
            match r.sex {
                Some(s) if s == sex => return r.interval,
                None => generic = Some(r.interval),
                _ => {}
            }
        }
        generic.unwrap_or(Interval::UNBOUNDED)
    }

    /// Lower and upper bound vectors over `features` for one condition and sex.
    pub fn lower_upper(&self, condition: HealthLabel, sex: Sex, features: &[String]) -> (Vec<f64>, Vec<f64>) {
        features
            .iter()
            .map(|f| {
                let i = self.interval(condition, sex, f);
                (i.lower, i.upper)
            })
            .unzip()
    }

    /// Multiplies every finite bound of `feature` by `factor` (> 0).
    pub fn scale_feature(&mut self, feature: &str, factor: f64) {
        for r in self.rows.iter_mut().filter(|r| r.feature == feature) {
            r.interval = r.interval.scaled(factor);
        }
    }

    pub fn unit(&self, feature: &str) -> Option<&str> {
        self.rows.iter().find(|r| r.feature == feature).map(|r| r.unit.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{BOUNDS_MAGIC}\n{BOUNDS_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.condition,
                r.sex.map_or("any", Sex::as_str),
                r.feature,
                r.unit,
                fmt_bound(r.interval.lower),
                fmt_bound(r.interval.upper),
                r.interval.lower_closed,
                r.interval.upper_closed
            );
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let bad = |line: usize, msg: String| Error::parse(origin, line, msg);
        if lines.next().map(|(_, l)| l) != Some(BOUNDS_MAGIC) {
            return Err(bad(1, format!("expected `{BOUNDS_MAGIC}`")));
        }
        if lines.next().map(|(_, l)| l) != Some(BOUNDS_HEADER) {
            return Err(bad(2, format!("expected header `{BOUNDS_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(ln, format!("expected 8 fields, found {}", f.len())));
            }
            let condition = f[0].parse().map_err(|e: Error| bad(ln, e.to_string()))?;
            let sex = match f[1] {
                "any" => None,
                s => Some(s.parse().map_err(|e: Error| bad(ln, e.to_string()))?),
            };
            let lower = parse_bound(f[4]).ok_or_else(|| bad(ln, format!("bad lower bound `{}`", f[4])))?;
            let upper = parse_bound(f[5]).ok_or_else(|| bad(ln, format!("bad upper bound `{}`", f[5])))?;
            if lower > upper {
                return Err(bad(ln, format!("lower bound {lower} exceeds upper bound {upper}")));
            }
            let flag = |s: &str| match s {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(bad(ln, format!("expected true/false, found `{other}`"))),
            };
            rows.push(BoundRow {
                condition,
                sex,
                feature: f[2].to_string(),
                unit: f[3].to_string(),
                interval: Interval {
                    lower,
                    upper,
                    lower_closed: flag(f[6])?,
                    upper_closed: flag(f[7])?,
                },
            });
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text, &path.as_ref().display().to_string())
    }
}

/// True iff every key marker of `record` lies in its clinically normal range.
pub fn is_bona_fide(record: &PatientRecord, feature_names: &[String], normal_ranges: &FeatureBounds) -> Result<bool> {
    let mut ok = true;
    for name in P0_FEATURES {
        let value = feature_names
            .iter()
            .position(|f| f == name)
            .and_then(|j| record.features.get(j).copied().flatten())
            .ok_or_else(|| Error::IncompleteRecord {
                id: record.id.clone(),
                feature: name.to_string(),
            })?;
        ok &= normal_ranges
            .interval(HealthLabel::BonaFideHealthy, record.sex, name)
            .contains(value);
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        P0_FEATURES.iter().map(|s| s.to_string()).collect()
    }

    fn record(sex: Sex, values: [f64; 7]) -> PatientRecord {
        PatientRecord {
            id: "r".into(),
            sex,
            age: 50,
            label: HealthLabel::ApparentlyHealthy,
            features: values.iter().map(|&v| Some(v)).collect(),
            future: None,
            synthetic: false,
            severity: None,
        }
    }

    const NORMAL: [f64; 7] = [5.0, 1.4, 3.0, 1.5, 85.0, 40.0, 5.0];

    #[test]
    fn clinical_examples() {
        let b = FeatureBounds::clinical_default();
        assert!(is_bona_fide(&record(Sex::Female, NORMAL), &names(), &b).unwrap());

        let mut low_hdl = NORMAL;
        low_hdl[1] = 1.1;
        assert!(!is_bona_fide(&record(Sex::Female, low_hdl), &names(), &b).unwrap());
        assert!(is_bona_fide(&record(Sex::Male, low_hdl), &names(), &b).unwrap());

        let mut glucose = NORMAL;
        glucose[4] = 100.0;
        assert!(is_bona_fide(&record(Sex::Female, glucose), &names(), &b).unwrap());
        glucose[4] = 70.0;
        assert!(is_bona_fide(&record(Sex::Female, glucose), &names(), &b).unwrap());
        glucose[4] = 100.01;
        assert!(!is_bona_fide(&record(Sex::Female, glucose), &names(), &b).unwrap());
    }

    #[test]
    fn strict_bounds_stay_strict() {
        let b = FeatureBounds::clinical_default();
        let mut v = NORMAL;
        v[5] = 42.0;
        assert!(!is_bona_fide(&record(Sex::Male, v), &names(), &b).unwrap());
        let mut v = NORMAL;
        v[6] = 10.0;
        assert!(!is_bona_fide(&record(Sex::Male, v), &names(), &b).unwrap());
        let mut v = NORMAL;
        v[0] = 5.18;
        assert!(is_bona_fide(&record(Sex::Male, v), &names(), &b).unwrap());
    }

    #[test]
    fn missing_marker_is_an_error() {
        let b = FeatureBounds::clinical_default();
        let mut r = record(Sex::Female, NORMAL);
        r.features[3] = None;
        assert!(matches!(
            is_bona_fide(&r, &names(), &b),
            Err(Error::IncompleteRecord { .. })
        ));
        let r = record(Sex::Female, NORMAL);
        assert!(is_bona_fide(&r, &names()[..6], &b).is_err());
    }

    #[test]
    fn text_round_trip_and_errors() {
        let b = FeatureBounds::clinical_default();
        let text = b.to_text();
        assert!(text.contains("bona_fide_healthy,female,hdl,mmol/L,1.3,inf,true,false"));
        assert!(text.contains("bona_fide_healthy,any,fasting_glucose,mg/dL,70,100,true,true"));
        assert_eq!(FeatureBounds::parse(&text, "mem").unwrap(), b);
        let broken = text.replace("5.18", "abc");
        assert!(matches!(
            FeatureBounds::parse(&broken, "mem"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(FeatureBounds::parse("nope", "mem").is_err());
        let inverted = format!("{BOUNDS_MAGIC}\n{BOUNDS_HEADER}\nunhealthy,any,x,u,5,1,true,true\n");
        assert!(FeatureBounds::parse(&inverted, "mem").is_err());
    }

    #[test]
    fn sex_specific_rows_win() {
        let b = FeatureBounds::clinical_default();
        assert_eq!(b.interval(HealthLabel::BonaFideHealthy, Sex::Male, "hdl").lower, 1.0);
        assert_eq!(b.interval(HealthLabel::BonaFideHealthy, Sex::Female, "hdl").lower, 1.3);
        assert_eq!(
            b.interval(HealthLabel::Unhealthy, Sex::Female, "hdl"),
            Interval::UNBOUNDED
        );
        assert_eq!(
            b.interval(HealthLabel::BonaFideHealthy, Sex::Female, "bmi"),
            Interval::UNBOUNDED
        );
    }
}
