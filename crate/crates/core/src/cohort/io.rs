//! Cohort files.
//!
//! ```text
//! # nplb-cohort v1
//! id,sex,age,label,future_condition,years_until,<feature...>
//! p000001,female,52,apparently_healthy,diabetes,3.25,4.9,1.42,...
//! ```
//!
//! Missing values (and absent follow-up) are empty fields. Records whose id
//! starts with `aug-` are synthetic.

use super::{Cohort, FutureDiagnosis, PatientRecord};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub const COHORT_MAGIC: &str = "# nplb-cohort v1";
pub const SYNTHETIC_ID_PREFIX: &str = "aug-";
const FIXED_COLUMNS: [&str; 6] = ["id", "sex", "age", "label", "future_condition", "years_until"];

pub fn cohort_to_text(cohort: &Cohort) -> String {
    let mut s = format!("{COHORT_MAGIC}\n{}", FIXED_COLUMNS.join(","));
    for f in &cohort.feature_names {
        s.push(',');
        s.push_str(f);
    }
    s.push('\n');
    for r in &cohort.records {
        let (cond, years) = match &r.future {
            Some(f) => (f.condition.as_str(), f.years_until.to_string()),
            None => ("", String::new()),
        };
        let _ = write!(s, "{},{},{},{},{},{}", r.id, r.sex, r.age, r.label, cond, years);
        for v in &r.features {
            s.push(',');
            if let Some(v) = v {
                let _ = write!(s, "{v}");
            }
        }
        s.push('\n');
    }
    s
}

pub fn parse_cohort(text: &str, origin: &str) -> Result<Cohort> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let bad = |line: usize, msg: String| Error::parse(origin, line, msg);
    if lines.next().map(|(_, l)| l) != Some(COHORT_MAGIC) {
        return Err(bad(1, format!("expected `{COHORT_MAGIC}`")));
    }
    let header = lines.next().ok_or_else(|| bad(2, "missing header row".into()))?.1;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(bad(2, format!("header must start with `{}`", FIXED_COLUMNS.join(","))));
    }
    let names: Vec<String> = cols[FIXED_COLUMNS.len()..].iter().map(|s| s.to_string()).collect();
    let mut records = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(ln, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(ln, format!("bad {what} `{s}`")))
        };
        let sex = f[1].parse().map_err(|e: Error| bad(ln, e.to_string()))?;
        let age = f[2].parse().map_err(|_| bad(ln, format!("bad age `{}`", f[2])))?;
        let label = f[3].parse().map_err(|e: Error| bad(ln, e.to_string()))?;
        let future = match (f[4], f[5]) {
            ("", "") => None,
            (c, y) if !c.is_empty() => Some(FutureDiagnosis {
                condition: c.to_string(),
                years_until: num(y, "years_until")?,
            }),
            _ => return Err(bad(ln, "years_until given without a condition".into())),
        };
        let features = f[FIXED_COLUMNS.len()..]
            .iter()
            .zip(&names)
            .map(|(v, n)| if v.is_empty() { Ok(None) } else { num(v, n).map(Some) })
            .collect::<Result<_>>()?;
        records.push(PatientRecord {
            id: f[0].to_string(),
            sex,
            age,
            label,
            features,
            future,
            synthetic: f[0].starts_with(SYNTHETIC_ID_PREFIX),
            severity: None,
        });
    }
    Cohort::new(names, records).map_err(|e| Error::parse(origin, 0, e.to_string()))
}

pub fn write_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), cohort_to_text(cohort)).map_err(|e| Error::io(path, e))
}

pub fn read_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_cohort(&text, &path.as_ref().display().to_string())
}
