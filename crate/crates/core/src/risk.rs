//! Single-visit health risk: distance of a patient to the median bona fide
//! healthy profile of their (sex, age group) cell, mapped to risk groups via
//! percentile threshold intervals.

use crate::cohort::{AgeGroup, Cohort, HealthLabel, PatientRecord, QuantileNormalizer, Sex, P0_FEATURES};
use crate::error::{Error, Result};
use crate::net::ModelParams;
use crate::numeric::{columnwise_percentile, covariance, euclidean_distance, pearson_correlation, Cholesky, Matrix};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

/// Cells with fewer bona fide healthy members are unavailable.
pub const MIN_CELL_MEMBERS: usize = 4;
/// Ridge added to cell covariances, relative to `trace / dim`.
pub const MAHALANOBIS_RIDGE: f64 = 1e-6;
pub const NORMAL_Q: f64 = 95.0;
pub const LOWER_RISK_Q: f64 = 98.0;

/// Raw-space feature transform followed by the embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub model: ModelParams,
    pub normalizer: Option<QuantileNormalizer>,
}

impl Embedder {
    pub fn embed_rows(&self, rows: &Matrix) -> Result<Matrix> {
        match &self.normalizer {
            Some(n) => {
                let mut data = Vec::with_capacity(rows.rows() * rows.cols());
                for r in rows.iter_rows() {
                    data.extend(n.transform_row(r)?);
                }
                self.model.embed(&Matrix::from_vec(rows.rows(), rows.cols(), data)?)
            }
            None => self.model.embed(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistanceBackend {
    RawEuclidean,
    /// Per-cell covariance of the bona fide healthy members.
    Mahalanobis,
    /// Euclidean distance over a non-empty feature subset.
    P0Euclidean {
        features: Vec<usize>,
    },
    EmbeddingEuclidean(Box<Embedder>),
}

impl DistanceBackend {
    /// Subset backend over the key lab markers present in `feature_names`.
    pub fn p0(feature_names: &[String]) -> Result<Self> {
        let features: Vec<usize> = P0_FEATURES
            .iter()
            .filter_map(|p| feature_names.iter().position(|f| f == p))
            .collect();
        if features.is_empty() {
            return Err(Error::Config("no key lab marker among the cohort features".into()));
        }
        Ok(DistanceBackend::P0Euclidean { features })
    }

    pub fn embedding(model: ModelParams, normalizer: Option<QuantileNormalizer>) -> Self {
        DistanceBackend::EmbeddingEuclidean(Box::new(Embedder { model, normalizer }))
    }

    pub fn name(&self) -> &'static str {
        match self {
            DistanceBackend::RawEuclidean => "raw",
            DistanceBackend::Mahalanobis => "mahalanobis",
            DistanceBackend::P0Euclidean { .. } => "p0",
            DistanceBackend::EmbeddingEuclidean(_) => "embedding",
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        match self {
            DistanceBackend::P0Euclidean { features } => {
                if features.is_empty() || features.iter().any(|&j| j >= n_features) {
                    return Err(Error::Config(
                        "p0 backend needs a non-empty, in-range feature subset".into(),
                    ));
                }
            }
            DistanceBackend::EmbeddingEuclidean(e) if e.model.input_dim() != n_features => {
                return Err(Error::Dimension(format!(
                    "model expects {} features, cohort has {n_features}",
                    e.model.input_dim()
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Maps raw rows into the space where Euclidean distance is the backend metric.
    fn represent(&self, whitening: Option<&Cholesky>, rows: &Matrix) -> Result<Matrix> {
        match self {
            DistanceBackend::RawEuclidean => Ok(rows.clone()),
            DistanceBackend::Mahalanobis => {
                let l = whitening.ok_or_else(|| Error::Config("mahalanobis cell has no covariance".into()))?;
                let mut data = Vec::with_capacity(rows.rows() * rows.cols());
                for r in rows.iter_rows() {
                    data.extend(l.forward_solve(r)?);
                }
                Matrix::from_vec(rows.rows(), rows.cols(), data)
            }
            DistanceBackend::P0Euclidean { features } => Ok(rows.select_cols(features)),
            DistanceBackend::EmbeddingEuclidean(e) => e.embed_rows(rows),
        }
    }
}

/// Distance between a patient and a reference in a shared representation.
pub fn health_score(patient_repr: &[f64], reference: &[f64]) -> Result<f64> {
    euclidean_distance(reference, patient_repr)
}

/// `1 / (1 + d)` for a distance `d ≥ 0`.
pub fn similarity(distance: f64) -> f64 {
    1.0 / (1.0 + distance)
}

/// Closed distance interval `[t_lower, t_upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdInterval {
    pub t_lower: f64,
    pub t_upper: f64,
    pub q: f64,
}

impl ThresholdInterval {
    pub fn contains(&self, score: f64) -> bool {
        self.t_lower <= score && score <= self.t_upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RiskGroup {
    Normal,
    LowerRisk,
    HigherRisk,
    Unassigned,
}

impl RiskGroup {
    pub const ASSIGNED: [RiskGroup; 3] = [RiskGroup::Normal, RiskGroup::LowerRisk, RiskGroup::HigherRisk];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskGroup::Normal => "normal",
            RiskGroup::LowerRisk => "lower_risk",
            RiskGroup::HigherRisk => "higher_risk",
            RiskGroup::Unassigned => "unassigned",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RiskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct CellReference {
    pub members: usize,
    /// Coordinate-wise median in raw feature space.
    pub median: Vec<f64>,
    /// Backend representation of the median.
    pub reference: Vec<f64>,
    pub normal: ThresholdInterval,
    pub lower_risk: ThresholdInterval,
    whitening: Option<Cholesky>,
}

impl CellReference {
    /// Risk group of a score; `clamp_lower_bound` treats both intervals as starting at 0.
    pub fn classify(&self, score: f64, clamp_lower_bound: bool) -> RiskGroup {
        let (mut n, mut lr) = (self.normal, self.lower_risk);
        if clamp_lower_bound {
            n.t_lower = 0.0;
            lr.t_lower = 0.0;
        }
        if n.contains(score) {
            RiskGroup::Normal
        } else if lr.contains(score) {
            RiskGroup::LowerRisk
        } else {
            RiskGroup::HigherRisk
        }
    }
}

pub type CellKey = (Sex, AgeGroup);

#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub backend: String,
    pub n_features: usize,
    pub cells: BTreeMap<CellKey, CellReference>,
    /// Cells below [`MIN_CELL_MEMBERS`], with their member counts.
    pub unavailable: BTreeMap<CellKey, usize>,
}

impl ReferenceSet {
    pub fn warnings(&self) -> Vec<String> {
        self.unavailable
            .iter()
            .map(|((sex, age), n)| {
                format!("cell {sex} {age} has {n} bona fide healthy records (< {MIN_CELL_MEMBERS}); its patients are unassigned")
            })
            .collect()
    }
}

fn interval(a: f64, b: f64, q: f64) -> ThresholdInterval {
    ThresholdInterval {
        t_lower: a.min(b),
        t_upper: a.max(b),
        q,
    }
}

/// Builds per-cell references from the real bona fide healthy records of `cohort`.
///
/// Percentile profiles (1, 2.5, 50, 97.5, 99) are taken per feature in raw
/// space and then mapped through the backend. `N` spans the distances of the
/// 2.5th and 97.5th profiles to the median, `LR` those of the 1st and 99th,
/// widened where needed so that `N ⊆ LR`.
pub fn build_reference_set(cohort: &Cohort, backend: &DistanceBackend) -> Result<ReferenceSet> {
    let d = cohort.feature_names.len();
    backend.validate(d)?;
    let bfh = cohort.real().with_label(HealthLabel::BonaFideHealthy);
    let mut cells = BTreeMap::new();
    let mut unavailable = BTreeMap::new();
    for sex in Sex::ALL {
        for age in AgeGroup::ALL {
            let members = bfh.filter(|r| r.sex == sex && r.age_group() == age);
            if members.len() < MIN_CELL_MEMBERS {
                unavailable.insert((sex, age), members.len());
                continue;
            }
            let x = members.feature_matrix()?;
            let whitening = match backend {
                DistanceBackend::Mahalanobis => {
                    let mut cov = covariance(&x)?;
                    let trace: f64 = (0..d).map(|i| cov.get(i, i)).sum();
                    let ridge = MAHALANOBIS_RIDGE * trace / d as f64;
                    for i in 0..d {
                        cov.set(i, i, cov.get(i, i) + ridge);
                    }
                    Some(Cholesky::factor(&cov)?)
                }
                _ => None,
            };
            let qs = [1.0, 50.0 - NORMAL_Q / 2.0, 50.0, 50.0 + NORMAL_Q / 2.0, 99.0];
            let profiles: Vec<Vec<f64>> = qs
                .iter()
                .map(|&q| columnwise_percentile(&x, q))
                .collect::<Result<_>>()?;
            let reps = backend.represent(whitening.as_ref(), &Matrix::from_rows(&profiles)?)?;
            let r = reps.row(2).to_vec();
            let dist = |i: usize| health_score(reps.row(i), &r);
            let normal = interval(dist(1)?, dist(3)?, NORMAL_Q);
            let wide = interval(dist(0)?, dist(4)?, LOWER_RISK_Q);
            let lower_risk = ThresholdInterval {
                t_lower: wide.t_lower.min(normal.t_lower),
                t_upper: wide.t_upper.max(normal.t_upper),
                q: LOWER_RISK_Q,
            };
            cells.insert(
                (sex, age),
                CellReference {
                    members: members.len(),
                    median: profiles[2].clone(),
                    reference: r,
                    normal,
                    lower_risk,
                    whitening,
                },
            );
        }
    }
    Ok(ReferenceSet {
        backend: backend.name().to_string(),
        n_features: d,
        cells,
        unavailable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskAssignment {
    pub group: RiskGroup,
    /// `None` for unassigned patients.
    pub score: Option<f64>,
}

fn check_refs(refs: &ReferenceSet, backend: &DistanceBackend, n_features: usize) -> Result<()> {
    if refs.backend != backend.name() {
        return Err(Error::Config(format!(
            "references were built for backend `{}`, not `{}`",
            refs.backend,
            backend.name()
        )));
    }
    if refs.n_features != n_features {
        return Err(Error::Dimension(format!(
            "references use {} features, patients have {n_features}",
            refs.n_features
        )));
    }
    Ok(())
}

/// Risk group and health score of one patient given in raw feature space.
pub fn assign_risk(
    patient: &PatientRecord,
    feature_names: &[String],
    refs: &ReferenceSet,
    backend: &DistanceBackend,
    clamp_lower_bound: bool,
) -> Result<RiskAssignment> {
    check_refs(refs, backend, feature_names.len())?;
    let Some(cell) = AgeGroup::from_age(patient.age).and_then(|a| refs.cells.get(&(patient.sex, a))) else {
        return Ok(RiskAssignment {
            group: RiskGroup::Unassigned,
            score: None,
        });
    };
    let x = Matrix::from_vec(1, feature_names.len(), patient.dense_features(feature_names)?)?;
    let rep = backend.represent(cell.whitening.as_ref(), &x)?;
    let score = health_score(rep.row(0), &cell.reference)?;
    Ok(RiskAssignment {
        group: cell.classify(score, clamp_lower_bound),
        score: Some(score),
    })
}

/// [`assign_risk`] for every record of `cohort`, batching the backend per cell.
pub fn assign_cohort(
    cohort: &Cohort,
    refs: &ReferenceSet,
    backend: &DistanceBackend,
    clamp_lower_bound: bool,
) -> Result<Vec<RiskAssignment>> {
    check_refs(refs, backend, cohort.feature_names.len())?;
    let mut out = vec![
        RiskAssignment {
            group: RiskGroup::Unassigned,
            score: None
        };
        cohort.len()
    ];
    let mut by_cell: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in cohort.records.iter().enumerate() {
        if refs.cells.contains_key(&(r.sex, r.age_group())) {
            by_cell.entry((r.sex, r.age_group())).or_default().push(i);
        }
    }
    for (key, idx) in by_cell {
        let cell = &refs.cells[&key];
        let mut data = Vec::with_capacity(idx.len() * refs.n_features);
        for &i in &idx {
            data.extend(cohort.records[i].dense_features(&cohort.feature_names)?);
        }
        let rep = backend.represent(
            cell.whitening.as_ref(),
            &Matrix::from_vec(idx.len(), refs.n_features, data)?,
        )?;
        for (k, &i) in idx.iter().enumerate() {
            let score = health_score(rep.row(k), &cell.reference)?;
            out[i] = RiskAssignment {
                group: cell.classify(score, clamp_lower_bound),
                score: Some(score),
            };
        }
    }
    Ok(out)
}

/// Group counts per label; index with `RiskGroup as usize`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RiskDistribution {
    pub rows: BTreeMap<HealthLabel, [usize; 4]>,
}

impl RiskDistribution {
    pub fn assigned(&self, label: HealthLabel) -> usize {
        self.rows.get(&label).map_or(0, |c| c[..3].iter().sum())
    }

    /// Share of the assigned patients of `label` in `group`; `None` when nobody was assigned.
    pub fn fraction(&self, label: HealthLabel, group: RiskGroup) -> Option<f64> {
        let n = self.assigned(label);
        if n == 0 || group == RiskGroup::Unassigned {
            return None;
        }
        Some(self.rows[&label][group.slot()] as f64 / n as f64)
    }
}

/// Risk group shares of the real apparently healthy and unhealthy records.
pub fn risk_distribution(
    cohort: &Cohort,
    refs: &ReferenceSet,
    backend: &DistanceBackend,
    clamp_lower_bound: bool,
) -> Result<RiskDistribution> {
    let real = cohort.real();
    let groups = assign_cohort(&real, refs, backend, clamp_lower_bound)?;
    let mut dist = RiskDistribution::default();
    for label in [HealthLabel::ApparentlyHealthy, HealthLabel::Unhealthy] {
        dist.rows.insert(label, [0; 4]);
    }
    for (r, a) in real.records.iter().zip(&groups) {
        if let Some(row) = dist.rows.get_mut(&r.label) {
            row[a.group.slot()] += 1;
        }
    }
    Ok(dist)
}

/// Per-group follow-up conversion counts among apparently healthy records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FutureRiskTable {
    /// Patients per group (including unassigned).
    pub group_sizes: [usize; 4],
    /// Converted patients per condition and group.
    pub converted: BTreeMap<String, [usize; 4]>,
}

impl FutureRiskTable {
    /// Conversion rate in `[0,1]`; `None` (undefined) for an empty group.
    pub fn rate(&self, condition: &str, group: RiskGroup) -> Option<f64> {
        let n = self.group_sizes[group.slot()];
        if n == 0 {
            return None;
        }
        let c = self.converted.get(condition).map_or(0, |c| c[group.slot()]);
        Some(c as f64 / n as f64)
    }

    pub fn conditions(&self) -> impl Iterator<Item = &str> {
        self.converted.keys().map(String::as_str)
    }
}

pub fn future_risk_validation(
    cohort: &Cohort,
    refs: &ReferenceSet,
    backend: &DistanceBackend,
    clamp_lower_bound: bool,
) -> Result<FutureRiskTable> {
    let ah = cohort.real().with_label(HealthLabel::ApparentlyHealthy);
    if ah.is_empty() {
        return Err(Error::EmptyInput(
            "no apparently healthy records to validate against".into(),
        ));
    }
    let groups = assign_cohort(&ah, refs, backend, clamp_lower_bound)?;
    let mut table = FutureRiskTable::default();
    for (r, a) in ah.records.iter().zip(&groups) {
        table.group_sizes[a.group.slot()] += 1;
        if let Some(f) = &r.future {
            table.converted.entry(f.condition.clone()).or_insert([0; 4])[a.group.slot()] += 1;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pseudotime {
    Correlation {
        r: f64,
        n: usize,
    },
    /// Fewer than three converters.
    InsufficientData {
        n: usize,
    },
    /// Constant scores or times.
    Undefined {
        n: usize,
    },
}

/// Pearson correlation between health score and years until diagnosis, per condition.
pub fn pseudotime_correlation(
    cohort: &Cohort,
    refs: &ReferenceSet,
    backend: &DistanceBackend,
) -> Result<BTreeMap<String, Pseudotime>> {
    let real = cohort.real();
    let groups = assign_cohort(&real, refs, backend, false)?;
    let mut pairs: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (r, a) in real.records.iter().zip(&groups) {
        if let Some(f) = &r.future {
            let e = pairs.entry(f.condition.clone()).or_default();
            if let Some(s) = a.score {
                e.0.push(s);
                e.1.push(f.years_until);
            }
        }
    }
    Ok(pairs
        .into_iter()
        .map(|(c, (s, y))| {
            let n = s.len();
            let v = if n < 3 {
                Pseudotime::InsufficientData { n }
            } else {
                match pearson_correlation(&s, &y) {
                    Ok(r) => Pseudotime::Correlation { r, n },
                    Err(_) => Pseudotime::Undefined { n },
                }
            };
            (c, v)
        })
        .collect())
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

/// Structured text report for one backend.
pub fn risk_report_text(
    refs: &ReferenceSet,
    distribution: &RiskDistribution,
    future: Option<&FutureRiskTable>,
) -> String {
    let mut s = String::new();
    let b = &refs.backend;
    for w in refs.warnings() {
        let _ = writeln!(s, "# warning: {w}");
    }
    let _ = writeln!(s, "[distribution backend={b}]");
    s.push_str("label,normal,lower_risk,higher_risk,unassigned,normal_pct,lower_risk_pct,higher_risk_pct\n");
    for (label, c) in &distribution.rows {
        let pct = |g| fmt_rate(distribution.fraction(*label, g).map(|f| 100.0 * f));
        let _ = writeln!(
            s,
            "{label},{},{},{},{},{},{},{}",
            c[0],
            c[1],
            c[2],
            c[3],
            pct(RiskGroup::Normal),
            pct(RiskGroup::LowerRisk),
            pct(RiskGroup::HigherRisk)
        );
    }
    if let Some(t) = future {
        let conditions: BTreeSet<&str> = t.conditions().collect();
        for c in conditions {
            let _ = writeln!(s, "\n[future_risk backend={b} condition={c}]");
            s.push_str("group,patients,converted,rate_pct\n");
            for g in RiskGroup::ASSIGNED.into_iter().chain([RiskGroup::Unassigned]) {
                let converted = t.converted.get(c).map_or(0, |v| v[g.slot()]);
                let _ = writeln!(
                    s,
                    "{g},{},{converted},{}",
                    t.group_sizes[g.slot()],
                    fmt_rate(t.rate(c, g).map(|r| 100.0 * r))
                );
            }
        }
    }
    s
}

pub fn pseudotime_report_text(backend: &str, results: &BTreeMap<String, Pseudotime>) -> String {
    let mut s = format!("[pseudotime backend={backend}]\ncondition,n,pearson_r\n");
    for (c, p) in results {
        let _ = match p {
            Pseudotime::Correlation { r, n } => writeln!(s, "{c},{n},{r:.6}"),
            Pseudotime::InsufficientData { n } => writeln!(s, "{c},{n},insufficient_data"),
            Pseudotime::Undefined { n } => writeln!(s, "{c},{n},undefined"),
        };
    }
    s
}
