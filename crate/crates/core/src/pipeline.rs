//! File-based commands behind the `nplb` binary.
//!
//! Every command writes its fully resolved configuration to `config.json` and
//! a `manifest.json` listing its outputs into the output directory. Outputs are
//! a deterministic function of the inputs and the seed.

use crate::cohort::{
    augment_bona_fide, filter_complete, generate_cohort, preprocess, read_cohort, split_train_test, write_cohort,
    Cohort, CohortSpec, FeatureBounds, HealthLabel, QuantileNormalizer, Sex, DEFAULT_AUGMENT_FOLD,
};
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, BenchmarkSpec};
use crate::net::{Checkpoint, ModelParams};
use crate::numeric::{streams, RandomSource};
use crate::risk::{
    build_reference_set, future_risk_validation, pseudotime_correlation, pseudotime_report_text, risk_distribution,
    risk_report_text, DistanceBackend,
};
use crate::trainer::{format_loss_log, train, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const COHORT_FILE: &str = "cohort.csv";
pub const BOUNDS_FILE: &str = "bounds.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Files written and non-fatal warnings raised by a command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct OutDir {
    dir: PathBuf,
    summary: RunSummary,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            summary: RunSummary::default(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.summary.outputs.push(path.clone());
        Ok(path)
    }

    fn config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))?;
        self.write(CONFIG_FILE, &(text + "\n")).map(|_| ())
    }

    fn finish(mut self, command: &str, extra: serde_json::Value) -> Result<RunSummary> {
        let outputs: Vec<String> = self
            .summary
            .outputs
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect();
        let manifest = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "outputs": outputs,
            "details": extra,
            "warnings": self.summary.warnings,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        self.write(MANIFEST_FILE, &(text + "\n"))?;
        Ok(self.summary)
    }
}

/// Reads a JSON command config; `None` yields the defaults. Missing fields take default values.
pub fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_bounds(path: Option<&Path>) -> Result<FeatureBounds> {
    match path {
        Some(p) => FeatureBounds::load(p),
        None => Ok(FeatureBounds::clinical_default()),
    }
}

/// Keeps the real records that are complete in `names`, re-ordered to that feature layout.
fn restrict(cohort: &Cohort, names: &[String]) -> Result<(Cohort, Vec<String>)> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            cohort
                .feature_index(n)
                .ok_or_else(|| Error::Dimension(format!("cohort has no feature `{n}`")))
        })
        .collect::<Result<_>>()?;
    let mut dropped = Vec::new();
    let mut records = Vec::new();
    for r in cohort.records.iter().filter(|r| !r.synthetic) {
        let features: Vec<Option<f64>> = idx.iter().map(|&j| r.features[j]).collect();
        if features.iter().all(Option::is_some) {
            let mut r = r.clone();
            r.features = features;
            records.push(r);
        } else {
            dropped.push(r.id.clone());
        }
    }
    Ok((Cohort::new(names.to_vec(), records)?, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    /// Record counts for bona fide healthy, apparently healthy, unhealthy.
    pub sizes: [usize; 3],
    pub female_fraction: f64,
    pub future_fraction: f64,
    pub severity_coupling: f64,
    pub bounds: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let spec = CohortSpec::clinical([200, 800, 800]);
        Self {
            seed: 0,
            sizes: spec.sizes,
            female_fraction: spec.female_fraction,
            future_fraction: spec.future.fraction,
            severity_coupling: spec.future.severity_coupling,
            bounds: None,
        }
    }
}

impl GenerateConfig {
    pub fn cohort_spec(&self) -> CohortSpec {
        let mut spec = CohortSpec::clinical(self.sizes);
        spec.female_fraction = self.female_fraction;
        spec.future.fraction = self.future_fraction;
        spec.future.severity_coupling = self.severity_coupling;
        spec
    }
}

pub fn cmd_generate(config: &GenerateConfig, out: &Path) -> Result<RunSummary> {
    let bounds = load_bounds(config.bounds.as_deref())?;
    let cohort = generate_cohort(
        &config.cohort_spec(),
        &bounds,
        &mut RandomSource::new(config.seed).substream(streams::COHORT),
    )?;
    let mut o = OutDir::create(out)?;
    o.config(config)?;
    let path = o.dir.join(COHORT_FILE);
    write_cohort(&cohort, &path)?;
    o.summary.outputs.push(path);
    o.write(BOUNDS_FILE, &bounds.to_text())?;
    let counts: Vec<usize> = HealthLabel::ALL.iter().map(|&l| cohort.count_label(l)).collect();
    o.finish("generate", serde_json::json!({ "seed": config.seed, "sizes": counts }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub cohort: PathBuf,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cohort: PathBuf::from(COHORT_FILE),
        }
    }
}

pub fn cmd_preprocess(config: &PreprocessConfig, out: &Path) -> Result<RunSummary> {
    let cohort = read_cohort(&config.cohort)?;
    let p = preprocess(&cohort)?;
    let mut o = OutDir::create(out)?;
    o.config(config)?;
    for sex in Sex::ALL {
        let path = o.dir.join(format!("preprocessed_{sex}.csv"));
        write_cohort(p.by_sex(sex), &path)?;
        o.summary.outputs.push(path);
    }
    o.write("preprocess_report.txt", &p.report.to_text())?;
    o.finish(
        "preprocess",
        serde_json::json!({
            "dropped_features": p.report.dropped_features.len(),
            "dropped_records": p.report.dropped_records.len(),
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub seed: u64,
    pub cohort: PathBuf,
    pub bounds: Option<PathBuf>,
    pub fold: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cohort: PathBuf::from(COHORT_FILE),
            bounds: None,
            fold: DEFAULT_AUGMENT_FOLD,
        }
    }
}

pub fn cmd_augment(config: &AugmentConfig, out: &Path) -> Result<RunSummary> {
    let cohort = read_cohort(&config.cohort)?;
    let bounds = load_bounds(config.bounds.as_deref())?;
    let augmented = augment_bona_fide(
        &cohort,
        config.fold,
        &bounds,
        &mut RandomSource::new(config.seed).substream(streams::AUGMENT),
    )?;
    let mut o = OutDir::create(out)?;
    o.config(config)?;
    let path = o.dir.join("augmented.csv");
    write_cohort(&augmented, &path)?;
    o.summary.outputs.push(path);
    o.finish(
        "augment",
        serde_json::json!({ "seed": config.seed, "added": augmented.len() - cohort.len() }),
    )
}

/// An embedding network together with the raw-feature transform it was trained behind.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ModelParams,
    pub normalizer: QuantileNormalizer,
    pub sex: Sex,
}

impl TrainedModel {
    pub fn feature_names(&self) -> &[String] {
        &self.normalizer.feature_names
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.meta
            .insert("features".into(), self.normalizer.feature_names.join(","));
        ck.meta.insert("sex".into(), self.sex.to_string());
        for (j, r) in self.normalizer.reference.iter().enumerate() {
            ck.push(format!("normalizer.{j}"), vec![r.len()], r.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = ck.to_model()?;
        let names: Vec<String> = ck
            .meta
            .get("features")
            .ok_or_else(|| Error::Config("checkpoint has no feature list".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let reference = (0..names.len())
            .map(|j| {
                ck.tensor(&format!("normalizer.{j}"))
                    .map(|t| t.values.clone())
                    .ok_or_else(|| Error::Config(format!("checkpoint lacks normalizer.{j}")))
            })
            .collect::<Result<_>>()?;
        let sex = ck.meta.get("sex").map_or(Ok(Sex::Female), |s| s.parse())?;
        if model.input_dim() != names.len() {
            return Err(Error::Dimension(format!(
                "model takes {} inputs, checkpoint lists {} features",
                model.input_dim(),
                names.len()
            )));
        }
        Ok(Self {
            model,
            normalizer: QuantileNormalizer {
                feature_names: names,
                reference,
            },
            sex,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn backend(&self) -> DistanceBackend {
        DistanceBackend::embedding(self.model.clone(), Some(self.normalizer.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub cohort: PathBuf,
    pub bounds: Option<PathBuf>,
    pub sex: Sex,
    pub train_fraction: f64,
    pub augment_fold: usize,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            cohort: PathBuf::from(COHORT_FILE),
            bounds: None,
            sex: Sex::Female,
            train_fraction: 0.7,
            augment_fold: DEFAULT_AUGMENT_FOLD,
            train: TrainConfig::default(),
        }
    }
}

/// Completeness filter, sex selection, split, augmentation, normalization and training.
pub fn train_pipeline(
    config: &TrainRunConfig,
    cohort: &Cohort,
) -> Result<(TrainedModel, Vec<crate::trainer::EpochLog>, Vec<String>)> {
    config.train.validate()?;
    let bounds = load_bounds(config.bounds.as_deref())?;
    let root = RandomSource::new(config.train.seed);
    let (complete, report) = filter_complete(&cohort.real())?;
    let mut warnings: Vec<String> = report
        .dropped_features
        .iter()
        .map(|(f, c)| format!("dropped feature `{f}` ({:.1}% complete)", 100.0 * c))
        .collect();
    if !report.dropped_records.is_empty() {
        warnings.push(format!("dropped {} incomplete records", report.dropped_records.len()));
    }
    let part = complete.filter(|r| r.sex == config.sex);
    if part.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no complete {} records to train on",
            config.sex
        )));
    }
    let split = split_train_test(&part, config.train_fraction, &mut root.substream(streams::SPLIT))?;
    warnings.extend(split.warnings.iter().cloned());
    let normalizer = QuantileNormalizer::fit(&split.train)?;
    let augmented = augment_bona_fide(
        &split.train,
        config.augment_fold,
        &bounds,
        &mut root.substream(streams::AUGMENT),
    )?;
    let x = normalizer.transform_cohort(&augmented)?.feature_matrix()?;
    let outcome = train(&x, &augmented.label_indices(), &config.train)?;
    Ok((
        TrainedModel {
            model: outcome.model,
            normalizer,
            sex: config.sex,
        },
        outcome.log,
        warnings,
    ))
}

pub fn cmd_train(config: &TrainRunConfig, out: &Path) -> Result<RunSummary> {
    let cohort = read_cohort(&config.cohort)?;
    let (trained, log, warnings) = train_pipeline(config, &cohort)?;
    let mut o = OutDir::create(out)?;
    o.summary.warnings = warnings;
    o.config(config)?;
    o.write(CHECKPOINT_FILE, &trained.to_checkpoint().to_text())?;
    o.write(LOSS_LOG_FILE, &format_loss_log(&log))?;
    let final_loss = log.last().map(|e| e.mean_loss);
    o.finish(
        "train",
        serde_json::json!({
            "seed": config.train.seed,
            "epochs": log.len(),
            "final_mean_loss": final_loss,
            "parameters": trained.model.parameter_count(),
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub cohort: PathBuf,
    pub checkpoint: PathBuf,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            cohort: PathBuf::from(COHORT_FILE),
            checkpoint: PathBuf::from(CHECKPOINT_FILE),
        }
    }
}

pub fn cmd_embed(config: &EmbedConfig, out: &Path) -> Result<RunSummary> {
    let trained = TrainedModel::load(&config.checkpoint)?;
    let cohort = read_cohort(&config.cohort)?;
    let (real, dropped) = restrict(&cohort, trained.feature_names())?;
    let backend = trained.backend();
    let DistanceBackend::EmbeddingEuclidean(embedder) = &backend else {
        unreachable!("trained models always give an embedding backend")
    };
    let emb = embedder.embed_rows(&real.feature_matrix()?)?;
    let mut text = String::from("id");
    for k in 0..emb.cols() {
        let _ = write!(text, ",e{k}");
    }
    text.push('\n');
    for (r, row) in real.records.iter().zip(emb.iter_rows()) {
        text.push_str(&r.id);
        for v in row {
            let _ = write!(text, ",{v:?}");
        }
        text.push('\n');
    }
    let mut o = OutDir::create(out)?;
    if !dropped.is_empty() {
        o.summary.warnings.push(format!(
            "{} records with missing model features were not embedded",
            dropped.len()
        ));
    }
    o.config(config)?;
    o.write("embeddings.csv", &text)?;
    o.finish("embed", serde_json::json!({ "rows": emb.rows(), "dims": emb.cols() }))
}

/// Backend names accepted on the command line.
pub const BACKEND_NAMES: [&str; 4] = ["raw", "mahalanobis", "p0", "embedding"];

fn make_backend(name: &str, names: &[String], trained: Option<&TrainedModel>) -> Result<DistanceBackend> {
    match name {
        "raw" => Ok(DistanceBackend::RawEuclidean),
        "mahalanobis" => Ok(DistanceBackend::Mahalanobis),
        "p0" => DistanceBackend::p0(names),
        "embedding" => trained
            .map(TrainedModel::backend)
            .ok_or_else(|| Error::Config("the embedding backend needs --checkpoint".into())),
        other => Err(Error::Config(format!(
            "unknown backend `{other}` (expected one of {})",
            BACKEND_NAMES.join(", ")
        ))),
    }
}

fn risk_inputs(cohort_path: &Path, checkpoint: Option<&Path>) -> Result<(Cohort, Option<TrainedModel>, Vec<String>)> {
    let cohort = read_cohort(cohort_path)?;
    let trained = checkpoint.map(TrainedModel::load).transpose()?;
    let names = match &trained {
        Some(t) => t.feature_names().to_vec(),
        None => cohort.feature_names.clone(),
    };
    let (real, dropped) = restrict(&cohort, &names)?;
    let mut warnings = Vec::new();
    if !dropped.is_empty() {
        warnings.push(format!("{} incomplete records skipped", dropped.len()));
    }
    Ok((real, trained, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub cohort: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub backends: Vec<String>,
    /// Treat every threshold interval as starting at distance 0.
    pub clamp_lower_bound: bool,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            cohort: PathBuf::from(COHORT_FILE),
            checkpoint: None,
            backends: vec!["raw".into(), "mahalanobis".into(), "p0".into()],
            clamp_lower_bound: false,
        }
    }
}

pub fn cmd_risk(config: &RiskConfig, out: &Path) -> Result<RunSummary> {
    let (cohort, trained, mut warnings) = risk_inputs(&config.cohort, config.checkpoint.as_deref())?;
    let mut text = String::from("# nplb-risk-report v1\n");
    let _ = writeln!(text, "# clamp_lower_bound={}", config.clamp_lower_bound);
    let has_ah = cohort.count_label(HealthLabel::ApparentlyHealthy) > 0;
    for name in &config.backends {
        let backend = make_backend(name, &cohort.feature_names, trained.as_ref())?;
        let refs = build_reference_set(&cohort, &backend)?;
        warnings.extend(refs.warnings().into_iter().map(|w| format!("{name}: {w}")));
        let dist = risk_distribution(&cohort, &refs, &backend, config.clamp_lower_bound)?;
        let future = if has_ah {
            Some(future_risk_validation(
                &cohort,
                &refs,
                &backend,
                config.clamp_lower_bound,
            )?)
        } else {
            None
        };
        text.push('\n');
        text.push_str(&risk_report_text(&refs, &dist, future.as_ref()));
    }
    let mut o = OutDir::create(out)?;
    o.summary.warnings = warnings;
    o.config(config)?;
    o.write("risk_report.txt", &text)?;
    o.finish(
        "risk",
        serde_json::json!({ "patients": cohort.len(), "backends": config.backends }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudotimeConfig {
    pub cohort: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub backends: Vec<String>,
}

impl Default for PseudotimeConfig {
    fn default() -> Self {
        Self {
            cohort: PathBuf::from(COHORT_FILE),
            checkpoint: None,
            backends: vec!["raw".into()],
        }
    }
}

pub fn cmd_pseudotime(config: &PseudotimeConfig, out: &Path) -> Result<RunSummary> {
    let (cohort, trained, mut warnings) = risk_inputs(&config.cohort, config.checkpoint.as_deref())?;
    let mut text = String::from("# nplb-pseudotime v1\n");
    for name in &config.backends {
        let backend = make_backend(name, &cohort.feature_names, trained.as_ref())?;
        let refs = build_reference_set(&cohort, &backend)?;
        warnings.extend(refs.warnings().into_iter().map(|w| format!("{name}: {w}")));
        text.push('\n');
        text.push_str(&pseudotime_report_text(
            name,
            &pseudotime_correlation(&cohort, &refs, &backend)?,
        ));
    }
    let mut o = OutDir::create(out)?;
    o.summary.warnings = warnings;
    o.config(config)?;
    o.write("pseudotime.txt", &text)?;
    o.finish("pseudotime", serde_json::json!({ "patients": cohort.len() }))
}

pub fn cmd_benchmark(spec: &BenchmarkSpec, out: &Path) -> Result<RunSummary> {
    let report = run_benchmark(spec)?;
    let mut o = OutDir::create(out)?;
    o.config(spec)?;
    o.write("benchmark.txt", &report.to_text())?;
    o.finish(
        "benchmark",
        serde_json::json!({ "seeds": spec.seeds, "losses": spec.losses.iter().map(|l| l.to_string()).collect::<Vec<_>>() }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        cmd_generate(
            &GenerateConfig {
                sizes: [60, 30, 30],
                ..GenerateConfig::default()
            },
            dir.path(),
        )
        .unwrap();
        let cfg = TrainRunConfig {
            cohort: dir.path().join(COHORT_FILE),
            train: TrainConfig {
                epochs: 1,
                n_triplets: 50,
                hidden: vec![8],
                output_dim: 3,
                ..TrainConfig::default()
            },
            ..TrainRunConfig::default()
        };
        let cohort = read_cohort(&cfg.cohort).unwrap();
        let (trained, log, _) = train_pipeline(&cfg, &cohort).unwrap();
        assert_eq!(log.len(), 1);
        let back =
            TrainedModel::from_checkpoint(&Checkpoint::parse(&trained.to_checkpoint().to_text(), "mem").unwrap())
                .unwrap();
        assert_eq!(back, trained);
    }

    #[test]
    fn unknown_backend_and_missing_checkpoint() {
        let names = vec!["hdl".to_string()];
        assert!(make_backend("cosine", &names, None).is_err());
        assert!(make_backend("embedding", &names, None).is_err());
        assert!(make_backend("p0", &names, None).is_ok());
    }
}
