//! kNN classification of embeddings, F1 scoring and the multi-seed loss benchmark.

use crate::error::{Error, Result};
use crate::losses::{class_density_metrics, mean_uniformity, LossKind, DEFAULT_XI};
use crate::numeric::{mean, sample_std, squared_distance, streams, Matrix, RandomSource};
use crate::trainer::{train, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_BENCHMARK_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const BENCHMARK_TRAIN_FRACTION: f64 = 0.8;

/// Majority vote over the `k` nearest training points (Euclidean, uniform weights).
///
/// Neighbours at equal distance are taken in training order. A tied vote goes
/// to the label with the smallest summed neighbour distance, then the smallest label.
pub fn knn_predict(train_emb: &Matrix, train_labels: &[usize], queries: &Matrix, k: usize) -> Result<Vec<usize>> {
    if train_labels.len() != train_emb.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} training points",
            train_labels.len(),
            train_emb.rows()
        )));
    }
    if k == 0 || k > train_emb.rows() {
        return Err(Error::Config(format!(
            "k = {k} must lie in [1, {}] (training size)",
            train_emb.rows()
        )));
    }
    if queries.cols() != train_emb.cols() {
        return Err(Error::Dimension(format!(
            "queries have {} dims, training points {}",
            queries.cols(),
            train_emb.cols()
        )));
    }
    let mut out = Vec::with_capacity(queries.rows());
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train_emb.rows());
    for q in queries.iter_rows() {
        dist.clear();
        dist.extend(
            train_emb
                .iter_rows()
                .enumerate()
                .map(|(i, t)| (squared_distance(q, t), i)),
        );
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for &(d2, i) in &dist[..k] {
            let v = votes.entry(train_labels[i]).or_insert((0, 0.0));
            v.0 += 1;
            v.1 += d2.sqrt();
        }
        let best = votes
            .iter()
            .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(a.0.cmp(b.0)))
            .map(|(&l, _)| l)
            .expect("k >= 1 neighbours");
        out.push(best);
    }
    Ok(out)
}

/// Per-class confusion counts over the union of observed labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    /// label → (true positives, false positives, false negatives)
    pub per_class: BTreeMap<usize, (usize, usize, usize)>,
    pub total: usize,
}

impl ConfusionCounts {
    pub fn from_labels(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension(format!(
                "{} true labels, {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::EmptyInput("no labels to score".into()));
        }
        let labels: BTreeSet<usize> = truth.iter().chain(predicted).copied().collect();
        let mut per_class: BTreeMap<usize, (usize, usize, usize)> =
            labels.into_iter().map(|l| (l, (0, 0, 0))).collect();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t == p {
                per_class.get_mut(&t).unwrap().0 += 1;
            } else {
                per_class.get_mut(&p).unwrap().1 += 1;
                per_class.get_mut(&t).unwrap().2 += 1;
            }
        }
        Ok(Self {
            per_class,
            total: truth.len(),
        })
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub weighted: f64,
    pub micro: f64,
    pub per_class: BTreeMap<usize, f64>,
}

/// Per-class, support-weighted and micro-averaged F1.
pub fn f1_scores(truth: &[usize], predicted: &[usize]) -> Result<F1Scores> {
    let c = ConfusionCounts::from_labels(truth, predicted)?;
    let per_class: BTreeMap<usize, f64> = c
        .per_class
        .iter()
        .map(|(&l, &(tp, fp, fn_))| (l, f1(tp, fp, fn_)))
        .collect();
    let weighted = c
        .per_class
        .iter()
        .map(|(l, &(tp, _, fn_))| per_class[l] * (tp + fn_) as f64)
        .sum::<f64>()
        / c.total as f64;
    let (tp, fp, fn_) = c
        .per_class
        .values()
        .fold((0, 0, 0), |acc, &(a, b, d)| (acc.0 + a, acc.1 + b, acc.2 + d));
    Ok(F1Scores {
        weighted,
        micro: f1(tp, fp, fn_),
        per_class,
    })
}

/// Anisotropic Gaussian classes: `x = μ_c + A_c z` with a random `A_c` per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Distance of each class mean from the origin.
    pub separation: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            n_classes: 3,
            dim: 20,
            per_class: 300,
            separation: 2.0,
        }
    }
}

/// Generates blob features and labels; fully determined by `rng`.
pub fn generate_blobs(spec: &BlobSpec, rng: &mut RandomSource) -> Result<(Matrix, Vec<usize>)> {
    if spec.n_classes < 2 || spec.dim == 0 || spec.per_class == 0 {
        return Err(Error::Config(
            "blobs need >= 2 classes, dim >= 1 and >= 1 point per class".into(),
        ));
    }
    let d = spec.dim;
    let mut data = Vec::with_capacity(spec.n_classes * spec.per_class * d);
    let mut labels = Vec::with_capacity(spec.n_classes * spec.per_class);
    for c in 0..spec.n_classes {
        let mut mu: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        mu.iter_mut().for_each(|v| *v *= spec.separation / norm);
        // Random mixing with per-axis scales spread over [0.3, 1.5].
        let scales: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.3, 1.5)).collect();
        let mix: Vec<f64> = (0..d * d).map(|_| rng.standard_normal() / (d as f64).sqrt()).collect();
        for _ in 0..spec.per_class {
            let z: Vec<f64> = scales.iter().map(|s| s * rng.standard_normal()).collect();
            for i in 0..d {
                let row = &mix[i * d..(i + 1) * d];
                data.push(mu[i] + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>());
            }
            labels.push(c);
        }
    }
    Ok((Matrix::from_vec(labels.len(), d, data)?, labels))
}

/// Label-stratified train/test index split with `round(fraction · n)` per class in train.
pub fn stratified_indices(labels: &[usize], fraction: f64, rng: &mut RandomSource) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0,1), got {fraction}"
        )));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let mut in_train = vec![true; labels.len()];
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            continue;
        }
        rng.shuffle(&mut idx);
        let n_train = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[n_train..] {
            in_train[i] = false;
        }
    }
    let train = (0..labels.len()).filter(|&i| in_train[i]).collect();
    let test = (0..labels.len()).filter(|&i| !in_train[i]).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub blobs: BlobSpec,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub train_fraction: f64,
    /// Shared training config; `loss` and `seed` are overridden per run.
    pub train: TrainConfig,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            blobs: BlobSpec::default(),
            losses: vec![LossKind::Traditional, LossKind::DistanceSwap, LossKind::NPLB2],
            seeds: DEFAULT_BENCHMARK_SEEDS.to_vec(),
            k: DEFAULT_K,
            train_fraction: BENCHMARK_TRAIN_FRACTION,
            train: TrainConfig {
                epochs: 20,
                n_triplets: 4000,
                batch_size: 128,
                hidden: vec![64, 32],
                output_dim: 8,
                decay_every: 5,
                lr: 0.001,
                ..TrainConfig::default()
            },
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("benchmark needs at least one seed".into()));
        }
        if self.losses.is_empty() {
            return Err(Error::Config("benchmark needs at least one loss".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        for l in &self.losses {
            l.validate()?;
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub loss: LossKind,
    pub weighted_f1: f64,
    pub micro_f1: f64,
    pub mean_unif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub loss: LossKind,
    pub weighted_f1_mean: f64,
    pub weighted_f1_std: f64,
    pub micro_f1_mean: f64,
    pub micro_f1_std: f64,
    pub mean_unif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub runs: Vec<SeedResult>,
}

impl BenchmarkReport {
    pub fn row(&self, loss: LossKind) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.loss == loss)
    }

    pub fn runs_for(&self, loss: LossKind) -> impl Iterator<Item = &SeedResult> {
        self.runs.iter().filter(move |r| r.loss == loss)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(
            "# nplb-benchmark v1\nloss,weighted_f1_mean,weighted_f1_std,micro_f1_mean,micro_f1_std,mean_unif\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.loss, r.weighted_f1_mean, r.weighted_f1_std, r.micro_f1_mean, r.micro_f1_std, r.mean_unif
            );
        }
        s.push_str("\n[runs]\nseed,loss,weighted_f1,micro_f1,mean_unif\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6}",
                r.seed, r.loss, r.weighted_f1, r.micro_f1, r.mean_unif
            );
        }
        s
    }
}

fn with_seed<T>(seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("seed {seed}: {m}")),
        Error::Sampling(m) => Error::Sampling(format!("seed {seed}: {m}")),
        other => other,
    })
}

/// One (seed, loss) run: train on the seed's blob split, kNN-score the test embeddings.
pub fn run_single(spec: &BenchmarkSpec, seed: u64, loss: LossKind) -> Result<SeedResult> {
    let root = RandomSource::new(seed);
    let (x, y) = generate_blobs(&spec.blobs, &mut root.substream(streams::BLOBS))?;
    let (tr, te) = stratified_indices(&y, spec.train_fraction, &mut root.substream(streams::SPLIT))?;
    let (xtr, xte) = (x.select_rows(&tr), x.select_rows(&te));
    let ytr: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
    let yte: Vec<usize> = te.iter().map(|&i| y[i]).collect();
    let config = TrainConfig {
        loss,
        seed,
        ..spec.train.clone()
    };
    let model = with_seed(seed, train(&xtr, &ytr, &config))?.model;
    let etr = model.embed(&xtr)?;
    let ete = model.embed(&xte)?;
    let pred = with_seed(seed, knn_predict(&etr, &ytr, &ete, spec.k))?;
    let f1 = f1_scores(&yte, &pred)?;
    let unif = mean_uniformity(&class_density_metrics(&ete, &yte, DEFAULT_XI)?);
    Ok(SeedResult {
        seed,
        loss,
        weighted_f1: f1.weighted,
        micro_f1: f1.micro,
        mean_unif: unif,
    })
}

/// Every loss on every seed with identical data, splits and configs.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    spec.validate()?;
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        for &loss in &spec.losses {
            runs.push(run_single(spec, seed, loss)?);
        }
    }
    let rows = spec
        .losses
        .iter()
        .map(|&loss| {
            let pick =
                |f: fn(&SeedResult) -> f64| -> Vec<f64> { runs.iter().filter(|r| r.loss == loss).map(f).collect() };
            let (w, m, u) = (pick(|r| r.weighted_f1), pick(|r| r.micro_f1), pick(|r| r.mean_unif));
            BenchmarkRow {
                loss,
                weighted_f1_mean: mean(&w),
                weighted_f1_std: sample_std(&w),
                micro_f1_mean: mean(&m),
                micro_f1_std: sample_std(&m),
                mean_unif: mean(&u),
            }
        })
        .collect();
    Ok(BenchmarkReport { rows, runs })
}
