//! Offline triplet sampling, Adam with step-wise exponential learning-rate decay,
//! and the training loop.

use crate::error::{Error, Result};
use crate::losses::{batch_loss_and_gradient, LossKind, Margin};
use crate::net::{Gradients, ModelConfig, ModelParams, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use crate::numeric::{streams, Matrix, RandomSource};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub gamma: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub margin: Margin,
    pub loss: LossKind,
    pub batch_size: usize,
    pub n_triplets: usize,
    pub seed: u64,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            gamma: 0.95,
            decay_every: 50,
            epochs: 1000,
            margin: Margin::default(),
            loss: LossKind::NPLB2,
            batch_size: 256,
            n_triplets: 20_000,
            seed: 0,
            output_dim: 32,
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
        }
    }
}

impl TrainConfig {
    /// Checks every field. `epochs = 0` is accepted and yields the initial model.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if self.decay_every == 0 {
            return fail("decay_every must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.n_triplets == 0 {
            return fail("n_triplets must be >= 1".into());
        }
        if self.output_dim == 0 || self.hidden.contains(&0) {
            return fail("layer widths must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        self.loss.validate()?;
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig::new(input_dim, self.output_dim)
            .with_hidden(&self.hidden)
            .with_dropout(self.dropout)
    }
}

/// `lr · γ^⌊epoch / decay_every⌋`
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.gamma.powi((epoch / config.decay_every.max(1)) as i32)
}

/// Rows of `(anchor, positive, negative)` indices into a labeled dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletIndexBatch {
    pub rows: Vec<[usize; 3]>,
}

impl TripletIndexBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks the label constraints of every row.
    pub fn is_valid_for(&self, labels: &[usize]) -> bool {
        self.rows
            .iter()
            .all(|&[a, p, n]| a != p && labels[a] == labels[p] && labels[a] != labels[n])
    }
}

/// Samples `n` triplets offline: anchor uniform over points whose class has a second
/// member, positive uniform over the rest of that class, negative uniform over all
/// other classes.
pub fn sample_triplets(labels: &[usize], n: usize, rng: &mut RandomSource) -> Result<TripletIndexBatch> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::Sampling(format!(
            "need at least 2 classes, found {}",
            by_class.len()
        )));
    }
    // Anchors drawn from singleton classes would be resampled; drawing from the
    // eligible pool directly gives the same distribution.
    let eligible: Vec<usize> = (0..labels.len()).filter(|&i| by_class[&labels[i]].len() >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(
            "no class has two members, so no positive can be drawn".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let a = eligible[rng.index(eligible.len())];
        let class = &by_class[&labels[a]];
        let p = loop {
            let cand = class[rng.index(class.len())];
            if cand != a {
                break cand;
            }
        };
        let others = labels.len() - class.len();
        // k-th point outside the anchor's class, scanning in index order.
        let mut k = rng.index(others);
        let neg = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l != labels[a])
            .find_map(|(i, _)| {
                if k == 0 {
                    Some(i)
                } else {
                    k -= 1;
                    None
                }
            })
            .expect("k < number of out-of-class points");
        rows.push([a, p, neg]);
    }
    Ok(TripletIndexBatch { rows })
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn for_model(params: &ModelParams) -> Self {
        Self::new(params.parameter_count())
    }

    /// One Adam update over parallel parameter / gradient blocks.
    pub fn step_blocks(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) -> Result<()> {
        let total: usize = params.iter().map(|b| b.len()).sum();
        if params.len() != grads.len()
            || total != self.m.len()
            || params.iter().zip(&grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Dimension(
                "parameter, gradient and optimizer state shapes disagree".into(),
            ));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut k = 0;
        for (block, grad) in params.into_iter().zip(grads) {
            for (theta, &g) in block.iter_mut().zip(grad) {
                let m = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                let v = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                self.m[k] = m;
                self.v[k] = v;
                *theta -= lr * (m / c1) / ((v / c2).sqrt() + self.eps);
                k += 1;
            }
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    state.step_blocks(params.blocks_mut(), grads.blocks(), lr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Loss log as comma-separated text with header `epoch,lr,mean_loss`.
pub fn format_loss_log(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,mean_loss\n");
    for e in log {
        let _ = writeln!(s, "{},{:?},{:?}", e.epoch, e.lr, e.mean_loss);
    }
    s
}

/// Mean loss of `model` (inference mode) over a set of triplets.
pub fn evaluate_loss(
    model: &ModelParams,
    features: &Matrix,
    triplets: &TripletIndexBatch,
    kind: LossKind,
    margin: Margin,
) -> Result<f64> {
    let emb = model.embed(features)?;
    let pick = |k: usize| -> Vec<usize> { triplets.rows.iter().map(|r| r[k]).collect() };
    crate::losses::batch_loss(
        kind,
        &emb.select_rows(&pick(0)),
        &emb.select_rows(&pick(1)),
        &emb.select_rows(&pick(2)),
        margin,
    )
}

/// Trains an embedding network on `(features, labels)`; fully determined by the config.
pub fn train(features: &Matrix, labels: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if features.rows() == 0 {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    if labels.len() != features.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    let root = RandomSource::new(config.seed);
    let mut model = ModelParams::new(
        &config.model_config(features.cols()),
        &mut root.substream(streams::INIT),
    )?;
    if config.epochs == 0 {
        return Ok(TrainOutcome { model, log: Vec::new() });
    }
    let triplets = sample_triplets(labels, config.n_triplets, &mut root.substream(streams::TRIPLETS))?;
    let mut dropout_rng = root.substream(streams::DROPOUT);
    let mut shuffle_rng = root.substream(streams::SHUFFLE);
    let mut adam = AdamState::for_model(&model);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = lr_schedule(config, epoch);
        shuffle_rng.shuffle(&mut order);
        let mut weighted = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let b = chunk.len();
            let idx: Vec<usize> = (0..3)
                .flat_map(|k| chunk.iter().map(move |&t| (k, t)))
                .map(|(k, t)| triplets.rows[t][k])
                .collect();
            let batch = features.select_rows(&idx);
            let (emb, trace) = model.forward_train(&batch, &mut dropout_rng)?;
            let part = |k: usize| emb.select_rows(&(k * b..(k + 1) * b).collect::<Vec<_>>());
            let (loss, ga, gp, gn) = batch_loss_and_gradient(config.loss, &part(0), &part(1), &part(2), config.margin)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            let upstream = Matrix::vstack(&[&ga, &gp, &gn])?;
            let grads = model.backward(&trace, &upstream)?;
            adam_step(&mut model, &grads, &mut adam, lr)?;
            if !model.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            weighted += loss * b as f64;
        }
        log.push(EpochLog {
            epoch,
            lr,
            mean_loss: weighted / triplets.len() as f64,
        });
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(&cfg, 0), 0.001);
        assert_eq!(lr_schedule(&cfg, 49), 0.001);
        assert!((lr_schedule(&cfg, 50) - 0.00095).abs() < 1e-18);
        assert!((lr_schedule(&cfg, 120) - 0.001 * 0.95 * 0.95).abs() < 1e-18);
        let flat = TrainConfig {
            gamma: 1.0,
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(&flat, 999), 0.001);
    }

    #[test]
    fn forced_triplets() {
        let labels = [0, 0, 1];
        let b = sample_triplets(&labels, 4, &mut RandomSource::new(1)).unwrap();
        assert_eq!(b.len(), 4);
        for &[a, p, n] in &b.rows {
            assert!(a < 2 && p < 2 && a != p);
            assert_eq!(n, 2);
        }
    }

    #[test]
    fn sampling_errors_and_determinism() {
        assert!(matches!(
            sample_triplets(&[0, 1], 3, &mut RandomSource::new(0)),
            Err(Error::Sampling(_))
        ));
        assert!(matches!(
            sample_triplets(&[0, 0, 0], 3, &mut RandomSource::new(0)),
            Err(Error::Sampling(_))
        ));
        let labels: Vec<usize> = (0..60).map(|i| i % 4).chain([9]).collect();
        let a = sample_triplets(&labels, 500, &mut RandomSource::new(5)).unwrap();
        let b = sample_triplets(&labels, 500, &mut RandomSource::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.is_valid_for(&labels));
        // The singleton class 9 never anchors but does serve as a negative.
        assert!(a.rows.iter().all(|r| labels[r[0]] != 9));
        assert!(a.rows.iter().any(|r| labels[r[2]] == 9));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut x = [1.5, -2.0];
        let mut st = AdamState::new(2);
        st.step_blocks(vec![&mut x], vec![&[0.0, 0.0]], 0.1).unwrap();
        assert_eq!(x, [1.5, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for c in [1e-3, 0.5, 7.0, -3.0] {
            let mut x = [0.0];
            let mut st = AdamState::new(1);
            st.step_blocks(vec![&mut x], vec![&[c]], 0.01).unwrap();
            // m̂ = c, v̂ = c², so Δ = −lr·c/(|c| + eps).
            let expected = -0.01 * c / (c.abs() + ADAM_EPS);
            assert!((x[0] - expected).abs() < 1e-15);
            assert!((x[0].abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        let mut x = [1.0];
        let mut st = AdamState::new(1);
        for _ in 0..500 {
            let g = [2.0 * x[0]];
            st.step_blocks(vec![&mut x], vec![&g], 0.1).unwrap();
        }
        assert!(x[0].abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut x = [1.0, 2.0];
        let mut st = AdamState::new(3);
        assert!(st.step_blocks(vec![&mut x], vec![&[0.0, 0.0]], 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                gamma: 1.5,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                loss: LossKind::Nplb { p: 3 },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = TrainConfig {
            loss: LossKind::DistanceSwap,
            hidden: vec![16, 8],
            ..Default::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
        let bad = json.replace("\"swap\"", "\"nplb3\"");
        assert!(serde_json::from_str::<TrainConfig>(&bad).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            hidden: vec![4],
            output_dim: 2,
            ..Default::default()
        };
        let out = train(&x, &[0, 0, 1], &cfg).unwrap();
        let init = ModelParams::new(
            &cfg.model_config(2),
            &mut RandomSource::new(cfg.seed).substream(streams::INIT),
        )
        .unwrap();
        assert_eq!(out.model, init);
        assert!(out.log.is_empty());
    }
}
