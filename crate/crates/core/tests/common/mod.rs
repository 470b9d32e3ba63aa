#![allow(dead_code)]

use nplb::losses::{batch_loss_and_gradient, LossKind, Margin};
use nplb::net::{ModelConfig, ModelParams};
use nplb::numeric::{Matrix, RandomSource};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero derivatives.
pub const REL_FLOOR: f64 = 1e-6;

pub fn small_model(seed: u64) -> ModelParams {
    let config = ModelConfig::new(4, 3).with_hidden(&[8, 6]).with_dropout(0.1);
    ModelParams::new(&config, &mut RandomSource::new(seed)).unwrap()
}

fn objective(model: &ModelParams, x: &Matrix, masks: &[Option<Matrix>], kind: LossKind, t: usize) -> f64 {
    let (emb, _) = model.forward_with_masks(x, masks).unwrap();
    let part = |k: usize| emb.select_rows(&(k * t..(k + 1) * t).collect::<Vec<_>>());
    batch_loss_and_gradient(kind, &part(0), &part(1), &part(2), Margin::default())
        .unwrap()
        .0
}

/// Max relative error between backprop and central differences over every
/// parameter, for one random batch of `t` triplets with replayed dropout masks.
pub fn max_relative_error(kind: LossKind, seed: u64, t: usize) -> f64 {
    let mut rng = RandomSource::new(1000 + seed);
    let model = small_model(seed);
    let x = Matrix::from_vec(3 * t, 4, (0..12 * t).map(|_| rng.standard_normal()).collect()).unwrap();
    let (emb, trace) = model.forward_train(&x, &mut rng).unwrap();
    let masks = trace.masks();
    let part = |k: usize| emb.select_rows(&(k * t..(k + 1) * t).collect::<Vec<_>>());
    let (_, ga, gp, gn) = batch_loss_and_gradient(kind, &part(0), &part(1), &part(2), Margin::default()).unwrap();
    let upstream = Matrix::vstack(&[&ga, &gp, &gn]).unwrap();
    let analytic: Vec<f64> = model
        .backward(&trace, &upstream)
        .unwrap()
        .blocks()
        .iter()
        .flat_map(|b| b.iter().copied())
        .collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    let n_blocks = model.clone().blocks_mut().len();
    for b in 0..n_blocks {
        let len = model.clone().blocks_mut()[b].len();
        for i in 0..len {
            let mut plus = model.clone();
            plus.blocks_mut()[b][i] += FD_STEP;
            let mut minus = model.clone();
            minus.blocks_mut()[b][i] -= FD_STEP;
            let fp = objective(&plus, &x, &masks, kind, t);
            let fm = objective(&minus, &x, &masks, kind, t);
            numeric.push((fp - fm) / (2.0 * FD_STEP));
        }
    }
    assert_eq!(numeric.len(), analytic.len());
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}
