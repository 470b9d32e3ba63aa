//! Triplet objectives and embedding density diagnostics.
//!
//! Every loss is a function of the three pairwise distances of a triplet:
//! `δ₊ = d(a, p)`, `δ₋ = d(a, n)` and `ρ = d(p, n)`.
//!
//! | kind            | per-triplet value                      |
//! |-----------------|----------------------------------------|
//! | traditional     | `[δ₊ − δ₋ + ε]⁺`                       |
//! | distance swap   | `[δ₊ − min(δ₋, ρ) + ε]⁺`               |
//! | NPLB (even `p`) | `[δ₊ − δ₋ + ε]⁺ + (ρ − δ₋)^p`          |
//!
//! Batch values are means over triplets. At the hinge kink and for coincident
//! points (zero distance) the subgradient is taken to be 0.

use crate::error::{Error, Result};
use crate::numeric::{squared_distance, Matrix};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_XI: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletGeometry {
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub rho: f64,
}

impl TripletGeometry {
    pub fn new(delta_plus: f64, delta_minus: f64, rho: f64) -> Self {
        Self {
            delta_plus,
            delta_minus,
            rho,
        }
    }

    pub fn from_embeddings(anchor: &[f64], positive: &[f64], negative: &[f64]) -> Result<Self> {
        if anchor.len() != positive.len() || anchor.len() != negative.len() {
            return Err(Error::Dimension(format!(
                "triplet embeddings of lengths {}, {}, {}",
                anchor.len(),
                positive.len(),
                negative.len()
            )));
        }
        Ok(Self {
            delta_plus: squared_distance(anchor, positive).sqrt(),
            delta_minus: squared_distance(anchor, negative).sqrt(),
            rho: squared_distance(positive, negative).sqrt(),
        })
    }
}

/// Hinge margin `ε > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Margin(f64);

impl Margin {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 {
            Ok(Self(epsilon))
        } else {
            Err(Error::Config(format!("margin must be finite and > 0, got {epsilon}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Margin {
    fn default() -> Self {
        Self(1.0)
    }
}

impl TryFrom<f64> for Margin {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Margin::new(v)
    }
}

impl From<Margin> for f64 {
    fn from(m: Margin) -> f64 {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossKind {
    Traditional,
    DistanceSwap,
    /// Regularized objective with an even power `p ≥ 2`.
    Nplb {
        p: u32,
    },
}

impl LossKind {
    pub const NPLB2: LossKind = LossKind::Nplb { p: 2 };

    /// NPLB with power `p`; odd powers leave the objective unbounded below.
    pub fn nplb(p: u32) -> Result<Self> {
        check_even_power(p)?;
        Ok(LossKind::Nplb { p })
    }

    pub fn validate(self) -> Result<Self> {
        if let LossKind::Nplb { p } = self {
            check_even_power(p)?;
        }
        Ok(self)
    }

    pub fn value(self, g: TripletGeometry, margin: Margin) -> Result<f64> {
        match self {
            LossKind::Traditional => Ok(traditional_loss(g, margin)),
            LossKind::DistanceSwap => Ok(distance_swap_loss(g, margin)),
            LossKind::Nplb { p } => nplb_loss(g, margin, p),
        }
    }
}

fn check_even_power(p: u32) -> Result<()> {
    if p == 0 || !p.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "NPLB power must be an even positive integer (p ≡ 0 mod 2); p = {p} makes the \
             objective unbounded below or degenerate"
        )));
    }
    Ok(())
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Traditional => f.write_str("traditional"),
            LossKind::DistanceSwap => f.write_str("swap"),
            LossKind::Nplb { p: 2 } => f.write_str("nplb"),
            LossKind::Nplb { p } => write!(f, "nplb{p}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "traditional" | "triplet" => Ok(LossKind::Traditional),
            "swap" | "distance_swap" | "distance-swap" => Ok(LossKind::DistanceSwap),
            "nplb" => Ok(LossKind::NPLB2),
            other => match other.strip_prefix("nplb").map(str::parse::<u32>) {
                Some(Ok(p)) => LossKind::nplb(p),
                _ => Err(Error::Config(format!(
                    "unknown loss `{s}` (expected traditional, swap, nplb or nplb<p>)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for LossKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossKind> for String {
    fn from(k: LossKind) -> String {
        k.to_string()
    }
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

pub fn traditional_loss(g: TripletGeometry, margin: Margin) -> f64 {
    hinge(g.delta_plus - g.delta_minus + margin.0)
}

pub fn nplb_loss(g: TripletGeometry, margin: Margin, p: u32) -> Result<f64> {
    check_even_power(p)?;
    Ok(traditional_loss(g, margin) + (g.rho - g.delta_minus).powi(p as i32))
}

/// The `p = 1` variant. It is unbounded below and exists only to exhibit that.
pub fn nplb_unbounded_demo(g: TripletGeometry, margin: Margin) -> f64 {
    traditional_loss(g, margin) + (g.rho - g.delta_minus)
}

/// In-triplet hard negative: if the positive is closer to the negative than the
/// anchor is, anchor and positive swap roles (`δ₋` becomes `ρ`; `δ₊` is symmetric).
pub fn distance_swap_loss(g: TripletGeometry, margin: Margin) -> f64 {
    hinge(g.delta_plus - g.delta_minus.min(g.rho) + margin.0)
}

/// Loss value and gradients with respect to each embedding of one triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGradient {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Partial derivatives of a loss with respect to (δ₊, δ₋, ρ).
fn distance_partials(kind: LossKind, g: TripletGeometry, margin: Margin) -> (f64, f64, f64) {
    let eps = margin.0;
    match kind {
        LossKind::Traditional => {
            if g.delta_plus - g.delta_minus + eps > 0.0 {
                (1.0, -1.0, 0.0)
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        LossKind::DistanceSwap => {
            let swapped = g.rho < g.delta_minus;
            let neg = if swapped { g.rho } else { g.delta_minus };
            if g.delta_plus - neg + eps > 0.0 {
                if swapped {
                    (1.0, 0.0, -1.0)
                } else {
                    (1.0, -1.0, 0.0)
                }
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        LossKind::Nplb { p } => {
            let (dp, dm, dr) = distance_partials(LossKind::Traditional, g, margin);
            let reg = p as f64 * (g.rho - g.delta_minus).powi(p as i32 - 1);
            (dp, dm - reg, dr + reg)
        }
    }
}

/// Adds `coef · (x − y)/‖x − y‖` to `gx` and its negation to `gy`; no-op at zero distance.
fn push_distance_grad(coef: f64, x: &[f64], y: &[f64], dist: f64, gx: &mut [f64], gy: &mut [f64]) {
    if coef == 0.0 || dist == 0.0 {
        return;
    }
    let s = coef / dist;
    for i in 0..x.len() {
        let d = s * (x[i] - y[i]);
        gx[i] += d;
        gy[i] -= d;
    }
}

/// Exact gradient of one triplet's loss with respect to its three embeddings.
pub fn loss_gradient(
    kind: LossKind,
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: Margin,
) -> Result<TripletGradient> {
    kind.validate()?;
    let g = TripletGeometry::from_embeddings(anchor, positive, negative)?;
    let loss = kind.value(g, margin)?;
    let (d_plus, d_minus, d_rho) = distance_partials(kind, g, margin);
    let dim = anchor.len();
    let mut ga = vec![0.0; dim];
    let mut gp = vec![0.0; dim];
    let mut gn = vec![0.0; dim];
    push_distance_grad(d_plus, anchor, positive, g.delta_plus, &mut ga, &mut gp);
    push_distance_grad(d_minus, anchor, negative, g.delta_minus, &mut ga, &mut gn);
    push_distance_grad(d_rho, positive, negative, g.rho, &mut gp, &mut gn);
    Ok(TripletGradient {
        loss,
        anchor: ga,
        positive: gp,
        negative: gn,
    })
}

/// Mean loss over a batch of triplets and gradients of that mean with respect to
/// the anchor, positive and negative embedding matrices (rows are triplets).
pub fn batch_loss_and_gradient(
    kind: LossKind,
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    margin: Margin,
) -> Result<(f64, Matrix, Matrix, Matrix)> {
    if anchors.shape() != positives.shape() || anchors.shape() != negatives.shape() {
        return Err(Error::Dimension("triplet batch matrices differ in shape".into()));
    }
    let (n, d) = anchors.shape();
    if n == 0 {
        return Err(Error::EmptyInput("empty triplet batch".into()));
    }
    let inv = 1.0 / n as f64;
    let mut ga = Matrix::zeros(n, d);
    let mut gp = Matrix::zeros(n, d);
    let mut gn = Matrix::zeros(n, d);
    let mut total = 0.0;
    for i in 0..n {
        let t = loss_gradient(kind, anchors.row(i), positives.row(i), negatives.row(i), margin)?;
        total += t.loss;
        for (dst, src) in [
            (ga.row_mut(i), &t.anchor),
            (gp.row_mut(i), &t.positive),
            (gn.row_mut(i), &t.negative),
        ] {
            for (o, v) in dst.iter_mut().zip(src.iter()) {
                *o = v * inv;
            }
        }
    }
    Ok((total * inv, ga, gp, gn))
}

/// Mean loss over a batch (no gradients).
pub fn batch_loss(
    kind: LossKind,
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    margin: Margin,
) -> Result<f64> {
    batch_loss_and_gradient(kind, anchors, positives, negatives, margin).map(|r| r.0)
}

/// Intra-class compactness diagnostics for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDensity {
    pub count: usize,
    /// Minimum pairwise intra-class distance (0 for singletons).
    pub local_density: f64,
    /// Mean of each point's nearest intra-class neighbour distance (0 for singletons).
    pub average_density: f64,
    pub uniformity: f64,
}

/// `LD`, `AD` and `Unif = |LD − AD| / (AD + ξ)` per class label.
pub fn class_density_metrics(embeddings: &Matrix, labels: &[usize], xi: f64) -> Result<BTreeMap<usize, ClassDensity>> {
    if labels.len() != embeddings.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} embeddings",
            labels.len(),
            embeddings.rows()
        )));
    }
    if xi.is_nan() || xi <= 0.0 {
        return Err(Error::Config(format!("xi must be > 0, got {xi}")));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (label, idx) in members {
        let count = idx.len();
        if count < 2 {
            out.insert(
                label,
                ClassDensity {
                    count,
                    local_density: 0.0,
                    average_density: 0.0,
                    uniformity: 0.0,
                },
            );
            continue;
        }
        let mut nearest = vec![f64::INFINITY; count];
        for i in 0..count {
            for j in (i + 1)..count {
                let d = squared_distance(embeddings.row(idx[i]), embeddings.row(idx[j])).sqrt();
                nearest[i] = nearest[i].min(d);
                nearest[j] = nearest[j].min(d);
            }
        }
        let ld = nearest.iter().copied().fold(f64::INFINITY, f64::min);
        let ad = nearest.iter().sum::<f64>() / count as f64;
        out.insert(
            label,
            ClassDensity {
                count,
                local_density: ld,
                average_density: ad,
                uniformity: (ld - ad).abs() / (ad + xi),
            },
        );
    }
    Ok(out)
}

/// Mean uniformity over all classes.
pub fn mean_uniformity(metrics: &BTreeMap<usize, ClassDensity>) -> f64 {
    if metrics.is_empty() {
        return 0.0;
    }
    metrics.values().map(|m| m.uniformity).sum::<f64>() / metrics.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1() -> Margin {
        Margin::new(1.0).unwrap()
    }

    fn geo(dp: f64, dm: f64, rho: f64) -> TripletGeometry {
        TripletGeometry::new(dp, dm, rho)
    }

    #[test]
    fn traditional_examples() {
        assert_eq!(traditional_loss(geo(1.0, 2.0, 7.0), m1()), 0.0);
        assert_eq!(traditional_loss(geo(0.0, 0.0, 0.0), m1()), 1.0);
        assert_eq!(traditional_loss(geo(2.0, 1.0, 0.5), m1()), 2.0);
    }

    #[test]
    fn nplb_examples() {
        assert_eq!(nplb_loss(geo(1.0, 2.0, 2.0), m1(), 2).unwrap(), 0.0);
        assert_eq!(nplb_loss(geo(0.0, 0.0, 0.0), m1(), 2).unwrap(), 1.0);
        let g = TripletGeometry::from_embeddings(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!((g.delta_plus, g.delta_minus), (1.0, 2.0));
        let v = nplb_loss(g, m1(), 2).unwrap();
        assert!((v - (5f64.sqrt() - 2.0).powi(2)).abs() < 1e-15);
        assert!((v - 0.055728).abs() < 1e-6);
        assert!(nplb_loss(g, m1(), 4).unwrap() < v);
    }

    #[test]
    fn odd_or_zero_power_is_rejected() {
        for p in [0, 1, 3, 5] {
            assert!(matches!(nplb_loss(geo(1.0, 1.0, 1.0), m1(), p), Err(Error::Config(_))));
            assert!(LossKind::nplb(p).is_err());
        }
        assert!("nplb3".parse::<LossKind>().is_err());
        assert_eq!("nplb4".parse::<LossKind>().unwrap(), LossKind::Nplb { p: 4 });
        assert_eq!("nplb".parse::<LossKind>().unwrap(), LossKind::NPLB2);
        assert_eq!("swap".parse::<LossKind>().unwrap(), LossKind::DistanceSwap);
    }

    #[test]
    fn unbounded_demo_examples() {
        assert_eq!(nplb_unbounded_demo(geo(1.0, 10.0, 1.0), m1()), -9.0);
        assert_eq!(nplb_unbounded_demo(geo(2.0, 1.0, 1.0), m1()), 2.0);
        let g = geo(0.3, 1.7, 1.7);
        assert_eq!(nplb_unbounded_demo(g, m1()), traditional_loss(g, m1()));
    }

    #[test]
    fn distance_swap_examples() {
        let g = geo(0.5, 1.0, 3.0);
        assert_eq!(distance_swap_loss(g, m1()), traditional_loss(g, m1()));
        assert_eq!(distance_swap_loss(geo(3.0, 4.0, 1.0), m1()), 3.0);
        assert_eq!(distance_swap_loss(geo(0.0, 5.0, 5.0), m1()), 0.0);
    }

    #[test]
    fn margin_validation() {
        assert!(Margin::new(0.0).is_err());
        assert!(Margin::new(-1.0).is_err());
        assert!(Margin::new(f64::INFINITY).is_err());
    }

    #[test]
    fn gradient_zero_at_nplb_minimum() {
        // δ₊ = 1, δ₋ = ρ = 3 with the hinge inactive.
        let a = [0.0, 0.0];
        let p = [1.0, 0.0];
        let n = [0.5, 35f64.sqrt() / 2.0];
        let g = TripletGeometry::from_embeddings(&a, &p, &n).unwrap();
        assert!((g.rho - g.delta_minus).abs() < 1e-12);
        let t = loss_gradient(LossKind::NPLB2, &a, &p, &n, m1()).unwrap();
        for v in t.anchor.iter().chain(&t.positive).chain(&t.negative) {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn traditional_positive_gradient_is_unit_direction() {
        let a = [0.0, 0.0, 0.0];
        let p = [3.0, 0.0, 4.0];
        let n = [1.0, 1.0, 0.0];
        let t = loss_gradient(LossKind::Traditional, &a, &p, &n, m1()).unwrap();
        for (g, e) in t.positive.iter().zip([0.6, 0.0, 0.8]) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn coincident_points_have_zero_subgradient() {
        let x = [1.0, 2.0];
        let t = loss_gradient(LossKind::NPLB2, &x, &x, &x, m1()).unwrap();
        assert_eq!(t.loss, 1.0);
        assert!(t.anchor.iter().chain(&t.positive).chain(&t.negative).all(|&v| v == 0.0));
    }

    #[test]
    fn density_examples() {
        let line = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let m = class_density_metrics(&line, &[0, 0, 0], DEFAULT_XI).unwrap();
        let c = m[&0];
        assert_eq!(c.local_density, 1.0);
        assert!((c.average_density - 4.0 / 3.0).abs() < 1e-15);
        let expected = (1.0 / 3.0) / (4.0 / 3.0 + DEFAULT_XI);
        assert!((c.uniformity - expected).abs() < 1e-15);
        assert!((c.uniformity - 0.25).abs() < 1e-8);

        let grid = Matrix::from_rows(&[[0.0], [0.5], [1.0], [1.5], [2.0]]).unwrap();
        let g = class_density_metrics(&grid, &[1; 5], DEFAULT_XI).unwrap()[&1];
        assert_eq!((g.local_density, g.average_density), (0.5, 0.5));
        assert!(g.uniformity < 1e-12);

        let single = Matrix::from_rows(&[[4.0], [0.0], [9.0]]).unwrap();
        let s = class_density_metrics(&single, &[7, 3, 3], DEFAULT_XI).unwrap();
        assert_eq!(s[&7].uniformity, 0.0);
        assert_eq!(s[&7].count, 1);
    }
}
