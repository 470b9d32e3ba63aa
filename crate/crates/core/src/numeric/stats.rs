use super::Matrix;
use crate::error::{Error, Result};

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Squared Euclidean distance without length checks; callers guarantee equal lengths.
#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_len(a, b)?;
    Ok(squared_distance(a, b).sqrt())
}

/// Linear-interpolation quantile at position `(q/100)·(n−1)` of the sorted values.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Range(format!("percentile q = {q} not in [0, 100]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("percentile input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, q))
}

/// Same as [`percentile`] for already-sorted, validated input.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Coordinate-wise percentile: `percentile` applied to each column.
pub fn columnwise_percentile(m: &Matrix, q: f64) -> Result<Vec<f64>> {
    if m.rows() == 0 {
        return Err(Error::EmptyInput("columnwise percentile of an empty matrix".into()));
    }
    (0..m.cols()).map(|c| percentile(&m.column(c), q)).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Sample Pearson correlation.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    check_same_len(x, y)?;
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 pairs, got {}",
            x.len()
        )));
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn column_means(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = m.rows().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Sample covariance (n − 1 denominator).
pub fn covariance(m: &Matrix) -> Result<Matrix> {
    if m.rows() < 2 {
        return Err(Error::EmptyInput(format!(
            "covariance needs at least 2 rows, got {}",
            m.rows()
        )));
    }
    let mu = column_means(m);
    let d = m.cols();
    let mut cov = Matrix::zeros(d, d);
    for row in m.iter_rows() {
        for i in 0..d {
            let di = row[i] - mu[i];
            for j in i..d {
                let v = cov.get(i, j) + di * (row[j] - mu[j]);
                cov.set(i, j, v);
            }
        }
    }
    let denom = (m.rows() - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        let d = euclidean_distance(&[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert!((d - 5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn percentile_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0).unwrap(), 3.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 5.0);
        assert_eq!(percentile(&v, 25.0).unwrap(), 2.0);
        assert!(matches!(percentile(&[], 50.0), Err(Error::EmptyInput(_))));
        assert!(matches!(percentile(&v, 100.5), Err(Error::Range(_))));
        assert!(matches!(percentile(&v, -1.0), Err(Error::Range(_))));
    }

    #[test]
    fn columnwise_examples() {
        let m = Matrix::from_rows(&[[0.0, 10.0], [2.0, 20.0]]).unwrap();
        assert_eq!(columnwise_percentile(&m, 50.0).unwrap(), vec![1.0, 15.0]);
        let single = Matrix::from_rows(&[[4.0], [1.0], [9.0]]).unwrap();
        assert_eq!(columnwise_percentile(&single, 50.0).unwrap(), vec![4.0]);
        let same = Matrix::from_rows(&[[1.0, -2.0, 3.5]; 4]).unwrap();
        for q in [0.0, 12.5, 50.0, 97.5, 100.0] {
            assert_eq!(columnwise_percentile(&same, q).unwrap(), vec![1.0, -2.0, 3.5]);
        }
        assert!(columnwise_percentile(&Matrix::zeros(0, 2), 50.0).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_correlation(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_correlation(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson_correlation(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert!(matches!(
            pearson_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn covariance_of_known_data() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 6.0], [5.0, 10.0]]).unwrap();
        let c = covariance(&m).unwrap();
        assert_eq!(c.as_slice(), &[4.0, 8.0, 8.0, 16.0]);
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in prop::collection::vec(-1e3..1e3f64, 5),
                               b in prop::collection::vec(-1e3..1e3f64, 5),
                               c in prop::collection::vec(-1e3..1e3f64, 5)) {
            let ab = euclidean_distance(&a, &b).unwrap();
            let bc = euclidean_distance(&b, &c).unwrap();
            let ac = euclidean_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab, euclidean_distance(&b, &a).unwrap());
        }

        #[test]
        fn percentile_monotone_and_permutation_invariant(
            mut v in prop::collection::vec(-1e6..1e6f64, 1..40),
            q1 in 0.0..=100.0f64, q2 in 0.0..=100.0f64,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let p_lo = percentile(&v, lo).unwrap();
            let p_hi = percentile(&v, hi).unwrap();
            prop_assert!(p_lo <= p_hi);
            let before = percentile(&v, q1).unwrap();
            v.reverse();
            prop_assert_eq!(before, percentile(&v, q1).unwrap());
        }
    }
}
