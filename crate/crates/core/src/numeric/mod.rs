//! Dense linear algebra, distances, percentiles and seeded randomness.
//!
//! All reductions accumulate in `f64`. Percentiles use linear interpolation at
//! position `(q/100)·(n−1)`; multivariate percentiles are taken per column.

mod linalg;
mod matrix;
mod random;
mod stats;

pub use linalg::{mahalanobis_distance, Cholesky};
pub use matrix::Matrix;
pub use random::{streams, RandomSource};
pub use stats::{
    column_means, columnwise_percentile, covariance, euclidean_distance, mean, pearson_correlation, percentile,
    sample_std,
};

pub(crate) use stats::squared_distance;
