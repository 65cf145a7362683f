//! Target densities, exact conjugate posteriors and simulated datasets.

mod data;
mod gaussian;
mod regression;

pub use data::{
    dataset_csv, generate_dataset, parse_dataset_csv, read_dataset, write_dataset, Dataset,
    DatasetKind, DatasetSidecar, DatasetSpec, WishartBase, BETA_TRUE, CSV_SCHEMA_VERSION,
    NEEDLE_CORRELATION, WISHART_C1, WISHART_C2,
};
pub use gaussian::GaussianDist;
pub use regression::{GaussianTarget, RegressionTarget, TargetModel};

use crate::numerics::Mat;

pub(crate) fn mat_from_rows(rows: &[[f64; 4]; 4]) -> Mat {
    Mat::from_fn(4, 4, |i, j| rows[i][j])
}
