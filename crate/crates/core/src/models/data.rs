use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copulas::PairCopula;
use crate::dvine::{DVineFamily, Marginal};
use crate::numerics::{
    cholesky, correlation_from_covariance, nearest_correlation, sample_wishart,
    spd_inverse_and_logdet, Mat, Rng, Vector,
};
use crate::{Error, Result};

use super::{mat_from_rows, RegressionTarget};

/// Regression coefficients used by every simulated setup.
pub const BETA_TRUE: [f64; 4] = [10.0, -10.0, 5.0, 3.0];

/// Covariate correlation of the collinear ("needle") regression example.
pub const NEEDLE_CORRELATION: [[f64; 4]; 4] = [
    [1.0, 0.9, 0.14, -0.85],
    [0.9, 1.0, -0.2, -0.9],
    [0.14, -0.2, 1.0, -0.1],
    [-0.85, -0.9, -0.1, 1.0],
];

/// Base correlation of the first Wishart setup.
pub const WISHART_C1: [[f64; 4]; 4] = [
    [1.0, -0.8590, -0.8749, -0.6122],
    [-0.8590, 1.0, 0.9154, 0.8862],
    [-0.8749, 0.9154, 1.0, 0.6948],
    [-0.6122, 0.8862, 0.6948, 1.0],
];

/// Base matrix of the second Wishart setup as published. It is not positive
/// definite; [`WishartBase::matrix`] returns its nearest valid correlation.
pub const WISHART_C2: [[f64; 4]; 4] = [
    [1.0, -0.6, -0.0371, 0.5559],
    [-0.6, 1.0, 0.7, 0.9066],
    [-0.0371, 0.7, 1.0, -0.5],
    [0.5559, 0.9066, -0.5, 1.0],
];

pub const CSV_SCHEMA_VERSION: u32 = 1;

const BASE_EIGEN_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Independent standard-normal covariates.
    Independence,
    /// Strongly collinear covariates.
    Needle,
    /// Gaussian covariates with a user-supplied correlation matrix.
    Custom,
    /// Gaussian covariates with correlation `Corr(P⁻¹)`, `P ~ 𝒲(ν, C⁻¹)`.
    WishartGaussian,
    /// Covariates from a random D-vine mixing Clayton and Gaussian pair copulas.
    VineClayton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WishartBase {
    C1,
    C2,
}

impl WishartBase {
    /// Base correlation, projected onto the positive-definite cone when the
    /// published matrix is indefinite.
    pub fn matrix(self) -> Mat {
        let raw = match self {
            WishartBase::C1 => mat_from_rows(&WISHART_C1),
            WishartBase::C2 => mat_from_rows(&WISHART_C2),
        };
        if cholesky(&raw).is_ok() {
            raw
        } else {
            nearest_correlation(&raw, BASE_EIGEN_FLOOR).expect("4x4 symmetric input")
        }
    }

    fn default_nu(self) -> f64 {
        match self {
            WishartBase::C1 => 5.0,
            WishartBase::C2 => 10.0,
        }
    }
}

/// Recipe for a simulated regression dataset. Optional fields are filled
/// by [`DatasetSpec::resolved`] with the defaults of each kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wishart_base: Option<WishartBase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wishart_nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clayton_prob: Option<f64>,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            n: None,
            prior_var: None,
            beta: None,
            correlation: None,
            wishart_base: None,
            wishart_nu: None,
            clayton_prob: None,
        }
    }

    pub fn independence(seed: u64) -> Self {
        Self::new(DatasetKind::Independence, seed)
    }

    pub fn needle(seed: u64) -> Self {
        Self::new(DatasetKind::Needle, seed)
    }

    pub fn wishart(base: WishartBase, seed: u64) -> Self {
        Self {
            wishart_base: Some(base),
            ..Self::new(DatasetKind::WishartGaussian, seed)
        }
    }

    pub fn vine_clayton(seed: u64) -> Self {
        Self::new(DatasetKind::VineClayton, seed)
    }

    /// Copy with every default made explicit, after validation.
    pub fn resolved(&self) -> Result<Self> {
        use DatasetKind::*;
        let mut out = self.clone();
        let small = matches!(self.kind, Independence | Needle | Custom);
        out.n.get_or_insert(if small { 50 } else { 300 });
        out.prior_var.get_or_insert(if small { 1.0 } else { 1e4 });
        out.beta.get_or_insert_with(|| BETA_TRUE.to_vec());
        let d = out.beta.as_ref().map_or(0, |b| b.len());
        match self.kind {
            Independence => out.correlation = Some(identity_rows(d)),
            Needle => {
                out.correlation = Some(NEEDLE_CORRELATION.iter().map(|r| r.to_vec()).collect());
            }
            Custom => {
                if out.correlation.is_none() {
                    return Err(Error::invalid("custom dataset needs a correlation matrix"));
                }
            }
            WishartGaussian => {
                let base = *out.wishart_base.get_or_insert(WishartBase::C1);
                out.wishart_nu.get_or_insert(base.default_nu());
            }
            VineClayton => {
                out.clayton_prob.get_or_insert(0.6);
            }
        }
        out.validate()?;
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n.unwrap_or(1);
        if n == 0 {
            return Err(Error::invalid("dataset needs n >= 1"));
        }
        if let Some(pv) = self.prior_var {
            if !(pv > 0.0) || !pv.is_finite() {
                return Err(Error::invalid(format!(
                    "prior variance must be positive, got {pv}"
                )));
            }
        }
        let beta = self.beta.as_deref().unwrap_or(&BETA_TRUE);
        if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("beta must be a non-empty finite vector"));
        }
        let d = beta.len();
        if let Some(c) = &self.correlation {
            let m = rows_to_mat(c, d)?;
            check_correlation(&m)?;
        }
        if matches!(
            self.kind,
            DatasetKind::Needle | DatasetKind::WishartGaussian
        ) && d != 4
        {
            return Err(Error::DimensionMismatch {
                expected: 4,
                actual: d,
            });
        }
        if let Some(nu) = self.wishart_nu {
            if !(nu >= d as f64) || !nu.is_finite() {
                return Err(Error::invalid(format!(
                    "Wishart degrees of freedom {nu} below dimension {d}"
                )));
            }
        }
        if let Some(p) = self.clayton_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "Clayton probability {p} outside [0, 1]"
                )));
            }
        }
        if self.kind == DatasetKind::VineClayton && d < 2 {
            return Err(Error::invalid("vine covariates need d >= 2"));
        }
        Ok(())
    }
}

fn identity_rows(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn rows_to_mat(rows: &[Vec<f64>], d: usize) -> Result<Mat> {
    if rows.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: rows.len(),
        });
    }
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.len(),
            });
        }
    }
    Ok(Mat::from_fn(d, d, |i, j| rows[i][j]))
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn check_correlation(m: &Mat) -> Result<()> {
    let d = m.nrows();
    for i in 0..d {
        if m[(i, i)] != 1.0 {
            return Err(Error::invalid("correlation matrix needs a unit diagonal"));
        }
        for j in 0..i {
            if m[(i, j)] != m[(j, i)] || !(m[(i, j)].abs() < 1.0) {
                return Err(Error::invalid(
                    "correlation matrix must be symmetric with |entries| < 1",
                ));
            }
        }
    }
    cholesky(m)?;
    Ok(())
}

/// A generated (or imported) dataset with its regression target.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Resolved spec.
    pub spec: DatasetSpec,
    pub x: Mat,
    pub y: Vector,
    /// Correlation the covariates were drawn with (Gaussian kinds).
    pub generator_correlation: Option<Mat>,
    /// Covariate law of the vine kind.
    pub generator_vine: Option<DVineFamily>,
    pub target: RegressionTarget,
}

/// Draws covariates from the dataset's covariate law and sets `y = X β` exactly.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let spec = spec.resolved()?;
    let mut rng = Rng::new(spec.seed);
    let beta = Vector::from_vec(spec.beta.clone().expect("resolved"));
    let d = beta.len();
    let n = spec.n.expect("resolved");
    let mut generator_correlation = None;
    let mut generator_vine = None;
    let x = match spec.kind {
        DatasetKind::VineClayton => {
            let vine = random_covariate_vine(d, spec.clayton_prob.expect("resolved"), &mut rng)?;
            let mut x = Mat::zeros(n, d);
            for i in 0..n {
                let row = vine.sample(&rng.uniform_open_vec(d));
                for j in 0..d {
                    x[(i, j)] = row[j];
                }
            }
            generator_vine = Some(vine);
            x
        }
        kind => {
            let c = if kind == DatasetKind::WishartGaussian {
                let base = spec.wishart_base.expect("resolved").matrix();
                let (base_inv, _) = spd_inverse_and_logdet(&base)?;
                let p = sample_wishart(spec.wishart_nu.expect("resolved"), &base_inv, &mut rng)?;
                let (cov, _) = spd_inverse_and_logdet(&p)?;
                correlation_from_covariance(&cov)?.0
            } else {
                rows_to_mat(spec.correlation.as_ref().expect("resolved"), d)?
            };
            let l = cholesky(&c)?;
            let mut x = Mat::zeros(n, d);
            for i in 0..n {
                let row = &l * rng.standard_normal_vec(d);
                x.set_row(i, &row.transpose());
            }
            generator_correlation = Some(c);
            x
        }
    };
    let y = &x * beta;
    let target = RegressionTarget::new(x.clone(), y.clone(), spec.prior_var.expect("resolved"))?;
    Ok(Dataset {
        spec,
        x,
        y,
        generator_correlation,
        generator_vine,
        target,
    })
}

fn random_covariate_vine(d: usize, clayton_prob: f64, rng: &mut Rng) -> Result<DVineFamily> {
    let mut trees = Vec::with_capacity(d - 1);
    for t in 1..d {
        let mut tree = Vec::with_capacity(d - t);
        for _ in 0..d - t {
            let c = if rng.bernoulli(clayton_prob) {
                PairCopula::clayton(rng.uniform_range(1.0, 8.0))?
            } else {
                // keep strictly inside (-1, 1)
                PairCopula::gaussian(rng.uniform_open().min(0.999))?
            };
            tree.push(c);
        }
        trees.push(tree);
    }
    DVineFamily::new(vec![Marginal::default(); d], trees)
}

/// JSON companion of the dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub schema_version: u32,
    #[serde(default)]
    pub build: String,
    pub spec: DatasetSpec,
    pub rows: usize,
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_correlation: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_vine: Option<DVineFamily>,
}

impl DatasetSidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        let sidecar: Self = serde_json::from_str(text)?;
        if sidecar.schema_version != CSV_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema version {}",
                sidecar.schema_version
            )));
        }
        sidecar.spec.validate()?;
        Ok(sidecar)
    }
}

fn csv_columns(d: usize) -> Vec<String> {
    (1..=d)
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("y".to_string()))
        .collect()
}

/// CSV text: header `x1,…,xd,y`, one row per observation.
pub fn dataset_csv(x: &Mat, y: &Vector) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_columns(x.ncols()))?;
    for i in 0..x.nrows() {
        let row: Vec<String> = x
            .row(i)
            .iter()
            .chain(std::iter::once(&y[i]))
            .map(|v| format!("{v}"))
            .collect();
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses CSV text written by [`dataset_csv`].
pub fn parse_dataset_csv(text: &str) -> Result<(Mat, Vector)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 2 {
        return Err(Error::Parse(
            "dataset needs at least one covariate and y".into(),
        ));
    }
    let expected = csv_columns(cols - 1);
    if header.iter().ne(expected.iter().map(|s| s.as_str())) {
        return Err(Error::Parse(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {cols}",
                rows + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad number {field:?}", rows + 1)))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite value", rows + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse("dataset has no rows".into()));
    }
    let all = Mat::from_row_slice(rows, cols, &values);
    let x = all.columns(0, cols - 1).into_owned();
    let y = all.column(cols - 1).into_owned();
    Ok((x, y))
}

impl Dataset {
    pub fn sidecar(&self, build: &str) -> DatasetSidecar {
        DatasetSidecar {
            schema_version: CSV_SCHEMA_VERSION,
            build: build.to_string(),
            spec: self.spec.clone(),
            rows: self.x.nrows(),
            columns: csv_columns(self.x.ncols()),
            generator_correlation: self.generator_correlation.as_ref().map(mat_to_rows),
            generator_vine: self.generator_vine.clone(),
        }
    }
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path, stem: &str, build: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.csv")), dataset_csv(&ds.x, &ds.y)?)?;
    let json = serde_json::to_string_pretty(&ds.sidecar(build))?;
    fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

/// Reads a dataset pair written by [`write_dataset`].
pub fn read_dataset(dir: &Path, stem: &str) -> Result<Dataset> {
    let sidecar =
        DatasetSidecar::from_json(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let (x, y) = parse_dataset_csv(&fs::read_to_string(dir.join(format!("{stem}.csv")))?)?;
    if x.nrows() != sidecar.rows {
        return Err(Error::Parse(format!(
            "sidecar promises {} rows, CSV has {}",
            sidecar.rows,
            x.nrows()
        )));
    }
    let spec = sidecar.spec.resolved()?;
    let target = RegressionTarget::new(x.clone(), y.clone(), spec.prior_var.expect("resolved"))?;
    let generator_correlation = match &sidecar.generator_correlation {
        Some(rows) => Some(rows_to_mat(rows, x.ncols())?),
        None => None,
    };
    Ok(Dataset {
        spec,
        x,
        y,
        generator_correlation,
        generator_vine: sidecar.generator_vine,
        target,
    })
}
