use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vinevi::analysis::{
    delta_kl_rel, kl_gaussians, mean_rel_rmse_std, run_verification, VerificationManifest,
    VerifyOptions,
};
use vinevi::inference::{
    fit_mean_field, gcvi_fit, stepwise_fit, BlockReport, StageOutcome, StageReport, StepwiseConfig,
    StopReason, VrIwaeConfig,
};
use vinevi::models::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetSpec, GaussianDist,
};
use vinevi::numerics::derive_seed;
use vinevi::{DVineFamily, Marginal, Rng};

use crate::spec::{sweep_dataset, ExperimentKind, ExperimentSpec, Method};
use crate::{io_err, CliError, CliResult, BUILD_ID, OUTPUT_SCHEMA_VERSION};

const DATASET_STEM: &str = "dataset";

fn output_dir(spec: &ExperimentSpec) -> CliResult<PathBuf> {
    let dir = spec
        .output_dir
        .clone()
        .ok_or_else(|| CliError::Spec("no output directory (use --out)".into()))?;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `dataset.csv` and `dataset.json`; returns the directory.
pub fn cmd_gen_data(spec: &ExperimentSpec) -> CliResult<PathBuf> {
    spec.validate()?;
    let dir = output_dir(spec)?;
    let ds = generate_dataset(&spec.dataset_spec()?)?;
    write_dataset(&ds, &dir, DATASET_STEM, BUILD_ID)?;
    Ok(dir)
}

fn load_dataset(spec: &ExperimentSpec) -> CliResult<Dataset> {
    match &spec.dataset_dir {
        Some(dir) => Ok(read_dataset(dir, DATASET_STEM)?),
        None => Ok(generate_dataset(&spec.dataset_spec()?)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MethodReport {
    StepwiseVine {
        stages: Vec<StageReport>,
        stop_reason: StopReason,
        stop_tree: Option<usize>,
    },
    Mf {
        iterations: usize,
        outcome: StageOutcome,
        final_bound: f64,
        last_rhat: Option<f64>,
    },
    Gcvi {
        blocks: Vec<BlockReport>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub build: String,
    pub seed: u64,
    pub spec: ExperimentSpec,
    pub dataset: DatasetSpec,
    pub truncation: usize,
    pub report: MethodReport,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub build: String,
    pub seed: u64,
    /// `KL(posterior ‖ q)`: closed form for all-Gaussian vines, otherwise a
    /// Monte-Carlo average over posterior draws.
    pub forward_kl: f64,
    pub forward_kl_exact: bool,
    pub rel_rmse_std: f64,
    pub true_means: Vec<f64>,
    pub est_means: Vec<f64>,
    pub true_stds: Vec<f64>,
    pub est_stds: Vec<f64>,
    pub true_correlation: Vec<Vec<f64>>,
    /// Implied by the pair copulas when all are Gaussian, else empirical.
    pub est_correlation: Vec<Vec<f64>>,
}

fn rows(m: &vinevi::Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vine_gaussian(q: &DVineFamily) -> Option<GaussianDist> {
    let cov = q.implied_covariance().ok()?;
    GaussianDist::new(q.means(), cov).ok()
}

fn draw_samples(q: &DVineFamily, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| q.sample(&rng.uniform_open_vec(q.dim())))
        .collect()
}

fn empirical_correlation(samples: &[Vec<f64>]) -> vinevi::Mat {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n)
        .collect();
    let mut cov = vinevi::Mat::zeros(d, d);
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].sqrt()).collect();
    vinevi::Mat::from_fn(d, d, |i, j| cov[(i, j)] / (sd[i] * sd[j]))
}

pub fn fit_metrics(
    posterior: &GaussianDist,
    q: &DVineFamily,
    samples: &[Vec<f64>],
    seed: u64,
) -> CliResult<FitMetrics> {
    let (forward_kl, exact, est_corr) = match vine_gaussian(q) {
        Some(g) => (kl_gaussians(posterior, &g)?, true, g.correlation().clone()),
        None => {
            let mut rng = Rng::with_stream(seed, 0x6b6c);
            let n = samples.len().max(1000);
            let kl = (0..n)
                .map(|_| {
                    let z = posterior.sample(&mut rng);
                    posterior.log_pdf(z.as_slice()) - q.log_density(z.as_slice())
                })
                .sum::<f64>()
                / n as f64;
            (kl, false, empirical_correlation(samples))
        }
    };
    let true_stds = posterior.stds().as_slice().to_vec();
    let est_stds = q.stds().as_slice().to_vec();
    Ok(FitMetrics {
        build: BUILD_ID.to_string(),
        seed,
        forward_kl,
        forward_kl_exact: exact,
        rel_rmse_std: mean_rel_rmse_std(&true_stds, &est_stds)?,
        true_means: posterior.mean().as_slice().to_vec(),
        est_means: q.means().as_slice().to_vec(),
        true_stds,
        est_stds,
        true_correlation: rows(posterior.correlation()),
        est_correlation: rows(&est_corr),
    })
}

fn write_samples(path: &Path, samples: &[Vec<f64>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::Io {
            path: path.to_path_buf(),
            source: io,
        },
        other => CliError::Spec(format!("{other:?}")),
    })?;
    let d = samples.first().map_or(0, |s| s.len());
    w.write_record((1..=d).map(|j| format!("z{j}")))?;
    for s in samples {
        w.write_record(s.iter().map(|v| format!("{v}")))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Output of [`cmd_fit`].
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub report: FitReport,
    pub family: DVineFamily,
    pub metrics: FitMetrics,
}

/// Fits the experiment's dataset with its method and writes
/// `fit_report.json`, `family.json`, `samples.csv` and `metrics.json`.
pub fn cmd_fit(spec: &ExperimentSpec) -> CliResult<FitOutput> {
    spec.validate()?;
    let resolved = spec.resolved()?;
    let dir = output_dir(spec)?;
    let ds = load_dataset(spec)?;
    let target = ds.target.as_gaussian();
    let posterior = ds.target.conjugate_posterior();
    let start = Instant::now();
    let (family, report) = match spec.method {
        Method::StepwiseVine => {
            let r = stepwise_fit(target, &spec.stepwise_config(), None)?;
            let rep = MethodReport::StepwiseVine {
                stages: r.stages,
                stop_reason: r.stop_reason,
                stop_tree: r.stop_tree,
            };
            (r.family, rep)
        }
        Method::Mf => {
            let mut cfg = spec.stepwise_config();
            cfg.vr = VrIwaeConfig::elbo(spec.vr.n_particles);
            let r = fit_mean_field(target, &cfg)?;
            let rep = MethodReport::Mf {
                iterations: r.iterations,
                outcome: r.outcome,
                final_bound: r.final_bound,
                last_rhat: r.last_rhat,
            };
            (r.family, rep)
        }
        Method::Gcvi => {
            let r = gcvi_fit(target, &spec.gcvi_config())?;
            (r.family, MethodReport::Gcvi { blocks: r.blocks })
        }
    };
    let wall_clock_secs = start.elapsed().as_secs_f64();
    let mut rng = Rng::with_stream(spec.seed, 0x5a4d);
    let samples = draw_samples(&family, spec.n_samples, &mut rng);
    let metrics = fit_metrics(posterior, &family, &samples, spec.seed)?;
    let report = FitReport {
        build: BUILD_ID.to_string(),
        seed: spec.seed,
        spec: resolved,
        dataset: ds.spec.clone(),
        truncation: family.truncation(),
        report,
        wall_clock_secs,
    };
    write_json(&dir.join("fit_report.json"), &report)?;
    let family_path = dir.join("family.json");
    fs::write(&family_path, family.to_json() + "\n").map_err(io_err(&family_path))?;
    write_samples(&dir.join("samples.csv"), &samples)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(FitOutput {
        report,
        family,
        metrics,
    })
}

/// One (example, α) entry of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub example: usize,
    pub dataset_seed: u64,
    pub alpha: f64,
    pub seed: u64,
    pub forward_kl: f64,
    pub rel_rmse_std: f64,
    pub truncation: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepManifest {
    build: String,
    seed: u64,
    schema_version: u32,
    spec: ExperimentSpec,
    cells: Vec<SweepCell>,
    /// `delta_kl_rel[example][alpha index]`.
    delta_kl_rel: Vec<Vec<f64>>,
    degenerate: Vec<bool>,
}

fn run_cell(
    spec: &ExperimentSpec,
    ds: &Dataset,
    example: usize,
    alpha: f64,
    seed: u64,
) -> CliResult<SweepCell> {
    let sweep = spec.sweep_spec();
    let posterior = ds.target.conjugate_posterior();
    let target = ds.target.as_gaussian();
    let mut cfg: StepwiseConfig = spec.stepwise_config();
    cfg.vr = VrIwaeConfig::new(alpha, spec.vr.n_particles)?;
    cfg.seed = seed;
    let (family, iterations) = match spec.method {
        Method::StepwiseVine => {
            let oracle: Vec<Marginal> = posterior
                .mean()
                .iter()
                .zip(posterior.stds().iter())
                .map(|(&m, &s)| Marginal::new(m, s))
                .collect();
            let fixed = sweep.oracle_marginals.then_some(oracle.as_slice());
            let r = stepwise_fit(target, &cfg, fixed)?;
            (r.family, r.stages.iter().map(|s| s.iterations).sum())
        }
        Method::Mf => {
            let r = fit_mean_field(target, &cfg)?;
            (r.family, r.iterations)
        }
        Method::Gcvi => {
            return Err(CliError::Spec(
                "alpha sweeps support stepwise-vine and mf".into(),
            ))
        }
    };
    let g =
        vine_gaussian(&family).ok_or_else(|| CliError::Spec("sweep fit is not Gaussian".into()))?;
    Ok(SweepCell {
        example,
        dataset_seed: ds.spec.seed,
        alpha,
        seed,
        forward_kl: kl_gaussians(posterior, &g)?,
        rel_rmse_std: mean_rel_rmse_std(posterior.stds().as_slice(), family.stds().as_slice())?,
        truncation: family.truncation(),
        iterations,
    })
}

fn fmt_table(alphas: &[f64], columns: &[Vec<f64>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("alpha".to_string())
        .chain((1..=columns.len()).map(|e| format!("example_{e}")))
        .collect();
    w.write_record(&header)?;
    for (i, a) in alphas.iter().enumerate() {
        let row: Vec<String> = std::iter::once(format!("{a}"))
            .chain(columns.iter().map(|c| format!("{:.4}", c[i])))
            .collect();
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Spec(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Spec(e.to_string()))
}

/// Runs every (example, α) cell in parallel and writes one JSON per cell
/// under `cells/`, then `sweep_cells.csv`, `forward_kl.csv`,
/// `delta_kl_rel.csv`, `rel_rmse_std.csv` and `sweep.json`.
pub fn cmd_alpha_sweep(spec: &ExperimentSpec) -> CliResult<Vec<SweepCell>> {
    spec.validate()?;
    let resolved = spec.resolved()?;
    let sweep = spec.sweep_spec();
    let dir = output_dir(spec)?;
    let cell_dir = dir.join("cells");
    fs::create_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;
    let datasets: Vec<Dataset> = sweep
        .dataset_seeds
        .iter()
        .map(|&s| generate_dataset(&sweep_dataset(&sweep, s)))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..datasets.len())
        .flat_map(|e| (0..sweep.alphas.len()).map(move |a| (e, a)))
        .collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(e, a)| {
            let seed = derive_seed(spec.seed, (e * sweep.alphas.len() + a) as u64);
            let cell = run_cell(spec, &datasets[e], e + 1, sweep.alphas[a], seed)?;
            write_json(
                &cell_dir.join(format!("example{}_alpha{}.json", e + 1, sweep.alphas[a])),
                &cell,
            )?;
            Ok(cell)
        })
        .collect::<CliResult<_>>()?;

    let n_alpha = sweep.alphas.len();
    let column = |e: usize, f: fn(&SweepCell) -> f64| -> Vec<f64> {
        (0..n_alpha).map(|a| f(&cells[e * n_alpha + a])).collect()
    };
    let kl: Vec<Vec<f64>> = (0..datasets.len())
        .map(|e| column(e, |c| c.forward_kl))
        .collect();
    let rmse: Vec<Vec<f64>> = (0..datasets.len())
        .map(|e| column(e, |c| c.rel_rmse_std))
        .collect();
    let mut delta = Vec::with_capacity(kl.len());
    let mut degenerate = Vec::with_capacity(kl.len());
    for col in &kl {
        let pairs: Vec<(f64, f64)> = sweep
            .alphas
            .iter()
            .copied()
            .zip(col.iter().copied())
            .collect();
        let d = delta_kl_rel(&pairs)?;
        delta.push(d.values.iter().map(|&(_, v)| v).collect());
        degenerate.push(d.degenerate);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "example",
        "dataset_seed",
        "alpha",
        "seed",
        "forward_kl",
        "rel_rmse_std",
        "truncation",
        "iterations",
    ])?;
    for c in &cells {
        w.write_record([
            c.example.to_string(),
            c.dataset_seed.to_string(),
            c.alpha.to_string(),
            c.seed.to_string(),
            format!("{}", c.forward_kl),
            format!("{}", c.rel_rmse_std),
            c.truncation.to_string(),
            c.iterations.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Spec(e.to_string()))?;
    let cells_path = dir.join("sweep_cells.csv");
    fs::write(&cells_path, bytes).map_err(io_err(&cells_path))?;
    for (name, table) in [
        ("forward_kl.csv", &kl),
        ("delta_kl_rel.csv", &delta),
        ("rel_rmse_std.csv", &rmse),
    ] {
        let path = dir.join(name);
        fs::write(&path, fmt_table(&sweep.alphas, table)?).map_err(io_err(&path))?;
    }
    let manifest = SweepManifest {
        build: BUILD_ID.to_string(),
        seed: spec.seed,
        schema_version: OUTPUT_SCHEMA_VERSION,
        spec: resolved,
        cells: cells.clone(),
        delta_kl_rel: delta,
        degenerate,
    };
    write_json(&dir.join("sweep.json"), &manifest)?;
    Ok(cells)
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub manifest: VerificationManifest,
    pub path: Option<PathBuf>,
}

#[derive(Serialize)]
struct VerifyFile<'a> {
    build: &'a str,
    #[serde(flatten)]
    manifest: &'a VerificationManifest,
}

/// Runs the verification harness; writes `verification.json` when an
/// output directory is configured.
pub fn cmd_verify(spec: &ExperimentSpec) -> CliResult<VerifyOutcome> {
    if spec.kind != ExperimentKind::VerifyTheorems {
        return Err(CliError::Spec(format!(
            "verify expects kind verify-theorems, got {:?}",
            spec.kind
        )));
    }
    let manifest = run_verification(VerifyOptions {
        quick: spec.quick,
        seed: spec.seed,
    });
    let path = match &spec.output_dir {
        Some(_) => {
            let p = output_dir(spec)?.join("verification.json");
            write_json(
                &p,
                &VerifyFile {
                    build: BUILD_ID,
                    manifest: &manifest,
                },
            )?;
            Some(p)
        }
        None => None,
    };
    Ok(VerifyOutcome { manifest, path })
}
