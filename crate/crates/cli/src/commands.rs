//! Subcommand implementations. Each command is a pure function of the
//! configuration, its input files and the seed; outputs are written by a
//! single writer after all parallel work has finished.

use std::path::{Path, PathBuf};

use beran_core::bandwidth::{select_bandwidth as cv_select, soft_pair_weights, useful_pairs, BandwidthSelection, EstimatorKind};
use beran_core::evaluation::{
    equidistant_grid, gamma_hat_exponential, run_study, summarize, variance_diagnostic, IndicatorChoice, Regime, StudyResult, Variant,
    VarianceDiagnostic,
};
use beran_core::estimator::lemma1_gap;
use beran_core::probability::{cross_entropy, fit_classifier, prior_indicators, ClassifierKind, ProbabilityModel, TrainingConfig};
use beran_core::synthetic::{substream, ExponentialModel, ModelChoice, Stream, SurvivalModel};
use beran_core::{beran_fit, gbe_fit, Bandwidth, Dataset, Error as CoreError, ObservedSample, SurvivalCurve};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSchema, RunConfig};
use crate::error::{io_err, CliError, Result};
use crate::io::{fmt_num, load_csv, write_sample, write_table, write_text, CovariateScaler, LoadedData};
use crate::svg::{line_chart, Series};

/// Runs `f` on a dedicated pool with `threads` workers, or on the global
/// pool when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn data_path(cfg: &RunConfig, data: Option<&Path>) -> Result<PathBuf> {
    data.map(Path::to_path_buf)
        .or_else(|| cfg.data.path.clone())
        .ok_or_else(|| CliError::Usage("no input file: pass --data or set data.path".into()))
}

fn load(cfg: &RunConfig, data: Option<&Path>) -> Result<LoadedData> {
    let path = data_path(cfg, data)?;
    let loaded = load_csv(&path, &cfg.data)?;
    log::info!("{}: loaded {} rows, dropped {}", path.display(), loaded.report.loaded, loaded.report.dropped);
    Ok(loaded)
}

fn time_range(data: &Dataset) -> (f64, f64) {
    data.times().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)))
}

fn subset(data: &Dataset, idx: &[usize]) -> Result<Dataset> {
    Ok(Dataset::new(idx.iter().map(|&i| data.samples()[i].clone()).collect::<Vec<ObservedSample>>())?)
}

/// Simulated samples, one CSV per replication, plus the manifest that
/// reproduces them.
pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let model = cfg.model.as_model();
    let sim = cfg.simulation_config();
    sim.validate(model.dim())?;
    let samples: Vec<_> = (0..sim.replications as u64)
        .into_par_iter()
        .map(|k| model.sample(sim.n, &mut substream(sim.seed, k, Stream::Sample)))
        .collect();
    let mut written = Vec::with_capacity(samples.len() + 1);
    for (k, s) in samples.iter().enumerate() {
        let path = cfg.out_dir.join("samples").join(format!("sample_{k:04}.csv"));
        write_sample(&path, s)?;
        written.push(path);
    }
    // The thread count does not affect results and is left out of the manifest.
    let manifest = cfg.out_dir.join("manifest.toml");
    write_text(&manifest, &RunConfig { threads: None, ..cfg.clone() }.to_toml()?)?;
    written.push(manifest);
    Ok(written)
}

/// Saved probability model together with the covariate scaling it was trained under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub covariate_scaler: CovariateScaler,
    pub training: TrainingConfig,
    pub model: ProbabilityModel,
}

impl SavedModel {
    /// Probability at raw covariates.
    pub fn predict(&self, t: f64, raw_x: &[f64]) -> Result<f64> {
        Ok(self.model.predict(t, &self.covariate_scaler.transform(raw_x))?)
    }

    pub fn to_json(&self) -> Result<String> {
        if let ProbabilityModel::Oracle(_) = self.model {
            return Err(CoreError::Serialization("oracle models cannot be serialized".into()).into());
        }
        serde_json::to_string_pretty(self).map_err(|e| CoreError::Serialization(e.to_string()).into())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CoreError::Serialization(e.to_string()).into())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub path: PathBuf,
    pub validation_cross_entropy: Option<f64>,
    pub single_class: bool,
}

pub fn train_classifier(cfg: &RunConfig, data: Option<&Path>, kind: Option<ClassifierKind>) -> Result<TrainReport> {
    let loaded = load(cfg, data)?;
    let kind = kind.unwrap_or(cfg.train.classifier);
    let training = cfg.training_config();
    let n = loaded.dataset.len();
    let frac = cfg.train.validation_fraction;
    if !(0.0..1.0).contains(&frac) {
        return Err(CliError::Config("validation_fraction must lie in [0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(cfg.seed, 0, Stream::Split));
    let n_val = (frac * n as f64).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let train = subset(&loaded.dataset, &train_idx)?;
    let model = fit_classifier(kind, &train, &training, cfg.train.nw_bandwidth)?;
    let single_class = matches!(model, ProbabilityModel::Constant { single_class: true, .. });
    if single_class {
        log::warn!("only one class present; saved a constant model");
    }
    let validation_cross_entropy = if n_val > 0 {
        let mut idx = val_idx.to_vec();
        idx.sort_unstable();
        let val = subset(&loaded.dataset, &idx)?;
        Some(cross_entropy(&model.predict_dataset(&val)?, &val.indicator_values()))
    } else {
        None
    };
    let saved = SavedModel { covariate_scaler: loaded.scaler, training, model };
    let path = cfg.out_dir.join("model.json");
    write_text(&path, &saved.to_json()?)?;
    Ok(TrainReport { path, validation_cross_entropy, single_class })
}

/// Replaces indicators by model predictions when a model file is configured.
fn apply_model(loaded: &LoadedData, model: Option<&Path>) -> Result<Dataset> {
    let Some(path) = model else {
        return Ok(loaded.dataset.clone());
    };
    let saved = SavedModel::load(path)?;
    let probs = loaded
        .dataset
        .samples()
        .iter()
        .zip(&loaded.raw_covariates)
        .map(|(s, raw)| saved.predict(s.t, raw))
        .collect::<Result<Vec<f64>>>()?;
    Ok(loaded.dataset.with_soft_indicators(&probs)?)
}

fn select_for(data: &Dataset, cfg: &RunConfig) -> Result<(EstimatorKind, BandwidthSelection)> {
    let (kind, weights) = if data.is_hard() {
        (EstimatorKind::Beran, useful_pairs(data)?)
    } else {
        (EstimatorKind::Gbe, soft_pair_weights(data, &data.indicator_values())?)
    };
    Ok((kind, cv_select(data, &cfg.smoothing.bandwidth_grid, kind, &weights, &cfg.smoothing.kernel)?))
}

/// Cross-validated bandwidth for the configured data; writes every grid score.
pub fn select_bandwidth(cfg: &RunConfig, data: Option<&Path>) -> Result<BandwidthSelection> {
    let loaded = load(cfg, data)?;
    let dataset = apply_model(&loaded, cfg.fit.model.as_deref())?;
    let (_, sel) = select_for(&dataset, cfg)?;
    let rows = cfg.smoothing.bandwidth_grid.values().iter().zip(&sel.scores).map(|(&h, &s)| vec![fmt_num(h), fmt_num(s)]);
    write_table(&cfg.out_dir.join("bandwidth_scores.csv"), &["h", "score"], rows)?;
    Ok(sel)
}

/// Estimated conditional distribution functions at the configured points.
pub fn fit(cfg: &RunConfig, data: Option<&Path>) -> Result<Vec<PathBuf>> {
    let loaded = load(cfg, data)?;
    let dataset = apply_model(&loaded, cfg.fit.model.as_deref())?;
    let h = match cfg.fit.bandwidth {
        Some(h) => Bandwidth::new(h)?,
        None => select_for(&dataset, cfg)?.1.h_best,
    };
    let dim = dataset.dim();
    let kernel = &cfg.smoothing.kernel;
    let mut curves = Vec::new();
    for x in &cfg.fit.x {
        if x.len() != dim {
            return Err(CoreError::DimensionMismatch { expected: dim, got: x.len() }.into());
        }
        let z = loaded.scaler.transform(x);
        curves.push(if dataset.is_hard() { beran_fit(&dataset, &z, h, kernel)? } else { gbe_fit(&dataset, &z, h, kernel)? });
    }
    let (lo, hi) = time_range(&dataset);
    let grid = equidistant_grid(lo, hi, cfg.fit.grid_size)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=curves.len()).map(|j| format!("F_x{j}")));
    let rows = grid.iter().map(|&t| std::iter::once(fmt_num(t)).chain(curves.iter().map(|c| fmt_num(c.eval(t)))).collect());
    let curve_path = cfg.out_dir.join("fit_curves.csv");
    write_table(&curve_path, &header, rows)?;

    let mut pheader = vec!["point".to_string(), "bandwidth".to_string()];
    pheader.extend(loaded.scaler.columns.iter().cloned());
    let prow = cfg.fit.x.iter().enumerate().map(|(j, x)| {
        let mut r = vec![format!("x{}", j + 1), fmt_num(h.value())];
        r.extend(x.iter().map(|&v| fmt_num(v)));
        r
    });
    let points_path = cfg.out_dir.join("fit_points.csv");
    write_table(&points_path, &pheader, prow)?;
    Ok(vec![curve_path, points_path])
}

pub fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Observed => "observed",
        Regime::Missing => "missing",
    }
}

/// Runs every configured regime and writes per-replication results, a
/// summary table and MSE curves.
pub fn study(cfg: &RunConfig) -> Result<(Vec<StudyResult>, Vec<PathBuf>)> {
    let model = cfg.model.as_model();
    let sim = cfg.simulation_config();
    let mut results = Vec::new();
    for &regime in &cfg.study.regimes {
        results.push(run_study(model, &sim, &cfg.study_config(regime))?);
    }
    let paths = write_study(cfg, &results)?;
    Ok((results, paths))
}

fn write_study(cfg: &RunConfig, results: &[StudyResult]) -> Result<Vec<PathBuf>> {
    let out = &cfg.out_dir;
    let mut paths = Vec::new();

    let mut rows = Vec::new();
    for r in results {
        for (vi, v) in r.variants.iter().enumerate() {
            for k in 0..r.mise[vi].len() {
                rows.push(vec![
                    regime_name(r.regime).to_string(),
                    k.to_string(),
                    v.name().to_string(),
                    r.mise[vi][k].map_or_else(String::new, fmt_num),
                    r.bandwidths[vi][k].map_or_else(String::new, fmt_num),
                    r.errors[vi][k].clone().unwrap_or_default(),
                ]);
            }
        }
    }
    let p = out.join("study_replications.csv");
    write_table(&p, &["regime", "replication", "variant", "mise", "bandwidth", "error"], rows)?;
    paths.push(p);

    let mut rows = Vec::new();
    for r in results {
        for s in summarize(r, cfg.study.baseline, cfg.study.welch) {
            rows.push(vec![
                regime_name(r.regime).to_string(),
                s.variant.name().to_string(),
                fmt_num(s.mean_mise),
                fmt_num(s.sd_mise),
                s.successes.to_string(),
                s.failures.to_string(),
                s.test.map_or_else(String::new, |t| fmt_num(t.t)),
                s.test.map_or_else(String::new, |t| fmt_num(t.p_value)),
                s.significant.to_string(),
                fmt_num(s.win_fraction),
            ]);
        }
    }
    let p = out.join("study_summary.csv");
    let header = ["regime", "variant", "mean_mise", "sd_mise", "successes", "failures", "t_statistic", "p_value", "significant", "win_fraction"];
    write_table(&p, &header, rows)?;
    paths.push(p);

    for r in results {
        for (j, x) in r.simulation.x_test.iter().enumerate() {
            let stem = format!("mse_{}_x{}", regime_name(r.regime), j + 1);
            let mut header = vec!["t".to_string()];
            header.extend(r.variants.iter().map(|v| v.name().to_string()));
            let rows = r.study_grid.iter().enumerate().map(|(l, &t)| {
                std::iter::once(fmt_num(t)).chain(r.mse_curves.iter().map(|c| fmt_num(c[j].mse[l]))).collect()
            });
            let p = out.join(format!("{stem}.csv"));
            write_table(&p, &header, rows)?;
            paths.push(p);
            if cfg.study.plots {
                let series: Vec<Series> = r
                    .variants
                    .iter()
                    .zip(&r.mse_curves)
                    .map(|(v, c)| Series { name: v.name().into(), points: r.study_grid.iter().copied().zip(c[j].mse.iter().copied()).collect() })
                    .collect();
                let coords: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
                let title = format!("MSE, {} indicators, x = ({})", regime_name(r.regime), coords.join(", "));
                let p = out.join(format!("{stem}.svg"));
                write_text(&p, &line_chart(&title, "t", "MSE", &series))?;
                paths.push(p);
            }
        }
    }
    Ok(paths)
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Per-covariate first, second and third quartiles.
pub fn quartile_points(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = raw.first().map_or(0, Vec::len);
    let sorted: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            let mut c: Vec<f64> = raw.iter().map(|r| r[k]).collect();
            c.sort_by(f64::total_cmp);
            c
        })
        .collect();
    [0.25, 0.5, 0.75].iter().map(|&q| sorted.iter().map(|c| quantile(c, q)).collect()).collect()
}

/// Bandwidth and per-point survival values of one variant on one split.
type VariantFit = (f64, Vec<Option<Vec<f64>>>);

struct SplitOutcome {
    /// `curves[v][j]`: survival on the grid, `None` on failure.
    curves: Vec<Vec<Option<Vec<f64>>>>,
    bandwidths: Vec<Option<f64>>,
    errors: Vec<Option<String>>,
}

fn run_split(cfg: &RunConfig, data: &Dataset, points: &[Vec<f64>], grid: &[f64], s: u64) -> SplitOutcome {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(cfg.seed, s, Stream::Split));
    let n_train = ((cfg.real_data.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (mut tr, mut te) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    tr.sort_unstable();
    te.sort_unstable();
    let training = TrainingConfig { seed: substream(cfg.seed, s, Stream::Classifier).next_u64(), ..cfg.training.clone() };
    let kernel = &cfg.smoothing.kernel;

    let mut out = SplitOutcome { curves: vec![], bandwidths: vec![], errors: vec![] };
    for &v in &cfg.real_data.variants {
        let attempt = (|| -> std::result::Result<VariantFit, CoreError> {
            let train = subset(data, &tr).map_err(|e| match e {
                CliError::Core(c) => c,
                other => CoreError::InvalidParameter(other.to_string()),
            })?;
            let test = Dataset::new(te.iter().map(|&i| data.samples()[i].clone()).collect())?;
            let (fitted, kind, weights) = match v {
                Variant::Beran => (test.clone(), EstimatorKind::Beran, useful_pairs(&test)?),
                Variant::GbeDelta => {
                    let d = test.with_soft_indicators(&test.indicator_values())?;
                    let w = useful_pairs(&test)?;
                    (d, EstimatorKind::Gbe, w)
                }
                _ => {
                    let kind = v.classifier().ok_or_else(|| CoreError::InvalidParameter(format!("{v} needs a known censoring probability")))?;
                    let model = fit_classifier(kind, &train, &training, cfg.real_data.nw_bandwidth)?;
                    let probs = model.predict_dataset(&test)?;
                    let w = soft_pair_weights(&test, &probs)?;
                    (test.with_soft_indicators(&probs)?, EstimatorKind::Gbe, w)
                }
            };
            let h = cv_select(&fitted, &cfg.smoothing.bandwidth_grid, kind, &weights, kernel)?.h_best;
            let curves = points
                .iter()
                .map(|z| {
                    let c: std::result::Result<SurvivalCurve, CoreError> = match kind {
                        EstimatorKind::Beran => beran_fit(&fitted, z, h, kernel),
                        EstimatorKind::Gbe => gbe_fit(&fitted, z, h, kernel),
                    };
                    c.ok().map(|c| grid.iter().map(|&t| c.survival(t)).collect())
                })
                .collect();
            Ok((h.value(), curves))
        })();
        match attempt {
            Ok((h, c)) => {
                out.bandwidths.push(Some(h));
                out.errors.push(None);
                out.curves.push(c);
            }
            Err(e) => {
                out.bandwidths.push(None);
                out.errors.push(Some(e.to_string()));
                out.curves.push(vec![None; points.len()]);
            }
        }
    }
    out
}

/// Random train/test splits of a clinical dataset. Classifiers are trained
/// on the training half; every estimator is fitted on the test half.
pub fn real_data(cfg: &RunConfig, data: Option<&Path>) -> Result<Vec<PathBuf>> {
    let loaded = load(cfg, data)?;
    let dataset = &loaded.dataset;
    if !dataset.is_hard() {
        return Err(CliError::Usage("real-data analysis needs an event column".into()));
    }
    if dataset.len() < 8 {
        return Err(CliError::Usage("real-data analysis needs at least 8 complete rows".into()));
    }
    let rd = &cfg.real_data;
    if rd.splits == 0 || !(rd.train_fraction > 0.0 && rd.train_fraction < 1.0) {
        return Err(CliError::Config("need splits >= 1 and 0 < train_fraction < 1".into()));
    }
    let raw_points = rd.test_points.clone().unwrap_or_else(|| quartile_points(&loaded.raw_covariates));
    for p in &raw_points {
        if p.len() != dataset.dim() {
            return Err(CoreError::DimensionMismatch { expected: dataset.dim(), got: p.len() }.into());
        }
    }
    let points: Vec<Vec<f64>> = raw_points.iter().map(|p| loaded.scaler.transform(p)).collect();
    let (lo, hi) = time_range(dataset);
    let grid = equidistant_grid(lo, hi, rd.grid_size)?;
    let splits: Vec<SplitOutcome> = (0..rd.splits as u64).into_par_iter().map(|s| run_split(cfg, dataset, &points, &grid, s)).collect();

    let out = &cfg.out_dir;
    let mut paths = Vec::new();
    let mut rows = Vec::new();
    for (s, o) in splits.iter().enumerate() {
        for (vi, v) in rd.variants.iter().enumerate() {
            let failed_points = o.curves[vi].iter().filter(|c| c.is_none()).count();
            rows.push(vec![
                s.to_string(),
                v.name().to_string(),
                o.bandwidths[vi].map_or_else(String::new, fmt_num),
                failed_points.to_string(),
                o.errors[vi].clone().unwrap_or_default(),
            ]);
        }
    }
    let p = out.join("real_data_splits.csv");
    write_table(&p, &["split", "variant", "bandwidth", "failed_points", "error"], rows)?;
    paths.push(p);

    let mut header = vec!["point".to_string()];
    header.extend(loaded.scaler.columns.iter().cloned());
    let rows = raw_points.iter().enumerate().map(|(j, x)| std::iter::once(format!("x{}", j + 1)).chain(x.iter().map(|&v| fmt_num(v))).collect());
    let p = out.join("real_data_points.csv");
    write_table(&p, &header, rows)?;
    paths.push(p);

    for (j, x) in raw_points.iter().enumerate() {
        let mut means = Vec::new();
        for vi in 0..rd.variants.len() {
            let ok: Vec<&Vec<f64>> = splits.iter().filter_map(|o| o.curves[vi][j].as_ref()).collect();
            means.push(
                (0..grid.len())
                    .map(|l| if ok.is_empty() { f64::NAN } else { ok.iter().map(|c| c[l]).sum::<f64>() / ok.len() as f64 })
                    .collect::<Vec<f64>>(),
            );
        }
        let mut header = vec!["t".to_string()];
        header.extend(rd.variants.iter().map(|v| v.name().to_string()));
        let rows = grid.iter().enumerate().map(|(l, &t)| std::iter::once(fmt_num(t)).chain(means.iter().map(|m| fmt_num(m[l]))).collect());
        let p = out.join(format!("real_data_x{}.csv", j + 1));
        write_table(&p, &header, rows)?;
        paths.push(p);
        let series: Vec<Series> = rd
            .variants
            .iter()
            .zip(&means)
            .map(|(v, m)| Series { name: v.name().into(), points: grid.iter().copied().zip(m.iter().copied()).collect() })
            .collect();
        let coords: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        let p = out.join(format!("real_data_x{}.svg", j + 1));
        write_text(&p, &line_chart(&format!("Mean survival, x = ({})", coords.join(", ")), "t", "S(t|x)", &series))?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Summary {
    pub checked: usize,
    pub skipped: usize,
    pub violations: usize,
}

/// Checks the exponential-approximation bound on random soft-indicator samples
/// from the configured exponential model.
pub fn lemma1(cfg: &RunConfig) -> Result<Lemma1Summary> {
    let params = exponential_params(cfg)?;
    let l = &cfg.diagnostics.lemma1;
    if l.n_values.is_empty() {
        return Err(CliError::Config("lemma1.n_values is empty".into()));
    }
    let kernel = cfg.smoothing.kernel;
    let grid = cfg.smoothing.bandwidth_grid.values().to_vec();
    let rows: Vec<Option<Vec<String>>> = (0..l.datasets as u64)
        .into_par_iter()
        .map(|d| {
            let n = l.n_values[d as usize % l.n_values.len()];
            let s = params.sample(n, &mut substream(cfg.seed, d, Stream::Sample));
            let q: Vec<f64> = s.x.iter().map(|x| params.event_probability(x[0])).collect();
            let mut rng = substream(cfg.seed, d, Stream::PriorNoise);
            let probs = prior_indicators(&s.delta, &q, 0.01, &mut rng);
            let data = Dataset::from_soft(&s.t, &s.x, &probs).ok()?;
            let x = rng.random_range(0.2..0.8);
            let h = Bandwidth::new(grid[rng.random_range(0..grid.len())]).ok()?;
            let mut sorted = s.t.clone();
            sorted.sort_by(f64::total_cmp);
            let tau1 = quantile(&sorted, rng.random_range(0.3..0.9));
            let g = lemma1_gap(&data, &[x], h, &kernel, tau1).ok()?;
            Some(vec![
                d.to_string(),
                n.to_string(),
                fmt_num(x),
                fmt_num(h.value()),
                fmt_num(tau1),
                fmt_num(g.gap),
                fmt_num(g.bound),
                g.holds().to_string(),
            ])
        })
        .collect();
    let checked = rows.iter().flatten().count();
    let violations = rows.iter().flatten().filter(|r| r[7] == "false").count();
    write_table(
        &cfg.out_dir.join("lemma1.csv"),
        &["dataset", "n", "x", "h", "tau1", "gap", "bound", "holds"],
        rows.into_iter().flatten(),
    )?;
    Ok(Lemma1Summary { checked, skipped: l.datasets - checked, violations })
}

fn exponential_params(cfg: &RunConfig) -> Result<ExponentialModel> {
    match cfg.model {
        ModelChoice::Exponential(m) => {
            m.validate()?;
            Ok(m)
        }
        ModelChoice::Multidim(_) => Err(CliError::Usage("this diagnostic needs the exponential model".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub t: f64,
    pub diagnostic: VarianceDiagnostic,
    /// `(t, Γ with oracle P, Γ with P = δ)` on the comparison grid.
    pub minimality: Vec<(f64, f64, f64)>,
}

/// Monte-Carlo variance against the asymptotic formula, and the oracle versus
/// hard-indicator variance on a grid of times.
pub fn variance(cfg: &RunConfig) -> Result<VarianceReport> {
    let params = exponential_params(cfg)?;
    let v = &cfg.diagnostics.variance;
    let kernel = cfg.smoothing.kernel;
    let t = v.t.unwrap_or(params.survival_mean(v.x) * std::f64::consts::LN_2);
    let diagnostic = variance_diagnostic(&params, v.x, t, v.n, Bandwidth::new(v.bandwidth)?, v.replications, cfg.seed, &kernel)?;
    // Grid up to the 90% quantile of T given x.
    let t_max = -(0.1f64).ln() / params.observed_rate(v.x);
    let minimality = (1..=v.grid_points)
        .map(|l| {
            let s = t_max * l as f64 / v.grid_points as f64;
            Ok((
                s,
                gamma_hat_exponential(&params, v.x, s, IndicatorChoice::Oracle, &kernel)?,
                gamma_hat_exponential(&params, v.x, s, IndicatorChoice::Hard, &kernel)?,
            ))
        })
        .collect::<std::result::Result<Vec<_>, CoreError>>()?;
    write_table(
        &cfg.out_dir.join("variance.csv"),
        &["x", "t", "n", "bandwidth", "replications", "empirical", "theoretical", "ratio", "mean_scaled_error"],
        [vec![
            fmt_num(v.x),
            fmt_num(t),
            v.n.to_string(),
            fmt_num(v.bandwidth),
            v.replications.to_string(),
            fmt_num(diagnostic.empirical),
            fmt_num(diagnostic.theoretical),
            fmt_num(diagnostic.ratio()),
            fmt_num(diagnostic.mean_scaled_error),
        ]],
    )?;
    write_table(
        &cfg.out_dir.join("variance_minimality.csv"),
        &["t", "gamma_oracle", "gamma_hard", "oracle_not_larger"],
        minimality.iter().map(|&(s, o, h)| vec![fmt_num(s), fmt_num(o), fmt_num(h), (o <= h).to_string()]),
    )?;
    Ok(VarianceReport { t, diagnostic, minimality })
}

/// Default configuration for a real-data run on the mgus2 columns.
pub fn mgus2_config() -> RunConfig {
    RunConfig { data: DatasetSchema::mgus2(), ..RunConfig::default() }
}
