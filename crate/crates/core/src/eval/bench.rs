//! Benchmark and sensitivity runners and their reports.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{rmse, split, test_loglik, EvalConfig, Split, SplitConfig};
use crate::baselines::{tune_dmax, BaselineKind, BaselineModel, FeatureConfig, FeatureMode};
use crate::error::Result;
use crate::geodata::Dataset;
use crate::gpmodel::{ChargerKind, ModelSpec};
use crate::kernels::KernelFamily;

pub const POI_MODEL_LABEL: &str = "POI model (ours)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    /// Feature mode for baselines; charger/kernel for sensitivity cells.
    pub mode: String,
    pub rmse: Option<f64>,
    pub loglik: Option<f64>,
    /// Best achievable log-likelihood gain from rescaling all predictive
    /// variances by one common factor.
    pub calibration_gap: Option<f64>,
    pub variance_model: String,
    /// Density radii used, when tuned.
    pub dmax: Vec<f64>,
    pub error: Option<String>,
    /// Wall-clock seconds; not part of the deterministic report bytes.
    #[serde(skip)]
    pub train_seconds: f64,
}

impl ReportRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub title: String,
    pub rows: Vec<ReportRow>,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub config_hash: String,
}

/// `max_c loglik(var * c) - loglik(var)`, with the optimal factor
/// `c = mean(r² / var)`.
pub fn calibration_gap(mean: &[f64], var: &[f64], actual: &[f64]) -> Result<f64> {
    let base = test_loglik(mean, var, actual)?;
    let c = mean
        .iter()
        .zip(var)
        .zip(actual)
        .map(|((m, v), y)| (y - m).powi(2) / v)
        .sum::<f64>()
        / actual.len() as f64;
    let scaled: Vec<f64> = var.iter().map(|v| v * c.max(1e-300)).collect();
    Ok(test_loglik(mean, &scaled, actual)? - base)
}

fn scored(label: String, mode: String, variance_model: &str, dmax: Vec<f64>, started: Instant, out: Result<(Vec<f64>, Vec<f64>)>, actual: &[f64]) -> ReportRow {
    let mut row = ReportRow {
        label,
        mode,
        rmse: None,
        loglik: None,
        calibration_gap: None,
        variance_model: variance_model.into(),
        dmax,
        error: None,
        train_seconds: 0.0,
    };
    let res = out.and_then(|(m, v)| Ok((rmse(&m, actual)?, test_loglik(&m, &v, actual)?, calibration_gap(&m, &v, actual)?)));
    row.train_seconds = started.elapsed().as_secs_f64();
    match res {
        Ok((r, l, g)) => {
            row.rmse = Some(r);
            row.loglik = Some(l);
            row.calibration_gap = Some(g);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Fits and scores one baseline row, tuning radii first when density
/// features are in play.
pub fn baseline_row(sp: &Split, kind: BaselineKind, mode: FeatureMode, config: &EvalConfig) -> ReportRow {
    let started = Instant::now();
    let actual = sp.test.standardized_target();
    let mut dmax = Vec::new();
    let out = (|| {
        let radii = tune_dmax(&sp.train, kind, mode, &config.dmax_grid, &config.baselines, config.split.seed)?;
        if mode.density() {
            dmax = radii.clone();
        }
        let features = FeatureConfig { mode, dmax: radii, grid: config.dmax_grid.clone() };
        BaselineModel::fit(&sp.train, kind, features, &config.baselines)?.predict(&sp.test)
    })();
    scored(format!("{} [{}]", kind.label(), mode.name()), mode.name().into(), kind.variance_model(), dmax, started, out, &actual)
}

pub fn poi_row(sp: &Split, spec: &ModelSpec, label: String, mode: String) -> ReportRow {
    let started = Instant::now();
    let actual = sp.test.standardized_target();
    let out = crate::svi::train(spec, &sp.train).and_then(|m| {
        let p = m.predict(&sp.test.stations)?;
        Ok((p.mean, p.variance))
    });
    scored(label, mode, "variational predictive variance plus noise", Vec::new(), started, out, &actual)
}

/// The eight baseline rows followed by the POI model, all on one split.
pub fn run_benchmark(dataset: &Dataset, config: &EvalConfig) -> Result<EvalReport> {
    let sp = split(dataset, &config.split)?;
    let mut rows = Vec::with_capacity(9);
    for kind in BaselineKind::ALL {
        for mode in [FeatureMode::None, FeatureMode::Both] {
            let row = baseline_row(&sp, kind, mode, config);
            log::info!("{}: {:?}", row.label, row.rmse);
            rows.push(row);
        }
    }
    rows.push(poi_row(&sp, &config.model, POI_MODEL_LABEL.into(), "poi".into()));
    Ok(report("Out-of-sample performance", rows, &sp, &config.split, config))
}

/// Charger × kernel variants in table order.
pub fn sensitivity_specs(base: &ModelSpec) -> Vec<(String, ModelSpec)> {
    let mut out = Vec::new();
    for kernel in [KernelFamily::Relu, KernelFamily::Gaussian] {
        for charger in [ChargerKind::NeuralNet, ChargerKind::Linear] {
            let spec = ModelSpec { charger_kind: charger, kernel_family: kernel, ..base.clone() };
            let g = match charger {
                ChargerKind::NeuralNet => "Neural network",
                ChargerKind::Linear => "Linear",
            };
            let k = match kernel {
                KernelFamily::Relu => "ReLU",
                KernelFamily::Gaussian => "Gaussian",
            };
            out.push((format!("{g} / {k}"), spec));
        }
    }
    out
}

pub fn sensitivity(dataset: &Dataset, config: &EvalConfig) -> Result<EvalReport> {
    let sp = split(dataset, &config.split)?;
    let rows = sensitivity_specs(&config.model)
        .into_iter()
        .map(|(label, spec)| {
            let mode = format!("{}+{}", spec.charger_kind.name(), spec.kernel_family.name());
            poi_row(&sp, &spec, label, mode)
        })
        .collect();
    Ok(report("Sensitivity analysis", rows, &sp, &config.split, config))
}

fn report(title: &str, rows: Vec<ReportRow>, sp: &Split, split: &SplitConfig, config: &EvalConfig) -> EvalReport {
    EvalReport {
        title: title.into(),
        rows,
        split_seed: split.seed,
        split_ratio: split.ratio,
        n_train: sp.train.n_stations(),
        n_test: sp.test.n_stations(),
        config_hash: config.hash(),
    }
}

/// Mean and sample sd of RMSE and log-likelihood per row label over
/// `config.repeats` consecutive split seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedRow {
    pub label: String,
    pub runs: usize,
    pub failures: usize,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub loglik_mean: f64,
    pub loglik_sd: f64,
}

pub fn repeated_benchmark(dataset: &Dataset, config: &EvalConfig) -> Result<Vec<RepeatedRow>> {
    let mut reports = Vec::with_capacity(config.repeats);
    for r in 0..config.repeats as u64 {
        let mut c = config.clone();
        c.split.seed = config.split.seed + r;
        reports.push(run_benchmark(dataset, &c)?);
    }
    let labels: Vec<String> = reports.first().map(|r| r.rows.iter().map(|x| x.label.clone()).collect()).unwrap_or_default();
    let stats = |v: &[f64]| -> (f64, f64) {
        let n = v.len() as f64;
        if v.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let m = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        (m, sd)
    };
    Ok(labels
        .into_iter()
        .map(|label| {
            let rows: Vec<&ReportRow> = reports.iter().filter_map(|r| r.rows.iter().find(|x| x.label == label)).collect();
            let good: Vec<&&ReportRow> = rows.iter().filter(|r| r.ok()).collect();
            let (rm, rs) = stats(&good.iter().filter_map(|r| r.rmse).collect::<Vec<_>>());
            let (lm, ls) = stats(&good.iter().filter_map(|r| r.loglik).collect::<Vec<_>>());
            RepeatedRow { label, runs: rows.len(), failures: rows.len() - good.len(), rmse_mean: rm, rmse_sd: rs, loglik_mean: lm, loglik_sd: ls }
        })
        .collect())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "failed".into())
}

impl EvalReport {
    /// Row index with the smallest RMSE among successful rows.
    pub fn best_rmse(&self) -> Option<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.rmse.map(|v| (i, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| !r.ok())
    }

    /// Deterministic CSV: no timings.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,mode,rmse,loglik,calibration_gap,variance_model,dmax,error\n");
        for r in &self.rows {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let dmax = r.dmax.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(";");
            let err = r.error.as_deref().unwrap_or("").replace('"', "'");
            let _ = writeln!(
                s,
                "\"{}\",{},{},{},{},\"{}\",{},\"{}\"",
                r.label,
                r.mode,
                f(r.rmse),
                f(r.loglik),
                f(r.calibration_gap),
                r.variance_model,
                dmax,
                err
            );
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("label,train_seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "\"{}\",{:.3}", r.label, r.train_seconds);
        }
        s
    }

    /// Fixed-width table; the best RMSE and log-likelihood are starred.
    pub fn to_text(&self) -> String {
        let best_r = self.best_rmse();
        let best_l = self
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.loglik.map(|v| (i, v)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.title);
        let _ = writeln!(
            s,
            "split seed {} ratio {} ({} train / {} test), config {}",
            self.split_seed,
            self.split_ratio,
            self.n_train,
            self.n_test,
            &self.config_hash[..12.min(self.config_hash.len())]
        );
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>10}", "Model", "RMSE", "Log-lik.");
        for (i, r) in self.rows.iter().enumerate() {
            let star = |b: Option<usize>| if b == Some(i) { "*" } else { " " };
            let _ = writeln!(s, "{:<width$}  {:>8}{}  {:>9}{}", r.label, cell(r.rmse), star(best_r), cell(r.loglik), star(best_l));
        }
        for r in self.rows.iter().filter(|r| !r.ok()) {
            let _ = writeln!(s, "{} failed: {}", r.label, r.error.as_deref().unwrap_or(""));
        }
        s
    }
}

pub fn repeated_csv(rows: &[RepeatedRow]) -> String {
    let mut s = String::from("label,runs,failures,rmse_mean,rmse_sd,loglik_mean,loglik_sd\n");
    for r in rows {
        let _ = writeln!(s, "\"{}\",{},{},{},{},{},{}", r.label, r.runs, r.failures, r.rmse_mean, r.rmse_sd, r.loglik_mean, r.loglik_sd);
    }
    s
}
