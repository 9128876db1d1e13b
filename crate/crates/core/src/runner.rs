//! Experiment orchestration: sweeps the SNR x sparsity grid for the
//! univariate, SVM and MKL tracks, persists one CSV row per (cell, method),
//! and summarizes a completed grid.
//!
//! Rows are appended in deterministic order and flushed as each cell
//! finishes, so an interrupted run leaves a valid CSV that a rerun resumes
//! by recomputing only the missing suffix. Cell seeds derive from the
//! master seed and the cell key alone, making any subset of the grid
//! reproduce the full run's values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::cv::{make_folds, model_permutation_test, run_cv, CvOptions};
use crate::dataio::{generate_baseline, read_dataset, EpochDataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::inject::{inject_signal, InjectionSpec};
use crate::learners::Method;
use crate::recovery::assemble_report;
use crate::seeding;
use crate::unistats::{univariate_rates, univariate_test};

pub const RESULTS_CSV_HEADER: &str = "snr,n_signal_channels,s_in,method,balanced_accuracy,\
p_value,cosine_feature,cosine_channel,tp_adaptive,fp_adaptive,tp_top10,fp_top10,\
fp_top10_raw_count,error_code";

pub const THREADS_ENV_VAR: &str = "RECOVERBENCH_THREADS";

/// Analysis track of one results row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMethod {
    Univariate,
    Svm,
    Mkl,
}

impl GridMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GridMethod::Univariate => "univariate",
            GridMethod::Svm => "svm",
            GridMethod::Mkl => "mkl",
        }
    }
}

impl std::fmt::Display for GridMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GridMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "univariate" => Ok(GridMethod::Univariate),
            "svm" => Ok(GridMethod::Svm),
            "mkl" => Ok(GridMethod::Mkl),
            other => Err(Error::validation(
                "method",
                format!("unknown method {other:?}"),
            )),
        }
    }
}

/// Where the baseline recording comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Generate(NoiseSpec),
    Path(PathBuf),
}

fn default_snr_values() -> Vec<f64> {
    (0..15).map(|i| 1.0 + 0.5 * i as f64).collect()
}

fn default_sparsity_channels() -> Vec<usize> {
    (1..=19).map(|i| 2 * i).collect()
}

fn default_methods() -> Vec<GridMethod> {
    vec![GridMethod::Univariate, GridMethod::Svm, GridMethod::Mkl]
}

fn default_c_grid() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0, 100.0, 1000.0]
}

fn default_n_perm_univariate() -> usize {
    5000
}

fn default_n_perm_model() -> usize {
    500
}

fn default_k_outer() -> usize {
    10
}

fn default_k_inner() -> usize {
    5
}

fn default_q_fdr() -> f64 {
    0.05
}

fn default_gaussian_fwhm_ms() -> f64 {
    200.0
}

/// Grid sweep configuration; deserialized from a UTF-8 JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_snr_values")]
    pub snr_values: Vec<f64>,
    #[serde(default = "default_sparsity_channels")]
    pub sparsity_channels: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<GridMethod>,
    #[serde(default = "default_n_perm_univariate")]
    pub n_perm_univariate: usize,
    #[serde(default = "default_n_perm_model")]
    pub n_perm_model: usize,
    /// Cells (snr, n_signal_channels) that get the model permutation test;
    /// empty disables it (the full grid would be prohibitively expensive).
    #[serde(default)]
    pub model_perm_cells: Vec<(f64, usize)>,
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_k_outer")]
    pub k_outer: usize,
    #[serde(default = "default_k_inner")]
    pub k_inner: usize,
    #[serde(default = "default_q_fdr")]
    pub q_fdr: f64,
    /// Analysis/injection window; None uses the dataset's full range.
    #[serde(default)]
    pub window_ms: Option<(f64, f64)>,
    #[serde(default = "default_gaussian_fwhm_ms")]
    pub gaussian_fwhm_ms: f64,
    /// When set, every cell injects into the same channel ordering instead
    /// of a per-cell pseudo-random one, making sparsity levels nested.
    #[serde(default)]
    pub shared_channel_order_seed: Option<u64>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Worker count; overrides the RECOVERBENCH_THREADS env var.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_values.is_empty() {
            return Err(Error::validation("snr_values", "must be nonempty"));
        }
        if self.snr_values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation("snr_values", "must be finite and >= 0"));
        }
        if self.sparsity_channels.is_empty() {
            return Err(Error::validation("sparsity_channels", "must be nonempty"));
        }
        if self.methods.is_empty() {
            return Err(Error::validation("methods", "must be nonempty"));
        }
        if self.c_grid.is_empty() {
            return Err(Error::validation("c_grid", "must be nonempty"));
        }
        if self.k_outer < 2 {
            return Err(Error::validation("k_outer", "must be >= 2"));
        }
        if self.k_inner < 2 {
            return Err(Error::validation("k_inner", "must be >= 2"));
        }
        if !(self.q_fdr > 0.0 && self.q_fdr < 1.0) {
            return Err(Error::validation("q_fdr", "must be in (0, 1)"));
        }
        if let DatasetSource::Generate(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let config: GridConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Stable FNV-1a hash of the canonical JSON form, for provenance.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// One results row; one per (cell, method).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub snr: f64,
    pub n_signal_channels: usize,
    pub s_in: f64,
    pub method: String,
    pub balanced_accuracy: Option<f64>,
    pub p_value: Option<f64>,
    pub cosine_feature: Option<f64>,
    pub cosine_channel: Option<f64>,
    pub tp_adaptive: Option<f64>,
    pub fp_adaptive: Option<f64>,
    pub tp_top10: Option<f64>,
    pub fp_top10: Option<f64>,
    pub fp_top10_raw_count: Option<usize>,
    pub error_code: Option<String>,
}

impl ResultRow {
    pub fn empty(snr: f64, n_signal_channels: usize, s_in: f64, method: GridMethod) -> Self {
        ResultRow {
            snr,
            n_signal_channels,
            s_in,
            method: method.as_str().to_string(),
            balanced_accuracy: None,
            p_value: None,
            cosine_feature: None,
            cosine_channel: None,
            tp_adaptive: None,
            fp_adaptive: None,
            tp_top10: None,
            fp_top10: None,
            fp_top10_raw_count: None,
            error_code: None,
        }
    }

    fn fmt_opt(v: Option<f64>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.snr,
            self.n_signal_channels,
            self.s_in,
            self.method,
            Self::fmt_opt(self.balanced_accuracy),
            Self::fmt_opt(self.p_value),
            Self::fmt_opt(self.cosine_feature),
            Self::fmt_opt(self.cosine_channel),
            Self::fmt_opt(self.tp_adaptive),
            Self::fmt_opt(self.fp_adaptive),
            Self::fmt_opt(self.tp_top10),
            Self::fmt_opt(self.fp_top10),
            self.fp_top10_raw_count
                .map(|c| c.to_string())
                .unwrap_or_default(),
            self.error_code.clone().unwrap_or_default(),
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(Error::parse(
                "results.csv",
                format!("expected 14 columns, found {}", fields.len()),
            ));
        }
        let opt_f64 = |s: &str, name: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::parse("results.csv", format!("{name}: {e}")))
            }
        };
        Ok(ResultRow {
            snr: fields[0]
                .parse()
                .map_err(|e| Error::parse("results.csv", format!("snr: {e}")))?,
            n_signal_channels: fields[1]
                .parse()
                .map_err(|e| Error::parse("results.csv", format!("n_signal_channels: {e}")))?,
            s_in: fields[2]
                .parse()
                .map_err(|e| Error::parse("results.csv", format!("s_in: {e}")))?,
            method: fields[3].to_string(),
            balanced_accuracy: opt_f64(fields[4], "balanced_accuracy")?,
            p_value: opt_f64(fields[5], "p_value")?,
            cosine_feature: opt_f64(fields[6], "cosine_feature")?,
            cosine_channel: opt_f64(fields[7], "cosine_channel")?,
            tp_adaptive: opt_f64(fields[8], "tp_adaptive")?,
            fp_adaptive: opt_f64(fields[9], "fp_adaptive")?,
            tp_top10: opt_f64(fields[10], "tp_top10")?,
            fp_top10: opt_f64(fields[11], "fp_top10")?,
            fp_top10_raw_count: if fields[12].is_empty() {
                None
            } else {
                Some(
                    fields[12].parse().map_err(|e| {
                        Error::parse("results.csv", format!("fp_top10_raw_count: {e}"))
                    })?,
                )
            },
            error_code: if fields[13].is_empty() {
                None
            } else {
                Some(fields[13].to_string())
            },
        })
    }
}

/// All rows of one grid run, in deterministic cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<ResultRow>,
}

impl GridResult {
    pub fn had_errors(&self) -> bool {
        self.rows.iter().any(|r| r.error_code.is_some())
    }
}

/// Reads a results CSV produced by `run_grid`.
pub fn load_results_csv(path: &Path) -> Result<GridResult> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == RESULTS_CSV_HEADER => {}
        other => {
            return Err(Error::parse(
                path.display().to_string(),
                format!("bad header: {other:?}"),
            ))
        }
    }
    let rows: Result<Vec<ResultRow>> = lines.map(ResultRow::from_csv_line).collect();
    Ok(GridResult { rows: rows? })
}

fn resolve_thread_count(config: &GridConfig) -> usize {
    if let Some(t) = config.threads {
        return t.max(1);
    }
    if let Ok(v) = std::env::var(THREADS_ENV_VAR) {
        if let Ok(t) = v.parse::<usize>() {
            return t.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RowKey {
    snr: f64,
    n_signal_channels: usize,
    method: GridMethod,
}

fn expected_keys(config: &GridConfig) -> Vec<RowKey> {
    let mut keys = Vec::new();
    for &snr in &config.snr_values {
        for &s in &config.sparsity_channels {
            for &m in &config.methods {
                keys.push(RowKey {
                    snr,
                    n_signal_channels: s,
                    method: m,
                });
            }
        }
    }
    keys
}

/// Computes the rows of one grid cell for the requested methods.
/// Failures never propagate: they land in the row's error_code.
fn compute_cell(
    baseline: &EpochDataset,
    config: &GridConfig,
    snr: f64,
    n_signal: usize,
    methods: &[GridMethod],
) -> Vec<ResultRow> {
    let cell_seed = seeding::cell_seed(config.master_seed, snr, n_signal);
    let inject_seed = config
        .shared_channel_order_seed
        .unwrap_or_else(|| seeding::substream(cell_seed, 1));
    let fold_seed = seeding::substream(cell_seed, 2);
    let uni_seed = seeding::substream(cell_seed, 3);
    let perm_seed = seeding::substream(cell_seed, 4);
    let window = config.window_ms.unwrap_or_else(|| baseline.full_window());
    let s_in_nominal = n_signal as f64 / baseline.n_channels() as f64;

    let spec = InjectionSpec {
        snr_in: snr,
        n_signal_channels: n_signal,
        window_ms: window,
        gaussian_fwhm_ms: config.gaussian_fwhm_ms,
        channel_order_seed: inject_seed,
    };
    let (dataset, truth) = match inject_signal(baseline, &spec) {
        Ok(pair) => pair,
        Err(e) => {
            return methods
                .iter()
                .map(|&m| {
                    let mut row = ResultRow::empty(snr, n_signal, s_in_nominal, m);
                    row.error_code = Some(e.code().to_string());
                    row
                })
                .collect();
        }
    };

    let cv_opts = CvOptions {
        c_grid: config.c_grid.clone(),
        window_ms: Some(window),
        ..CvOptions::default()
    };
    let run_perm = config
        .model_perm_cells
        .iter()
        .any(|&(ps, pn)| ps == snr && pn == n_signal);

    methods
        .iter()
        .map(|&m| {
            let mut row = ResultRow::empty(snr, n_signal, truth.s_in, m);
            let outcome: Result<()> = (|| {
                match m {
                    GridMethod::Univariate => {
                        let res = univariate_test(
                            &dataset,
                            window,
                            config.n_perm_univariate,
                            config.q_fdr,
                            uni_seed,
                        )?;
                        if truth.is_empty() {
                            row.error_code = Some("no_signal".into());
                        } else {
                            let (tp, fp) = univariate_rates(&res.significant, &truth)?;
                            row.tp_adaptive = Some(tp);
                            row.fp_adaptive = fp;
                        }
                    }
                    GridMethod::Svm | GridMethod::Mkl => {
                        let method = if m == GridMethod::Svm {
                            Method::Svm
                        } else {
                            Method::Mkl
                        };
                        let plan = make_folds(
                            dataset.labels(),
                            config.k_outer,
                            config.k_inner,
                            fold_seed,
                        )?;
                        let mut cv = run_cv(&dataset, method, &plan, &cv_opts)?;
                        if run_perm && config.n_perm_model > 0 {
                            cv.p_value = model_permutation_test(
                                &dataset,
                                method,
                                &plan,
                                &cv_opts,
                                config.n_perm_model,
                                perm_seed,
                                cv.balanced_accuracy,
                            )?;
                        }
                        let report = assemble_report(&cv, &truth)?;
                        row.balanced_accuracy = Some(report.balanced_accuracy);
                        row.p_value = report.p_value;
                        row.cosine_feature = report.cosine_feature;
                        row.cosine_channel = report.cosine_channel;
                        row.tp_adaptive = report.tp_adaptive;
                        row.fp_adaptive = report.fp_adaptive;
                        row.tp_top10 = report.tp_top10;
                        row.fp_top10 = report.fp_top10;
                        row.fp_top10_raw_count = report.fp_top10_raw_count;
                        if report.no_signal {
                            row.error_code = Some("no_signal".into());
                        }
                    }
                }
                Ok(())
            })();
            if let Err(e) = outcome {
                row.error_code = Some(e.code().to_string());
            }
            row
        })
        .collect()
}

/// Runs (or resumes) the full grid sweep and returns every row.
pub fn run_grid(config: &GridConfig) -> Result<GridResult> {
    config.validate()?;
    let baseline = match &config.dataset {
        DatasetSource::Generate(spec) => generate_baseline(spec)?,
        DatasetSource::Path(path) => read_dataset(path)?,
    };
    if let Some(&too_big) = config
        .sparsity_channels
        .iter()
        .find(|&&s| s > baseline.n_channels())
    {
        return Err(Error::validation(
            "sparsity_channels",
            format!(
                "{too_big} exceeds the {}-channel baseline",
                baseline.n_channels()
            ),
        ));
    }

    fs::create_dir_all(&config.output_dir)?;
    let csv_path = config.output_dir.join("results.csv");
    let expected = expected_keys(config);

    // resume: accept an existing complete-row prefix, drop a torn last line
    let mut done_rows: Vec<ResultRow> = Vec::new();
    if csv_path.exists() {
        let text = fs::read_to_string(&csv_path)?;
        let mut complete = String::new();
        for (i, line) in text.split_inclusive('\n').enumerate() {
            if !line.ends_with('\n') {
                break; // torn trailing write from an interrupted run
            }
            let bare = line.trim_end_matches('\n');
            if i == 0 {
                if bare != RESULTS_CSV_HEADER {
                    return Err(Error::parse(
                        csv_path.display().to_string(),
                        "existing results.csv has a different header".to_string(),
                    ));
                }
            } else {
                let row = ResultRow::from_csv_line(bare)?;
                let idx = done_rows.len();
                let key = expected.get(idx).ok_or_else(|| {
                    Error::parse(
                        csv_path.display().to_string(),
                        "existing results.csv has more rows than the config grid".to_string(),
                    )
                })?;
                if row.snr != key.snr
                    || row.n_signal_channels != key.n_signal_channels
                    || row.method != key.method.as_str()
                {
                    return Err(Error::parse(
                        csv_path.display().to_string(),
                        format!(
                            "row {idx} is ({}, {}, {}) but the config expects ({}, {}, {})",
                            row.snr,
                            row.n_signal_channels,
                            row.method,
                            key.snr,
                            key.n_signal_channels,
                            key.method
                        ),
                    ));
                }
                done_rows.push(row);
            }
            complete.push_str(line);
        }
        fs::write(&csv_path, &complete)?;
    } else {
        fs::write(&csv_path, format!("{RESULTS_CSV_HEADER}\n"))?;
    }

    // pending cells, each with its pending method suffix
    let methods_per_cell = config.methods.len();
    let done = done_rows.len();
    let mut pending: Vec<(f64, usize, Vec<GridMethod>)> = Vec::new();
    let mut idx = done - done % methods_per_cell;
    if done % methods_per_cell != 0 {
        let key = expected[idx];
        let pending_methods: Vec<GridMethod> = config.methods[done % methods_per_cell..].to_vec();
        pending.push((key.snr, key.n_signal_channels, pending_methods));
        idx += methods_per_cell;
    }
    while idx < expected.len() {
        let key = expected[idx];
        pending.push((key.snr, key.n_signal_channels, config.methods.clone()));
        idx += methods_per_cell;
    }

    let threads = resolve_thread_count(config).min(pending.len().max(1));
    let next_cell = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Vec<ResultRow>)>();

    let mut new_rows_by_cell: BTreeMap<usize, Vec<ResultRow>> = BTreeMap::new();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..threads {
            let tx = tx.clone();
            let next_cell = &next_cell;
            let pending = &pending;
            let baseline = &baseline;
            scope.spawn(move || loop {
                let i = next_cell.fetch_add(1, Ordering::SeqCst);
                if i >= pending.len() {
                    break;
                }
                let (snr, s, ref methods) = pending[i];
                let rows = compute_cell(baseline, config, snr, s, methods);
                if tx.send((i, rows)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // single writer appends completed cells in deterministic order
        let mut file = fs::OpenOptions::new().append(true).open(&csv_path)?;
        let mut next_to_write = 0usize;
        for (i, rows) in rx {
            new_rows_by_cell.insert(i, rows);
            while let Some(rows) = new_rows_by_cell.get(&next_to_write) {
                for row in rows {
                    file.write_all(row.to_csv_line().as_bytes())?;
                    file.write_all(b"\n")?;
                }
                file.flush()?;
                next_to_write += 1;
            }
        }
        Ok(())
    })?;

    let meta = serde_json::json!({
        "config_hash": config.config_hash(),
        "version": env!("CARGO_PKG_VERSION"),
        "n_cells": config.snr_values.len() * config.sparsity_channels.len(),
        "config": config,
    });
    fs::write(
        config.output_dir.join("run_meta.json"),
        format!("{}\n", serde_json::to_string_pretty(&meta)?),
    )?;

    load_results_csv(&csv_path)
}

/// Per-method aggregate of a completed grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_cells: usize,
    pub n_error_cells: usize,
    /// Fraction of cells at balanced accuracy 1 (machine-learning methods).
    pub frac_perfect_accuracy: Option<f64>,
    pub mean_balanced_accuracy: Option<f64>,
    pub mean_cosine_feature: Option<f64>,
    pub mean_cosine_channel: Option<f64>,
    pub mean_tp_adaptive: Option<f64>,
    pub mean_fp_adaptive: Option<f64>,
}

/// Grid-level summary with the cross-method comparisons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub per_method: Vec<MethodSummary>,
    /// Fraction of cells where MKL beats SVM by more than 5% accuracy.
    pub frac_mkl_beats_svm: Option<f64>,
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Aggregates a grid for the requested methods; errors list the missing
/// (snr, channels, method) cells when the grid is incomplete.
pub fn summarize(grid: &GridResult, methods: &[GridMethod]) -> Result<Summary> {
    let mut cells: Vec<(f64, usize)> = grid
        .rows
        .iter()
        .map(|r| (r.snr, r.n_signal_channels))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cells.dedup();

    let mut missing = Vec::new();
    for &m in methods {
        for &(snr, s) in &cells {
            if !grid
                .rows
                .iter()
                .any(|r| r.method == m.as_str() && r.snr == snr && r.n_signal_channels == s)
            {
                missing.push(format!("({snr}, {s}, {m})"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid { missing });
    }

    let mut per_method = Vec::new();
    for &m in methods {
        let rows: Vec<&ResultRow> = grid
            .rows
            .iter()
            .filter(|r| r.method == m.as_str())
            .collect();
        let ok: Vec<&&ResultRow> = rows.iter().filter(|r| r.error_code.is_none()).collect();
        let accs: Vec<f64> = ok.iter().filter_map(|r| r.balanced_accuracy).collect();
        let perfect = if accs.is_empty() {
            None
        } else {
            Some(accs.iter().filter(|a| **a >= 1.0 - 1e-9).count() as f64 / accs.len() as f64)
        };
        per_method.push(MethodSummary {
            method: m.as_str().to_string(),
            n_cells: rows.len(),
            n_error_cells: rows.len() - ok.len(),
            frac_perfect_accuracy: perfect,
            mean_balanced_accuracy: mean_of(&accs),
            mean_cosine_feature: mean_of(
                &ok.iter()
                    .filter_map(|r| r.cosine_feature)
                    .collect::<Vec<_>>(),
            ),
            mean_cosine_channel: mean_of(
                &ok.iter()
                    .filter_map(|r| r.cosine_channel)
                    .collect::<Vec<_>>(),
            ),
            mean_tp_adaptive: mean_of(&ok.iter().filter_map(|r| r.tp_adaptive).collect::<Vec<_>>()),
            mean_fp_adaptive: mean_of(&ok.iter().filter_map(|r| r.fp_adaptive).collect::<Vec<_>>()),
        });
    }

    let frac_mkl_beats_svm =
        if methods.contains(&GridMethod::Svm) && methods.contains(&GridMethod::Mkl) {
            let mut wins = 0usize;
            let mut comparable = 0usize;
            for &(snr, s) in &cells {
                let find = |name: &str| {
                    grid.rows
                        .iter()
                        .find(|r| r.method == name && r.snr == snr && r.n_signal_channels == s)
                        .and_then(|r| r.balanced_accuracy)
                };
                if let (Some(svm), Some(mkl)) = (find("svm"), find("mkl")) {
                    comparable += 1;
                    if mkl > svm + 0.05 {
                        wins += 1;
                    }
                }
            }
            if comparable > 0 {
                Some(wins as f64 / comparable as f64)
            } else {
                None
            }
        } else {
            None
        };

    Ok(Summary {
        per_method,
        frac_mkl_beats_svm,
    })
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".to_string(),
        };
        writeln!(
            f,
            "{:<12} {:>6} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "method",
            "cells",
            "errors",
            "perfect",
            "mean_acc",
            "cos_feat",
            "cos_chan",
            "mean_tp",
            "mean_fp"
        )?;
        for m in &self.per_method {
            writeln!(
                f,
                "{:<12} {:>6} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                m.method,
                m.n_cells,
                m.n_error_cells,
                fmt_opt(m.frac_perfect_accuracy),
                fmt_opt(m.mean_balanced_accuracy),
                fmt_opt(m.mean_cosine_feature),
                fmt_opt(m.mean_cosine_channel),
                fmt_opt(m.mean_tp_adaptive),
                fmt_opt(m.mean_fp_adaptive),
            )?;
        }
        if let Some(frac) = self.frac_mkl_beats_svm {
            writeln!(
                f,
                "MKL beats SVM by >5% accuracy in {:.1}% of cells",
                100.0 * frac
            )?;
        }
        Ok(())
    }
}
