//! Command-line front end for the recovery benchmark.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 a grid
//! sweep finished but some cells recorded an error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use recoverbench_core::cv::{make_folds, model_permutation_test, run_cv, CvOptions};
use recoverbench_core::dataio::{generate_baseline, read_dataset, write_dataset, NoiseSpec};
use recoverbench_core::error::Error;
use recoverbench_core::heatmap::{metric_value, render_heatmap};
use recoverbench_core::inject::{inject_signal, read_truth, write_truth, InjectionSpec};
use recoverbench_core::learners::Method;
use recoverbench_core::recovery::assemble_report;
use recoverbench_core::runner::{load_results_csv, run_grid, summarize, GridConfig, GridMethod};
use recoverbench_core::unistats::{univariate_rates, univariate_test, write_univariate_csv};

#[derive(Parser)]
#[command(
    name = "recoverbench",
    about = "Semi-simulated epoched-signal benchmark: injection, SVM/MKL, permutation statistics, recovery metrics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct WindowArg {
    /// Analysis window as "start,end" in ms (default: full time range).
    #[arg(long, value_parser = parse_pair)]
    window: Option<(f64, f64)>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic correlated-noise baseline as an EPD directory.
    Generate {
        /// Output EPD directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        trials_a: usize,
        #[arg(long, default_value_t = 56)]
        trials_b: usize,
        #[arg(long, default_value_t = 38)]
        channels: usize,
        #[arg(long, default_value_t = 1001)]
        time: usize,
        #[arg(long, default_value_t = 1000.0)]
        rate: f64,
        /// Temporal AR(1) coefficient in [0,1).
        #[arg(long, default_value_t = 0.95)]
        ar: f64,
        /// Constant cross-channel correlation in [0,1).
        #[arg(long, default_value_t = 0.2)]
        spatial_corr: f64,
        /// Std-dev of the per-trial log amplitude jitter.
        #[arg(long, default_value_t = 0.1)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inject a smoothed rectangular signal into condition-A trials.
    Inject {
        /// Input EPD directory.
        #[arg(long)]
        input: PathBuf,
        /// Output directory (EPD plus truth.json / x_in.f64).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        snr: f64,
        /// Number of channels that receive signal.
        #[arg(long)]
        channels: usize,
        #[command(flatten)]
        window: WindowArg,
        /// Gaussian smoothing FWHM in ms (0 = no smoothing).
        #[arg(long, default_value_t = 200.0)]
        fwhm: f64,
        /// Seed of the pseudo-random channel ordering.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-channel median-difference permutation test with FDR correction.
    Univariate {
        #[arg(long)]
        input: PathBuf,
        /// Directory holding truth.json for TP/FP rates.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        n_perm: usize,
        #[arg(long, default_value_t = 0.05)]
        q: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        window: WindowArg,
        /// Write per-channel results as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested cross-validated SVM or MKL training.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Directory holding truth.json for recovery metrics.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k_outer: usize,
        #[arg(long, default_value_t = 5)]
        k_inner: usize,
        /// Soft-margin grid, comma separated.
        #[arg(long, value_parser = parse_f64_list, default_value = "0.01,0.1,1,10,100,1000")]
        c_grid: std::vec::Vec<f64>,
        /// Label permutations for model significance (0 = skip).
        #[arg(long, default_value_t = 0)]
        n_perm: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        window: WindowArg,
        /// Write the recovery report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) the SNR x sparsity grid described by a JSON config.
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; overrides config and RECOVERBENCH_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render one metric of a finished grid as an SVG heatmap or CSV matrix.
    Report {
        /// results.csv produced by the grid subcommand.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        metric: String,
        #[arg(long, value_parser = parse_grid_method)]
        method: GridMethod,
        #[arg(long, default_value = "svg")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a finished grid: perfect-accuracy fractions, mean cosines,
    /// FP comparison.
    Summarize {
        #[arg(long)]
        results: PathBuf,
        /// Methods to include, comma separated.
        #[arg(long, value_parser = parse_grid_method_list, default_value = "univariate,svm,mkl")]
        methods: std::vec::Vec<GridMethod>,
        /// Emit JSON instead of the text table.
        #[arg(long, default_value_t = false)]
        json: bool,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected \"start,end\"".to_string());
    }
    let a = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_grid_method(s: &str) -> Result<GridMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_grid_method_list(s: &str) -> Result<Vec<GridMethod>, String> {
    s.split(',').map(|p| parse_grid_method(p.trim())).collect()
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Generate {
            out,
            trials_a,
            trials_b,
            channels,
            time,
            rate,
            ar,
            spatial_corr,
            jitter,
            seed,
        } => {
            let spec = NoiseSpec {
                n_trials_a: trials_a,
                n_trials_b: trials_b,
                n_channels: channels,
                n_time: time,
                sampling_rate: rate,
                ar_coefficient: ar,
                spatial_correlation: spatial_corr,
                trial_jitter_sd: jitter,
                seed,
            };
            let dataset = generate_baseline(&spec)?;
            write_dataset(&dataset, &out)?;
            println!(
                "wrote {} trials x {} channels x {} samples to {}",
                dataset.n_trials(),
                dataset.n_channels(),
                dataset.n_time(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Inject {
            input,
            out,
            snr,
            channels,
            window,
            fwhm,
            seed,
        } => {
            let dataset = read_dataset(&input)?;
            let spec = InjectionSpec {
                snr_in: snr,
                n_signal_channels: channels,
                window_ms: window.window.unwrap_or_else(|| dataset.full_window()),
                gaussian_fwhm_ms: fwhm,
                channel_order_seed: seed,
            };
            let (injected, truth) = inject_signal(&dataset, &spec)?;
            write_dataset(&injected, &out)?;
            write_truth(&truth, &out)?;
            println!(
                "injected snr={snr} on {} channel(s) {:?}; wrote EPD + truth to {}",
                truth.signal_channels.len(),
                truth.signal_channels,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Univariate {
            input,
            truth,
            n_perm,
            q,
            seed,
            window,
            out,
        } => {
            let dataset = read_dataset(&input)?;
            let window = window.window.unwrap_or_else(|| dataset.full_window());
            let result = univariate_test(&dataset, window, n_perm, q, seed)?;
            let n_sig = result.significant.iter().filter(|s| **s).count();
            println!(
                "{} of {} channels significant at q={q} ({n_perm} permutations)",
                n_sig,
                dataset.n_channels()
            );
            if let Some(truth_dir) = truth {
                let truth = read_truth(&truth_dir)?;
                let (tp, fp) = univariate_rates(&result.significant, &truth)?;
                match fp {
                    Some(fp) => println!("tp_rate = {tp}  fp_rate = {fp}"),
                    None => {
                        println!("tp_rate = {tp}  fp_rate undefined (all channels carry signal)")
                    }
                }
            }
            if let Some(path) = out {
                write_univariate_csv(&result, dataset.channel_ids(), &path)?;
                println!("per-channel CSV -> {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            input,
            method,
            truth,
            k_outer,
            k_inner,
            c_grid,
            n_perm,
            seed,
            window,
            out,
        } => {
            let dataset = read_dataset(&input)?;
            let opts = CvOptions {
                c_grid,
                window_ms: window.window,
                ..CvOptions::default()
            };
            let plan = make_folds(dataset.labels(), k_outer, k_inner, seed)?;
            let mut cv = run_cv(&dataset, method, &plan, &opts)?;
            println!("{method}: balanced accuracy = {:.4}", cv.balanced_accuracy);
            if n_perm > 0 {
                cv.p_value = model_permutation_test(
                    &dataset,
                    method,
                    &plan,
                    &opts,
                    n_perm,
                    seed,
                    cv.balanced_accuracy,
                )?;
                if let Some(p) = cv.p_value {
                    println!("permutation p = {p} ({n_perm} permutations)");
                }
            }
            let chosen: Vec<f64> = cv.folds.iter().map(|f| f.chosen_c).collect();
            println!("per-fold C: {chosen:?}");
            if let Some(truth_dir) = truth {
                let truth = read_truth(&truth_dir)?;
                let report = assemble_report(&cv, &truth)?;
                if report.no_signal {
                    println!("no-signal cell: recovery metrics undefined");
                } else {
                    let fmt = |v: Option<f64>| {
                        v.map(|x| format!("{x:.4}"))
                            .unwrap_or_else(|| "undefined".into())
                    };
                    println!(
                        "cosine: feature = {}, channel = {}",
                        fmt(report.cosine_feature),
                        fmt(report.cosine_channel)
                    );
                    println!(
                        "adaptive: tp = {}, fp = {}; top10: tp = {}, fp = {}",
                        fmt(report.tp_adaptive),
                        fmt(report.fp_adaptive),
                        fmt(report.tp_top10),
                        fmt(report.fp_top10),
                    );
                }
                if let Some(path) = out {
                    std::fs::write(
                        &path,
                        format!("{}\n", serde_json::to_string_pretty(&report)?),
                    )?;
                    println!("report JSON -> {}", path.display());
                }
            } else if out.is_some() {
                return Err(Error::validation(
                    "out",
                    "writing a report requires --truth",
                ));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid { config, threads } => {
            let mut config = GridConfig::from_json_file(&config)?;
            if threads.is_some() {
                config.threads = threads;
            }
            let grid = run_grid(&config)?;
            let csv = config.output_dir.join("results.csv");
            println!("{} rows -> {}", grid.rows.len(), csv.display());
            if grid.had_errors() {
                let n = grid.rows.iter().filter(|r| r.error_code.is_some()).count();
                eprintln!("{n} row(s) recorded an error code");
                Ok(ExitCode::from(2))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Report {
            results,
            metric,
            method,
            format,
            out,
        } => {
            let grid = load_results_csv(&results)?;
            match format.as_str() {
                "svg" => {
                    render_heatmap(&grid.rows, &metric, method, &out)?;
                    println!("heatmap -> {}", out.display());
                }
                "csv" => {
                    let rows: Vec<&recoverbench_core::runner::ResultRow> = grid
                        .rows
                        .iter()
                        .filter(|r| r.method == method.as_str())
                        .collect();
                    if rows.is_empty() {
                        return Err(Error::validation(
                            "results",
                            format!("no rows for method {method}"),
                        ));
                    }
                    let mut snrs: Vec<f64> = rows.iter().map(|r| r.snr).collect();
                    snrs.sort_by(f64::total_cmp);
                    snrs.dedup();
                    let mut chans: Vec<usize> = rows.iter().map(|r| r.n_signal_channels).collect();
                    chans.sort_unstable();
                    chans.dedup();
                    let mut text = String::from("snr");
                    for c in &chans {
                        text.push_str(&format!(",{c}"));
                    }
                    text.push('\n');
                    for &snr in &snrs {
                        text.push_str(&snr.to_string());
                        for &c in &chans {
                            let cell = rows
                                .iter()
                                .find(|r| r.snr == snr && r.n_signal_channels == c)
                                .and_then(|r| metric_value(r, &metric).transpose())
                                .transpose()?;
                            text.push(',');
                            if let Some(v) = cell {
                                text.push_str(&v.to_string());
                            }
                        }
                        text.push('\n');
                    }
                    std::fs::write(&out, text)?;
                    println!("metric matrix -> {}", out.display());
                }
                other => {
                    return Err(Error::validation(
                        "format",
                        format!("unknown format {other:?}"),
                    ))
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize {
            results,
            methods,
            json,
        } => {
            let grid = load_results_csv(&results)?;
            let summary = summarize(&grid, &methods)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{summary}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
