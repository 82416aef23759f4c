//! `sasse` command-line tool.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage or
//! configuration errors. `SASSE_THREADS` caps the worker thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use sasse_core::bench::{bench_latency, default_grid, run_scaling, BenchError, BenchSpec};
use sasse_core::config::ConfigError;
use sasse_core::data::{evaluate, load_dataset, save_dataset, EvalError, Refinement, SyntheticSpec};
use sasse_core::format::{load_bundle, save_bundle};
use sasse_core::pgo::{load_edges, refine_trajectory};
use sasse_core::pipeline::TrainError;
use sasse_core::{train, CssStrategy, PoseVector, Precision, TrainConfig};

#[derive(Parser)]
#[command(name = "sasse", version, about = "Storage-bounded camera pose regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model bundle from a dataset CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        report_file: Option<PathBuf>,
    },
    /// Predict poses for every row of a dataset CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Median errors, failure rate, routing accuracy and query time.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Relative pose edges; enables windowed refinement.
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        window_size: usize,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        report_file: Option<PathBuf>,
    },
    /// Predict, then refine translations with relative pose edges.
    Refine {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long, default_value_t = 10)]
        window_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic train/test pair.
    Synth {
        #[arg(long, default_value_t = 4)]
        k_true: usize,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Smallest storage meeting error targets per training size, and the fitted exponent.
    BenchScaling(ScalingArgs),
    /// Single-threaded per-frame query time.
    BenchLatency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1000)]
        repetitions: usize,
        #[arg(long)]
        report_file: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Embedding size, at most 7b.
    #[arg(long, default_value_t = 50)]
    r: usize,
    /// Number of clusters.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Bits per pose component: 16, 32 or 64.
    #[arg(long, default_value_t = 16)]
    b: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// greedy, sampled or bruteforce.
    #[arg(long, default_value = "greedy")]
    css: String,
}

#[derive(Args)]
struct ScalingArgs {
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',', default_values_t = [500usize, 1000, 2000, 4000, 8000])]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    target_translation: f64,
    #[arg(long, default_value_t = 1.0)]
    target_rotation: f64,
    /// Embedding sizes of the grid; default 10, 20, 50, 7b/2, 7b.
    #[arg(long, value_delimiter = ',')]
    r_list: Vec<usize>,
    /// Cluster counts of the grid; default 1, 2, 4, 8.
    #[arg(long, value_delimiter = ',')]
    k_list: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    b: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    k_true: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long)]
    report_file: Option<PathBuf>,
}

/// Error tagged with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, error: e.into() }
    }
}

impl ModelArgs {
    fn config(&self) -> Result<TrainConfig, Failure> {
        let precision = Precision::from_bits(self.b).ok_or_else(|| usage(ConfigError::Precision(self.b)))?;
        let css_strategy: CssStrategy = self.css.parse().map_err(usage)?;
        let config = TrainConfig {
            r: self.r,
            k: self.k,
            precision,
            lambda: self.lambda,
            threshold: self.threshold,
            seed: self.seed,
            css_strategy,
        };
        config.validate().map_err(usage)?;
        Ok(config)
    }
}

fn write_report(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    if let Some(path) = path {
        fs::write(path, text).with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}

fn load_model(path: &Path, threshold: Option<f64>) -> Result<sasse_core::ModelBundle, Failure> {
    let mut bundle = load_bundle(path).with_context(|| format!("loading model {}", path.display()))?;
    if let Some(t) = threshold {
        bundle.set_threshold(t).map_err(usage)?;
    }
    Ok(bundle)
}

fn pose_rows(ids: &[String], poses: &[Option<PoseVector>]) -> Result<String, Failure> {
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["id", "status", "qa", "qb", "qc", "qd", "t1", "t2", "t3"])?;
    for (id, pose) in ids.iter().zip(poses) {
        let mut row = vec![id.clone()];
        match pose {
            Some(p) => {
                row.push("ok".into());
                row.extend(p.components().iter().map(|v| v.to_string()));
            }
            None => {
                row.push("decode_failure".into());
                row.extend(std::iter::repeat_n(String::new(), 7));
            }
        }
        csv.write_record(&row)?;
    }
    let bytes = csv.into_inner().map_err(|e| anyhow!("{e}"))?;
    Ok(String::from_utf8(bytes)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            data,
            out,
            model,
            report_file,
        } => {
            let config = model.config()?;
            let dataset = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
            let start = Instant::now();
            let bundle = train(&dataset, &config).map_err(|e| match e {
                TrainError::Config(_) => usage(e),
                other => other.into(),
            })?;
            let seconds = start.elapsed().as_secs_f64();
            let sizes = save_bundle(&bundle, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("storage_bytes={}", bundle.storage_bytes());
            println!("index_bytes={}", sizes.index_bytes);
            println!("manifest_bytes={}", sizes.manifest_bytes);
            println!("auxiliary_bytes={}", sizes.auxiliary_bytes);
            println!("train_seconds={seconds:.3}");
            let report = format!(
                "n={}\nd={}\nr={}\nk={}\nb={}\nstorage_bytes={}\nindex_bytes={}\nmanifest_bytes={}\ntrain_seconds={seconds}\n",
                dataset.len(),
                dataset.dim(),
                config.r,
                config.k,
                config.precision.bits(),
                bundle.storage_bytes(),
                sizes.index_bytes,
                sizes.manifest_bytes
            );
            write_report(report_file.as_deref(), &report)
        }
        Command::Predict {
            model,
            data,
            out,
            threshold,
        } => {
            let bundle = load_model(&model, threshold)?;
            let dataset = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
            if dataset.dim() != bundle.dim() {
                return Err(anyhow!("dataset dimension {} does not match model dimension {}", dataset.dim(), bundle.dim()).into());
            }
            let ids: Vec<String> = dataset.items().iter().map(|s| s.id.clone()).collect();
            let poses: Vec<Option<PoseVector>> = dataset.items().iter().map(|s| bundle.predict(&s.descriptor).ok()).collect();
            emit(out.as_deref(), &pose_rows(&ids, &poses)?)
        }
        Command::Eval {
            model,
            data,
            edges,
            window_size,
            threshold,
            report_file,
        } => {
            let bundle = load_model(&model, threshold)?;
            let dataset = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
            let refinement = match edges {
                Some(path) => Some(Refinement {
                    edges: load_edges(&path)?,
                    window: window_size,
                }),
                None => None,
            };
            let report = evaluate(&bundle, &dataset, refinement.as_ref()).map_err(|e| match e {
                EvalError::DimensionMismatch { .. } => usage(e),
                other => other.into(),
            })?;
            print!("{}", report.to_table());
            write_report(report_file.as_deref(), &report.to_key_values())
        }
        Command::Refine {
            model,
            data,
            edges,
            window_size,
            out,
        } => {
            let bundle = load_model(&model, None)?;
            let dataset = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
            let edges = load_edges(&edges)?;
            let poses = dataset
                .items()
                .iter()
                .map(|s| bundle.predict(&s.descriptor))
                .collect::<Result<Vec<_>, _>>()
                .context("refinement needs every frame to decode")?;
            let refined = refine_trajectory(&poses, &edges, window_size)?;
            let ids: Vec<String> = dataset.items().iter().map(|s| s.id.clone()).collect();
            let rows: Vec<Option<PoseVector>> = refined.into_iter().map(Some).collect();
            emit(out.as_deref(), &pose_rows(&ids, &rows)?)
        }
        Command::Synth {
            k_true,
            n,
            d,
            sigma,
            seed,
            train_out,
            test_out,
        } => {
            if k_true == 0 || d < 8 || n < 2 || sigma.is_nan() || sigma < 0.0 {
                return Err(usage(anyhow!("need k_true >= 1, d >= 8, n >= 2 and sigma >= 0")));
            }
            let data = SyntheticSpec::new(k_true, n, d, sigma, seed).generate();
            save_dataset(&data.train, &train_out)?;
            save_dataset(&data.test, &test_out)?;
            println!("train={} test={} d={d}", data.train.len(), data.test.len());
            Ok(())
        }
        Command::BenchScaling(args) => {
            let precision = Precision::from_bits(args.b).ok_or_else(|| usage(ConfigError::Precision(args.b)))?;
            let grid = if args.r_list.is_empty() && args.k_list.is_empty() {
                default_grid(args.b)
            } else {
                let defaults = default_grid(args.b);
                let mut rs: Vec<usize> = defaults.iter().map(|p| p.0).collect();
                let mut ks: Vec<usize> = defaults.iter().map(|p| p.1).collect();
                rs.dedup();
                ks.sort_unstable();
                ks.dedup();
                if !args.r_list.is_empty() {
                    rs = args.r_list.clone();
                }
                if !args.k_list.is_empty() {
                    ks = args.k_list.clone();
                }
                rs.iter().flat_map(|&r| ks.iter().map(move |&k| (r, k))).collect()
            };
            let spec = BenchSpec {
                n_list: args.n_list,
                translation_target_m: args.target_translation,
                rotation_target_deg: args.target_rotation,
                grid,
                seed: args.seed,
                precision,
                lambda: args.lambda,
                threshold: args.threshold,
                k_true: args.k_true,
                d: args.d,
                noise_sigma: args.sigma,
                ..BenchSpec::default()
            };
            spec.validate().map_err(usage)?;
            let result = run_scaling(&spec).map_err(|e| match e {
                BenchError::Spec(_) | BenchError::Config(_) => usage(e),
                other => other.into(),
            })?;
            println!("targets (synthetic): {} m, {} deg", spec.translation_target_m, spec.rotation_target_deg);
            print!("{}", result.to_table());
            write_report(args.report_file.as_deref(), &result.to_key_values())
        }
        Command::BenchLatency {
            model,
            data,
            repetitions,
            report_file,
        } => {
            if repetitions == 0 {
                return Err(usage(anyhow!("repetitions must be at least 1")));
            }
            let bundle = load_model(&model, None)?;
            let dataset = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
            let queries: Vec<Vec<f64>> = dataset.items().iter().map(|s| s.descriptor.clone()).collect();
            let stats = bench_latency(&bundle, &queries, repetitions)?;
            let text = format!(
                "samples={}\nmedian_ms={}\nq1_ms={}\nq3_ms={}\nmin_ms={}\nmax_ms={}\n",
                stats.samples, stats.median_ms, stats.q1_ms, stats.q3_ms, stats.min_ms, stats.max_ms
            );
            print!("{text}");
            write_report(report_file.as_deref(), &text)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(value) = std::env::var("SASSE_THREADS") {
        let threads: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| usage(anyhow!("SASSE_THREADS must be a positive integer, got {value:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
