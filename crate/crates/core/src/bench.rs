//! Storage scaling sweeps and single-threaded query latency.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::Precision;
use crate::config::{ConfigError, TrainConfig};
use crate::data::{evaluate, fit_scaling_curve, generate_synthetic, EvalError, EvalReport, ScalingError, ScalingFit};
use crate::pipeline::{storage_bytes, train, ModelBundle, TrainError};
use crate::pose::Dataset;
use crate::stats::LatencyStats;

/// Untimed calls before latency measurement starts.
pub const WARMUP_CALLS: usize = 10;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Fit(#[from] ScalingError),
    #[error("no descriptors to time")]
    NoQueries,
}

/// `r ∈ {10, 20, 50, 7b/2, 7b}` crossed with `k ∈ {1, 2, 4, 8}`.
pub fn default_grid(bits: usize) -> Vec<(usize, usize)> {
    let mut rs = vec![10, 20, 50, 7 * bits / 2, 7 * bits];
    rs.retain(|&r| r >= 1 && r <= 7 * bits);
    rs.sort_unstable();
    rs.dedup();
    rs.iter()
        .flat_map(|&r| [1, 2, 4, 8].map(|k| (r, k)))
        .collect()
}

/// Scaling sweep over the synthetic family `generate_synthetic(k_true, N, d,
/// noise_sigma, seed)` for each `N` in `n_list`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub n_list: Vec<usize>,
    pub translation_target_m: f64,
    pub rotation_target_deg: f64,
    /// `(r, k)` pairs; tried in ascending storage order.
    pub grid: Vec<(usize, usize)>,
    pub repetitions: usize,
    pub seed: u64,
    pub precision: Precision,
    pub lambda: f64,
    pub threshold: f64,
    pub k_true: usize,
    pub d: usize,
    pub noise_sigma: f64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            n_list: vec![500, 1000, 2000, 4000, 8000],
            translation_target_m: 0.05,
            rotation_target_deg: 1.0,
            grid: default_grid(16),
            repetitions: 1000,
            seed: 0,
            precision: Precision::Half,
            lambda: 0.1,
            threshold: 0.5,
            k_true: 4,
            d: 64,
            noise_sigma: 0.01,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        if !positive(self.translation_target_m) || !positive(self.rotation_target_deg) {
            return Err(BenchError::Spec("error targets must be positive".into()));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::Spec("N list must be non-empty and strictly increasing".into()));
        }
        if self.grid.is_empty() {
            return Err(BenchError::Spec("empty (r, k) grid".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchError::Spec("repetitions must be at least 1".into()));
        }
        for &(r, k) in &self.grid {
            self.config(r, k).validate()?;
        }
        Ok(())
    }

    pub fn config(&self, r: usize, k: usize) -> TrainConfig {
        TrainConfig {
            r,
            k,
            precision: self.precision,
            lambda: self.lambda,
            threshold: self.threshold,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Grid sorted by storage at dimension `d`, ties by `(r, k)`.
    pub fn ordered_grid(&self) -> Vec<(usize, usize)> {
        let mut grid = self.grid.clone();
        grid.sort_by_key(|&(r, k)| (storage_bytes(self.d, r, self.precision.bits(), k), r, k));
        grid.dedup();
        grid
    }

    pub fn meets_targets(&self, report: &EvalReport) -> bool {
        matches!(
            (report.median_translation_error_m, report.median_rotation_error_deg),
            (Some(t), Some(r)) if t <= self.translation_target_m && r <= self.rotation_target_deg
        )
    }
}

/// Outcome of one `(r, k)` grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub r: usize,
    pub k: usize,
    pub storage_bytes: u64,
    /// `None` when training failed for this configuration.
    pub report: Option<EvalReport>,
}

/// Trains `(r, k)` on `train_set` and evaluates on `test`. Training errors
/// (for example a cluster with too few items) yield an outcome without a
/// report.
pub fn evaluate_config(
    spec: &BenchSpec,
    train_set: &Dataset,
    test: &Dataset,
    r: usize,
    k: usize,
) -> Result<GridOutcome, BenchError> {
    let config = spec.config(r, k);
    config.validate()?;
    let storage = storage_bytes(train_set.dim(), r, spec.precision.bits(), k);
    let report = match train(train_set, &config) {
        Ok(bundle) => Some(evaluate(&bundle, test, None)?),
        Err(e @ (TrainError::ClusterTooLarge { .. } | TrainError::ClusterTooSmall { .. } | TrainError::Embed(_))) => {
            log::info!("r={r} k={k}: {e}");
            None
        }
        Err(e) => {
            log::warn!("r={r} k={k}: {e}");
            None
        }
    };
    Ok(GridOutcome {
        r,
        k,
        storage_bytes: storage,
        report,
    })
}

/// Smallest-storage configuration meeting the targets at one `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    /// `None` when no grid point meets the targets.
    pub chosen: Option<GridOutcome>,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    pub fit: ScalingFit,
}

/// Storage in megabytes, the unit of the fitted curve.
pub fn storage_mb(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

/// The synthetic train/test split used for training size `n`.
pub fn scaling_data(spec: &BenchSpec, n: usize) -> (Dataset, Dataset) {
    generate_synthetic(spec.k_true, n, spec.d, spec.noise_sigma, spec.seed)
}

/// For every `N`, walks the grid in ascending storage order and stops at
/// the first configuration meeting both targets; then fits `S = N^a + b`
/// (S in MB) to the reachable points.
pub fn run_scaling(spec: &BenchSpec) -> Result<ScalingResult, BenchError> {
    spec.validate()?;
    let grid = spec.ordered_grid();
    let mut rows = Vec::with_capacity(spec.n_list.len());
    for &n in &spec.n_list {
        let (train_set, test) = scaling_data(spec, n);
        let mut chosen = None;
        let mut evaluated = 0;
        for &(r, k) in &grid {
            evaluated += 1;
            let outcome = evaluate_config(spec, &train_set, &test, r, k)?;
            if outcome.report.as_ref().is_some_and(|rep| spec.meets_targets(rep)) {
                chosen = Some(outcome);
                break;
            }
        }
        match &chosen {
            Some(c) => log::info!("N={n}: r={} k={} storage={} bytes", c.r, c.k, c.storage_bytes),
            None => log::warn!("N={n}: target unreachable on the grid"),
        }
        rows.push(ScalingRow { n, chosen, evaluated });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|row| row.chosen.as_ref().map(|c| (row.n as f64, storage_mb(c.storage_bytes))))
        .collect();
    let fit = fit_scaling_curve(&points).map_err(|e| match e {
        ScalingError::TooFewPoints(_) => ScalingError::DegenerateFit,
        other => other,
    })?;
    Ok(ScalingResult { rows, fit })
}

impl ScalingResult {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>8} {:>5} {:>3} {:>12} {:>10} {:>10}", "N", "r", "k", "storage_B", "t_err_m", "r_err_deg");
        for row in &self.rows {
            match &row.chosen {
                Some(c) => {
                    let rep = c.report.as_ref().expect("chosen rows carry a report");
                    let _ = writeln!(
                        out,
                        "{:>8} {:>5} {:>3} {:>12} {:>10.4} {:>10.4}",
                        row.n,
                        c.r,
                        c.k,
                        c.storage_bytes,
                        rep.median_translation_error_m.unwrap_or(f64::NAN),
                        rep.median_rotation_error_deg.unwrap_or(f64::NAN)
                    );
                }
                None => {
                    let _ = writeln!(out, "{:>8} target unreachable", row.n);
                }
            }
        }
        let _ = writeln!(
            out,
            "fit S[MB] = N^a + b: a = {:.4}, b = {:.4}, mse = {:.3e}",
            self.fit.a, self.fit.b_off, self.fit.mse
        );
        out
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            match &row.chosen {
                Some(c) => {
                    let _ = writeln!(out, "n{}_storage_bytes={}", row.n, c.storage_bytes);
                    let _ = writeln!(out, "n{}_r={}", row.n, c.r);
                    let _ = writeln!(out, "n{}_k={}", row.n, c.k);
                }
                None => {
                    let _ = writeln!(out, "n{}_storage_bytes=unreachable", row.n);
                }
            }
        }
        let _ = writeln!(out, "fit_a={}", self.fit.a);
        let _ = writeln!(out, "fit_b={}", self.fit.b_off);
        let _ = writeln!(out, "fit_mse={}", self.fit.mse);
        out
    }
}

/// Times `repetitions` single-threaded `predict` calls cycling through
/// `descriptors`, after [`WARMUP_CALLS`] untimed calls.
pub fn bench_latency(bundle: &ModelBundle, descriptors: &[Vec<f64>], repetitions: usize) -> Result<LatencyStats, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::Spec("repetitions must be at least 1".into()));
    }
    if descriptors.is_empty() {
        return Err(BenchError::NoQueries);
    }
    if let Some(bad) = descriptors.iter().find(|x| x.len() != bundle.dim()) {
        return Err(BenchError::Spec(format!(
            "descriptor dimension {} does not match model dimension {}",
            bad.len(),
            bundle.dim()
        )));
    }
    let mut queries = descriptors.iter().cycle();
    for _ in 0..WARMUP_CALLS {
        std::hint::black_box(bundle.predict(queries.next().expect("cycle")).ok());
    }
    let mut times: Vec<Duration> = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let x = queries.next().expect("cycle");
        let start = Instant::now();
        std::hint::black_box(bundle.predict(std::hint::black_box(x)).ok());
        times.push(start.elapsed());
    }
    Ok(LatencyStats::from_durations(&times))
}
