//! Median pose errors, decode failure rate, routing accuracy and query time
//! of a model on a labelled dataset.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::pgo::{refine_trajectory, PgoError, RelativePoseEdge};
use crate::pipeline::{ModelBundle, PredictError};
use crate::pose::{Dataset, PoseVector};
use crate::stats::{median, LatencyStats};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test descriptors have dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("prediction and ground truth counts differ ({predictions} vs {truth})")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error(transparent)]
    Refine(#[from] PgoError),
}

/// Relative-pose edges between test items (indices into the test set) and
/// the refinement window size.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub edges: Vec<RelativePoseEdge>,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub items: usize,
    pub successes: usize,
    /// `None` when every prediction failed to decode.
    pub median_translation_error_m: Option<f64>,
    pub median_rotation_error_deg: Option<f64>,
    pub decode_failure_rate: f64,
    /// Share of the items nearest to centroid `c` that the classifier routes
    /// to `c`. Empty when the bundle carries no centroids.
    pub per_cluster_routing_accuracy: Vec<Option<f64>>,
    pub query_time: LatencyStats,
    pub refined: bool,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".to_string())
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<32} {}", "items", self.items);
        let _ = writeln!(out, "{:<32} {}", "successful decodes", self.successes);
        let _ = writeln!(out, "{:<32} {:.4}", "decode failure rate", self.decode_failure_rate);
        let _ = writeln!(out, "{:<32} {}", "median translation error (m)", fmt_opt(self.median_translation_error_m));
        let _ = writeln!(out, "{:<32} {}", "median rotation error (deg)", fmt_opt(self.median_rotation_error_deg));
        let _ = writeln!(out, "{:<32} {}", "refined", self.refined);
        for (c, acc) in self.per_cluster_routing_accuracy.iter().enumerate() {
            let _ = writeln!(out, "{:<32} {}", format!("routing accuracy cluster {c}"), fmt_opt(*acc));
        }
        let q = &self.query_time;
        let _ = writeln!(
            out,
            "{:<32} median {:.4}  q1 {:.4}  q3 {:.4}",
            "query time (ms)", q.median_ms, q.q1_ms, q.q3_ms
        );
        out
    }

    /// One `key=value` per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "items={}", self.items);
        let _ = writeln!(out, "successes={}", self.successes);
        let _ = writeln!(out, "decode_failure_rate={}", self.decode_failure_rate);
        let _ = writeln!(out, "median_translation_error_m={}", fmt_opt(self.median_translation_error_m));
        let _ = writeln!(out, "median_rotation_error_deg={}", fmt_opt(self.median_rotation_error_deg));
        let _ = writeln!(out, "refined={}", self.refined);
        for (c, acc) in self.per_cluster_routing_accuracy.iter().enumerate() {
            let _ = writeln!(out, "routing_accuracy_{c}={}", fmt_opt(*acc));
        }
        let q = &self.query_time;
        let _ = writeln!(out, "query_time_median_ms={}", q.median_ms);
        let _ = writeln!(out, "query_time_q1_ms={}", q.q1_ms);
        let _ = writeln!(out, "query_time_q3_ms={}", q.q3_ms);
        out
    }
}

/// Median errors and failure rate of `predictions` (`None` = failed decode)
/// against `truth`.
pub fn summarize_errors(
    predictions: &[Option<PoseVector>],
    truth: &[PoseVector],
) -> Result<(Option<f64>, Option<f64>, f64), EvalError> {
    if predictions.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    let (t_err, r_err): (Vec<f64>, Vec<f64>) = predictions
        .iter()
        .zip(truth)
        .filter_map(|(p, g)| p.as_ref().map(|p| (p.translation_error(g), p.rotation_error_deg(g))))
        .unzip();
    let failures = predictions.len() - t_err.len();
    let rate = if predictions.is_empty() {
        0.0
    } else {
        failures as f64 / predictions.len() as f64
    };
    Ok((median(&t_err), median(&r_err), rate))
}

type Timed = Result<(usize, PoseVector), PredictError>;

fn nearest_row(centroids: &nalgebra::DMatrix<f64>, x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d: f64 = x.iter().enumerate().map(|(j, v)| (v - centroids[(c, j)]).powi(2)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Predicts every test item, optionally refines the successfully decoded
/// trajectory, and summarizes the errors.
///
/// With refinement, failed items are dropped from the trajectory together
/// with every edge touching them; the window shrinks to the number of
/// remaining frames when needed.
pub fn evaluate(bundle: &ModelBundle, test: &Dataset, refinement: Option<&Refinement>) -> Result<EvalReport, EvalError> {
    if test.dim() != bundle.dim() {
        return Err(EvalError::DimensionMismatch {
            expected: bundle.dim(),
            got: test.dim(),
        });
    }
    let results: Vec<(Timed, Duration)> = test
        .items()
        .par_iter()
        .map(|s| {
            let start = Instant::now();
            let out = bundle.predict_label(&s.descriptor).and_then(|(cluster, label)| {
                let pose = crate::codec::decode_pose(&label)?;
                Ok((cluster, pose))
            });
            (out, start.elapsed())
        })
        .collect();

    let durations: Vec<Duration> = results.iter().map(|(_, d)| *d).collect();
    let mut predictions: Vec<Option<PoseVector>> = results
        .iter()
        .map(|(r, _)| r.as_ref().ok().map(|(_, p)| *p))
        .collect();
    for ((r, _), s) in results.iter().zip(test.items()) {
        if let Err(e) = r {
            log::debug!("item {:?}: {e}", s.id);
        }
    }

    let mut refined = false;
    if let Some(refinement) = refinement {
        let kept: Vec<usize> = (0..predictions.len()).filter(|&i| predictions[i].is_some()).collect();
        let mut compact = vec![usize::MAX; predictions.len()];
        for (new, &old) in kept.iter().enumerate() {
            compact[old] = new;
        }
        let mut edges = Vec::with_capacity(refinement.edges.len());
        for e in &refinement.edges {
            if e.i >= predictions.len() || e.j >= predictions.len() {
                return Err(PgoError::InvalidEdge {
                    i: e.i,
                    j: e.j,
                    frames: predictions.len(),
                }
                .into());
            }
            if compact[e.i] != usize::MAX && compact[e.j] != usize::MAX {
                edges.push(RelativePoseEdge {
                    i: compact[e.i],
                    j: compact[e.j],
                    ..*e
                });
            }
        }
        if kept.len() >= 2 {
            let window = refinement.window.min(kept.len());
            if window != refinement.window {
                log::warn!("refinement window {} shrunk to {window}", refinement.window);
            }
            let poses: Vec<PoseVector> = kept.iter().map(|&i| predictions[i].expect("kept")).collect();
            let better = refine_trajectory(&poses, &edges, window)?;
            for (&i, p) in kept.iter().zip(better) {
                predictions[i] = Some(p);
            }
            refined = true;
        }
    }

    let truth = test.poses();
    let (t_med, r_med, rate) = summarize_errors(&predictions, &truth)?;

    let per_cluster_routing_accuracy = match bundle.centroids() {
        Some(centroids) => {
            let k = centroids.nrows();
            let mut hits = vec![0usize; k];
            let mut totals = vec![0usize; k];
            for s in test.items() {
                let t = nearest_row(centroids, &s.descriptor);
                totals[t] += 1;
                if bundle.route(&s.descriptor).expect("dimension checked") == t {
                    hits[t] += 1;
                }
            }
            hits.into_iter()
                .zip(totals)
                .map(|(h, t)| (t > 0).then(|| h as f64 / t as f64))
                .collect()
        }
        None => Vec::new(),
    };

    Ok(EvalReport {
        items: test.len(),
        successes: predictions.iter().filter(|p| p.is_some()).count(),
        median_translation_error_m: t_med,
        median_rotation_error_deg: r_med,
        decode_failure_rate: rate,
        per_cluster_routing_accuracy,
        query_time: LatencyStats::from_durations(&durations),
        refined,
    })
}
