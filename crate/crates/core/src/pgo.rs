//! Windowed translation refinement of predicted trajectories using relative
//! pose measurements, with rotations held at their predicted values.
//!
//! Within a window the refined centers minimize
//! `Σ_(i,j) ‖t_j − t_i − R̂_i t_ij‖² + Σ_i ‖t_i − t̂_i‖²`. Since every edge
//! offset `R̂_i t_ij` is a constant, the three coordinates decouple and each
//! solves `(I + L) x = t̂ + Bᵀc` with `L` the window's edge Laplacian.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::pose::{PoseError, PoseVector};

/// Orthonormality tolerance for edge rotations.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PgoError {
    #[error("edge ({i}, {j}) references a frame outside the window of {frames} frames")]
    InvalidEdge { i: usize, j: usize, frames: usize },
    #[error("edge ({0}, {0}) connects a frame to itself")]
    SelfEdge(usize),
    #[error("edge rotation is not a unit quaternion (norm {0})")]
    NonUnitRotation(f64),
    #[error("window size {size} must be at least 2 and at most the trajectory length {len}")]
    WindowSize { size: usize, len: usize },
    #[error("edge file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("reading edge file: {0}")]
    Io(String),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

/// Relative pose of frame `j` expressed in frame `i`'s coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePoseEdge {
    pub i: usize,
    pub j: usize,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl RelativePoseEdge {
    /// Validates indices and that `q = (qa, qb, qc, qd)` has unit norm.
    pub fn new(i: usize, j: usize, translation: [f64; 3], q: [f64; 4]) -> Result<Self, PgoError> {
        if i == j {
            return Err(PgoError::SelfEdge(i));
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > ROTATION_TOL || translation.iter().any(|v| !v.is_finite()) {
            return Err(PgoError::NonUnitRotation(norm));
        }
        Ok(RelativePoseEdge {
            i,
            j,
            translation: Vector3::from(translation),
            rotation: UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3])),
        })
    }

    /// Edge that exactly agrees with two poses: `t_ij = R_iᵀ (t_j − t_i)`,
    /// `R_ij = R_iᵀ R_j`.
    pub fn between(i: usize, j: usize, a: &PoseVector, b: &PoseVector) -> Self {
        let ra = a.unit_quaternion();
        RelativePoseEdge {
            i,
            j,
            translation: ra.inverse_transform_vector(&(b.translation_vector() - a.translation_vector())),
            rotation: ra.inverse() * b.unit_quaternion(),
        }
    }
}

/// Value of the window objective for the given centers.
pub fn window_objective(
    predicted: &[PoseVector],
    edges: &[RelativePoseEdge],
    centers: &[Vector3<f64>],
) -> f64 {
    let prior: f64 = predicted
        .iter()
        .zip(centers)
        .map(|(p, t)| (t - p.translation_vector()).norm_squared())
        .sum();
    let relative: f64 = edges
        .iter()
        .map(|e| {
            let offset = predicted[e.i].rotation_matrix() * e.translation;
            (centers[e.j] - centers[e.i] - offset).norm_squared()
        })
        .sum();
    prior + relative
}

/// Optimal centers for one window. Edge indices are window-local.
pub fn refine_window(
    predicted: &[PoseVector],
    edges: &[RelativePoseEdge],
) -> Result<Vec<Vector3<f64>>, PgoError> {
    let n = predicted.len();
    for e in edges {
        if e.i >= n || e.j >= n {
            return Err(PgoError::InvalidEdge {
                i: e.i,
                j: e.j,
                frames: n,
            });
        }
        if e.i == e.j {
            return Err(PgoError::SelfEdge(e.i));
        }
    }
    if edges.is_empty() {
        return Ok(predicted.iter().map(|p| p.translation_vector()).collect());
    }
    let mut system = DMatrix::<f64>::identity(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, 3);
    for (row, p) in predicted.iter().enumerate() {
        for (c, v) in p.translation().iter().enumerate() {
            rhs[(row, c)] = *v;
        }
    }
    for e in edges {
        let offset = predicted[e.i].rotation_matrix() * e.translation;
        system[(e.i, e.i)] += 1.0;
        system[(e.j, e.j)] += 1.0;
        system[(e.i, e.j)] -= 1.0;
        system[(e.j, e.i)] -= 1.0;
        for c in 0..3 {
            rhs[(e.j, c)] += offset[c];
            rhs[(e.i, c)] -= offset[c];
        }
    }
    let chol = system
        .cholesky()
        .expect("identity plus a graph Laplacian is positive definite");
    let solution = chol.solve(&rhs);
    Ok((0..n)
        .map(|row| Vector3::new(solution[(row, 0)], solution[(row, 1)], solution[(row, 2)]))
        .collect())
}

/// Refines consecutive non-overlapping windows of `window` frames; a trailing
/// single frame joins the previous window. Edges crossing a window boundary
/// are ignored. Rotations pass through untouched.
pub fn refine_trajectory(
    poses: &[PoseVector],
    edges: &[RelativePoseEdge],
    window: usize,
) -> Result<Vec<PoseVector>, PgoError> {
    let len = poses.len();
    if window < 2 || window > len {
        return Err(PgoError::WindowSize { size: window, len });
    }
    for e in edges {
        if e.i >= len || e.j >= len {
            return Err(PgoError::InvalidEdge {
                i: e.i,
                j: e.j,
                frames: len,
            });
        }
    }
    let windows = window_ranges(len, window);
    let refined: Vec<Vec<PoseVector>> = windows
        .par_iter()
        .map(|range| {
            let local: Vec<RelativePoseEdge> = edges
                .iter()
                .filter(|e| range.contains(&e.i) && range.contains(&e.j))
                .map(|e| RelativePoseEdge {
                    i: e.i - range.start,
                    j: e.j - range.start,
                    ..*e
                })
                .collect();
            let frames = &poses[range.clone()];
            let centers = refine_window(frames, &local)?;
            frames
                .iter()
                .zip(centers)
                .map(|(p, t)| Ok(p.with_translation([t.x, t.y, t.z])?))
                .collect::<Result<Vec<_>, PgoError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(refined.into_iter().flatten().collect())
}

fn window_ranges(len: usize, window: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges: Vec<std::ops::Range<usize>> = (0..len)
        .step_by(window)
        .map(|start| start..(start + window).min(len))
        .collect();
    if ranges.len() > 1 && ranges.last().is_some_and(|r| r.len() < 2) {
        let tail = ranges.pop().expect("non-empty");
        ranges.last_mut().expect("at least one window").end = tail.end;
    }
    ranges
}

/// Consecutive-frame edges `(i, i + 1)` that agree exactly with `poses`.
pub fn consecutive_edges(poses: &[PoseVector]) -> Vec<RelativePoseEdge> {
    poses
        .windows(2)
        .enumerate()
        .map(|(i, w)| RelativePoseEdge::between(i, i + 1, &w[0], &w[1]))
        .collect()
}

/// Parses lines of `i j tx ty tz qa qb qc qd`. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_edges(text: &str) -> Result<Vec<RelativePoseEdge>, PgoError> {
    let mut edges = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| PgoError::Parse { line: n + 1, reason };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", fields.len())));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad frame index {s:?}")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        let i = idx(fields[0])?;
        let j = idx(fields[1])?;
        let t = [num(fields[2])?, num(fields[3])?, num(fields[4])?];
        let q = [num(fields[5])?, num(fields[6])?, num(fields[7])?, num(fields[8])?];
        edges.push(RelativePoseEdge::new(i, j, t, q).map_err(|e| err(e.to_string()))?);
    }
    Ok(edges)
}

pub fn load_edges(path: impl AsRef<Path>) -> Result<Vec<RelativePoseEdge>, PgoError> {
    let text = fs::read_to_string(path).map_err(|e| PgoError::Io(e.to_string()))?;
    parse_edges(&text)
}

/// Formats edges in the text format read by [`parse_edges`].
pub fn format_edges(edges: &[RelativePoseEdge]) -> String {
    let mut out = String::new();
    for e in edges {
        let q = e.rotation.quaternion();
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {}\n",
            e.i, e.j, e.translation.x, e.translation.y, e.translation.z, q.w, q.i, q.j, q.k
        ));
    }
    out
}

/// Dense oracle used in tests: stacks every residual row of the window
/// objective into `J x = y` over all `3T` unknowns and solves `JᵀJ x = Jᵀy`.
#[doc(hidden)]
pub fn dense_normal_equation_solve(predicted: &[PoseVector], edges: &[RelativePoseEdge]) -> Vec<Vector3<f64>> {
    let n = predicted.len();
    let rows = 3 * (n + edges.len());
    let mut jac = DMatrix::<f64>::zeros(rows, 3 * n);
    let mut y = DVector::<f64>::zeros(rows);
    let mut row = 0;
    for (i, p) in predicted.iter().enumerate() {
        for c in 0..3 {
            jac[(row, 3 * i + c)] = 1.0;
            y[row] = p.translation()[c];
            row += 1;
        }
    }
    for e in edges {
        let offset = predicted[e.i].rotation_matrix() * e.translation;
        for c in 0..3 {
            jac[(row, 3 * e.j + c)] += 1.0;
            jac[(row, 3 * e.i + c)] -= 1.0;
            y[row] = offset[c];
            row += 1;
        }
    }
    let normal = jac.tr_mul(&jac);
    let x = normal.lu().solve(&jac.tr_mul(&y)).expect("normal matrix is invertible");
    (0..n).map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trajectory(n: usize, seed: u64) -> Vec<PoseVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let q = [1.0, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
                PoseVector::new(q, [i as f64 * 0.5, rng.random_range(-1.0..1.0), 1.5]).unwrap()
            })
            .collect()
    }

    fn noisy(edges: &[RelativePoseEdge], sigma: f64, seed: u64) -> Vec<RelativePoseEdge> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        edges
            .iter()
            .map(|e| RelativePoseEdge {
                translation: e.translation + Vector3::from_fn(|_, _| rng.random_range(-sigma..sigma)),
                ..*e
            })
            .collect()
    }

    #[test]
    fn consistent_edges_are_a_fixpoint() {
        let poses = trajectory(7, 1);
        let edges = consecutive_edges(&poses);
        let refined = refine_window(&poses, &edges).unwrap();
        for (p, t) in poses.iter().zip(&refined) {
            assert!((p.translation_vector() - t).norm() < 1e-10);
        }
    }

    #[test]
    fn no_edges_is_identity() {
        let poses = trajectory(4, 2);
        let refined = refine_window(&poses, &[]).unwrap();
        for (p, t) in poses.iter().zip(&refined) {
            assert_eq!(p.translation_vector(), *t);
        }
    }

    #[test]
    fn matches_dense_oracle() {
        let poses = trajectory(5, 3);
        let edges = noisy(&consecutive_edges(&trajectory(5, 4)), 0.3, 5);
        let ours = refine_window(&poses, &edges).unwrap();
        let oracle = dense_normal_equation_solve(&poses, &edges);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn non_consecutive_edges_are_supported() {
        let poses = trajectory(6, 6);
        let truth = trajectory(6, 7);
        let edges = noisy(
            &[
                RelativePoseEdge::between(0, 3, &truth[0], &truth[3]),
                RelativePoseEdge::between(5, 1, &truth[5], &truth[1]),
                RelativePoseEdge::between(2, 4, &truth[2], &truth[4]),
            ],
            0.1,
            8,
        );
        let ours = refine_window(&poses, &edges).unwrap();
        let oracle = dense_normal_equation_solve(&poses, &edges);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn invalid_edges() {
        let poses = trajectory(3, 9);
        let bad = RelativePoseEdge::between(0, 3, &poses[0], &poses[1]);
        assert_eq!(
            refine_window(&poses, &[bad]),
            Err(PgoError::InvalidEdge { i: 0, j: 3, frames: 3 })
        );
        assert_eq!(
            RelativePoseEdge::new(1, 1, [0.0; 3], [1.0, 0.0, 0.0, 0.0]),
            Err(PgoError::SelfEdge(1))
        );
        assert!(matches!(
            RelativePoseEdge::new(0, 1, [0.0; 3], [2.0, 0.0, 0.0, 0.0]),
            Err(PgoError::NonUnitRotation(_))
        ));
    }

    #[test]
    fn window_layout() {
        assert_eq!(window_ranges(10, 5), vec![0..5, 5..10]);
        assert_eq!(window_ranges(12, 5), vec![0..5, 5..10, 10..12]);
        assert_eq!(window_ranges(11, 5), vec![0..5, 5..11]);
        assert_eq!(window_ranges(3, 3), vec![0..3]);
    }

    #[test]
    fn trajectory_refinement() {
        let poses = trajectory(12, 10);
        assert_eq!(refine_trajectory(&poses, &[], 1), Err(PgoError::WindowSize { size: 1, len: 12 }));
        let consistent = consecutive_edges(&poses);
        let same = refine_trajectory(&poses, &consistent, 5).unwrap();
        for (a, b) in poses.iter().zip(&same) {
            assert!(a.translation_error(b) < 1e-10);
        }
        let edges = noisy(&consistent, 0.2, 11);
        let full = refine_trajectory(&poses, &edges, 12).unwrap();
        let direct = refine_window(&poses, &edges).unwrap();
        for (p, t) in full.iter().zip(&direct) {
            assert!((p.translation_vector() - t).norm() < 1e-12);
        }
        for (a, b) in poses.iter().zip(&full) {
            assert_eq!(a.quaternion(), b.quaternion());
        }
    }

    #[test]
    fn edge_file_round_trip() {
        let poses = trajectory(4, 12);
        let edges = consecutive_edges(&poses);
        let text = format!("# i j tx ty tz qa qb qc qd\n\n{}", format_edges(&edges));
        let parsed = parse_edges(&text).unwrap();
        assert_eq!(parsed.len(), 3);
        for (a, b) in parsed.iter().zip(&edges) {
            assert_eq!((a.i, a.j), (b.i, b.j));
            assert!((a.translation - b.translation).norm() < 1e-12);
        }
        assert!(matches!(parse_edges("0 1 0 0 0 1 0 0"), Err(PgoError::Parse { line: 1, .. })));
        assert!(matches!(parse_edges("0 1 x 0 0 1 0 0 0"), Err(PgoError::Parse { line: 1, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn objective_never_increases(seed in 0u64..10_000, n in 2usize..11, sigma in 0.0f64..1.0) {
            let poses = trajectory(n, seed);
            let edges = noisy(&consecutive_edges(&trajectory(n, seed + 1)), sigma, seed + 2);
            let start: Vec<Vector3<f64>> = poses.iter().map(|p| p.translation_vector()).collect();
            let refined = refine_window(&poses, &edges).unwrap();
            prop_assert!(
                window_objective(&poses, &edges, &refined) <= window_objective(&poses, &edges, &start) + 1e-12
            );
        }

        #[test]
        fn translation_equivariance(seed in 0u64..10_000, shift in prop::array::uniform3(-20.0f64..20.0)) {
            let poses = trajectory(6, seed);
            let edges = noisy(&consecutive_edges(&trajectory(6, seed + 1)), 0.3, seed + 2);
            let shifted: Vec<PoseVector> = poses
                .iter()
                .map(|p| {
                    let t = p.translation();
                    p.with_translation([t[0] + shift[0], t[1] + shift[1], t[2] + shift[2]]).unwrap()
                })
                .collect();
            let a = refine_window(&poses, &edges).unwrap();
            let b = refine_window(&shifted, &edges).unwrap();
            let s = Vector3::from(shift);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x + s - y).norm() < 1e-9);
            }
        }
    }
}
