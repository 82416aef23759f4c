//! Label-space compression by column subset selection.
//!
//! A subset `C` of `r` label columns is chosen so that the span of `Y_C`
//! reconstructs the binary label matrix `Y` as well as possible, and the
//! lifting matrix `Z = pinv(Y_C) Y` maps reduced labels back to full labels.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{BinaryLabel, Precision, POSE_COMPONENTS};
use crate::config::CssStrategy;

/// Largest number of subsets the exhaustive strategy will enumerate.
pub const BRUTEFORCE_LIMIT: u128 = 1_000_000;

/// Number of random draws for [`CssStrategy::Sampled`].
pub const SAMPLED_RESTARTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("label matrix must have at least one row and one column")]
    EmptyLabels,
    #[error("label matrix entry ({row}, {col}) is not 0 or 1")]
    NotBinary { row: usize, col: usize },
    #[error("embedding size {r} must be in [1, {columns}]")]
    EmbeddingSize { r: usize, columns: usize },
    #[error("column index {index} out of range for {columns} columns")]
    IndexOutOfRange { index: usize, columns: usize },
    #[error("column index {0} selected twice")]
    DuplicateIndex(usize),
    #[error("exhaustive selection would enumerate {count} subsets (limit {BRUTEFORCE_LIMIT})")]
    BruteforceTooLarge { count: u128 },
}

/// `N x 7b` matrix of pose bits, stored as 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    y: DMatrix<f64>,
}

impl LabelMatrix {
    pub fn new(y: DMatrix<f64>) -> Result<Self, EmbedError> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(EmbedError::EmptyLabels);
        }
        for col in 0..y.ncols() {
            for row in 0..y.nrows() {
                let v = y[(row, col)];
                if v != 0.0 && v != 1.0 {
                    return Err(EmbedError::NotBinary { row, col });
                }
            }
        }
        Ok(LabelMatrix { y })
    }

    /// Stacks encoded labels as rows. All labels must share a precision.
    pub fn from_labels(labels: &[BinaryLabel]) -> Result<Self, EmbedError> {
        let first = labels.first().ok_or(EmbedError::EmptyLabels)?;
        let cols = first.len();
        let mut y = DMatrix::zeros(labels.len(), cols);
        for (i, label) in labels.iter().enumerate() {
            for (j, &bit) in label.bits().iter().enumerate() {
                if bit {
                    y[(i, j)] = 1.0;
                }
            }
        }
        Ok(LabelMatrix { y })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn nrows(&self) -> usize {
        self.y.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.y.ncols()
    }

    /// `Y_C`, the selected columns in the order given.
    pub fn columns(&self, selection: &[usize]) -> DMatrix<f64> {
        self.y.select_columns(selection.iter())
    }

    fn check_selection(&self, selection: &[usize]) -> Result<(), EmbedError> {
        let columns = self.ncols();
        let mut seen = vec![false; columns];
        for &index in selection {
            if index >= columns {
                return Err(EmbedError::IndexOutOfRange { index, columns });
            }
            if std::mem::replace(&mut seen[index], true) {
                return Err(EmbedError::DuplicateIndex(index));
            }
        }
        Ok(())
    }
}

/// Selected columns and the lifting matrix `Z` (`r x 7b`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    columns: Vec<usize>,
    z: DMatrix<f64>,
}

impl EmbeddingModel {
    /// Rebuilds a model from stored parts, checking shape consistency.
    pub fn from_parts(columns: Vec<usize>, z: DMatrix<f64>) -> Result<Self, EmbedError> {
        if z.nrows() != columns.len() || columns.is_empty() {
            return Err(EmbedError::EmbeddingSize {
                r: columns.len(),
                columns: z.ncols(),
            });
        }
        let labels = LabelMatrix {
            y: DMatrix::zeros(1, z.ncols()),
        };
        labels.check_selection(&columns)?;
        Ok(EmbeddingModel { columns, z })
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn r(&self) -> usize {
        self.columns.len()
    }

    pub fn label_len(&self) -> usize {
        self.z.ncols()
    }

    /// Real-valued full label `vᵀ Z` for a reduced label `v`.
    pub fn lift(&self, reduced: &DVector<f64>) -> DVector<f64> {
        self.z.tr_mul(reduced)
    }

    /// How many selected columns fall inside each of the seven pose components.
    pub fn component_coverage(&self, precision: Precision) -> [usize; POSE_COMPONENTS] {
        let mut coverage = [0; POSE_COMPONENTS];
        for &c in &self.columns {
            coverage[c / precision.bits()] += 1;
        }
        coverage
    }
}

/// Rank cutoff `max(rows, cols) * eps * sigma_max`.
pub fn pinv_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Orthonormal basis of the column space of `a`, using the SVD rank cutoff.
fn column_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let tol = pinv_tolerance(a.nrows(), a.ncols(), sigma_max);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol && s > 0.0)
        .map(|(i, _)| i)
        .collect();
    u.select_columns(keep.iter())
}

/// Moore-Penrose pseudo-inverse with the SVD rank cutoff.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let tol = pinv_tolerance(a.nrows(), a.ncols(), sigma_max);
    let mut pinv = DMatrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            pinv += (vi / s) * ui.transpose();
        }
    }
    pinv
}

/// `‖Y − Y_C pinv(Y_C) Y‖_F`.
pub fn css_residual(labels: &LabelMatrix, selection: &[usize]) -> Result<f64, EmbedError> {
    labels.check_selection(selection)?;
    Ok(residual_unchecked(labels, selection))
}

fn residual_unchecked(labels: &LabelMatrix, selection: &[usize]) -> f64 {
    if selection.is_empty() {
        return labels.y.norm();
    }
    let basis = column_basis(&labels.columns(selection));
    let projected = &basis * (basis.tr_mul(&labels.y));
    (&labels.y - projected).norm()
}

/// Chooses `r` label columns with the requested strategy.
pub fn select_columns(
    labels: &LabelMatrix,
    r: usize,
    strategy: CssStrategy,
    seed: u64,
) -> Result<Vec<usize>, EmbedError> {
    let columns = labels.ncols();
    if r == 0 || r > columns {
        return Err(EmbedError::EmbeddingSize { r, columns });
    }
    match strategy {
        CssStrategy::Greedy => Ok(greedy_selection(labels, r).columns),
        CssStrategy::Sampled => Ok(sampled_selection(labels, r, seed)),
        CssStrategy::Bruteforce => bruteforce_selection(labels, r),
    }
}

/// Greedy selection order plus the residual norm after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    pub columns: Vec<usize>,
    /// `residuals[j]` is the residual after `j + 1` columns.
    pub residuals: Vec<f64>,
}

/// Forward selection: each step adds the column whose orthogonalized
/// direction removes the most residual energy. Works on the Gram matrix of
/// the residual, `G = RᵀR`, which a step updates by a rank-one downdate.
/// Ties go to the lowest column index.
pub fn greedy_selection(labels: &LabelMatrix, r: usize) -> GreedyTrace {
    let n = labels.ncols();
    let mut gram = labels.y.tr_mul(&labels.y);
    let scale = gram.diagonal().max().max(1.0);
    let zero_tol = 1e-10 * scale;
    let mut chosen = vec![false; n];
    let mut columns = Vec::with_capacity(r);
    let mut residuals = Vec::with_capacity(r);

    for _ in 0..r.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| !chosen[j]) {
            let gjj = gram[(j, j)];
            let gain = if gjj > zero_tol {
                gram.column(j).norm_squared() / gjj
            } else {
                0.0
            };
            match best {
                Some((_, g)) if gain <= g + 1e-12 * g.max(1.0) => {}
                _ => best = Some((j, gain)),
            }
        }
        let (j, _) = best.expect("at least one unselected column");
        chosen[j] = true;
        columns.push(j);
        let gjj = gram[(j, j)];
        if gjj > zero_tol {
            let v = gram.column(j) / gjj.sqrt();
            gram.ger(-1.0, &v, &v, 1.0);
        }
        residuals.push(gram.trace().max(0.0).sqrt());
    }
    GreedyTrace { columns, residuals }
}

/// Best of [`SAMPLED_RESTARTS`] draws, each picking `r` distinct columns with
/// probability proportional to squared column norm.
fn sampled_selection(labels: &LabelMatrix, r: usize, seed: u64) -> Vec<usize> {
    let n = labels.ncols();
    let weights: Vec<f64> = (0..n).map(|j| labels.y.column(j).norm_squared()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..SAMPLED_RESTARTS {
        let mut available = vec![true; n];
        let mut draw = Vec::with_capacity(r);
        for _ in 0..r {
            let total: f64 = (0..n).filter(|&j| available[j]).map(|j| weights[j]).sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = None;
                for j in (0..n).filter(|&j| available[j] && weights[j] > 0.0) {
                    pick = Some(j);
                    if u < weights[j] {
                        break;
                    }
                    u -= weights[j];
                }
                pick.expect("positive total weight")
            } else {
                let open: Vec<usize> = (0..n).filter(|&j| available[j]).collect();
                open[rng.random_range(0..open.len())]
            };
            available[pick] = false;
            draw.push(pick);
        }
        draw.sort_unstable();
        let residual = residual_unchecked(labels, &draw);
        if best.as_ref().is_none_or(|(b, _)| residual < *b) {
            best = Some((residual, draw));
        }
    }
    best.expect("at least one restart").1
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exhaustive minimum over all subsets; among equal residuals (up to
/// round-off) the lexicographically first subset wins.
fn bruteforce_selection(labels: &LabelMatrix, r: usize) -> Result<Vec<usize>, EmbedError> {
    let count = binomial(labels.ncols(), r);
    if count > BRUTEFORCE_LIMIT {
        return Err(EmbedError::BruteforceTooLarge { count });
    }
    let subsets: Vec<Vec<usize>> = (0..labels.ncols()).combinations(r).collect();
    let residuals: Vec<f64> = subsets
        .par_iter()
        .map(|s| residual_unchecked(labels, s))
        .collect();
    let min = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = 1e-12 * min.max(1.0);
    let index = residuals
        .iter()
        .position(|&v| v <= min + slack)
        .expect("non-empty enumeration");
    Ok(subsets[index].clone())
}

/// `Z = pinv(Y_C) Y` for the given selection, together with `Y_C`.
pub fn fit_projection(
    labels: &LabelMatrix,
    selection: &[usize],
) -> Result<(EmbeddingModel, DMatrix<f64>), EmbedError> {
    if selection.is_empty() {
        return Err(EmbedError::EmbeddingSize {
            r: 0,
            columns: labels.ncols(),
        });
    }
    labels.check_selection(selection)?;
    let reduced = labels.columns(selection);
    let z = pseudo_inverse(&reduced) * &labels.y;
    Ok((
        EmbeddingModel {
            columns: selection.to_vec(),
            z,
        },
        reduced,
    ))
}
