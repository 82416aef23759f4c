//! Closed-form ridge regression from descriptors to reduced labels.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RidgeError {
    #[error("non-finite entry in {0}")]
    NonFiniteInput(&'static str),
    #[error("ridge regularizer must be positive, got {0}")]
    Lambda(f64),
    #[error("design matrix has {x_rows} rows but targets have {y_rows}")]
    RowMismatch { x_rows: usize, y_rows: usize },
    #[error("no training rows")]
    Empty,
    #[error("regularized Gram matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("descriptor has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Weight matrix `W` (`d x r`) mapping a descriptor to a reduced label.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    w: DMatrix<f64>,
    lambda: f64,
}

impl RegressorModel {
    pub fn from_parts(w: DMatrix<f64>, lambda: f64) -> Result<Self, RidgeError> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(RidgeError::NonFiniteInput("weights"));
        }
        Ok(RegressorModel { w, lambda })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn r(&self) -> usize {
        self.w.ncols()
    }

    /// `Wᵀ x`.
    pub fn predict_reduced(&self, x: &[f64]) -> Result<DVector<f64>, RidgeError> {
        if x.len() != self.w.nrows() {
            return Err(RidgeError::DimensionMismatch {
                expected: self.w.nrows(),
                got: x.len(),
            });
        }
        let mut out = DVector::zeros(self.w.ncols());
        for (j, col) in self.w.column_iter().enumerate() {
            out[j] = col.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }
}

/// Minimizes `‖XW − Y‖²_F + λ‖W‖²_F`.
///
/// With at least as many rows as features this factorizes `XᵀX + λI`
/// (`d x d`); otherwise it uses the identity
/// `(XᵀX + λI)⁻¹Xᵀ = Xᵀ(XXᵀ + λI)⁻¹` and factorizes the `N x N` system.
/// Both return the same `W`.
pub fn fit_ridge(
    x: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<RegressorModel, RidgeError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(RidgeError::Lambda(lambda));
    }
    if x.nrows() == 0 {
        return Err(RidgeError::Empty);
    }
    if x.nrows() != targets.nrows() {
        return Err(RidgeError::RowMismatch {
            x_rows: x.nrows(),
            y_rows: targets.nrows(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RidgeError::NonFiniteInput("descriptors"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(RidgeError::NonFiniteInput("targets"));
    }

    let (n, d) = x.shape();
    let w = if n >= d {
        let mut gram = x.tr_mul(x);
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let chol = gram.cholesky().ok_or(RidgeError::NotPositiveDefinite)?;
        chol.solve(&x.tr_mul(targets))
    } else {
        let mut kernel = x * x.transpose();
        for i in 0..n {
            kernel[(i, i)] += lambda;
        }
        let chol = kernel.cholesky().ok_or(RidgeError::NotPositiveDefinite)?;
        x.tr_mul(&chol.solve(targets))
    };
    RegressorModel::from_parts(w, lambda)
}

/// `‖(XᵀX + λI)W − XᵀY‖_F / ‖XᵀY‖_F`.
pub fn normal_equation_residual(
    x: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    model: &RegressorModel,
) -> f64 {
    let w = model.weights();
    let xty = x.tr_mul(targets);
    let lhs = x.tr_mul(&(x * w)) + w * model.lambda();
    let denom = xty.norm();
    if denom == 0.0 {
        lhs.norm()
    } else {
        (lhs - xty).norm() / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_design_shrinks_targets() {
        let y = random(6, 3, 1);
        let model = fit_ridge(&DMatrix::identity(6, 6), &y, 0.25).unwrap();
        assert!((model.weights() - &y / 1.25).norm() < 1e-12);
    }

    #[test]
    fn zero_targets_give_zero_weights() {
        let model = fit_ridge(&random(20, 5, 2), &DMatrix::zeros(20, 3), 0.1).unwrap();
        assert_eq!(model.weights().norm(), 0.0);
    }

    #[test]
    fn both_solve_paths_agree() {
        let x = random(30, 40, 3);
        let y = random(30, 4, 4);
        let dual = fit_ridge(&x, &y, 0.3).unwrap();
        // primal route on the same problem, built by hand
        let mut gram = x.tr_mul(&x);
        for i in 0..40 {
            gram[(i, i)] += 0.3;
        }
        let primal = gram.lu().solve(&x.tr_mul(&y)).unwrap();
        assert!((dual.weights() - primal).norm() < 1e-9);
        assert!(normal_equation_residual(&x, &y, &dual) < 1e-10);
    }

    #[test]
    fn interpolating_fit_reproduces_targets() {
        let x = random(10, 25, 5);
        let y = random(10, 3, 6);
        let model = fit_ridge(&x, &y, 1e-8).unwrap();
        // direct solve of X W = Y in the row space of X
        let direct = x.transpose() * (&x * x.transpose()).lu().solve(&y).unwrap();
        for i in 0..10 {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let pred = model.predict_reduced(&xi).unwrap();
            let oracle = direct.tr_mul(&x.row(i).transpose());
            for j in 0..3 {
                assert!((pred[j] - y[(i, j)]).abs() < 1e-4);
                assert!((pred[j] - oracle[j]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn prediction_examples() {
        let zero = RegressorModel::from_parts(DMatrix::zeros(4, 2), 0.1).unwrap();
        assert_eq!(zero.predict_reduced(&[1.0, 2.0, 3.0, 4.0]).unwrap(), DVector::zeros(2));
        let eye = RegressorModel::from_parts(DMatrix::identity(3, 3), 0.1).unwrap();
        assert_eq!(
            eye.predict_reduced(&[1.0, -2.0, 3.0]).unwrap(),
            DVector::from_vec(vec![1.0, -2.0, 3.0])
        );
        assert_eq!(
            eye.predict_reduced(&[1.0]),
            Err(RidgeError::DimensionMismatch { expected: 3, got: 1 })
        );
    }

    #[test]
    fn input_validation() {
        let mut x = random(5, 2, 7);
        let y = random(5, 1, 8);
        assert_eq!(fit_ridge(&x, &y, 0.0), Err(RidgeError::Lambda(0.0)));
        assert!(matches!(
            fit_ridge(&x, &random(4, 1, 8), 0.1),
            Err(RidgeError::RowMismatch { .. })
        ));
        x[(2, 1)] = f64::INFINITY;
        assert_eq!(fit_ridge(&x, &y, 0.1), Err(RidgeError::NonFiniteInput("descriptors")));
    }

    #[test]
    fn huge_lambda_vanishes() {
        let x = random(40, 6, 9);
        let y = random(40, 3, 10);
        let sigma_max = x.singular_values().max();
        let model = fit_ridge(&x, &y, 1e8 * sigma_max * sigma_max).unwrap();
        assert!(model.weights().norm() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn shrinkage_is_monotone(seed in 0u64..1000, l1 in 1e-4f64..10.0, factor in 1.0f64..100.0) {
            let x = random(25, 8, seed);
            let y = random(25, 2, seed + 1);
            let w1 = fit_ridge(&x, &y, l1).unwrap().weights().norm();
            let w2 = fit_ridge(&x, &y, l1 * factor).unwrap().weights().norm();
            prop_assert!(w2 <= w1 * (1.0 + 1e-12));
        }

        #[test]
        fn row_permutation_invariance(seed in 0u64..1000, shift in 1usize..19) {
            let x = random(20, 6, seed);
            let y = random(20, 3, seed + 7);
            let perm: Vec<usize> = (0..20).map(|i| (i * 7 + shift) % 20).collect();
            let xp = x.select_rows(perm.iter());
            let yp = y.select_rows(perm.iter());
            let a = fit_ridge(&x, &y, 0.1).unwrap();
            let b = fit_ridge(&xp, &yp, 0.1).unwrap();
            prop_assert!((a.weights() - b.weights()).norm() < 1e-8);
        }
    }

    #[test]
    fn normal_equations_hold_on_tall_problem() {
        let x = random(200, 64, 11);
        let y = random(200, 10, 12);
        let model = fit_ridge(&x, &y, 0.1).unwrap();
        assert_relative_eq!(normal_equation_residual(&x, &y, &model), 0.0, epsilon = 1e-8);
    }
}
