//! Least-squares fit of `S = N^a + b` to (training size, storage) points.

use thiserror::Error;

/// Smallest number of points accepted by [`fit_scaling_curve`].
pub const MIN_POINTS: usize = 3;
/// Upper end of the exponent search interval `(0, A_MAX]`.
pub const A_MAX: f64 = 2.0;

const GRID: usize = 400;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("need at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("all points share the same N; exponent is not identifiable")]
    DegenerateFit,
    #[error("point ({n}, {s}) needs N > 1 and finite S > 0")]
    InvalidPoint { n: f64, s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub a: f64,
    pub b_off: f64,
    /// Mean squared residual of the fit.
    pub mse: f64,
    pub points: Vec<(f64, f64)>,
}

impl ScalingFit {
    pub fn predict(&self, n: f64) -> f64 {
        n.powf(self.a) + self.b_off
    }
}

fn offset_and_mse(points: &[(f64, f64)], a: f64) -> (f64, f64) {
    let m = points.len() as f64;
    let b = points.iter().map(|&(n, s)| s - n.powf(a)).sum::<f64>() / m;
    let mse = points
        .iter()
        .map(|&(n, s)| (s - n.powf(a) - b).powi(2))
        .sum::<f64>()
        / m;
    (b, mse)
}

/// Fits `(a, b)` by a coarse grid over `a ∈ (0, 2]` followed by golden-section
/// refinement around the best grid cell; `b` is the closed-form least-squares
/// offset for each `a`.
pub fn fit_scaling_curve(points: &[(f64, f64)]) -> Result<ScalingFit, ScalingError> {
    if points.len() < MIN_POINTS {
        return Err(ScalingError::TooFewPoints(points.len()));
    }
    for &(n, s) in points {
        if !(n.is_finite() && n > 1.0 && s.is_finite() && s > 0.0) {
            return Err(ScalingError::InvalidPoint { n, s });
        }
    }
    if points.iter().all(|&(n, _)| n == points[0].0) {
        return Err(ScalingError::DegenerateFit);
    }
    let mse = |a: f64| offset_and_mse(points, a).1;
    let step = A_MAX / GRID as f64;
    let best = (1..=GRID)
        .map(|i| i as f64 * step)
        .min_by(|x, y| mse(*x).total_cmp(&mse(*y)))
        .expect("non-empty grid");
    let (mut lo, mut hi) = ((best - step).max(f64::EPSILON), (best + step).min(A_MAX));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (mse(x1), mse(x2));
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = mse(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = mse(x2);
        }
    }
    let a = 0.5 * (lo + hi);
    let (b_off, mse) = offset_and_mse(points, a);
    Ok(ScalingFit {
        a,
        b_off,
        mse,
        points: points.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact(a: f64, b: f64, ns: &[f64]) -> Vec<(f64, f64)> {
        ns.iter().map(|&n| (n, n.powf(a) + b)).collect()
    }

    #[test]
    fn recovers_generating_model() {
        let fit = fit_scaling_curve(&exact(0.3, 2.0, &[100.0, 1000.0, 5000.0, 20000.0])).unwrap();
        assert!((fit.a - 0.3).abs() < 1e-3, "{fit:?}");
        assert!((fit.b_off - 2.0).abs() < 1e-3, "{fit:?}");
        assert!(fit.mse < 1e-8);
    }

    #[test]
    fn arity_and_degenerate_inputs() {
        assert_eq!(
            fit_scaling_curve(&[(10.0, 1.0), (20.0, 2.0)]),
            Err(ScalingError::TooFewPoints(2))
        );
        assert_eq!(
            fit_scaling_curve(&[(10.0, 1.0), (10.0, 2.0), (10.0, 3.0)]),
            Err(ScalingError::DegenerateFit)
        );
        assert!(matches!(
            fit_scaling_curve(&[(1.0, 1.0), (10.0, 2.0), (20.0, 3.0)]),
            Err(ScalingError::InvalidPoint { .. })
        ));
    }

    proptest! {
        #[test]
        fn exact_family_has_zero_mse(a in 0.05f64..1.9, b in -3.0f64..3.0) {
            let ns = [50.0, 200.0, 1000.0, 4000.0];
            let pts = exact(a, b, &ns);
            prop_assume!(pts.iter().all(|p| p.1 > 0.0));
            let fit = fit_scaling_curve(&pts).unwrap();
            prop_assert!(fit.mse <= 1e-10, "{:?}", fit);
            prop_assert!((fit.a - a).abs() < 1e-6);
        }
    }
}
