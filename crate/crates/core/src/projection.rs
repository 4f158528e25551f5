//! Spectral-norm projection keeping `I - W W^T` positive semidefinite.
//!
//! If `I - W W^T` is PD then so is every region precision
//! `I - sum_j alpha_j W_j W_j^T` with `alpha_j` in `[0, 1]`, which is what makes
//! the leaky marginal normalizable. The Frobenius-nearest feasible matrix is
//! obtained by clipping singular values at 1 and keeping the singular vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalue slack allowed when declaring `I - W W^T` safe.
pub const SAFETY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionReport {
    pub clipped_count: usize,
    pub max_singular_value_before: f64,
    pub max_singular_value_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyCheck {
    pub safe: bool,
    /// Smallest eigenvalue of `I - W W^T`.
    pub min_eigenvalue: f64,
}

fn check_finite(w: &DMatrix<f64>) -> Result<()> {
    if w.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("weight matrix".into()))
    }
}

/// Eigen-decomposition of the smaller Gram matrix (`W^T W` or `W W^T`).
/// Clustered singular values near 1 are common after a projection, and the
/// symmetric eigensolver stays accurate there.
fn gram_eigen(w: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>, bool)> {
    let left = w.nrows() < w.ncols();
    let gram = if left { w * w.transpose() } else { w.transpose() * w };
    let eig = gram.try_symmetric_eigen(f64::EPSILON, 0).ok_or(Error::SvdFailed)?;
    Ok((eig.eigenvalues, eig.eigenvectors, left))
}

pub fn singular_values(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(w)?;
    if w.is_empty() {
        return Ok(Vec::new());
    }
    let (values, _, _) = gram_eigen(w)?;
    Ok(values.iter().map(|e| e.max(0.0).sqrt()).collect())
}

pub fn spectral_norm(w: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(w)?.into_iter().fold(0.0, f64::max))
}

/// Frobenius-nearest `W~` with `I - W~ W~^T >= 0`: `U min(S, 1) V^T`.
///
/// Computed as `W V diag(f) V^T` with `f = min(1, 1/s)`, written as a
/// correction on the clipped directions only, so unclipped directions come
/// back bit-for-bit. After a very large singular value the eigenvector error
/// leaves a small excess, so the pass repeats until none is left.
pub fn project_spectral(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, ProjectionReport)> {
    check_finite(w)?;
    let (mut projected, first) = clip_once(w)?;
    let mut report = first;
    for _ in 0..MAX_PASSES {
        if report.clipped_count == 0 || spectral_norm(&projected)? <= 1.0 + 1e-12 {
            break;
        }
        let (next, r) = clip_once(&projected)?;
        projected = next;
        report.max_singular_value_after = r.max_singular_value_after;
    }
    report.max_singular_value_before = first.max_singular_value_before;
    Ok((projected, report))
}

const MAX_PASSES: usize = 4;

fn clip_once(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, ProjectionReport)> {
    if w.is_empty() {
        let report = ProjectionReport {
            clipped_count: 0,
            max_singular_value_before: 0.0,
            max_singular_value_after: 0.0,
        };
        return Ok((w.clone(), report));
    }
    let (values, vectors, left) = gram_eigen(w)?;
    let sigmas: Vec<f64> = values.iter().map(|e| e.max(0.0).sqrt()).collect();
    let before = sigmas.iter().copied().fold(0.0, f64::max);
    let clipped: Vec<usize> = (0..sigmas.len()).filter(|&k| sigmas[k] > 1.0).collect();
    if clipped.is_empty() {
        let report = ProjectionReport {
            clipped_count: 0,
            max_singular_value_before: before,
            max_singular_value_after: before,
        };
        return Ok((w.clone(), report));
    }
    let n = vectors.nrows();
    let mut correction = DMatrix::zeros(n, n);
    for &k in &clipped {
        let v = vectors.column(k);
        correction.ger(1.0 / sigmas[k] - 1.0, &v, &v, 1.0);
    }
    let projected = if left {
        w + &correction * w
    } else {
        w + w * &correction
    };
    let after = sigmas.iter().fold(0.0f64, |m, &s| m.max(s.min(1.0)));
    Ok((
        projected,
        ProjectionReport {
            clipped_count: clipped.len(),
            max_singular_value_before: before,
            max_singular_value_after: after,
        },
    ))
}

/// Whether `I - W W^T` is PD up to [`SAFETY_TOLERANCE`], i.e. the largest
/// singular value of `W` is at most 1.
pub fn is_globally_safe(w: &DMatrix<f64>) -> SafetyCheck {
    let min_eigenvalue = match spectral_norm(w) {
        Ok(s) => {
            // Rank-deficient directions contribute eigenvalue 1.
            let top = 1.0 - s * s;
            if w.ncols() < w.nrows() {
                top.min(1.0)
            } else {
                top
            }
        }
        Err(_) => f64::NAN,
    };
    SafetyCheck {
        safe: min_eigenvalue > -SAFETY_TOLERANCE,
        min_eigenvalue,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{min_symmetric_eigenvalue, precision_for_slopes};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feasible_matrix_is_unchanged() {
        // Singular values 0.9 and 0.3 in a rotated basis.
        let (s, c) = (0.6f64.sin(), 0.6f64.cos());
        let rot = dmatrix![c, -s; s, c];
        let w = &rot * dmatrix![0.9, 0.0; 0.0, 0.3] * rot.transpose();
        let (p, report) = project_spectral(&w).unwrap();
        assert_eq!(report.clipped_count, 0);
        assert_eq!(p, w);
        assert_relative_eq!(report.max_singular_value_before, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn rank_one_clips_to_unit_singular_value() {
        let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0]);
        let w = &u * v.transpose() * 2.0;
        let (p, report) = project_spectral(&w).unwrap();
        assert_relative_eq!(p, &u * v.transpose(), epsilon = 1e-12);
        assert_eq!(report.clipped_count, 1);
        assert_relative_eq!(report.max_singular_value_before, 2.0, epsilon = 1e-12);
        assert_relative_eq!(report.max_singular_value_after, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_input_errors() {
        let w = dmatrix![f64::NAN, 0.0];
        assert!(project_spectral(&w).is_err());
        assert!(!is_globally_safe(&w).safe);
    }

    #[test]
    fn safety_examples() {
        let zero = DMatrix::zeros(3, 2);
        let check = is_globally_safe(&zero);
        assert!(check.safe);
        assert_eq!(check.min_eigenvalue, 1.0);
        let w = dmatrix![1.5, 0.0; 0.0, 0.2];
        assert!(!is_globally_safe(&w).safe);
    }

    /// Largest singular value of a 2x2 matrix in closed form.
    fn sigma_max_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
        let s1 = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        (0.5 * (s1 + (s1 * s1 - 4.0 * det * det).max(0.0).sqrt())).sqrt()
    }

    #[test]
    fn projection_beats_coarse_feasible_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 14;
        let grid: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
        for _ in 0..3 {
            let w = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
            if spectral_norm(&w).unwrap() <= 1.0 {
                continue;
            }
            let (p, _) = project_spectral(&w).unwrap();
            let best = (&w - &p).norm();
            for &a in &grid {
                for &b in &grid {
                    for &c in &grid {
                        for &d in &grid {
                            if sigma_max_2x2(a, b, c, d) > 1.0 {
                                continue;
                            }
                            let cand = dmatrix![a, b; c, d];
                            assert!(best <= (&w - cand).norm() + 1e-6);
                        }
                    }
                }
            }
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, max_dim: usize, scale: f64) -> DMatrix<f64> {
        let i = rng.random_range(1..=max_dim);
        let j = rng.random_range(1..=max_dim);
        DMatrix::from_fn(i, j, |_, _| rng.random_range(-scale..scale))
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_safe(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, 6, 2.0);
            let (p1, r1) = project_spectral(&w).unwrap();
            let (p2, _) = project_spectral(&p1).unwrap();
            prop_assert!((&p1 - &p2).amax() <= 1e-12, "diff {} clipped {:?}", (&p1 - &p2).amax(), singular_values(&p1).unwrap());
            prop_assert!(r1.max_singular_value_after <= 1.0 + 1e-12);
            prop_assert!(is_globally_safe(&p1).safe);
        }

        #[test]
        fn projection_handles_huge_singular_values(seed in 0u64..300, exp in 2i32..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = random_matrix(&mut rng, 5, 0.01);
            w.column_mut(0).scale_mut(10f64.powi(exp) * 100.0);
            let (p, _) = project_spectral(&w).unwrap();
            prop_assert!(spectral_norm(&p).unwrap() <= 1.0 + 1e-12);
        }

        #[test]
        fn projection_never_increases_singular_values(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, 5, 2.0);
            let before = singular_values(&w).unwrap();
            let after = singular_values(&project_spectral(&w).unwrap().0).unwrap();
            let mut before = before;
            let mut after = after;
            before.sort_by(|a, b| b.partial_cmp(a).unwrap());
            after.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (a, b) in after.iter().zip(before.iter()) {
                prop_assert!(*a <= *b + 1e-12);
            }
        }

        #[test]
        fn region_precisions_dominate_global_precision(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = project_spectral(&random_matrix(&mut rng, 5, 2.0)).unwrap().0;
            let alpha = DVector::from_fn(w.ncols(), |_, _| rng.random_range(0.0..=1.0));
            let region = min_symmetric_eigenvalue(&precision_for_slopes(&w, &alpha));
            let global = min_symmetric_eigenvalue(&precision_for_slopes(&w, &DVector::from_element(w.ncols(), 1.0)));
            prop_assert!(region >= -SAFETY_TOLERANCE);
            prop_assert!(region >= global - 1e-12);
        }
    }
}
