//! Dense numerical kernels shared by the learners.
//!
//! All routines work on `nalgebra` dynamic matrices/vectors and are pure
//! functions: safe for concurrent use on distinct inputs. Factorizations
//! (Cholesky, SVD, symmetric eigendecomposition) come from `nalgebra`; the
//! solvers built on top of them live here.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Ridge added to a metric that fails its first Cholesky attempt.
pub const METRIC_RIDGE: f64 = 1e-8;
/// Relative singular-value cutoff for the pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;
/// Iteration cap for the LASSO coordinate-descent loop.
pub const LASSO_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("metric is not positive semidefinite (Cholesky failed after {METRIC_RIDGE} ridge)")]
    NotPsd,
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("singular system: {0}")]
    SingularSystem(String),
}

/// Objective of the weighted-LASSO problem: `||rho - D v||^2_metric + mu1 * ||v||_1`.
pub fn lasso_objective(
    target: &DVector<f64>,
    dictionary: &DMatrix<f64>,
    metric: &DMatrix<f64>,
    mu1: f64,
    v: &DVector<f64>,
) -> f64 {
    let r = target - dictionary * v;
    (&r.transpose() * metric * &r)[(0, 0)] + mu1 * v.iter().map(|x| x.abs()).sum::<f64>()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn metric_cholesky(metric: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, NumericsError> {
    if let Some(c) = nalgebra::Cholesky::new(metric.clone()) {
        return Ok(c);
    }
    let n = metric.nrows();
    let ridged = metric + DMatrix::identity(n, n) * METRIC_RIDGE;
    nalgebra::Cholesky::new(ridged).ok_or(NumericsError::NotPsd)
}

/// Minimizes `||rho - D v||^2_metric + mu1 ||v||_1` by cyclic coordinate
/// descent with soft thresholding on the Cholesky-transformed least-squares
/// form. Converges when the largest coordinate change in a sweep drops below
/// `tol`.
pub fn weighted_lasso(
    target: &DVector<f64>,
    dictionary: &DMatrix<f64>,
    metric: &DMatrix<f64>,
    mu1: f64,
    tol: f64,
) -> Result<DVector<f64>, NumericsError> {
    Ok(weighted_lasso_with_trace(target, dictionary, metric, mu1, tol)?.0)
}

/// Same as [`weighted_lasso`], additionally returning the objective value
/// after every full coordinate sweep.
pub fn weighted_lasso_with_trace(
    target: &DVector<f64>,
    dictionary: &DMatrix<f64>,
    metric: &DMatrix<f64>,
    mu1: f64,
    tol: f64,
) -> Result<(DVector<f64>, Vec<f64>), NumericsError> {
    let n = target.len();
    let m = dictionary.ncols();
    if dictionary.nrows() != n || metric.nrows() != n || metric.ncols() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "lasso: target {n}, dictionary {}x{}, metric {}x{}",
            dictionary.nrows(),
            dictionary.ncols(),
            metric.nrows(),
            metric.ncols()
        )));
    }
    if !(tol > 0.0) {
        return Err(NumericsError::DimensionMismatch("lasso: tol must be > 0".into()));
    }
    let chol = metric_cholesky(metric)?;
    // Transform so the quadratic term becomes an ordinary least squares:
    // ||rho - D v||^2_metric = ||L^T rho - L^T D v||^2.
    let lt = chol.l().transpose();
    let d = &lt * dictionary;
    let y = &lt * target;

    let col_sq: Vec<f64> = (0..m).map(|j| d.column(j).norm_squared()).collect();
    let mut v = DVector::<f64>::zeros(m);
    let mut resid = y.clone(); // y - D v
    let mut trace = Vec::new();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..m {
            if col_sq[j] <= 0.0 {
                continue;
            }
            let vj = v[j];
            // Partial residual excluding coordinate j.
            let corr = d.column(j).dot(&resid) + col_sq[j] * vj;
            let new = soft_threshold(corr, mu1 / 2.0) / col_sq[j];
            if new != vj {
                resid -= d.column(j) * (new - vj);
                v[j] = new;
                max_change = max_change.max((new - vj).abs());
            }
        }
        trace.push(resid.norm_squared() + mu1 * v.iter().map(|x| x.abs()).sum::<f64>());
        if max_change < tol {
            break;
        }
    }
    Ok((v, trace))
}

/// Moore–Penrose pseudoinverse via SVD with relative cutoff
/// [`PINV_CUTOFF`] `* sigma_max`.
pub fn pseudoinverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if sigma_max == 0.0 {
        return DMatrix::zeros(cols, rows);
    }
    let cutoff = PINV_CUTOFF * sigma_max;
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut sig_inv = DMatrix::zeros(v_t.nrows(), u.ncols());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff {
            sig_inv[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * sig_inv * u.transpose()
}

/// Solves `min_Z ||Y - Z X||_F^2 + mu ||Z||_F^2` for square `X`.
///
/// `mu > 0` uses the normal equations `Z = Y X^T (X X^T + mu I)^{-1}` through
/// a Cholesky factorization; `mu = 0` falls back to the minimum-norm solution
/// `Z = Y X^dagger`.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>, NumericsError> {
    if x.nrows() != x.ncols() {
        return Err(NumericsError::DimensionMismatch(format!(
            "ridge_solve: X must be square, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if y.ncols() != x.nrows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "ridge_solve: Y {}x{} incompatible with X {}x{}",
            y.nrows(),
            y.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    if mu < 0.0 {
        return Err(NumericsError::DimensionMismatch("ridge_solve: mu must be >= 0".into()));
    }
    if mu == 0.0 {
        return Ok(y * pseudoinverse(x));
    }
    let n = x.nrows();
    let m = x * x.transpose() + DMatrix::identity(n, n) * mu;
    // Z = Y X^T M^{-1}  <=>  Z^T = M^{-1} X Y^T (M symmetric). When the
    // ridge sits below the numerical noise floor of X X^T the Cholesky can
    // fail even though M is SPD; the SVD route handles that conditioning.
    match nalgebra::Cholesky::new(m.clone()) {
        Some(chol) => Ok(chol.solve(&(x * y.transpose())).transpose()),
        None => Ok(y * x.transpose() * pseudoinverse(&m)),
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Clips the eigenvalues of a symmetric matrix below at `floor`, returning a
/// symmetric positive-definite matrix.
pub fn psd_project(h: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>, NumericsError> {
    if h.nrows() != h.ncols() {
        return Err(NumericsError::DimensionMismatch(format!(
            "psd_project: matrix must be square, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let asym = max_abs(&(h - h.transpose()));
    if asym > 1e-8 * 1.0_f64.max(max_abs(h)) {
        return Err(NumericsError::NotSymmetric);
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let clipped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(floor)));
    let q = eig.eigenvectors;
    let out = &q * DMatrix::from_diagonal(&clipped) * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / (2h)`.
pub fn finite_diff_grad<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        crate::rng::stream(0x5EED)
    }

    fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn lasso_large_mu_gives_zero() {
        let mut rng = rng();
        let d = random_matrix(5, 5, &mut rng);
        let rho = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
        let metric = DMatrix::identity(5, 5);
        let threshold = 2.0 * (d.transpose() * &metric * &rho).amax();
        let v = weighted_lasso(&rho, &d, &metric, threshold * 1.001, 1e-10).unwrap();
        assert_eq!(v, DVector::zeros(5));
    }

    #[test]
    fn lasso_mu_zero_reduces_to_linear_solve() {
        let mut rng = rng();
        // Well-conditioned square system.
        let d = DMatrix::identity(5, 5) * 2.0 + random_matrix(5, 5, &mut rng) * 0.1;
        let rho = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
        let metric = DMatrix::identity(5, 5);
        let v = weighted_lasso(&rho, &d, &metric, 0.0, 1e-12).unwrap();
        let direct = d.clone().lu().solve(&rho).unwrap();
        assert!((v - direct).amax() < 1e-8);
    }

    #[test]
    fn lasso_objective_non_increasing_over_sweeps() {
        let mut rng = rng();
        for _ in 0..20 {
            let d = random_matrix(6, 5, &mut rng);
            let rho = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let w = random_matrix(6, 6, &mut rng);
            let metric = &w * w.transpose() + DMatrix::identity(6, 6) * 0.1;
            let (_, trace) = weighted_lasso_with_trace(&rho, &d, &metric, 0.3, 1e-10).unwrap();
            for pair in trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "objective increased: {pair:?}");
            }
        }
    }

    #[test]
    fn lasso_rejects_indefinite_metric() {
        let d = DMatrix::identity(3, 3);
        let rho = DVector::from_element(3, 1.0);
        let metric = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert_eq!(weighted_lasso(&rho, &d, &metric, 0.1, 1e-8).unwrap_err(), NumericsError::NotPsd);
    }

    #[test]
    fn lasso_dimension_mismatch() {
        let d = DMatrix::identity(3, 2);
        let rho = DVector::from_element(4, 1.0);
        let metric = DMatrix::identity(3, 3);
        assert!(matches!(
            weighted_lasso(&rho, &d, &metric, 0.1, 1e-8),
            Err(NumericsError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pinv_identity_and_zero() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((pseudoinverse(&id) - &id).amax() < 1e-12);
        let z = DMatrix::<f64>::zeros(3, 5);
        let pz = pseudoinverse(&z);
        assert_eq!(pz.shape(), (5, 3));
        assert_eq!(pz.amax(), 0.0);
    }

    #[test]
    fn pinv_penrose_conditions_6x3() {
        let mut rng = rng();
        for _ in 0..20 {
            let a = random_matrix(6, 3, &mut rng);
            let p = pseudoinverse(&a);
            assert!((&a * &p * &a - &a).amax() < 1e-8);
            assert!((&p * &a * &p - &p).amax() < 1e-8);
            let ap = &a * &p;
            let pa = &p * &a;
            assert!((&ap - ap.transpose()).amax() < 1e-8);
            assert!((&pa - pa.transpose()).amax() < 1e-8);
        }
    }

    #[test]
    fn ridge_identity_target() {
        let mut rng = rng();
        let x = DMatrix::identity(4, 4) * 1.5 + random_matrix(4, 4, &mut rng) * 0.1;
        let z = ridge_solve(&x, &x.clone(), 0.0).unwrap();
        assert!((z - DMatrix::identity(4, 4)).amax() < 1e-8);
    }

    #[test]
    fn ridge_large_mu_shrinks_to_zero() {
        let mut rng = rng();
        let x = random_matrix(4, 4, &mut rng);
        let y = random_matrix(3, 4, &mut rng);
        let z = ridge_solve(&x, &y, 1e12).unwrap();
        assert!(z.amax() < 1e-10);
    }

    #[test]
    fn ridge_normal_equation_residual() {
        let mut rng = rng();
        let x = DMatrix::identity(5, 5) + random_matrix(5, 5, &mut rng) * 0.2;
        let y = random_matrix(4, 5, &mut rng);
        let mu = 1e-4;
        let z = ridge_solve(&x, &y, mu).unwrap();
        let resid = &z * (&x * x.transpose() + DMatrix::identity(5, 5) * mu) - &y * x.transpose();
        assert!(resid.amax() < 1e-8);
    }

    #[test]
    fn ridge_mu_zero_consistent_system_zero_residual() {
        let mut rng = rng();
        let x = DMatrix::identity(4, 4) + random_matrix(4, 4, &mut rng) * 0.3;
        let z_true = random_matrix(2, 4, &mut rng);
        let y = &z_true * &x;
        let z = ridge_solve(&x, &y, 0.0).unwrap();
        assert!((&z * &x - y).amax() < 1e-8);
    }

    #[test]
    fn psd_project_negative_identity() {
        let h = -DMatrix::<f64>::identity(3, 3);
        let p = psd_project(&h, 1e-6).unwrap();
        assert!((p - DMatrix::identity(3, 3) * 1e-6).amax() < 1e-12);
    }

    #[test]
    fn psd_project_leaves_psd_input_unchanged() {
        let mut rng = rng();
        let a = random_matrix(5, 5, &mut rng);
        let h = &a * a.transpose() + DMatrix::identity(5, 5); // eigenvalues >= 1
        let p = psd_project(&h, 1e-6).unwrap();
        assert!((p - &h).amax() < 1e-10);
    }

    #[test]
    fn psd_project_idempotent() {
        let mut rng = rng();
        let a = random_matrix(6, 6, &mut rng);
        let h = (&a + a.transpose()) * 0.5;
        let p1 = psd_project(&h, 1e-6).unwrap();
        let p2 = psd_project(&p1, 1e-6).unwrap();
        assert!((p2 - &p1).amax() < 1e-9);
    }

    #[test]
    fn psd_project_rejects_asymmetric() {
        let mut h = DMatrix::<f64>::identity(3, 3);
        h[(0, 1)] = 0.5;
        assert_eq!(psd_project(&h, 1e-6).unwrap_err(), NumericsError::NotSymmetric);
    }

    #[test]
    fn finite_diff_constant_and_quadratic() {
        let x = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let g_const: DVector<f64> = finite_diff_grad(|_| 4.2, &x, 1e-5);
        assert!(g_const.amax() < 1e-9);
        let g = finite_diff_grad(|v| 0.5 * v.norm_squared(), &x, 1e-5);
        assert!((g - &x).amax() < 1e-8);
    }
}
