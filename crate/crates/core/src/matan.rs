//! Matrix analysis for Hurwitz reference-model matrices.
//!
//! Computes the spectral constants (decay rate, symmetric-part rate, operator
//! norm, exponential-bound coefficient), solves the algebraic Lyapunov equation
//! of the closed-loop reference model `A_m - ell I`, and evaluates the two-sided
//! bounds on its solution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

/// Eigenvalue real parts at or above `-HURWITZ_TOL` are rejected.
pub const HURWITZ_TOL: f64 = 1e-12;

/// Largest acceptable `||Abar^T P + P Abar + I||` for a Lyapunov solution.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-9;

/// Constants characterizing a Hurwitz matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralConstants {
    /// Decay rate: minus the largest eigenvalue real part.
    pub sigma: f64,
    /// Minus the smallest eigenvalue of the symmetric part.
    pub s: f64,
    /// Induced Euclidean norm.
    pub a: f64,
    /// `a / sigma`.
    pub kappa: f64,
    /// Coefficient in `||exp(A t)|| <= m exp(-sigma t / 2)`.
    pub m: f64,
    pub n: usize,
}

impl SpectralConstants {
    /// Builds constants from already-known scalars, recomputing `kappa` and `m`.
    pub fn from_parts(sigma: f64, s: f64, a: f64, n: usize) -> Result<Self> {
        if !(sigma > 0.0) || !(s >= sigma) || !(a >= 0.0) || n == 0 {
            return Err(Error::InvalidConfig(format!(
                "spectral constants must satisfy s >= sigma > 0, a >= 0, n >= 1 (got sigma={sigma}, s={s}, a={a}, n={n})"
            )));
        }
        let kappa = a / sigma;
        Ok(Self {
            sigma,
            s,
            a,
            kappa,
            m: exp_bound_coefficient(kappa, n),
            n,
        })
    }

    /// Exponential decay rate `(sigma + 2 ell) / m^2` of the Lyapunov function.
    pub fn alpha1(&self, ell: f64) -> f64 {
        (self.sigma + 2.0 * ell) / (self.m * self.m)
    }
}

/// `m = (3/2)(1 + 4 kappa)^(n-1)`.
pub fn exp_bound_coefficient(kappa: f64, n: usize) -> f64 {
    1.5 * (1.0 + 4.0 * kappa).powi(n as i32 - 1)
}

/// Solution of `Abar^T P + P Abar = -I` with `Abar = A_m - ell I`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSolution {
    pub p: DMatrix<f64>,
    pub ell: f64,
    pub residual_norm: f64,
}

impl LyapunovSolution {
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.p)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.p
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn ensure_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::NonSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

/// Largest eigenvalue real part.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    ensure_square(a)?;
    Ok(a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    matches!(spectral_abscissa(a), Ok(x) if x < -HURWITZ_TOL)
}

/// Induced Euclidean norm: square root of the largest eigenvalue of `A^T A`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    let lmax = ata
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0_f64, f64::max);
    lmax.max(0.0).sqrt()
}

pub fn spectral_constants(a: &DMatrix<f64>) -> Result<SpectralConstants> {
    let max_real = spectral_abscissa(a)?;
    if !(max_real < -HURWITZ_TOL) {
        return Err(Error::NotHurwitz { max_real });
    }
    let n = a.nrows();
    let sigma = -max_real;
    let sym = (a + a.transpose()) * 0.5;
    let s = -sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let a_norm = spectral_norm(a);
    let kappa = a_norm / sigma;
    Ok(SpectralConstants {
        sigma,
        s,
        a: a_norm,
        kappa,
        m: exp_bound_coefficient(kappa, n),
        n,
    })
}

fn sym_index(i: usize, j: usize, n: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    // row-major packing of the upper triangle
    r * n - r * (r + 1) / 2 + c
}

/// Solves `(A_m - ell I)^T P + P (A_m - ell I) = -I` over the `n(n+1)/2`
/// independent entries of the symmetric unknown.
pub fn solve_lyapunov(a_m: &DMatrix<f64>, ell: f64) -> Result<LyapunovSolution> {
    ensure_square(a_m)?;
    if !(ell >= 0.0) {
        return Err(Error::InvalidConfig(format!("ell must be >= 0, got {ell}")));
    }
    let n = a_m.nrows();
    let abar = a_m - DMatrix::<f64>::identity(n, n) * ell;
    let max_real = spectral_abscissa(&abar)?;
    if !(max_real < -HURWITZ_TOL) {
        return Err(Error::NotHurwitz { max_real });
    }

    let dim = n * (n + 1) / 2;
    let mut lhs = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for i in 0..n {
        for j in i..n {
            let row = sym_index(i, j, n);
            for k in 0..n {
                // (Abar^T P)_ij = sum_k Abar_ki P_kj
                lhs[(row, sym_index(k, j, n))] += abar[(k, i)];
                // (P Abar)_ij = sum_k P_ik Abar_kj
                lhs[(row, sym_index(i, k, n))] += abar[(k, j)];
            }
            if i == j {
                rhs[row] = -1.0;
            }
        }
    }

    let lu = lhs.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SolveFailure("singular Lyapunov operator".into()))?;
    // one step of iterative refinement
    let corr = lu
        .solve(&(&rhs - &lhs * &sol))
        .ok_or_else(|| Error::SolveFailure("singular Lyapunov operator".into()))?;
    sol += corr;

    let p = DMatrix::from_fn(n, n, |i, j| sol[sym_index(i, j, n)]);
    let residual = abar.transpose() * &p + &p * &abar + DMatrix::<f64>::identity(n, n);
    let residual_norm = spectral_norm(&residual);
    if !residual_norm.is_finite() || residual_norm > LYAPUNOV_RESIDUAL_TOL {
        return Err(Error::SolveFailure(format!(
            "residual {residual_norm:e} exceeds {LYAPUNOV_RESIDUAL_TOL:e}"
        )));
    }
    if p.clone().cholesky().is_none() {
        return Err(Error::SolveFailure("solution is not positive definite".into()));
    }
    Ok(LyapunovSolution {
        p,
        ell,
        residual_norm,
    })
}

/// Upper bound `m^2/(sigma + 2 ell)` on `||P||` and lower bound
/// `1/(2(s + ell))` on its smallest eigenvalue.
pub fn p_norm_bounds(consts: &SpectralConstants, ell: f64) -> Result<(f64, f64)> {
    if !(ell >= 0.0) || !(consts.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "p_norm_bounds needs ell >= 0 and sigma > 0 (ell={ell}, sigma={})",
            consts.sigma
        )));
    }
    let upper = consts.m * consts.m / (consts.sigma + 2.0 * ell);
    let lower = 1.0 / (2.0 * (consts.s + ell));
    Ok((upper, lower))
}

/// Matrix exponential `exp(A t)`.
pub fn expm(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (a * t).exp()
}

/// Right-hand side `m exp(-sigma t / 2)` of the matrix-exponential bound.
pub fn exp_envelope(consts: &SpectralConstants, t: f64) -> f64 {
    consts.m * (-consts.sigma * t / 2.0).exp()
}

/// Random `n x n` Hurwitz matrix: standard normal entries, shifted left so
/// the spectral abscissa is uniform in `[-2, -0.1]`.
pub fn sample_hurwitz<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let abscissa = spectral_abscissa(&raw).expect("square by construction");
    let target = -rng.random_range(0.1..2.0);
    raw + DMatrix::identity(n, n) * (target - abscissa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_constants() {
        let c = spectral_constants(&DMatrix::from_element(1, 1, -1.0)).unwrap();
        assert_abs_diff_eq!(c.sigma, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.s, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.a, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.kappa, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.m, 1.5, epsilon = 1e-14);
    }

    #[test]
    fn negative_identity_constants() {
        let c = spectral_constants(&(-DMatrix::<f64>::identity(2, 2))).unwrap();
        assert_abs_diff_eq!(c.sigma, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.m, 7.5, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_constants() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let c = spectral_constants(&a).unwrap();
        assert_abs_diff_eq!(c.sigma, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.s, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.a, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.kappa, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.m, 13.5, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_hurwitz_and_non_square() {
        let unstable = DMatrix::from_element(1, 1, 0.5);
        assert!(matches!(
            spectral_constants(&unstable),
            Err(Error::NotHurwitz { .. })
        ));
        let marginal = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(
            spectral_constants(&marginal),
            Err(Error::NotHurwitz { .. })
        ));
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            spectral_constants(&rect),
            Err(Error::NonSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn scalar_lyapunov_with_feedback() {
        let sol = solve_lyapunov(&DMatrix::from_element(1, 1, -1.0), 10.0).unwrap();
        assert_abs_diff_eq!(sol.p[(0, 0)], 1.0 / 22.0, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_lyapunov() {
        let sol = solve_lyapunov(&(-DMatrix::<f64>::identity(2, 2)), 0.0).unwrap();
        assert_abs_diff_eq!(sol.p, DMatrix::<f64>::identity(2, 2) * 0.5, epsilon = 1e-14);
    }

    #[test]
    fn nonnormal_lyapunov_residual() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, 3.0, 0.5, 0.0, //
                0.0, -2.0, 1.0, -4.0, //
                0.0, 0.0, -0.3, 2.0, //
                0.0, 0.0, -1.0, -0.3,
            ],
        );
        let sol = solve_lyapunov(&a, 0.5).unwrap();
        assert!(sol.residual_norm <= LYAPUNOV_RESIDUAL_TOL);
        assert_abs_diff_eq!(sol.p.clone(), sol.p.transpose(), epsilon = 1e-14);
    }

    #[test]
    fn p_bounds_scalar() {
        let c = SpectralConstants::from_parts(1.0, 1.0, 1.0, 1).unwrap();
        let (u, l) = p_norm_bounds(&c, 10.0).unwrap();
        assert_abs_diff_eq!(u, 2.25 / 21.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l, 1.0 / 22.0, epsilon = 1e-15);
        let (u0, l0) = p_norm_bounds(&c, 0.0).unwrap();
        assert_abs_diff_eq!(u0, 2.25, epsilon = 1e-15);
        assert_abs_diff_eq!(l0, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_exponential_bound_is_exact() {
        for &ell in &[0.0, 0.5, 3.0] {
            for k in 0..20 {
                let t = k as f64 * 0.5;
                let e = expm(&(-DMatrix::<f64>::identity(3, 3) * ell), t);
                assert!(spectral_norm(&e) <= (-ell * t).exp() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn lyapunov_commutes_with_orthogonal_similarity() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -0.5, 1.0, 0.3, 0.0, -2.0]);
        let (c, s) = (0.6_f64, 0.8_f64);
        let q = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let p = solve_lyapunov(&a, 0.0).unwrap().p;
        let p_rot = solve_lyapunov(&(q.transpose() * &a * &q), 0.0).unwrap().p;
        assert_abs_diff_eq!(p_rot, q.transpose() * p * q, epsilon = 1e-12);
    }

    #[test]
    fn sampled_matrices_are_hurwitz() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 1..=5 {
            let a = sample_hurwitz(&mut rng, n);
            let abscissa = spectral_abscissa(&a).unwrap();
            assert!((-2.0 - 1e-9..=-0.1 + 1e-9).contains(&abscissa), "{abscissa}");
        }
    }
}
