//! Threshold quantities of the linearized infected equation.
//!
//! `λ_p(d_I)` is the minimum of the discrete Rayleigh quotient
//!
//! ```text
//!   [ (d_I/2) ΣΣ J(x_i-x_j)(φ_j-φ_i)² h² + Σ (γ_i-β_i) φ_i² h ] / Σ φ_i² h
//! ```
//!
//! i.e. the smallest eigenvalue of `-[d_I (K - D) + diag(β - γ)]`. The basic
//! reproduction number is computed three ways that share no factorization:
//! the β-weighted principal eigenvalue (`R₀ = 1/μ_p`), the maximum of the
//! inverted Rayleigh quotient through a Cholesky congruence, and the spectral
//! radius of the next-generation matrix `diag(β) (-A)⁻¹` through an explicit
//! LU inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Field, Kernel};
use crate::nonlocal_op::{self, assemble_dispersal, assemble_infection, OperatorMatrix};

/// Gap below the essential-spectrum edge required to call `λ_p` a principal eigenvalue.
pub const PRINCIPAL_GAP: f64 = 1e-12;

/// Tolerance on sign changes of the max-normalized weighted eigenvector.
pub const EIGVEC_SIGN_TOL: f64 = 1e-8;

/// Transmission and recovery rates sampled on the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFields {
    beta: Field,
    gamma: Field,
}

impl RateFields {
    pub fn new(beta: Field, gamma: Field) -> Result<Self> {
        if beta.len() != gamma.len() {
            return Err(Error::LengthMismatch { expected: beta.len(), got: gamma.len() });
        }
        beta.check_positive("beta")?;
        gamma.check_positive("gamma")?;
        Ok(Self { beta, gamma })
    }

    pub fn beta(&self) -> &Field {
        &self.beta
    }

    pub fn gamma(&self) -> &Field {
        &self.gamma
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// `γ - β`, the potential of the λ_p quotient.
    pub fn potential(&self) -> DVector<f64> {
        &self.gamma.0 - &self.beta.0
    }

    fn check_mesh(&self, kernel: &Kernel) -> Result<()> {
        kernel.mesh().check_len(&self.beta)?;
        kernel.mesh().check_len(&self.gamma)
    }
}

/// Everything the spectral module knows about one `(d_I, β, γ)` triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub d_i: f64,
    pub lambda_p: f64,
    #[serde(skip)]
    pub lambda_p_eigvec: Option<Field>,
    pub principal_exists: bool,
    pub mu_p: f64,
    pub r0_weighted: f64,
    pub r0_variational: f64,
    pub r0_nextgen: f64,
    /// `S(A + F)`, which equals `-λ_p` in the discrete setting.
    pub spectral_bound_m: f64,
    /// `min(γ - β)`, the `d_I → 0` limit of `λ_p`.
    pub limit_d0: f64,
    /// Mesh average of `γ - β`, the `d_I → ∞` limit of `λ_p`.
    pub limit_dinf: f64,
    /// `max β/γ`, the `d_I → 0` limit of `R₀`.
    pub r0_limit_d0: f64,
    /// `∫β / ∫γ`, the `d_I → ∞` limit of `R₀`.
    pub r0_limit_dinf: f64,
}

impl SpectralReport {
    pub const CSV_HEADER: &'static str = "d_I,lambda_p,principal_exists,mu_p,r0_weighted,r0_variational,r0_nextgen,limit_d0,limit_dinf,r0_limit_d0,r0_limit_dinf";

    pub fn csv_row(&self) -> String {
        use crate::runner::output::fmt_f64 as f;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            f(self.d_i),
            f(self.lambda_p),
            self.principal_exists,
            f(self.mu_p),
            f(self.r0_weighted),
            f(self.r0_variational),
            f(self.r0_nextgen),
            f(self.limit_d0),
            f(self.limit_dinf),
            f(self.r0_limit_d0),
            f(self.r0_limit_dinf),
        )
    }

    /// Sign of `λ_p` against sign of `1 - R₀`, skipped when `|λ_p| <= 1e-9`.
    pub fn sign_relation_holds(&self) -> bool {
        self.lambda_p.abs() <= 1e-9 || (self.lambda_p > 0.0) == (self.r0_weighted < 1.0)
    }

    /// Largest relative disagreement between the three `R₀` routes.
    pub fn route_spread(&self) -> f64 {
        let r = self.r0_weighted;
        ((r - self.r0_variational).abs()).max((r - self.r0_nextgen).abs()) / r
    }
}

fn check_d(d_i: f64) -> Result<()> {
    if d_i > 0.0 && d_i.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveParameter { name: "d_I", value: d_i })
    }
}

/// `d_I (K - D) + diag(β - γ)`, the generator `A + F` of the linearized equation.
pub fn assemble_linearized(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<OperatorMatrix> {
    rates.check_mesh(kernel)?;
    let mut m = assemble_dispersal(kernel, d_i)?.into_entries();
    for (i, p) in rates.potential().iter().enumerate() {
        m[(i, i)] -= p;
    }
    Ok(OperatorMatrix::from_matrix(m))
}

fn lambda_p_matrix(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<DMatrix<f64>> {
    Ok(-assemble_linearized(kernel, d_i, rates)?.into_entries())
}

/// `λ_p(d_I)` and its unit-norm eigenvector, oriented to have positive sum.
pub fn lambda_p(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<(f64, Field)> {
    check_d(d_i)?;
    let (value, mut v) = nonlocal_op::lowest_eigenpair(lambda_p_matrix(kernel, d_i, rates)?);
    if v.sum() < 0.0 {
        v.neg_mut();
    }
    Ok((value, Field(v)))
}

/// `λ_p(d_I)` without the eigenvector.
pub fn lambda_p_value(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<f64> {
    check_d(d_i)?;
    Ok(nonlocal_op::eigenvalues(lambda_p_matrix(kernel, d_i, rates)?).min())
}

/// The principal-eigenvalue criterion: `λ_p < min(d_I ∫J + γ - β)`.
pub fn principal_eigen_exists(kernel: &Kernel, d_i: f64, rates: &RateFields, lp: f64) -> bool {
    let edge = kernel
        .row_integral()
        .iter()
        .zip(rates.potential().iter())
        .map(|(r, p)| d_i * r + p)
        .fold(f64::INFINITY, f64::min);
    lp < edge - PRINCIPAL_GAP
}

/// `-d_I (K - D) + diag(γ)`, i.e. `-A`.
fn neg_infection(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<DMatrix<f64>> {
    Ok(-assemble_infection(kernel, d_i, &rates.gamma)?.into_entries())
}

/// Principal eigenpair of `-A φ = μ diag(β) φ`.
///
/// Solved through the congruence `B^{-1/2} (-A) B^{-1/2} ψ = μ ψ`,
/// `φ = B^{-1/2} ψ`; the returned eigenvector is scaled to `max φ = 1`.
pub fn mu_p(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<(f64, Field)> {
    check_d(d_i)?;
    rates.check_mesh(kernel)?;
    let inv_sqrt_b = rates.beta.map(|b| 1.0 / b.sqrt());
    let mut c = neg_infection(kernel, d_i, rates)?;
    let n = c.nrows();
    for j in 0..n {
        for i in 0..n {
            c[(i, j)] *= inv_sqrt_b[i] * inv_sqrt_b[j];
        }
    }
    let (mu, psi) = nonlocal_op::lowest_eigenpair(c);
    let mut phi = psi.component_mul(&inv_sqrt_b);
    let peak = phi.iter().copied().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
    phi /= peak;
    let min = phi.min();
    if min < -EIGVEC_SIGN_TOL {
        return Err(Error::NonpositiveEigenvector { min });
    }
    Ok((mu, Field(phi)))
}

/// Maximum of `Σ β φ² / φᵀ(-A)φ`: Cholesky `-A = L Lᵀ`, then the top eigenvalue
/// of `L⁻¹ B L⁻ᵀ`.
fn r0_variational(neg_a: DMatrix<f64>, beta: &Field) -> Result<f64> {
    let chol = neg_a.cholesky().ok_or(Error::SingularOperator)?;
    let sqrt_b = DMatrix::from_diagonal(&beta.map(f64::sqrt));
    let w = chol
        .l()
        .solve_lower_triangular(&sqrt_b)
        .ok_or(Error::SingularOperator)?;
    let c = &w * w.transpose();
    Ok(nonlocal_op::eigenvalues(symmetrize(c)).max())
}

/// Spectral radius of `diag(β) (-A)⁻¹` via `B^{1/2} (-A)⁻¹ B^{1/2}`.
fn r0_nextgen(neg_a: DMatrix<f64>, beta: &Field) -> Result<f64> {
    let inv = neg_a.lu().try_inverse().ok_or(Error::SingularOperator)?;
    let sqrt_b = beta.map(f64::sqrt);
    let n = inv.nrows();
    let mut t = inv;
    for j in 0..n {
        for i in 0..n {
            t[(i, j)] *= sqrt_b[i] * sqrt_b[j];
        }
    }
    let ev = nonlocal_op::eigenvalues(symmetrize(t));
    Ok(ev.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Fills every field of a [`SpectralReport`].
pub fn r0_all_routes(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<SpectralReport> {
    check_d(d_i)?;
    rates.check_mesh(kernel)?;
    let mesh = kernel.mesh();

    let (lp, eigvec) = lambda_p(kernel, d_i, rates)?;
    let principal_exists = principal_eigen_exists(kernel, d_i, rates, lp);
    let (mu, _) = mu_p(kernel, d_i, rates)?;

    let a = assemble_infection(kernel, d_i, &rates.gamma)?;
    if nonlocal_op::spectral_bound(&a)? >= 0.0 {
        return Err(Error::SingularOperator);
    }
    let neg_a = -a.into_entries();
    let r0_var = r0_variational(neg_a.clone(), &rates.beta)?;
    let r0_ng = r0_nextgen(neg_a, &rates.beta)?;
    let sb_m = nonlocal_op::spectral_bound(&assemble_linearized(kernel, d_i, rates)?)?;

    let potential = Field(rates.potential());
    let ratio = rates.beta.0.component_div(&rates.gamma.0);
    Ok(SpectralReport {
        d_i,
        lambda_p: lp,
        lambda_p_eigvec: Some(eigvec),
        principal_exists,
        mu_p: mu,
        r0_weighted: 1.0 / mu,
        r0_variational: r0_var,
        r0_nextgen: r0_ng,
        spectral_bound_m: sb_m,
        limit_d0: potential.min_value(),
        limit_dinf: mesh.average(&potential)?,
        r0_limit_d0: ratio.max(),
        r0_limit_dinf: mesh.integrate(&rates.beta)? / mesh.integrate(&rates.gamma)?,
    })
}

/// Result of the threshold-diffusivity search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ThresholdSearch {
    /// `λ_p(d_star) = 0` to tolerance; `R₀ > 1` below and `R₀ < 1` above.
    Root { d_star: f64, iterations: usize },
    /// No sign change to find, with the reason.
    NoRoot { reason: String },
}

impl ThresholdSearch {
    pub fn d_star(&self) -> Option<f64> {
        match self {
            ThresholdSearch::Root { d_star, .. } => Some(*d_star),
            ThresholdSearch::NoRoot { .. } => None,
        }
    }
}

const BISECTION_CAP: usize = 60;

/// Bisection for the unique root of `d ↦ λ_p(d)` in `[d_lo, d_hi]`.
pub fn find_d_star(kernel: &Kernel, rates: &RateFields, d_lo: f64, d_hi: f64) -> Result<ThresholdSearch> {
    if !(d_lo < d_hi) || !(d_lo > 0.0) {
        return Err(Error::InvalidBracket { lo: d_lo, hi: d_hi });
    }
    rates.check_mesh(kernel)?;
    let mesh = kernel.mesh();
    if rates.potential().iter().all(|&p| p > 0.0) {
        return Ok(ThresholdSearch::NoRoot { reason: "β<γ everywhere: R₀<1 for all d_I".into() });
    }
    if mesh.integrate(&rates.beta)? >= mesh.integrate(&rates.gamma)? {
        return Ok(ThresholdSearch::NoRoot { reason: "high-risk domain: R₀>1 for all d_I".into() });
    }

    let (mut lo, mut hi) = (d_lo, d_hi);
    let f_lo = lambda_p_value(kernel, lo, rates)?;
    let f_hi = lambda_p_value(kernel, hi, rates)?;
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Ok(ThresholdSearch::NoRoot {
            reason: format!("bracket does not straddle the threshold: λ_p({lo}) = {f_lo}, λ_p({hi}) = {f_hi}"),
        });
    }
    for it in 1..=BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        let f = lambda_p_value(kernel, mid, rates)?;
        if f.abs() <= 1e-10 || hi - lo <= 1e-10 * d_hi {
            return Ok(ThresholdSearch::Root { d_star: mid, iterations: it });
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence { what: "d* bisection", iterations: BISECTION_CAP, gap: hi - lo })
}

/// `λ_p(d)` for every `d` in a strictly increasing list.
pub fn lambda_p_scan(kernel: &Kernel, rates: &RateFields, d_list: &[f64]) -> Result<Vec<f64>> {
    if d_list.is_empty() || d_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::OutOfRange("d_list must be nonempty and strictly increasing".into()));
    }
    d_list.iter().map(|&d| lambda_p_value(kernel, d, rates)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{KernelSpec, Mesh};
    use nalgebra::SymmetricEigen;
    use std::f64::consts::PI;

    fn kernel(n: usize) -> Kernel {
        let m = Mesh::new(-1.0, 1.0, n).unwrap();
        Kernel::new(&m, KernelSpec::Triangle { delta: 0.5 }).unwrap()
    }

    fn constant_rates(k: &Kernel, beta: f64, gamma: f64) -> RateFields {
        RateFields::new(k.mesh().constant(beta), k.mesh().constant(gamma)).unwrap()
    }

    fn cosine_rates(k: &Kernel) -> RateFields {
        let m = k.mesh();
        RateFields::new(m.field_from_fn(|x| 1.0 + 0.8 * (PI * x).cos()), m.constant(1.0)).unwrap()
    }

    #[test]
    fn rates_must_be_positive() {
        let m = Mesh::new(0.0, 1.0, 4).unwrap();
        assert!(RateFields::new(m.constant(1.0), m.constant(0.0)).is_err());
        assert!(RateFields::new(m.constant(-1.0), m.constant(1.0)).is_err());
        assert!(RateFields::new(Field::from(vec![1.0; 3]), m.constant(1.0)).is_err());
    }

    #[test]
    fn lambda_p_zero_potential() {
        let k = kernel(100);
        let (lp, v) = lambda_p(&k, 0.7, &constant_rates(&k, 1.0, 1.0)).unwrap();
        assert!(lp.abs() <= 1e-10);
        let c = 1.0 / 10.0; // 1/sqrt(n)
        assert!(v.iter().all(|x| (x - c).abs() < 1e-8));
    }

    #[test]
    fn lambda_p_constant_rates() {
        let k = kernel(100);
        let (lp, _) = lambda_p(&k, 1.0, &constant_rates(&k, 2.0, 1.0)).unwrap();
        assert!((lp + 1.0).abs() <= 1e-10);
    }

    #[test]
    fn lambda_p_heterogeneous_matches_dense_oracle() {
        let k = kernel(400);
        let rates = cosine_rates(&k);
        let (lp, v) = lambda_p(&k, 0.1, &rates).unwrap();
        assert!(lp < 0.0);
        // oracle: full decomposition, independently assembled
        let n = 400;
        let mut m = DMatrix::zeros(n, n);
        let km = k.matrix();
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = -0.1 * km[(i, j)];
            }
            m[(i, i)] += 0.1 * k.row_integral()[i] + rates.gamma()[i] - rates.beta()[i];
        }
        let full = SymmetricEigen::new(m.clone());
        assert!((lp - full.eigenvalues.min()).abs() <= 1e-10);
        // regression baseline from the first computation
        assert!((lp - (-0.737_500_448_367_808)).abs() < 1e-9, "{lp}");
        // eigen-equation residual
        let r = &m * &v.0 - &v.0 * lp;
        assert!(r.amax() < 1e-10);
    }

    #[test]
    fn existence_criterion() {
        let k = kernel(200);
        let rates = constant_rates(&k, 1.0, 1.0);
        assert!(principal_eigen_exists(&k, 0.5, &rates, 0.0));

        // tiny d_I with a strict interior minimum of γ - β
        let rates = cosine_rates(&k);
        let d = 1e-6;
        let lp = lambda_p_value(&k, d, &rates).unwrap();
        let edge = (0..200)
            .map(|i| d * k.row_integral()[i] + rates.gamma()[i] - rates.beta()[i])
            .fold(f64::INFINITY, f64::min);
        assert_eq!(principal_eigen_exists(&k, d, &rates, lp), lp < edge - PRINCIPAL_GAP);
        // the discrete minimum never exceeds the smallest diagonal entry, which
        // sits d_I J(0) h below the edge
        assert!(lp <= edge - d * k.matrix()[(0, 0)] + 1e-15);
    }

    #[test]
    fn mu_p_constant_cases() {
        let k = kernel(100);
        let (mu, phi) = mu_p(&k, 1.0, &constant_rates(&k, 2.0, 1.0)).unwrap();
        assert!((mu - 0.5).abs() <= 1e-10);
        assert!(phi.iter().all(|x| (x - 1.0).abs() < 1e-8));
        let (mu, _) = mu_p(&k, 0.3, &constant_rates(&k, 1.7, 1.7)).unwrap();
        assert!((mu - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn mu_p_matches_generalized_oracle() {
        let k = kernel(400);
        let rates = cosine_rates(&k);
        let (mu, phi) = mu_p(&k, 0.1, &rates).unwrap();
        // oracle: eigenvalues of B⁻¹(-A), computed by the nonsymmetric Schur route
        let neg_a = neg_infection(&k, 0.1, &rates).unwrap();
        let binv = DMatrix::from_diagonal(&rates.beta().map(|b| 1.0 / b));
        let ev = (binv * neg_a).complex_eigenvalues();
        let min = ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        assert!(ev.iter().all(|z| z.im.abs() < 1e-8));
        assert!((mu - min).abs() <= 1e-9 * min.abs().max(1.0), "{mu} vs {min}");
        assert!(phi.min_value() > 0.0);
        assert!((phi.max_value() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn r0_constant_coefficient_routes() {
        let k = kernel(100);
        let rep = r0_all_routes(&k, 1.0, &constant_rates(&k, 2.0, 1.0)).unwrap();
        for r in [rep.r0_weighted, rep.r0_variational, rep.r0_nextgen] {
            assert!((r - 2.0).abs() <= 1e-9, "{rep:?}");
        }
        assert!((rep.lambda_p + 1.0).abs() <= 1e-10);
        assert!(rep.sign_relation_holds());

        let rep = r0_all_routes(&k, 1.0, &constant_rates(&k, 1.0, 2.0)).unwrap();
        for r in [rep.r0_weighted, rep.r0_variational, rep.r0_nextgen] {
            assert!((r - 0.5).abs() <= 1e-9);
        }
        assert!((rep.lambda_p - 1.0).abs() <= 1e-10);
        assert!(rep.sign_relation_holds());
    }

    #[test]
    fn r0_routes_agree_heterogeneous() {
        let k = kernel(400);
        let rep = r0_all_routes(&k, 0.1, &cosine_rates(&k)).unwrap();
        assert!(rep.route_spread() <= 1e-7, "{rep:?}");
        assert!((rep.spectral_bound_m + rep.lambda_p).abs() <= 1e-9 * (1.0 + rep.lambda_p.abs()));
        assert!(rep.sign_relation_holds());
        assert!(rep.r0_weighted > 1.0);
    }

    #[test]
    fn report_csv_has_all_columns() {
        let k = kernel(50);
        let rep = r0_all_routes(&k, 1.0, &constant_rates(&k, 2.0, 1.0)).unwrap();
        let cols = SpectralReport::CSV_HEADER.split(',').count();
        assert_eq!(rep.csv_row().split(',').count(), cols);
        assert_eq!(cols, 11);
    }

    #[test]
    fn d_star_gaussian_bump() {
        let k = kernel(400);
        let m = k.mesh();
        let rates =
            RateFields::new(m.field_from_fn(|x| 1.0 + 1.5 * (-20.0 * x * x).exp()), m.constant(1.4)).unwrap();
        let res = find_d_star(&k, &rates, 1e-3, 1e3).unwrap();
        let d = res.d_star().expect("root");
        assert!(lambda_p_value(&k, d / 2.0, &rates).unwrap() < 0.0);
        assert!(lambda_p_value(&k, 2.0 * d, &rates).unwrap() > 0.0);
    }

    #[test]
    fn d_star_not_applicable() {
        let k = kernel(100);
        let res = find_d_star(&k, &constant_rates(&k, 2.0, 1.0), 1e-3, 1e3).unwrap();
        assert_eq!(res, ThresholdSearch::NoRoot { reason: "high-risk domain: R₀>1 for all d_I".into() });
        let res = find_d_star(&k, &constant_rates(&k, 1.0, 2.0), 1e-3, 1e3).unwrap();
        assert_eq!(res, ThresholdSearch::NoRoot { reason: "β<γ everywhere: R₀<1 for all d_I".into() });
        assert!(matches!(
            find_d_star(&k, &constant_rates(&k, 1.0, 2.0), 1.0, 1.0),
            Err(Error::InvalidBracket { .. })
        ));
    }

    #[test]
    fn scan_constant_and_heterogeneous() {
        let k = kernel(200);
        let lp = lambda_p_scan(&k, &constant_rates(&k, 2.0, 1.0), &[0.1, 1.0, 10.0]).unwrap();
        assert!(lp.iter().all(|v| (v + 1.0).abs() <= 1e-10));

        let rates = cosine_rates(&k);
        let lp = lambda_p_scan(&k, &rates, &[0.01, 0.1, 1.0, 10.0, 100.0]).unwrap();
        assert!(lp.windows(2).all(|w| w[1] > w[0]));
        let avg = k.mesh().average(&Field(rates.potential())).unwrap();
        assert!(lp.iter().all(|&v| v < avg));
        let small = lambda_p_value(&k, 1e-4, &rates).unwrap();
        assert!((small - Field(rates.potential()).min_value()).abs() < 5e-3);

        assert!(lambda_p_scan(&k, &rates, &[]).is_err());
        assert!(lambda_p_scan(&k, &rates, &[1.0, 1.0]).is_err());
    }
}
