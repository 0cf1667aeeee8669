//! Steady states: the disease-free state, the endemic state via the reduced
//! single equation for `I`, the nonlocal logistic comparison problem, and the
//! large-diffusion limit profiles.
//!
//! Endemic states are found by writing `d_S S̃ + d_I Ĩ ≡ k`, solving the
//! scalar-valued reduced problem for `I = d_I Ĩ / k ∈ (0, 1)` by bracketed
//! monotone iteration, and rescaling so that the total mass is `N`.

mod monotone;

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Field, Kernel, Mesh};
use crate::nonlocal_op::{self, assemble_dispersal};
use crate::runner::output::fmt_f64;
use crate::spectral::{self, RateFields};

pub use monotone::{MonotoneSolution, BRACKET_TOL, MAX_ITERATIONS};
use monotone::{positive_profile, DampedMap};

/// `R₀` must exceed one by this margin for an endemic state to be sought.
pub const SUPERCRITICAL_MARGIN: f64 = 1e-9;

/// `S + I` at or below this is treated as an empty site in `β S I / (S + I)`.
pub const INCIDENCE_GUARD: f64 = 1e-300;

/// Inner and outer caps of the `d_I → ∞` limit solve.
const INNER_CAP: usize = 100_000;
const OUTER_CAP: usize = 200;
const INNER_TOL: f64 = 1e-10;

/// Frequency-dependent incidence `β S I / (S + I)`, zero on empty sites.
#[inline]
pub fn incidence(beta: f64, s: f64, i: f64) -> f64 {
    let total = s + i;
    if total <= INCIDENCE_GUARD {
        0.0
    } else {
        beta * s * i / total
    }
}

/// Coefficients of the full model on a fixed discretization.
#[derive(Debug, Clone)]
pub struct ModelParams {
    kernel: Kernel,
    rates: RateFields,
    d_s: f64,
    d_i: f64,
    n_total: f64,
}

impl ModelParams {
    pub fn new(kernel: Kernel, rates: RateFields, d_s: f64, d_i: f64, n_total: f64) -> Result<Self> {
        for (name, value) in [("d_S", d_s), ("d_I", d_i), ("N", n_total)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonpositiveParameter { name, value });
            }
        }
        kernel.mesh().check_len(rates.beta())?;
        Ok(Self { kernel, rates, d_s, d_i, n_total })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn mesh(&self) -> &Mesh {
        self.kernel.mesh()
    }

    pub fn rates(&self) -> &RateFields {
        &self.rates
    }

    pub fn d_s(&self) -> f64 {
        self.d_s
    }

    pub fn d_i(&self) -> f64 {
        self.d_i
    }

    pub fn n_total(&self) -> f64 {
        self.n_total
    }

    /// Same discretization and rates, different diffusivities.
    pub fn with_diffusion(&self, d_s: f64, d_i: f64) -> Result<Self> {
        Self::new(self.kernel.clone(), self.rates.clone(), d_s, d_i, self.n_total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    DiseaseFree,
    Endemic,
}

/// A steady state of the full model together with solve diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumResult {
    pub s_tilde: Field,
    pub i_tilde: Field,
    /// The constant value of `d_S S̃ + d_I Ĩ`.
    pub k: f64,
    pub kind: EquilibriumKind,
    pub iterations: usize,
    /// Sup-norm of both steady-state equations.
    pub residual: f64,
}

#[derive(Serialize)]
struct EquilibriumHeader {
    k: f64,
    kind: EquilibriumKind,
    iterations: usize,
    residual: f64,
}

impl EquilibriumResult {
    /// One-line JSON header: `k`, `kind`, `iterations`, `residual`.
    pub fn header_json(&self) -> String {
        let header = EquilibriumHeader {
            k: self.k,
            kind: self.kind,
            iterations: self.iterations,
            residual: self.residual,
        };
        serde_json::to_string(&header).expect("header is plain data")
    }

    /// `node,S_tilde,I_tilde` rows, one per mesh node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,S_tilde,I_tilde\n");
        for (i, (s, v)) in self.s_tilde.iter().zip(self.i_tilde.iter()).enumerate() {
            let _ = writeln!(out, "{i},{},{}", fmt_f64(*s), fmt_f64(*v));
        }
        out
    }
}

/// Sup-norm of both stationary equations at `(S, I)`.
pub fn steady_state_residual(params: &ModelParams, s: &Field, i: &Field) -> Result<f64> {
    let mesh = params.mesh();
    mesh.check_len(s)?;
    mesh.check_len(i)?;
    let n = mesh.len();
    let mut ds = DVector::zeros(n);
    let mut di = DVector::zeros(n);
    params.kernel.disperse_into(params.d_s, s, &mut ds);
    params.kernel.disperse_into(params.d_i, i, &mut di);
    let beta = params.rates.beta();
    let gamma = params.rates.gamma();
    let mut worst = 0.0_f64;
    for j in 0..n {
        let flux = incidence(beta[j], s[j], i[j]) - gamma[j] * i[j];
        worst = worst.max((ds[j] - flux).abs()).max((di[j] + flux).abs());
    }
    Ok(worst)
}

/// `Ŝ ≡ N/|Ω|`, `Î ≡ 0`.
pub fn disease_free(params: &ModelParams) -> EquilibriumResult {
    let mesh = params.mesh();
    let s = mesh.constant(params.n_total / mesh.measure());
    let i = mesh.constant(0.0);
    let residual = steady_state_residual(params, &s, &i).expect("fields built on the mesh");
    EquilibriumResult {
        k: params.d_s * s[0],
        s_tilde: s,
        i_tilde: i,
        kind: EquilibriumKind::DiseaseFree,
        iterations: 0,
        residual,
    }
}

fn require_supercritical(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<()> {
    let (mu, _) = spectral::mu_p(kernel, d_i, rates)?;
    let r0 = 1.0 / mu;
    if !(mu > 0.0 && r0 > 1.0 + SUPERCRITICAL_MARGIN) {
        return Err(Error::SubcriticalRegime(format!("R0 = {r0} at d_I = {d_i}")));
    }
    Ok(())
}

/// Principal eigenvector of the linearization at zero, scaled to max 1.
fn principal_profile(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<DVector<f64>> {
    let (_, v) = spectral::lambda_p(kernel, d_i, rates)?;
    Ok(positive_profile(&v))
}

fn reduced_map<'a>(params: &'a ModelParams, tau: f64) -> DampedMap<'a, impl Fn(usize, f64) -> f64 + 'a> {
    let (d_s, d_i) = (params.d_s, params.d_i);
    let beta = params.rates.beta();
    let gamma = params.rates.gamma();
    let reaction = move |j: usize, u: f64| {
        (beta[j] - gamma[j]) * u - d_s * beta[j] * u * u / (d_s * u + d_i * (1.0 - u))
    };
    DampedMap::new(&params.kernel, d_i, reaction, tau)
}

/// Step size making `I ↦ I + τ F(I)` order preserving on `[0, 1]`.
///
/// The reduced nonlinearity `d_S β I² / (d_S I + d_I (1 - I))` is convex with
/// slope `β (1 + d_I/d_S)` at `I = 1`, so that slope (not `β`) bounds the
/// diagonal Lipschitz constant once `d_I > d_S`.
fn reduced_tau(params: &ModelParams) -> f64 {
    let slope = 1.0 + params.d_i / params.d_s;
    let row = params.kernel.row_integral();
    let beta = params.rates.beta();
    let gamma = params.rates.gamma();
    let worst = (0..row.len())
        .map(|j| params.d_i * row[j] + gamma[j] + beta[j] * slope)
        .fold(0.0_f64, f64::max);
    1.0 / worst
}

/// The reduced infected profile `I ∈ (0, 1)`.
pub fn solve_reduced_infected(params: &ModelParams) -> Result<MonotoneSolution> {
    require_supercritical(&params.kernel, params.d_i, &params.rates)?;
    let phi = principal_profile(&params.kernel, params.d_i, &params.rates)?;
    let map = reduced_map(params, reduced_tau(params));
    let lower = map.subsolution(&phi, "reduced sub-solution")?;
    let upper = DVector::from_element(phi.len(), 1.0);
    map.solve(&upper, &lower, "reduced infected equation")
}

/// Rescales a reduced profile to the endemic state with total mass `N`.
pub fn recover_equilibrium(params: &ModelParams, i_reduced: &Field) -> Result<EquilibriumResult> {
    let mesh = params.mesh();
    mesh.check_len(i_reduced)?;
    if let Some((node, v)) = i_reduced.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::OutOfRange(format!("reduced I = {v} at node {node} is outside (0, 1)")));
    }
    let (d_s, d_i) = (params.d_s, params.d_i);
    let s = Field(i_reduced.map(|v| (1.0 - v) / d_s));
    let weighted = Field(&s.0 * d_i + &i_reduced.0);
    let k = d_i * params.n_total / mesh.integrate(&weighted)?;
    let s_tilde = Field(&s.0 * k);
    let i_tilde = Field(&i_reduced.0 * (k / d_i));
    let residual = steady_state_residual(params, &s_tilde, &i_tilde)?;
    Ok(EquilibriumResult {
        s_tilde,
        i_tilde,
        k,
        kind: EquilibriumKind::Endemic,
        iterations: 0,
        residual,
    })
}

/// Endemic state: reduced solve followed by recovery.
pub fn endemic(params: &ModelParams) -> Result<EquilibriumResult> {
    let reduced = solve_reduced_infected(params)?;
    let mut eq = recover_equilibrium(params, &reduced.value)?;
    eq.iterations = reduced.iterations;
    Ok(eq)
}

/// Endemic state when `R₀ > 1`, otherwise the disease-free state.
pub fn equilibrium(params: &ModelParams) -> Result<EquilibriumResult> {
    match endemic(params) {
        Err(Error::SubcriticalRegime(_)) => Ok(disease_free(params)),
        other => other,
    }
}

/// Sup-distance between the endemic reduced profile and the fixed points
/// reached from `1.1 I` (capped at 1) and `0.9 I`.
pub fn uniqueness_probe(params: &ModelParams, i_reduced: &Field) -> Result<f64> {
    params.mesh().check_len(i_reduced)?;
    let map = reduced_map(params, reduced_tau(params));
    let mut worst = 0.0_f64;
    for factor in [1.1, 0.9] {
        let start = i_reduced.map(|v| (factor * v).min(1.0));
        let (end, _) = map.relax(&start, 1e-14, MAX_ITERATIONS);
        worst = worst.max((&end - &i_reduced.0).amax());
    }
    Ok(worst)
}

/// Positive steady state of `d (J∗u - u) + (r - c u) u = 0`.
pub fn logistic_steady(kernel: &Kernel, d: f64, r: &Field, c: &Field) -> Result<MonotoneSolution> {
    let mesh = kernel.mesh();
    mesh.check_len(r)?;
    mesh.check_len(c)?;
    c.check_positive("c")?;
    let mut m = assemble_dispersal(kernel, d)?.into_entries();
    for j in 0..m.nrows() {
        m[(j, j)] += r[j];
    }
    let (lp, v) = nonlocal_op::lowest_eigenpair(-m);
    if lp >= -SUPERCRITICAL_MARGIN {
        return Err(Error::SubcriticalRegime(format!("logistic principal eigenvalue {lp} is not negative")));
    }
    let phi = positive_profile(&Field(v));

    let cap = r.iter().zip(c.iter()).map(|(r, c)| r / c).fold(f64::NEG_INFINITY, f64::max);
    let row = kernel.row_integral();
    let worst = (0..row.len())
        .map(|j| d * row[j] + r[j].abs() + 2.0 * c[j] * cap)
        .fold(0.0_f64, f64::max);
    let reaction = |j: usize, u: f64| (r[j] - c[j] * u) * u;
    let map = DampedMap::new(kernel, d, reaction, 1.0 / worst);
    let lower = map.subsolution(&phi, "logistic sub-solution")?;
    let upper = DVector::from_element(phi.len(), cap);
    map.solve(&upper, &lower, "nonlocal logistic equation")
}

/// Positive solution of `d_I (J∗θ - θ) + (β - γ) θ - β θ² / (d_I + θ) = 0`.
pub fn theta_star(kernel: &Kernel, d_i: f64, rates: &RateFields) -> Result<MonotoneSolution> {
    require_supercritical(kernel, d_i, rates)?;
    let phi = principal_profile(kernel, d_i, rates)?;
    let beta = rates.beta();
    let gamma = rates.gamma();
    let cap = d_i
        * beta
            .iter()
            .zip(gamma.iter())
            .map(|(b, g)| (b - g) / g)
            .fold(f64::NEG_INFINITY, f64::max);
    let row = kernel.row_integral();
    // βθ²/(d_I + θ) has slope below β on θ ≥ 0
    let worst = (0..row.len())
        .map(|j| d_i * row[j] + gamma[j] + beta[j])
        .fold(0.0_f64, f64::max);
    let reaction = |j: usize, u: f64| (beta[j] - gamma[j]) * u - beta[j] * u * u / (d_i + u);
    let map = DampedMap::new(kernel, d_i, reaction, 1.0 / worst);
    let lower = map.subsolution(&phi, "theta sub-solution")?;
    let upper = DVector::from_element(phi.len(), cap);
    map.solve(&upper, &lower, "theta equation")
}

fn require_net_growth(mesh: &Mesh, rates: &RateFields) -> Result<(f64, f64)> {
    let ib = mesh.integrate(rates.beta())?;
    let ig = mesh.integrate(rates.gamma())?;
    if ib <= ig {
        return Err(Error::AssumptionViolated(format!("∫β = {ib} does not exceed ∫γ = {ig}")));
    }
    Ok((ib, ig))
}

/// Limit of the endemic state as both diffusivities grow without bound.
pub fn limit_profile_both_infinity(rates: &RateFields, n_total: f64, mesh: &Mesh) -> Result<(f64, f64)> {
    let (ib, ig) = require_net_growth(mesh, rates)?;
    let level = n_total / mesh.measure();
    Ok((level * ig / ib, level * (1.0 - ig / ib)))
}

/// A limit profile given as fields.
#[derive(Debug, Clone)]
pub struct LimitProfile {
    pub s: Field,
    pub i: Field,
}

/// Limit of the endemic state as `d_S → ∞` at fixed `d_I`.
pub fn limit_profile_ds_infinity(kernel: &Kernel, d_i: f64, rates: &RateFields, n_total: f64) -> Result<LimitProfile> {
    let theta = theta_star(kernel, d_i, rates)?.value;
    let mesh = kernel.mesh();
    let z = mesh.integrate(&Field(theta.add_scalar(d_i)))?;
    Ok(LimitProfile {
        s: mesh.constant(d_i * n_total / z),
        i: Field(&theta.0 * (n_total / z)),
    })
}

/// Limit of the endemic state as `d_I → ∞` at fixed `d_S`: a profile `S*`
/// and a constant infected level `I*`.
#[derive(Debug, Clone)]
pub struct DiInfinityProfile {
    pub s_star: Field,
    pub i_star: f64,
    /// Sup-norm of the `S*` equation.
    pub residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

/// Fixed point of the closed-form `S*` update at a trial constant `I*`.
///
/// Each sweep solves `a S² + G S - H = 0` pointwise with the nonlocal term
/// lagged; the positive root is increasing in the lagged term, so the sweep
/// is monotone.
fn solve_s_star(kernel: &Kernel, d_s: f64, rates: &RateFields, i_star: f64, start: DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let beta = rates.beta();
    let gamma = rates.gamma();
    let row = kernel.row_integral();
    let mut s = start;
    let mut h = DVector::zeros(s.len());
    for it in 1..=INNER_CAP {
        h.gemv(d_s, kernel.matrix(), &s, 0.0);
        let mut change = 0.0_f64;
        for j in 0..s.len() {
            let a = d_s * row[j];
            let g = (a - gamma[j] + beta[j]) * i_star - h[j];
            let q = gamma[j] * i_star * i_star + h[j] * i_star;
            let disc = (g * g + 4.0 * a * q).sqrt();
            let next = if g >= 0.0 { 2.0 * q / (g + disc) } else { (disc - g) / (2.0 * a) };
            change = change.max((next - s[j]).abs());
            s[j] = next;
        }
        if change <= INNER_TOL {
            return Ok((s, it));
        }
    }
    Err(Error::NoConvergence { what: "S* inner iteration", iterations: INNER_CAP, gap: f64::NAN })
}

/// Limit of the endemic state as `d_I → ∞` at fixed `d_S`.
///
/// Bisection on the constant `I* ∈ (0, N/|Ω|)` against the mass constraint
/// `∫S* + I*|Ω| = N`, with an inner fixed point for `S*`.
pub fn limit_profile_di_infinity(kernel: &Kernel, d_s: f64, rates: &RateFields, n_total: f64) -> Result<DiInfinityProfile> {
    if !(d_s > 0.0) {
        return Err(Error::NonpositiveParameter { name: "d_S", value: d_s });
    }
    let mesh = kernel.mesh();
    require_net_growth(mesh, rates)?;
    let measure = mesh.measure();
    let tol = 1e-8 * n_total;

    let mut inner_total = 0;
    let mut s = DVector::from_element(mesh.len(), n_total / measure);
    let mut last_i = n_total / measure;
    let mut mass_excess = |i_star: f64, s: &mut DVector<f64>, last_i: &mut f64| -> Result<f64> {
        let warm = &*s * (i_star / *last_i);
        let (next, its) = solve_s_star(kernel, d_s, rates, i_star, warm)?;
        inner_total += its;
        *s = next;
        *last_i = i_star;
        Ok(mesh.integrate(&Field(s.clone()))? + i_star * measure - n_total)
    };

    let (mut lo, mut hi) = (0.0, n_total / measure);
    let mut f_lo = -n_total;
    let mut f_hi = mass_excess(hi, &mut s, &mut last_i)?;
    if f_hi <= 0.0 {
        return Err(Error::BracketViolation { what: "I* bisection", iteration: 0 });
    }
    let mut outer = 0;
    loop {
        if outer == OUTER_CAP {
            return Err(Error::NoConvergence { what: "I* bisection", iterations: outer, gap: hi - lo });
        }
        outer += 1;
        let mid = 0.5 * (lo + hi);
        let f = mass_excess(mid, &mut s, &mut last_i)?;
        if !(f >= f_lo && f <= f_hi) {
            return Err(Error::BracketViolation { what: "I* bisection", iteration: outer });
        }
        if f.abs() <= tol {
            lo = mid;
            break;
        }
        if f < 0.0 {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }

    let i_star = lo;
    let s_star = Field(s);
    let residual = s_star_residual(kernel, d_s, rates, &s_star, i_star);
    Ok(DiInfinityProfile { s_star, i_star, residual, outer_iterations: outer, inner_iterations: inner_total })
}

/// Sup-norm of `d_S (J∗S - S) + γ I* - β S I* / (S + I*)`.
pub fn s_star_residual(kernel: &Kernel, d_s: f64, rates: &RateFields, s: &Field, i_star: f64) -> f64 {
    let mut out = DVector::zeros(s.len());
    kernel.disperse_into(d_s, s, &mut out);
    let beta = rates.beta();
    let gamma = rates.gamma();
    (0..s.len())
        .map(|j| (out[j] + gamma[j] * i_star - incidence(beta[j], s[j], i_star)).abs())
        .fold(0.0, f64::max)
}
