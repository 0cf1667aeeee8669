//! The acceptance battery: threshold, stability and limit statements checked
//! numerically on the default fixture (`Ω = (-1, 1)`, 400 nodes, triangle
//! kernel of radius 0.5).
//!
//! Each criterion is a plain function returning pass/fail with a one-line
//! detail; failures are recorded, never thrown.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{self, IntegrateOptions, State, Trajectory};
use crate::equilibria::{self, EquilibriumKind, EquilibriumResult, ModelParams};
use crate::error::Result;
use crate::mesh::{Kernel, KernelSpec, Mesh};
use crate::runner::output::fmt_f64;
use crate::runner::relative_gap;
use crate::spectral::{self, RateFields, ThresholdSearch};

pub const FIXTURE_NODES: usize = 400;
pub const FIXTURE_DELTA: f64 = 0.5;
const TRIAL_COUNT: usize = 100;
const TRIAL_SEED: u64 = 20_240_601;

/// `λ_p` as a function of `(kernel, d_I, rates)`; injectable so the sign
/// relation can be checked against a deliberately broken implementation.
pub type LambdaFn = dyn Fn(&Kernel, f64, &RateFields) -> Result<f64>;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:02} {:<4} {} | {} ({:.1} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}

type Verdict = Result<(bool, String)>;

pub const CRITERIA: [(u8, &str, fn() -> Verdict); 12] = [
    (1, "constant-coefficient R0", constant_r0),
    (2, "sign relation", sign_relation),
    (3, "route agreement", route_agreement),
    (4, "small/large diffusion limits of lambda_p", lambda_limits),
    (5, "threshold diffusion rate", threshold),
    (6, "convergence to the disease-free state", dfe_convergence),
    (7, "endemic equilibrium by monotone iteration", endemic_equilibrium),
    (8, "global convergence for equal diffusion", equal_diffusion_convergence),
    (9, "Lyapunov decrease", lyapunov_decrease),
    (10, "mass conservation", conservation),
    (11, "large-diffusion limit profiles", limit_profiles),
    (12, "mesh refinement", mesh_refinement),
];

/// Runs one criterion by number (1-based), timing it and folding errors into
/// a failed outcome.
pub fn run_criterion(id: u8) -> Outcome {
    let (id, title, f) = CRITERIA[usize::from(id) - 1];
    timed(id, title, f)
}

fn timed(id: u8, title: &'static str, f: impl FnOnce() -> Verdict) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Outcome { id, title, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Every criterion in order; `report` sees each outcome as it completes.
pub fn run_all(mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    CRITERIA
        .iter()
        .map(|&(id, title, f)| {
            let o = timed(id, title, f);
            report(&o);
            o
        })
        .collect()
}

pub fn to_csv(outcomes: &[Outcome]) -> String {
    let mut out = String::from("criterion,title,passed,seconds,detail\n");
    for o in outcomes {
        let _ = writeln!(out, "{},{},{},{:.3},\"{}\"", o.id, o.title, o.passed, o.seconds, o.detail.replace('"', "'"));
    }
    out
}

pub fn fixture_kernel(n: usize) -> Kernel {
    let mesh = Mesh::new(-1.0, 1.0, n).expect("fixed domain");
    Kernel::new(&mesh, KernelSpec::Triangle { delta: FIXTURE_DELTA }).expect("fixed kernel")
}

fn rates(mesh: &Mesh, beta: impl Fn(f64) -> f64, gamma: impl Fn(f64) -> f64) -> Result<RateFields> {
    RateFields::new(mesh.field_from_fn(beta), mesh.field_from_fn(gamma))
}

/// `β = 1 + 0.8 cos(πx)`, `γ ≡ 1`.
pub fn standard_profile(mesh: &Mesh) -> Result<RateFields> {
    rates(mesh, |x| 1.0 + 0.8 * (PI * x).cos(), |_| 1.0)
}

/// `β = 1.5 + 0.8 cos(πx)`, `γ = 1 + 0.3 sin(πx/2)`: supercritical with
/// both coefficients varying.
pub fn supercritical_profile(mesh: &Mesh) -> Result<RateFields> {
    rates(mesh, |x| 1.5 + 0.8 * (PI * x).cos(), |x| 1.0 + 0.3 * (PI * x / 2.0).sin())
}

/// One randomized `(rates, d_I)` draw of the sign and route checks.
pub struct Trial {
    pub rates: RateFields,
    pub d_i: f64,
}

/// `β, γ = c (1 + a cos(kπx + φ))` with random level, amplitude, frequency
/// and phase, and `log₁₀ d_I` uniform on `[-3, 3]`.
pub fn random_trials(mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<Trial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = |rng: &mut ChaCha8Rng| {
        let c = rng.random_range(0.5..3.0);
        let a = rng.random_range(0.0..0.9);
        let k = f64::from(rng.random_range(1..=3u8));
        let phi = rng.random_range(0.0..2.0 * PI);
        mesh.field_from_fn(|x| c * (1.0 + a * (k * PI * x + phi).cos()))
    };
    (0..count)
        .map(|_| {
            let beta = field(&mut rng);
            let gamma = field(&mut rng);
            let d_i = 10f64.powf(rng.random_range(-3.0..3.0));
            Ok(Trial { rates: RateFields::new(beta, gamma)?, d_i })
        })
        .collect()
}

fn constant_r0() -> Verdict {
    let k = fixture_kernel(FIXTURE_NODES);
    let r = rates(k.mesh(), |_| 2.0, |_| 1.0)?;
    let rep = spectral::r0_all_routes(&k, 1.0, &r)?;
    let worst = [rep.r0_weighted, rep.r0_variational, rep.r0_nextgen]
        .iter()
        .map(|v| (v - 2.0).abs())
        .fold(0.0, f64::max);
    let lp_err = (rep.lambda_p + 1.0).abs();
    Ok((
        worst <= 1e-9 && lp_err <= 1e-10,
        format!("max |R0 - 2| = {worst:.2e}, |lambda_p + 1| = {lp_err:.2e}"),
    ))
}

/// Counts trials where `sign(λ_p) ≠ sign(1 - R₀)` with `|λ_p| > 1e-9`.
pub fn sign_relation_with(lambda: &LambdaFn) -> Verdict {
    let k = fixture_kernel(FIXTURE_NODES);
    let trials = random_trials(k.mesh(), TRIAL_COUNT, TRIAL_SEED)?;
    let (mut violations, mut decided) = (0, 0);
    for t in &trials {
        let lp = lambda(&k, t.d_i, &t.rates)?;
        if lp.abs() <= 1e-9 {
            continue;
        }
        decided += 1;
        let (mu, _) = spectral::mu_p(&k, t.d_i, &t.rates)?;
        let r0 = 1.0 / mu;
        if (lp > 0.0) != (1.0 - r0 > 0.0) {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("{violations} violations in {decided} decided trials of {}", trials.len())))
}

fn sign_relation() -> Verdict {
    sign_relation_with(&spectral::lambda_p_value)
}

fn route_agreement() -> Verdict {
    let k = fixture_kernel(FIXTURE_NODES);
    let trials = random_trials(k.mesh(), TRIAL_COUNT, TRIAL_SEED)?;
    let mut worst = 0.0_f64;
    let mut violations = 0;
    for t in &trials {
        let spread = spectral::r0_all_routes(&k, t.d_i, &t.rates)?.route_spread();
        worst = worst.max(spread);
        if !(spread <= 1e-7) {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("{violations} violations, max relative spread {worst:.2e}")))
}

fn lambda_limits() -> Verdict {
    let k = fixture_kernel(FIXTURE_NODES);
    let mesh = k.mesh();
    let r = standard_profile(mesh)?;
    let potential = r.potential();
    let (vmin, vmean) = (potential.min(), potential.mean());

    let small = spectral::lambda_p_value(&k, 1e-4, &r)?;
    let large = spectral::lambda_p_value(&k, 1e4, &r)?;
    let grid: Vec<f64> = (0..25).map(|j| 10f64.powf(-4.0 + 8.0 * j as f64 / 24.0)).collect();
    let scan = spectral::lambda_p_scan(&k, &r, &grid)?;
    let drops = scan.windows(2).filter(|w| !(w[1] > w[0] - 1e-10)).count();

    let (e_small, e_large) = ((small - vmin).abs(), (large - vmean).abs());
    let passed = e_small <= 5e-3 && e_large <= 1e-4 && drops == 0;
    Ok((
        passed,
        format!(
            "|lambda_p(1e-4) - min(gamma-beta)| = {e_small:.2e} (tol 5e-3); \
             |lambda_p(1e4) - mean(gamma-beta)| = {e_large:.2e} (tol 1e-4); \
             {drops} monotonicity violations on 25-point grid"
        ),
    ))
}

/// Gaussian high-risk site inside a low-risk domain: `∫β < ∫γ`, `max β > γ`.
pub fn bump_profile(mesh: &Mesh) -> Result<RateFields> {
    rates(mesh, |x| 1.0 + 1.5 * (-(x / 0.25).powi(2)).exp(), |_| 1.4)
}

fn threshold() -> Verdict {
    let k = fixture_kernel(FIXTURE_NODES);
    let r = bump_profile(k.mesh())?;
    match spectral::find_d_star(&k, &r, 1e-3, 1e3)? {
        ThresholdSearch::Root { d_star, iterations } => {
            let below = spectral::lambda_p_value(&k, d_star / 2.0, &r)?;
            let above = spectral::lambda_p_value(&k, 2.0 * d_star, &r)?;
            Ok((
                below < -1e-6 && above > 1e-6,
                format!(
                    "d* = {d_star:.6e} after {iterations} bisections; lambda_p(d*/2) = {below:.3e}, lambda_p(2d*) = {above:.3e}"
                ),
            ))
        }
        ThresholdSearch::NoRoot { reason } => Ok((false, format!("no threshold: {reason}"))),
    }
}

fn params(kernel: Kernel, rates: RateFields, d_s: f64, d_i: f64) -> Result<ModelParams> {
    ModelParams::new(kernel, rates, d_s, d_i, 2.0)
}

const INITIAL_SEEDS: [u64; 3] = [1, 2, 3];

/// `β ≡ 1`, `γ ≡ 2` from three random initials up to `t = 200`, with
/// full-field snapshots.
pub fn dfe_runs() -> Result<(ModelParams, Vec<Trajectory>)> {
    let k = fixture_kernel(FIXTURE_NODES);
    let r = rates(k.mesh(), |_| 1.0, |_| 2.0)?;
    let p = params(k, r, 1.0, 1.0)?;
    let opts = IntegrateOptions { snapshots: true, ..Default::default() };
    let runs = INITIAL_SEEDS
        .iter()
        .map(|&seed| dynamics::integrate_to(&p, &State::random(p.mesh(), 2.0, seed), 200.0, dynamics::dt_max(&p), &opts))
        .collect::<Result<_>>()?;
    Ok((p, runs))
}

fn dfe_convergence() -> Verdict {
    let (p, runs) = dfe_runs()?;
    let lp = spectral::lambda_p_value(p.kernel(), p.d_i(), p.rates())?;
    let mut worst_dist = 0.0_f64;
    let mut worst_rate = f64::INFINITY;
    for traj in &runs {
        worst_dist = worst_dist.max(traj.samples.last().expect("samples").dist_dfe);
        let tail = &traj.snapshots[traj.snapshots.len() / 2..];
        let t: Vec<f64> = tail.iter().map(|s| s.t).collect();
        let y: Vec<f64> = tail.iter().map(|s| s.i.amax()).collect();
        worst_rate = worst_rate.min(dynamics::fitted_decay_rate(&t, &y));
    }
    let target = 0.9 * lp / 2.0;
    Ok((
        worst_dist <= 1e-4 && worst_rate >= target,
        format!("max distance at t=200 {worst_dist:.2e} (tol 1e-4); min fitted I-decay rate {worst_rate:.4} >= {target:.4}"),
    ))
}

fn endemic_equilibrium() -> Verdict {
    let k = fixture_kernel(FIXTURE_NODES);
    let r = supercritical_profile(k.mesh())?;
    let p = params(k, r, 0.5, 1.0)?;
    let reduced = equilibria::solve_reduced_infected(&p)?;
    let mut eq = equilibria::recover_equilibrium(&p, &reduced.value)?;
    eq.iterations = reduced.iterations;
    let k_dev = eq
        .s_tilde
        .iter()
        .zip(eq.i_tilde.iter())
        .map(|(s, i)| (p.d_s() * s + p.d_i() * i - eq.k).abs())
        .fold(0.0, f64::max);
    let probe = equilibria::uniqueness_probe(&p, &reduced.value)?;
    let passed = reduced.gap <= 1e-10 && eq.residual <= 1e-8 && k_dev <= 1e-8 * eq.k && probe <= 1e-8;
    Ok((
        passed,
        format!(
            "bracket gap {:.2e} after {} iterations; residual {:.2e}; max |d_S S + d_I I - k| {k_dev:.2e} (k = {:.6}); probe distance {probe:.2e}",
            reduced.gap, reduced.iterations, eq.residual, eq.k
        ),
    ))
}

/// `β ≡ 2`, `γ ≡ 1`, `d_S = d_I = 1` from one random initial up to `t = 200`.
pub fn equal_diffusion_run() -> Result<(ModelParams, Trajectory)> {
    let k = fixture_kernel(FIXTURE_NODES);
    let r = rates(k.mesh(), |_| 2.0, |_| 1.0)?;
    let p = params(k, r, 1.0, 1.0)?;
    let traj = dynamics::integrate_to(&p, &State::random(p.mesh(), 2.0, 1), 200.0, dynamics::dt_max(&p), &IntegrateOptions::default())?;
    Ok((p, traj))
}

/// The constant endemic pair `(N/(r|Ω|), (r-1)N/(r|Ω|))` when `β = rγ`.
pub fn proportional_equilibrium(p: &ModelParams, r: f64) -> EquilibriumResult {
    let mesh = p.mesh();
    let level = p.n_total() / mesh.measure();
    let (s, i) = (level / r, level * (r - 1.0) / r);
    EquilibriumResult {
        s_tilde: mesh.constant(s),
        i_tilde: mesh.constant(i),
        k: p.d_s() * s + p.d_i() * i,
        kind: EquilibriumKind::Endemic,
        iterations: 0,
        residual: 0.0,
    }
}

fn equal_diffusion_convergence() -> Verdict {
    let (p, traj) = equal_diffusion_run()?;
    let explicit = proportional_equilibrium(&p, 2.0);
    let dist = traj.final_state.distance_to(&explicit);
    let formula_ok = (explicit.s_tilde[0] - 0.5).abs() < 1e-15 && (explicit.i_tilde[0] - 0.5).abs() < 1e-15;
    Ok((
        dist <= 1e-4 && formula_ok,
        format!("distance to ({}, {}) at t=200: {dist:.2e}", explicit.s_tilde[0], explicit.i_tilde[0]),
    ))
}

/// `β = 2γ` with `γ = 1 + 0.4 sin(πx)`, `d_S = 0.5`, `d_I = 1.5`, three
/// random initials up to `t = 100`, recording `V`.
pub fn lyapunov_runs() -> Result<Vec<Trajectory>> {
    let k = fixture_kernel(FIXTURE_NODES);
    let gamma = |x: f64| 1.0 + 0.4 * (PI * x).sin();
    let r = rates(k.mesh(), |x| 2.0 * gamma(x), gamma)?;
    let p = params(k, r, 0.5, 1.5)?;
    let opts = IntegrateOptions { endemic: Some(proportional_equilibrium(&p, 2.0)), lyapunov: true, snapshots: false };
    INITIAL_SEEDS
        .iter()
        .map(|&seed| dynamics::integrate_to(&p, &State::random(p.mesh(), 2.0, seed), 100.0, dynamics::dt_max(&p), &opts))
        .collect()
}

fn lyapunov_decrease() -> Verdict {
    let runs = lyapunov_runs()?;
    let mut rise = f64::NEG_INFINITY;
    let mut ratio = 0.0_f64;
    for traj in &runs {
        let v: Vec<f64> = traj.samples.iter().map(|s| s.lyapunov.expect("recorded")).collect();
        rise = rise.max(v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max));
        ratio = ratio.max(v[v.len() - 1] / v[0]);
    }
    Ok((
        rise <= 1e-10,
        format!("largest increase between samples {rise:.2e} (slack 1e-10); max V(end)/V(0) = {ratio:.2e}"),
    ))
}

fn conservation() -> Verdict {
    let (_, dfe) = dfe_runs()?;
    let (_, equal) = equal_diffusion_run()?;
    let lyap = lyapunov_runs()?;
    let n = 2.0;
    let mut worst = 0.0_f64;
    let mut count = 0;
    for traj in dfe.iter().chain(std::iter::once(&equal)).chain(lyap.iter()) {
        count += 1;
        for s in &traj.samples {
            worst = worst.max((s.mass - n).abs());
        }
    }
    Ok((worst <= 1e-10 * n, format!("max |mass - N| = {worst:.2e} over {count} trajectories (tol {:.0e})", 1e-10 * n)))
}

fn limit_profiles() -> Verdict {
    let mut notes = Vec::new();

    // (a) constant coefficients, closed form
    let m = Mesh::new(-1.0, 1.0, FIXTURE_NODES)?;
    let (s1, i1) = equilibria::limit_profile_both_infinity(&rates(&m, |_| 2.0, |_| 1.0)?, 2.0, &m)?;
    let m01 = Mesh::new(0.0, 1.0, FIXTURE_NODES)?;
    let (s2, i2) = equilibria::limit_profile_both_infinity(&rates(&m01, |_| 3.0, |_| 1.0)?, 3.0, &m01)?;
    let a_err = [(s1 - 0.5), (i1 - 0.5), (s2 - 1.0), (i2 - 2.0)].iter().map(|v| v.abs()).fold(0.0, f64::max);
    let a_ok = a_err <= 1e-14;
    notes.push(format!("(a) max error {a_err:.1e}"));

    // (b) d_S → ∞ at d_I = 1
    let k = fixture_kernel(FIXTURE_NODES);
    let r = supercritical_profile(k.mesh())?;
    let lim = equilibria::limit_profile_ds_infinity(&k, 1.0, &r, 2.0)?;
    let eq = equilibria::endemic(&params(k.clone(), r.clone(), 1e3, 1.0)?)?;
    let b_gap = relative_gap(&eq.s_tilde, &eq.i_tilde, &lim.s, &lim.i);
    let b_ok = b_gap <= 2e-2;
    notes.push(format!("(b) relative gap at d_S=1e3 {b_gap:.2e}"));

    // (c) d_I → ∞ at d_S = 1
    let lim = equilibria::limit_profile_di_infinity(&k, 1.0, &r, 2.0)?;
    let eq = equilibria::endemic(&params(k.clone(), r, 1.0, 1e3)?)?;
    let istar = k.mesh().constant(lim.i_star);
    let c_gap = relative_gap(&eq.s_tilde, &eq.i_tilde, &lim.s_star, &istar);
    let c_ok = c_gap <= 2e-2 && lim.residual <= 1e-8;
    notes.push(format!(
        "(c) relative gap at d_I=1e3 {c_gap:.2e}, limit residual {:.2e}, I* = {}",
        lim.residual,
        fmt_f64(lim.i_star)
    ));

    Ok((a_ok && b_ok && c_ok, notes.join("; ")))
}

fn mesh_refinement() -> Verdict {
    let d_i = 1.0;
    let measure = |n: usize| -> Result<(f64, f64)> {
        let k = fixture_kernel(n);
        let r = standard_profile(k.mesh())?;
        let lp = spectral::lambda_p_value(&k, d_i, &r)?;
        let (mu, _) = spectral::mu_p(&k, d_i, &r)?;
        Ok((lp, 1.0 / mu))
    };
    let (lp_c, r0_c) = measure(200)?;
    let (lp_f, r0_f) = measure(800)?;
    let e_lp = ((lp_c - lp_f) / lp_f).abs();
    let e_r0 = ((r0_c - r0_f) / r0_f).abs();
    Ok((
        e_lp <= 1e-3 && e_r0 <= 1e-3,
        format!("lambda_p {lp_c:.8} vs {lp_f:.8} (rel {e_lp:.2e}); R0 {r0_c:.8} vs {r0_f:.8} (rel {e_r0:.2e})"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trials_are_seeded_and_positive() {
        let m = Mesh::new(-1.0, 1.0, 50).unwrap();
        let a = random_trials(&m, 5, 1).unwrap();
        let b = random_trials(&m, 5, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.rates, y.rates);
            assert_eq!(x.d_i, y.d_i);
            assert!(x.d_i >= 1e-3 && x.d_i <= 1e3);
        }
    }

    #[test]
    fn bump_profile_is_low_risk_with_a_high_risk_site() {
        let m = Mesh::new(-1.0, 1.0, 400).unwrap();
        let r = bump_profile(&m).unwrap();
        assert!(m.integrate(r.beta()).unwrap() < m.integrate(r.gamma()).unwrap());
        assert!(r.beta().max_value() > 1.4);
    }

    #[test]
    fn outcome_line_format() {
        let o = Outcome { id: 3, title: "t", passed: false, detail: "d".into(), seconds: 1.25 };
        assert_eq!(o.line(), "criterion 03 FAIL t | d (1.2 s)");
    }
}
