//! Time integration of the semi-discrete model
//!
//! ```text
//!   S' = d_S (K S - row ∘ S) - β S I / (S + I) + γ I
//!   I' = d_I (K I - row ∘ I) + β S I / (S + I) - γ I
//! ```
//!
//! by classical RK4. Both dispersal terms have zero column sums and the
//! reaction terms cancel, so total mass is conserved to rounding.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibria::{self, incidence, EquilibriumKind, EquilibriumResult, ModelParams};
use crate::error::{Error, Result};
use crate::mesh::{Field, Kernel, Mesh};
use crate::nonlocal_op::{self, assemble_dispersal};
use crate::runner::output::fmt_f64;

/// Entries below `-NEGATIVITY_TOL` count as a positivity failure.
pub const NEGATIVITY_TOL: f64 = 1e-12;

/// Maximum step halvings within one nominal step.
pub const MAX_HALVINGS: usize = 20;

/// Relative mass drift tolerated at any sample before aborting.
pub const MASS_DRIFT_TOL: f64 = 1e-8;

/// Approximate number of samples recorded per trajectory.
const TARGET_SAMPLES: f64 = 500.0;

/// Sup-norm distance below which a trajectory counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-3;

/// Smallest `Ĩ` (and `S̃`) accepted as a Lyapunov weight.
pub const LYAPUNOV_GUARD: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub s: Field,
    pub i: Field,
    pub t: f64,
}

impl State {
    pub fn new(s: Field, i: Field, t: f64) -> Result<Self> {
        if s.len() != i.len() {
            return Err(Error::LengthMismatch { expected: s.len(), got: i.len() });
        }
        Ok(Self { s, i, t })
    }

    pub fn mass(&self, mesh: &Mesh) -> f64 {
        mesh.weight() * (self.s.sum() + self.i.sum())
    }

    /// Sup-norm distance between the pairs `(S, I)`.
    pub fn distance(&self, s: &Field, i: &Field) -> f64 {
        (&self.s.0 - &s.0).amax().max((&self.i.0 - &i.0).amax())
    }

    pub fn distance_to(&self, eq: &EquilibriumResult) -> f64 {
        self.distance(&eq.s_tilde, &eq.i_tilde)
    }

    /// Iid uniform `(0.1, 1)` entries for both species, rescaled to total mass `N`.
    pub fn random(mesh: &Mesh, n_total: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = mesh.len();
        let s = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
        let i = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
        let scale = n_total / (mesh.weight() * (s.sum() + i.sum()));
        Self { s: Field(s * scale), i: Field(i * scale), t: 0.0 }
    }

    fn check_nonnegative(&self) -> Result<()> {
        for f in [&self.s, &self.i] {
            if let Some((node, &value)) = f.iter().enumerate().find(|(_, v)| **v < -NEGATIVITY_TOL) {
                return Err(Error::NegativeState { node, value });
            }
        }
        Ok(())
    }

    fn stacked(&self) -> DVector<f64> {
        let n = self.s.len();
        DVector::from_fn(2 * n, |k, _| if k < n { self.s[k] } else { self.i[k - n] })
    }

    fn from_stacked(y: &DVector<f64>, t: f64) -> Self {
        let n = y.len() / 2;
        Self {
            s: Field(y.rows(0, n).into_owned()),
            i: Field(y.rows(n, n).into_owned()),
            t,
        }
    }
}

/// Right-hand side on the stacked vector `[S; I]`.
struct ModelRhs<'a> {
    params: &'a ModelParams,
}

impl ModelRhs<'_> {
    fn eval(&self, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let p = self.params;
        let n = y.len() / 2;
        let kernel = p.kernel();
        let (k, row) = (kernel.matrix(), kernel.row_integral());
        let (s, i) = (y.rows(0, n), y.rows(n, n));
        {
            let mut ds = dy.rows_mut(0, n);
            ds.gemv(p.d_s(), k, &s, 0.0);
        }
        {
            let mut di = dy.rows_mut(n, n);
            di.gemv(p.d_i(), k, &i, 0.0);
        }
        let beta = p.rates().beta();
        let gamma = p.rates().gamma();
        for j in 0..n {
            let flux = incidence(beta[j], s[j], i[j]) - gamma[j] * i[j];
            dy[j] -= p.d_s() * row[j] * s[j] + flux;
            dy[n + j] += flux - p.d_i() * row[j] * i[j];
        }
    }
}

/// Time derivatives `(S', I')` at `state`.
pub fn rhs(params: &ModelParams, state: &State) -> Result<(Field, Field)> {
    params.mesh().check_len(&state.s)?;
    params.mesh().check_len(&state.i)?;
    state.check_nonnegative()?;
    let y = state.stacked();
    let mut dy = DVector::zeros(y.len());
    ModelRhs { params }.eval(&y, &mut dy);
    Ok(State::from_stacked(&dy, state.t).into_pair())
}

impl State {
    fn into_pair(self) -> (Field, Field) {
        (self.s, self.i)
    }
}

/// Scratch space for [`rk4_step`].
pub struct Rk4Work {
    k1: DVector<f64>,
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    tmp: DVector<f64>,
}

impl Rk4Work {
    pub fn new(len: usize) -> Self {
        let z = DVector::zeros(len);
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }
}

/// One classical RK4 step of `y' = f(y)` from `y` into `out`.
pub fn rk4_step<F>(f: &mut F, y: &DVector<f64>, h: f64, work: &mut Rk4Work, out: &mut DVector<f64>)
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>),
{
    let Rk4Work { k1, k2, k3, k4, tmp } = work;
    f(y, k1);
    tmp.copy_from(y);
    tmp.axpy(0.5 * h, k1, 1.0);
    f(tmp, k2);
    tmp.copy_from(y);
    tmp.axpy(0.5 * h, k2, 1.0);
    f(tmp, k3);
    tmp.copy_from(y);
    tmp.axpy(h, k3, 1.0);
    f(tmp, k4);
    out.copy_from(y);
    out.axpy(h / 6.0, k1, 1.0);
    out.axpy(h / 3.0, k2, 1.0);
    out.axpy(h / 3.0, k3, 1.0);
    out.axpy(h / 6.0, k4, 1.0);
}

/// Explicit-stability step bound `0.5 / (max(d_S, d_I) max row + max(β, γ))`.
pub fn dt_max(params: &ModelParams) -> f64 {
    let row = params.kernel().row_integral().max_value();
    let rate = params.rates().beta().max_value().max(params.rates().gamma().max_value());
    0.5 / (params.d_s().max(params.d_i()) * row + rate)
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub mass: f64,
    pub dist_dfe: f64,
    pub dist_endemic: Option<f64>,
    pub lyapunov: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct IntegrateOptions {
    /// Endemic reference for distances (and the Lyapunov functional).
    pub endemic: Option<EquilibriumResult>,
    /// Record `V` against the endemic reference at each sample.
    pub lyapunov: bool,
    /// Keep full-field states at each sample.
    pub snapshots: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub final_state: State,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<State>,
    pub steps: usize,
    pub halvings: usize,
}

impl Trajectory {
    pub const CSV_HEADER: &'static str = "t,mass,dist_dfe,dist_endemic,lyapunov";

    /// `t,mass,dist_dfe,dist_endemic,lyapunov`; inapplicable columns are empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(s.t),
                fmt_f64(s.mass),
                fmt_f64(s.dist_dfe),
                opt(s.dist_endemic),
                opt(s.lyapunov)
            );
        }
        out
    }

    /// `node,value` rows for one species of the final state.
    pub fn final_csv(&self, species: Species) -> String {
        let f = match species {
            Species::Susceptible => &self.final_state.s,
            Species::Infected => &self.final_state.i,
        };
        let mut out = String::from("node,value\n");
        for (j, v) in f.iter().enumerate() {
            let _ = writeln!(out, "{j},{}", fmt_f64(*v));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    Susceptible,
    Infected,
}

struct Sampler<'a> {
    params: &'a ModelParams,
    dfe: EquilibriumResult,
    options: &'a IntegrateOptions,
}

impl Sampler<'_> {
    fn sample(&self, state: &State) -> Result<Sample> {
        let mesh = self.params.mesh();
        let mass = state.mass(mesh);
        let expected = self.params.n_total();
        if (mass - expected).abs() > MASS_DRIFT_TOL * expected {
            return Err(Error::MassDrift { t: state.t, mass, expected });
        }
        let endemic = self.options.endemic.as_ref();
        let lyapunov = match endemic {
            Some(eq) if self.options.lyapunov => Some(lyapunov_v(state, eq, mesh)?),
            _ => None,
        };
        Ok(Sample {
            t: state.t,
            mass,
            dist_dfe: state.distance_to(&self.dfe),
            dist_endemic: endemic.map(|eq| state.distance_to(eq)),
            lyapunov,
        })
    }
}

/// RK4 from `initial` to `t_end` with nominal step `dt`.
///
/// A step whose result has an entry below `-1e-12` is retried at half the
/// step size, up to 20 halvings per nominal step. Samples are taken every
/// `max(1, ⌊t_end/dt/500⌋)` nominal steps, plus the initial and final times.
pub fn integrate_to(
    params: &ModelParams,
    initial: &State,
    t_end: f64,
    dt: f64,
    options: &IntegrateOptions,
) -> Result<Trajectory> {
    let mesh = params.mesh();
    mesh.check_len(&initial.s)?;
    mesh.check_len(&initial.i)?;
    initial.check_nonnegative()?;
    if !(dt > 0.0) {
        return Err(Error::NonpositiveParameter { name: "dt", value: dt });
    }
    let bound = dt_max(params);
    if dt > bound {
        return Err(Error::StepTooLarge { dt, dt_max: bound });
    }
    if !(t_end > initial.t) {
        return Err(Error::OutOfRange(format!("t_end = {t_end} must exceed the initial time {}", initial.t)));
    }
    if mesh.integrate(&initial.i)? <= 0.0 {
        return Err(Error::AssumptionViolated("initial infected mass must be positive".into()));
    }
    if options.lyapunov && options.endemic.is_none() {
        return Err(Error::AssumptionViolated("the Lyapunov functional needs an endemic reference".into()));
    }

    let sampler = Sampler { params, dfe: equilibria::disease_free(params), options };
    let span = t_end - initial.t;
    let nominal = (span / dt).ceil() as usize;
    let every = ((span / dt / TARGET_SAMPLES).floor() as usize).max(1);

    let mut samples = vec![sampler.sample(initial)?];
    let mut snapshots = if options.snapshots { vec![initial.clone()] } else { Vec::new() };

    let rhs = ModelRhs { params };
    let mut f = |y: &DVector<f64>, dy: &mut DVector<f64>| rhs.eval(y, dy);
    let mut y = initial.stacked();
    let mut next = y.clone();
    let mut work = Rk4Work::new(y.len());
    let mut t = initial.t;
    let mut total_halvings = 0;

    for step in 1..=nominal {
        let target = if step == nominal { t_end } else { initial.t + step as f64 * dt };
        let mut halvings = 0;
        let mut h = target - t;
        while t < target {
            h = h.min(target - t);
            rk4_step(&mut f, &y, h, &mut work, &mut next);
            if next.iter().any(|v| *v < -NEGATIVITY_TOL) {
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(Error::StepCollapse { t, halvings: MAX_HALVINGS });
                }
                h *= 0.5;
                continue;
            }
            std::mem::swap(&mut y, &mut next);
            t = if h == target - t { target } else { t + h };
        }
        total_halvings += halvings;

        if step % every == 0 || step == nominal {
            let state = State::from_stacked(&y, t);
            samples.push(sampler.sample(&state)?);
            if options.snapshots {
                snapshots.push(state);
            }
        }
    }

    Ok(Trajectory {
        samples,
        final_state: State::from_stacked(&y, t),
        snapshots,
        steps: nominal,
        halvings: total_halvings,
    })
}

/// `½ ∫ [(S - S̃)²/S̃ + (I - Ĩ)²/Ĩ]` by the mesh quadrature.
pub fn lyapunov_v(state: &State, equilibrium: &EquilibriumResult, mesh: &Mesh) -> Result<f64> {
    mesh.check_len(&state.s)?;
    mesh.check_len(&state.i)?;
    mesh.check_len(&equilibrium.s_tilde)?;
    let (se, ie) = (&equilibrium.s_tilde, &equilibrium.i_tilde);
    for f in [ie, se] {
        if let Some((node, &value)) = f.iter().enumerate().find(|(_, v)| **v <= LYAPUNOV_GUARD) {
            return Err(Error::DivisionGuard { node, value });
        }
    }
    let mut acc = 0.0;
    for j in 0..mesh.len() {
        let ds = state.s[j] - se[j];
        let di = state.i[j] - ie[j];
        acc += ds * ds / se[j] + di * di / ie[j];
    }
    Ok(0.5 * mesh.weight() * acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongTime {
    ConvergedDfe,
    ConvergedEndemic,
    Undecided,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub outcome: LongTime,
    pub dist_dfe: f64,
    pub dist_endemic: Option<f64>,
    /// `(t, distance)` to the reference the decision was made against
    /// (endemic when one exists, otherwise disease-free).
    pub distance_curve: Vec<(f64, f64)>,
    pub trajectory: Trajectory,
}

fn monotone_tail(curve: &[f64]) -> bool {
    let start = curve.len() - (curve.len() / 10).max(2).min(curve.len());
    curve[start..].windows(2).all(|w| w[1] <= w[0] + NEGATIVITY_TOL)
}

/// Integrates to `horizon` at the stability step and decides which steady
/// state the trajectory settled on.
pub fn classify_longtime(params: &ModelParams, initial: &State, horizon: f64) -> Result<Classification> {
    if !(horizon > 0.0) {
        return Err(Error::NonpositiveParameter { name: "horizon", value: horizon });
    }
    let endemic = match equilibria::endemic(params) {
        Ok(eq) => Some(eq),
        Err(Error::SubcriticalRegime(_)) => None,
        Err(e) => return Err(e),
    };
    let options = IntegrateOptions { endemic, lyapunov: false, snapshots: false };
    let traj = integrate_to(params, initial, initial.t + horizon, dt_max(params), &options)?;
    let last = traj.samples.last().expect("at least two samples");

    let dfe_curve: Vec<f64> = traj.samples.iter().map(|s| s.dist_dfe).collect();
    let endemic_curve: Option<Vec<f64>> = traj.samples.iter().map(|s| s.dist_endemic).collect();
    let outcome = if last.dist_dfe <= CONVERGENCE_TOL && monotone_tail(&dfe_curve) {
        LongTime::ConvergedDfe
    } else if matches!(&endemic_curve, Some(c) if last.dist_endemic.unwrap() <= CONVERGENCE_TOL && monotone_tail(c)) {
        LongTime::ConvergedEndemic
    } else {
        LongTime::Undecided
    };
    let reference = endemic_curve.unwrap_or(dfe_curve);
    let distance_curve = traj.samples.iter().map(|s| s.t).zip(reference).collect();
    Ok(Classification {
        outcome,
        dist_dfe: last.dist_dfe,
        dist_endemic: last.dist_endemic,
        distance_curve,
        trajectory: traj,
    })
}

/// Smallest eigenvalue of `-d_S (K - D)` on mean-zero vectors.
pub fn alpha_gap(kernel: &Kernel, d_s: f64) -> Result<f64> {
    let m = assemble_dispersal(kernel, d_s)?.into_entries();
    let (_, second) = nonlocal_op::two_lowest_eigenvalues(-m);
    Ok(second)
}

/// Least-squares slope of `-ln y` against `t` (an exponential decay rate).
pub fn fitted_decay_rate(t: &[f64], y: &[f64]) -> f64 {
    assert_eq!(t.len(), y.len());
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, v)| **v > 0.0).map(|(t, v)| (*t, v.ln())).collect();
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|(t, l)| (t - tm) * (l - lm)).sum();
    let var: f64 = pts.iter().map(|(t, _)| (t - tm) * (t - tm)).sum();
    -cov / var
}

/// Endemic reference when `R₀ > 1`, disease-free otherwise; convenience for
/// callers that only need "the" steady state to compare against.
pub fn reference_state(params: &ModelParams) -> Result<EquilibriumResult> {
    let eq = equilibria::equilibrium(params)?;
    debug_assert!(eq.kind == EquilibriumKind::Endemic || eq.i_tilde.amax() == 0.0);
    Ok(eq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::KernelSpec;
    use crate::spectral::{self, RateFields};
    use std::f64::consts::PI;

    fn params_with(n: usize, beta: impl Fn(f64) -> f64, gamma: impl Fn(f64) -> f64, d_s: f64, d_i: f64) -> ModelParams {
        let m = Mesh::new(-1.0, 1.0, n).unwrap();
        let k = Kernel::new(&m, KernelSpec::Triangle { delta: 0.5 }).unwrap();
        let r = RateFields::new(m.field_from_fn(beta), m.field_from_fn(gamma)).unwrap();
        ModelParams::new(k, r, d_s, d_i, 2.0).unwrap()
    }

    #[test]
    fn rhs_vanishes_at_the_disease_free_state() {
        let p = params_with(80, |x| 1.0 + 0.5 * x, |_| 2.0, 0.7, 1.3);
        let dfe = equilibria::disease_free(&p);
        let (ds, di) = rhs(&p, &State::new(dfe.s_tilde, dfe.i_tilde, 0.0).unwrap()).unwrap();
        assert!(ds.amax() <= 1e-14 && di.amax() <= 1e-14);
    }

    #[test]
    fn rhs_small_at_the_endemic_state() {
        let p = params_with(120, |x| 1.0 + 0.8 * (PI * x).cos(), |_| 1.0, 0.4, 0.9);
        let eq = equilibria::endemic(&p).unwrap();
        let (ds, di) = rhs(&p, &State::new(eq.s_tilde, eq.i_tilde, 0.0).unwrap()).unwrap();
        assert!(ds.amax() <= 1e-8 && di.amax() <= 1e-8);
    }

    #[test]
    fn rhs_conserves_mass_and_rejects_negative_states() {
        let p = params_with(90, |x| 1.5 + x.sin(), |x| 1.0 + 0.2 * x * x, 0.3, 2.0);
        let st = State::random(p.mesh(), 2.0, 7);
        let (ds, di) = rhs(&p, &st).unwrap();
        let total = p.mesh().integrate(&Field(&ds.0 + &di.0)).unwrap();
        let scale = p.mesh().integrate(&Field(ds.abs() + di.abs())).unwrap();
        assert!(total.abs() <= 1e-12 * scale, "{total}");

        let mut bad = st.clone();
        bad.i.0[5] = -1e-9;
        assert!(matches!(rhs(&p, &bad), Err(Error::NegativeState { node: 5, .. })));
    }

    #[test]
    fn incidence_guard_on_empty_sites() {
        let p = params_with(40, |_| 2.0, |_| 1.0, 1.0, 1.0);
        let mut st = State::random(p.mesh(), 2.0, 1);
        st.s.0[3] = 0.0;
        st.i.0[3] = 0.0;
        let (ds, di) = rhs(&p, &st).unwrap();
        assert!(ds[3].is_finite() && di[3].is_finite());
    }

    #[test]
    fn random_initial_is_seeded_and_has_mass() {
        let m = Mesh::new(-1.0, 1.0, 50).unwrap();
        let a = State::random(&m, 2.0, 42);
        assert_eq!(a, State::random(&m, 2.0, 42));
        assert_ne!(a, State::random(&m, 2.0, 43));
        assert!((a.mass(&m) - 2.0).abs() <= 1e-14);
        assert!(a.s.min_value() > 0.0 && a.i.min_value() > 0.0);
    }

    #[test]
    fn step_bound_enforced() {
        let p = params_with(40, |_| 2.0, |_| 1.0, 1.0, 1.0);
        let st = State::random(p.mesh(), 2.0, 3);
        let dt = 1.01 * dt_max(&p);
        assert!(matches!(
            integrate_to(&p, &st, 1.0, dt, &IntegrateOptions::default()),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn subcritical_run_reaches_disease_free_state() {
        let p = params_with(100, |_| 1.0, |_| 2.0, 1.0, 1.0);
        let st = State::random(p.mesh(), 2.0, 11);
        let traj = integrate_to(&p, &st, 200.0, dt_max(&p), &IntegrateOptions::default()).unwrap();
        let last = traj.samples.last().unwrap();
        assert!(last.dist_dfe <= 1e-4, "{}", last.dist_dfe);
        assert!((last.t - 200.0).abs() < 1e-12);
        for s in &traj.samples {
            assert!((s.mass - 2.0).abs() <= 1e-10 * 2.0);
        }
        assert!(traj.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert!(traj.samples.len() >= 500 && traj.samples.len() <= 1002);
    }

    #[test]
    fn decay_rate_to_disease_free_state() {
        let p = params_with(100, |x| 1.0 + 0.3 * x, |_| 2.0, 0.5, 0.5);
        let lp = spectral::lambda_p_value(p.kernel(), p.d_i(), p.rates()).unwrap();
        assert!(lp > 0.0);
        let st = State::random(p.mesh(), 2.0, 5);
        let opts = IntegrateOptions { snapshots: true, ..Default::default() };
        let traj = integrate_to(&p, &st, 30.0, dt_max(&p), &opts).unwrap();
        let tail = traj.snapshots.len() / 2;
        let t: Vec<f64> = traj.snapshots[tail..].iter().map(|s| s.t).collect();
        let y: Vec<f64> = traj.snapshots[tail..].iter().map(|s| s.i.amax()).collect();
        assert!(fitted_decay_rate(&t, &y) >= 0.9 * lp / 2.0);
    }

    #[test]
    fn equal_diffusion_run_reaches_explicit_endemic_state() {
        let p = params_with(100, |_| 2.0, |_| 1.0, 1.0, 1.0);
        let st = State::random(p.mesh(), 2.0, 2);
        let traj = integrate_to(&p, &st, 200.0, dt_max(&p), &IntegrateOptions::default()).unwrap();
        let f = &traj.final_state;
        assert!(f.s.iter().chain(f.i.iter()).all(|v| (v - 0.5).abs() <= 1e-4));
    }

    #[test]
    fn lyapunov_examples() {
        let p = params_with(60, |x| 2.0 * (1.0 + 0.3 * x), |x| 1.0 + 0.3 * x, 1.0, 1.0);
        let eq = equilibria::endemic(&p).unwrap();
        let m = p.mesh();
        let at = State::new(eq.s_tilde.clone(), eq.i_tilde.clone(), 0.0).unwrap();
        assert!(lyapunov_v(&at, &eq, m).unwrap().abs() <= 1e-14);

        let eps = 1e-3;
        let bumped = State::new(eq.s_tilde.clone(), Field(eq.i_tilde.add_scalar(eps)), 0.0).unwrap();
        let expected = 0.5 * eps * eps * m.integrate(&Field(eq.i_tilde.map(|v| 1.0 / v))).unwrap();
        let v = lyapunov_v(&bumped, &eq, m).unwrap();
        assert!((v - expected).abs() <= 1e-12 * expected);

        let mut degenerate = eq.clone();
        degenerate.i_tilde.0[2] = 0.0;
        assert!(matches!(lyapunov_v(&at, &degenerate, m), Err(Error::DivisionGuard { node: 2, .. })));
    }

    #[test]
    fn lyapunov_nonincreasing_when_beta_proportional_to_gamma() {
        let p = params_with(80, |x| 2.0 * (1.0 + 0.4 * (PI * x).sin()), |x| 1.0 + 0.4 * (PI * x).sin(), 1.0, 1.0);
        let eq = equilibria::endemic(&p).unwrap();
        let opts = IntegrateOptions { endemic: Some(eq), lyapunov: true, snapshots: false };
        let traj = integrate_to(&p, &State::random(p.mesh(), 2.0, 9), 50.0, dt_max(&p), &opts).unwrap();
        let v: Vec<f64> = traj.samples.iter().map(|s| s.lyapunov.unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        assert!(v.last().unwrap() < &(1e-3 * v[0]));
    }

    #[test]
    fn ordered_infected_profiles_stay_ordered() {
        let p = params_with(80, |x| 1.5 + 0.8 * (PI * x).cos(), |_| 1.0, 0.6, 0.6);
        let m = p.mesh();
        let total = m.field_from_fn(|x| 1.0 + 0.2 * x);
        let scale = 2.0 / m.integrate(&total).unwrap();
        let total = Field(&total.0 * scale);
        let lo = Field(&total.0 * 0.2);
        let hi = Field(total.component_mul(&m.field_from_fn(|x| 0.5 + 0.1 * (3.0 * x).cos())));
        assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a <= b));
        let run = |i: &Field| {
            let st = State::new(Field(&total.0 - &i.0), i.clone(), 0.0).unwrap();
            let opts = IntegrateOptions { snapshots: true, ..Default::default() };
            integrate_to(&p, &st, 20.0, dt_max(&p), &opts).unwrap()
        };
        let (a, b) = (run(&lo), run(&hi));
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert!(x.i.iter().zip(y.i.iter()).all(|(u, v)| *u <= v + 1e-10));
        }
    }

    #[test]
    fn classification_outcomes() {
        let sub = params_with(60, |_| 1.0, |_| 2.0, 1.0, 1.0);
        let c = classify_longtime(&sub, &State::random(sub.mesh(), 2.0, 1), 200.0).unwrap();
        assert_eq!(c.outcome, LongTime::ConvergedDfe);
        assert!(c.dist_endemic.is_none());

        let sup = params_with(60, |_| 2.0, |_| 1.0, 1.0, 1.0);
        let c = classify_longtime(&sup, &State::random(sup.mesh(), 2.0, 1), 200.0).unwrap();
        assert_eq!(c.outcome, LongTime::ConvergedEndemic);

        let short = classify_longtime(&sup, &State::random(sup.mesh(), 2.0, 1), 0.5).unwrap();
        assert_eq!(short.outcome, LongTime::Undecided);
        assert_eq!(short.distance_curve.len(), short.trajectory.samples.len());
    }

    #[test]
    fn alpha_gap_bounds_and_scaling() {
        let p = params_with(100, |_| 2.0, |_| 1.0, 1.0, 1.0);
        let k = p.kernel();
        let a1 = alpha_gap(k, 1.0).unwrap();
        let a2 = alpha_gap(k, 2.0).unwrap();
        assert!(a1 > 0.0 && a1 <= k.row_integral().min_value() + 1e-10);
        assert!((a2 - 2.0 * a1).abs() <= 1e-12 * a2);
    }

    #[test]
    fn pure_dispersal_decays_at_alpha() {
        let m = Mesh::new(-1.0, 1.0, 100).unwrap();
        let k = Kernel::new(&m, KernelSpec::Triangle { delta: 0.5 }).unwrap();
        let d = 1.0;
        let alpha = alpha_gap(&k, d).unwrap();
        let mut u = State::random(&m, 2.0, 4).s.0;
        let mean = u.mean();
        let h = 0.5 / (d * k.row_integral().max_value());
        let mut f = |y: &DVector<f64>, dy: &mut DVector<f64>| k.disperse_into(d, y, dy);
        let mut work = Rk4Work::new(u.len());
        let mut next = u.clone();
        let (mut ts, mut ys) = (Vec::new(), Vec::new());
        for step in 1..=1000 {
            rk4_step(&mut f, &u, h, &mut work, &mut next);
            std::mem::swap(&mut u, &mut next);
            if step > 500 {
                ts.push(step as f64 * h);
                ys.push(u.add_scalar(-mean).norm());
            }
        }
        assert!(fitted_decay_rate(&ts, &ys) >= 0.95 * alpha);
    }
}
