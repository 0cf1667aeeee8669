//! Scenario orchestration: one config in, CSV/JSON files and a run record out.

pub mod config;
pub mod output;
pub mod suite;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, IntegrateOptions, State};
use crate::equilibria::{self, EquilibriumKind, EquilibriumResult, ModelParams};
use crate::error::{Error, Result};
use crate::mesh::{Field, Mesh};
use crate::spectral::{self, SpectralReport, ThresholdSearch};

pub use config::{DGrid, InitialSpec, RateSpec, ScenarioConfig, SweepAxis, Task, TaskOptions};
use output::{fmt_f64, OutputDir};

/// Environment variable overriding the worker count for concurrent sweeps.
pub const WORKERS_ENV: &str = "NLSIS_WORKERS";

/// Default finite diffusivities compared against the limit profiles.
pub const DEFAULT_LIMIT_D: [f64; 3] = [10.0, 100.0, 1000.0];

/// Workers from `NLSIS_WORKERS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("worker pool: {e}")))
}

/// Outcome of one invariant check requested by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn bound(name: &str, value: f64, limit: f64) -> Self {
        Self::new(name, value <= limit, format!("{value:e} <= {limit:e}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ScenarioConfig>,
    pub task: String,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub checks: Vec<Check>,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs one scenario, writing its outputs and `record.json` into `out`.
pub fn run(config: &ScenarioConfig, out: &Path) -> Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let mut dir = OutputDir::create(out)?;
    let params = config.build_params()?;
    dir.write("config.json", &config.to_json())?;
    let checks = match config.task {
        Task::Spectrum => spectrum(&params, &mut dir)?,
        Task::Equilibrium => equilibrium(&params, &mut dir)?,
        Task::Simulate => simulate(config, &params, &mut dir)?,
        Task::Sweep => sweep(config, &params, &mut dir)?,
        Task::Limits => limits(config, &params, &mut dir)?,
    };
    let task = serde_json::to_value(config.task)?.as_str().unwrap_or_default().to_owned();
    finish(dir, Some(config.clone()), task, start.elapsed().as_secs_f64(), checks)
}

fn finish(mut dir: OutputDir, config: Option<ScenarioConfig>, task: String, wall_time_s: f64, checks: Vec<Check>) -> Result<RunRecord> {
    let record_path = dir.path("record.json").display().to_string();
    let mut outputs: Vec<String> = dir.written().iter().map(|p| p.display().to_string()).collect();
    outputs.push(record_path);
    let record = RunRecord { config, task, outputs, wall_time_s, checks };
    dir.write("record.json", &serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

fn spectral_checks(report: &SpectralReport) -> Vec<Check> {
    vec![
        Check::new(
            "sign_relation",
            report.sign_relation_holds(),
            format!("lambda_p = {:e}, R0 = {:e}", report.lambda_p, report.r0_weighted),
        ),
        Check::bound("route_spread", report.route_spread(), 1e-7),
    ]
}

fn spectrum(params: &ModelParams, dir: &mut OutputDir) -> Result<Vec<Check>> {
    let report = spectral::r0_all_routes(params.kernel(), params.d_i(), params.rates())?;
    dir.write("spectrum.csv", &format!("{}\n{}\n", SpectralReport::CSV_HEADER, report.csv_row()))?;
    if let Some(phi) = &report.lambda_p_eigvec {
        dir.write("eigenvector.csv", &node_csv(params.mesh(), &[("phi", phi)]))?;
    }
    Ok(spectral_checks(&report))
}

/// `node,x,<name>...` with one column per field.
fn node_csv(mesh: &Mesh, cols: &[(&str, &Field)]) -> String {
    let mut out = String::from("node,x");
    for (name, _) in cols {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (j, x) in mesh.nodes().iter().enumerate() {
        let _ = write!(out, "{j},{}", fmt_f64(*x));
        for (_, f) in cols {
            let _ = write!(out, ",{}", fmt_f64(f[j]));
        }
        out.push('\n');
    }
    out
}

fn equilibrium_checks(params: &ModelParams, eq: &EquilibriumResult) -> Result<Vec<Check>> {
    let mesh = params.mesh();
    let n = params.n_total();
    let mass = mesh.integrate(&Field(&eq.s_tilde.0 + &eq.i_tilde.0))?;
    let scale = params.rates().beta().amax().max(params.rates().gamma().amax());
    let mut checks = vec![
        Check::bound("mass", (mass - n).abs(), 1e-8 * n),
        Check::bound("residual", eq.residual, 1e-8 * scale),
    ];
    let lp = spectral::lambda_p_value(params.kernel(), params.d_i(), params.rates())?;
    if eq.kind == EquilibriumKind::Endemic {
        let k_dev = eq
            .s_tilde
            .iter()
            .zip(eq.i_tilde.iter())
            .map(|(s, i)| (params.d_s() * s + params.d_i() * i - eq.k).abs())
            .fold(0.0, f64::max);
        checks.push(Check::bound("k_constant", k_dev, 1e-8 * eq.k));
        let inside = eq.s_tilde.iter().zip(eq.i_tilde.iter()).all(|(s, i)| {
            *s > 0.0 && *i > 0.0 && *s < eq.k / params.d_s() && *i < eq.k / params.d_i()
        });
        checks.push(Check::new("bounds", inside, "0 < S < k/d_S and 0 < I < k/d_I"));
        checks.push(Check::new("lambda_p_negative", lp < 0.0, format!("lambda_p = {lp:e}")));
    } else {
        checks.push(Check::new("lambda_p_nonnegative", lp >= -1e-9, format!("lambda_p = {lp:e}")));
    }
    Ok(checks)
}

fn equilibrium(params: &ModelParams, dir: &mut OutputDir) -> Result<Vec<Check>> {
    let eq = equilibria::equilibrium(params)?;
    dir.write("equilibrium.csv", &eq.to_csv())?;
    dir.write("equilibrium.json", &eq.header_json())?;
    equilibrium_checks(params, &eq)
}

fn initial_state(config: &ScenarioConfig, mesh: &Mesh) -> Result<State> {
    let spec = config.options.initial.clone().unwrap_or(InitialSpec::Random);
    let n = config.n_total;
    let (s, i) = match spec {
        InitialSpec::Random => return Ok(State::random(mesh, n, config.seed)),
        InitialSpec::Constant { s, i } => (mesh.constant(s), mesh.constant(i)),
        InitialSpec::Table { s, i } => (s.evaluate(mesh, "initial.s")?, i.evaluate(mesh, "initial.i")?),
    };
    let mass = mesh.integrate(&s)? + mesh.integrate(&i)?;
    if !(mass > 0.0) {
        return Err(Error::ConfigInvalid("options.initial has no mass".into()));
    }
    let scale = n / mass;
    State::new(Field(s.0 * scale), Field(i.0 * scale), 0.0)
}

fn simulate(config: &ScenarioConfig, params: &ModelParams, dir: &mut OutputDir) -> Result<Vec<Check>> {
    let o = &config.options;
    let initial = initial_state(config, params.mesh())?;
    let endemic = match equilibria::endemic(params) {
        Ok(eq) => Some(eq),
        Err(Error::SubcriticalRegime(_)) => None,
        Err(e) => return Err(e),
    };
    let lyapunov = o.lyapunov.unwrap_or(false);
    if lyapunov && endemic.is_none() {
        return Err(Error::ConfigInvalid("options.lyapunov needs R0 > 1".into()));
    }
    let opts = IntegrateOptions { endemic, lyapunov, snapshots: o.snapshots.unwrap_or(false) };
    let dt = o.dt.unwrap_or_else(|| dynamics::dt_max(params));
    let traj = dynamics::integrate_to(params, &initial, o.t_end.expect("validated"), dt, &opts)?;

    dir.write("trajectory.csv", &traj.to_csv())?;
    dir.write("final_S.csv", &traj.final_csv(dynamics::Species::Susceptible))?;
    dir.write("final_I.csv", &traj.final_csv(dynamics::Species::Infected))?;
    if opts.snapshots {
        let mut out = String::from("t,node,S,I\n");
        for st in &traj.snapshots {
            for j in 0..st.s.len() {
                let _ = writeln!(out, "{},{j},{},{}", fmt_f64(st.t), fmt_f64(st.s[j]), fmt_f64(st.i[j]));
            }
        }
        dir.write("snapshots.csv", &out)?;
    }

    let n = params.n_total();
    let drift = traj.samples.iter().map(|s| (s.mass - n).abs()).fold(0.0, f64::max);
    let low = traj
        .snapshots
        .iter()
        .chain(std::iter::once(&traj.final_state))
        .map(|s| s.s.min_value().min(s.i.min_value()))
        .fold(f64::INFINITY, f64::min);
    let mut checks = vec![
        Check::bound("mass_conservation", drift, 1e-10 * n),
        Check::new("positivity", low >= -dynamics::NEGATIVITY_TOL, format!("min entry {low:e}")),
    ];
    if lyapunov {
        let rise = traj
            .samples
            .windows(2)
            .map(|w| w[1].lyapunov.unwrap() - w[0].lyapunov.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::bound("lyapunov_nonincreasing", rise, 1e-10));
    }
    Ok(checks)
}

#[derive(Serialize)]
struct ThresholdRecord {
    d_star: Option<f64>,
    iterations: Option<usize>,
    reason: Option<String>,
    grid_bracket: Option<(f64, f64)>,
}

fn sweep(config: &ScenarioConfig, params: &ModelParams, dir: &mut OutputDir) -> Result<Vec<Check>> {
    let grid = config.options.d_grid.as_ref().expect("validated").values()?;
    let axis = config.options.sweep_axis.unwrap_or_default();
    let pool = pool()?;
    let mut checks = Vec::new();

    if axis == SweepAxis::DI {
        let reports: Vec<SpectralReport> = pool.install(|| {
            grid.par_iter()
                .map(|&d| spectral::r0_all_routes(params.kernel(), d, params.rates()))
                .collect::<Result<_>>()
        })?;
        let mut csv = format!("{}\n", SpectralReport::CSV_HEADER);
        for r in &reports {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
        dir.write("sweep.csv", &csv)?;

        let signs: Vec<f64> = reports.iter().map(|r| r.lambda_p).collect();
        let changes: Vec<usize> = (1..signs.len()).filter(|&k| (signs[k - 1] < 0.0) != (signs[k] < 0.0)).collect();
        checks.push(Check::new("single_sign_change", changes.len() <= 1, format!("{} sign changes", changes.len())));
        checks.push(Check::new(
            "sign_relation",
            reports.iter().all(SpectralReport::sign_relation_holds),
            "every grid point",
        ));
        let spread = reports.iter().map(SpectralReport::route_spread).fold(0.0, f64::max);
        checks.push(Check::bound("route_spread", spread, 1e-7));

        let search = spectral::find_d_star(params.kernel(), params.rates(), grid[0], grid[grid.len() - 1])?;
        let bracket = changes.first().map(|&k| (grid[k - 1], grid[k]));
        let record = match &search {
            ThresholdSearch::Root { d_star, iterations } => {
                let inside = bracket.is_some_and(|(lo, hi)| *d_star >= lo && *d_star <= hi);
                checks.push(Check::new("d_star_in_grid_bracket", inside, format!("d* = {d_star:e}, bracket {bracket:?}")));
                ThresholdRecord { d_star: Some(*d_star), iterations: Some(*iterations), reason: None, grid_bracket: bracket }
            }
            ThresholdSearch::NoRoot { reason } => {
                checks.push(Check::new("no_root_consistent", changes.is_empty(), reason.clone()));
                ThresholdRecord { d_star: None, iterations: None, reason: Some(reason.clone()), grid_bracket: bracket }
            }
        };
        dir.write("d_star.json", &serde_json::to_string_pretty(&record)?)?;
    }

    if axis == SweepAxis::DS || config.options.sweep_equilibria.unwrap_or(false) {
        let rows: Vec<(f64, EquilibriumResult, ModelParams)> = pool.install(|| {
            grid.par_iter()
                .map(|&d| {
                    let p = match axis {
                        SweepAxis::DI => params.with_diffusion(params.d_s(), d)?,
                        SweepAxis::DS => params.with_diffusion(d, params.d_i())?,
                    };
                    Ok((d, equilibria::equilibrium(&p)?, p))
                })
                .collect::<Result<_>>()
        })?;
        let mut csv = String::from("d,kind,k,min_S,max_S,min_I,max_I,residual,iterations\n");
        for (d, eq, p) in &rows {
            let kind = if eq.kind == EquilibriumKind::Endemic { "endemic" } else { "disease_free" };
            let _ = writeln!(
                csv,
                "{},{kind},{},{},{},{},{},{},{}",
                fmt_f64(*d),
                fmt_f64(eq.k),
                fmt_f64(eq.s_tilde.min_value()),
                fmt_f64(eq.s_tilde.max_value()),
                fmt_f64(eq.i_tilde.min_value()),
                fmt_f64(eq.i_tilde.max_value()),
                fmt_f64(eq.residual),
                eq.iterations
            );
            for c in equilibrium_checks(p, eq)? {
                if !c.passed {
                    checks.push(Check::new(format!("{} at d = {d:e}", c.name), false, c.detail));
                }
            }
        }
        checks.push(Check::new("equilibria_solved", true, format!("{} grid points", rows.len())));
        dir.write("equilibria_sweep.csv", &csv)?;
    }
    Ok(checks)
}

/// `max(‖S - S'‖∞, ‖I - I'‖∞) / max(‖S'‖∞, ‖I'‖∞)`.
pub fn relative_gap(s: &Field, i: &Field, s_ref: &Field, i_ref: &Field) -> f64 {
    let num = (&s.0 - &s_ref.0).amax().max((&i.0 - &i_ref.0).amax());
    num / s_ref.amax().max(i_ref.amax())
}

#[derive(Serialize)]
struct LimitSummary {
    both_infinity: (f64, f64),
    i_star: f64,
    di_infinity_residual: f64,
    gaps: Vec<LimitGap>,
}

#[derive(Serialize)]
struct LimitGap {
    regime: &'static str,
    d: f64,
    relative_gap: f64,
}

fn limits(config: &ScenarioConfig, params: &ModelParams, dir: &mut OutputDir) -> Result<Vec<Check>> {
    let mesh = params.mesh();
    let (k, rates, n) = (params.kernel(), params.rates(), params.n_total());
    let (s_both, i_both) = equilibria::limit_profile_both_infinity(rates, n, mesh)?;
    let ds_lim = equilibria::limit_profile_ds_infinity(k, params.d_i(), rates, n)?;
    let di_lim = equilibria::limit_profile_di_infinity(k, params.d_s(), rates, n)?;
    let sb = mesh.constant(s_both);
    let ib = mesh.constant(i_both);
    let istar = mesh.constant(di_lim.i_star);
    dir.write(
        "limits.csv",
        &node_csv(
            mesh,
            &[
                ("s_both", &sb),
                ("i_both", &ib),
                ("s_ds_inf", &ds_lim.s),
                ("i_ds_inf", &ds_lim.i),
                ("s_di_inf", &di_lim.s_star),
                ("i_di_inf", &istar),
            ],
        ),
    )?;

    let ds = config.options.limit_d.clone().unwrap_or_else(|| DEFAULT_LIMIT_D.to_vec());
    let regimes: [(&'static str, &Field, &Field); 3] =
        [("d_s", &ds_lim.s, &ds_lim.i), ("d_i", &di_lim.s_star, &istar), ("both", &sb, &ib)];
    let jobs: Vec<(usize, f64)> = (0..regimes.len()).flat_map(|r| ds.iter().map(move |&d| (r, d))).collect();
    let solved: Vec<EquilibriumResult> = pool()?.install(|| {
        jobs.par_iter()
            .map(|&(r, d)| {
                let p = match regimes[r].0 {
                    "d_s" => params.with_diffusion(d, params.d_i())?,
                    "d_i" => params.with_diffusion(params.d_s(), d)?,
                    _ => params.with_diffusion(d, d)?,
                };
                equilibria::endemic(&p)
            })
            .collect::<Result<_>>()
    })?;

    let mut csv = String::from("regime,d,node,x,S,I\n");
    let mut gaps = Vec::new();
    for (&(r, d), eq) in jobs.iter().zip(&solved) {
        let (name, s_ref, i_ref) = regimes[r];
        for (j, x) in mesh.nodes().iter().enumerate() {
            let _ = writeln!(csv, "{name},{},{j},{},{},{}", fmt_f64(d), fmt_f64(*x), fmt_f64(eq.s_tilde[j]), fmt_f64(eq.i_tilde[j]));
        }
        gaps.push(LimitGap { regime: name, d, relative_gap: relative_gap(&eq.s_tilde, &eq.i_tilde, s_ref, i_ref) });
    }
    dir.write("limits_finite.csv", &csv)?;

    let ds_mass = mesh.integrate(&Field(&ds_lim.s.0 + &ds_lim.i.0))?;
    let di_mass = mesh.integrate(&di_lim.s_star)? + di_lim.i_star * mesh.measure();
    let checks = vec![
        Check::bound("di_infinity_residual", di_lim.residual, 1e-8),
        Check::bound("ds_infinity_mass", (ds_mass - n).abs(), 1e-9 * n),
        Check::bound("di_infinity_mass", (di_mass - n).abs(), 1e-8 * n),
    ];
    let summary = LimitSummary {
        both_infinity: (s_both, i_both),
        i_star: di_lim.i_star,
        di_infinity_residual: di_lim.residual,
        gaps,
    };
    dir.write("limits.json", &serde_json::to_string_pretty(&summary)?)?;
    Ok(checks)
}

/// Runs the acceptance battery and writes `suite.csv` and `record.json`.
pub fn theorem_suite(out: &Path) -> Result<RunRecord> {
    let outcomes = suite::run_all(|o| log::info!("{}", o.line()));
    write_suite(out, &outcomes)
}

/// Writes already computed suite outcomes as `suite.csv` and `record.json`.
pub fn write_suite(out: &Path, outcomes: &[suite::Outcome]) -> Result<RunRecord> {
    let mut dir = OutputDir::create(out)?;
    dir.write("suite.csv", &suite::to_csv(outcomes))?;
    let checks = outcomes
        .iter()
        .map(|o| Check::new(format!("criterion {:02}: {}", o.id, o.title), o.passed, o.detail.clone()))
        .collect();
    let wall = outcomes.iter().map(|o| o.seconds).sum();
    finish(dir, None, "suite".into(), wall, checks)
}
