//! Bracketed sub-/super-solution iteration for
//! `0 = d (K u - row ∘ u) + f(x, u)`.
//!
//! The map `u ↦ u + τ F(u)` is order preserving whenever `τ` bounds the
//! diagonal Lipschitz constant, so iterates started from a super-solution
//! decrease, iterates started from a sub-solution increase, and the two stay
//! ordered. The gap between them encloses every solution in the bracket.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mesh::{Field, Kernel};

/// Stopping gap between the upper and lower iterates (sup-norm), relative to
/// `max(1, sup upper)` so that solutions of size `O(d)` are not asked for
/// more digits than the residual evaluation carries.
pub const BRACKET_TOL: f64 = 1e-10;

/// Iteration cap before the step is halved once and the solve retried.
pub const MAX_ITERATIONS: usize = 1_000_000;

const ORDER_SLACK: f64 = 1e-12;

/// A converged bracket.
#[derive(Debug, Clone)]
pub struct MonotoneSolution {
    /// Midpoint of the final bracket.
    pub value: Field,
    pub upper: Field,
    pub lower: Field,
    pub iterations: usize,
    pub gap: f64,
    /// Step size actually used (after a possible retry).
    pub tau: f64,
}

/// `F(u) = d (K u - row ∘ u) + f(i, u_i)` together with its damped map.
pub(crate) struct DampedMap<'a, F> {
    kernel: &'a Kernel,
    d: f64,
    reaction: F,
    tau: f64,
}

impl<'a, F> DampedMap<'a, F>
where
    F: Fn(usize, f64) -> f64,
{
    pub fn new(kernel: &'a Kernel, d: f64, reaction: F, tau: f64) -> Self {
        Self { kernel, d, reaction, tau }
    }

    pub fn residual_into(&self, u: &DVector<f64>, out: &mut DVector<f64>) {
        self.kernel.disperse_into(self.d, u, out);
        for (i, (o, &v)) in out.iter_mut().zip(u.iter()).enumerate() {
            *o += (self.reaction)(i, v);
        }
    }

    pub fn residual(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        self.residual_into(u, &mut out);
        out
    }

    /// `u ← u + τ F(u)`, returning the sup-norm of the change.
    fn step(&self, u: &mut DVector<f64>, scratch: &mut DVector<f64>) -> f64 {
        self.residual_into(u, scratch);
        let mut change = 0.0_f64;
        for (v, r) in u.iter_mut().zip(scratch.iter()) {
            let dv = self.tau * r;
            *v += dv;
            change = change.max(dv.abs());
        }
        change
    }

    fn bracket(&self, upper0: &DVector<f64>, lower0: &DVector<f64>, max_iter: usize, what: &'static str) -> Result<MonotoneSolution> {
        let mut upper = upper0.clone();
        let mut lower = lower0.clone();
        let mut prev_upper = upper.clone();
        let mut prev_lower = lower.clone();
        let mut scratch = DVector::zeros(upper.len());
        let scale = upper.amax().max(1.0);
        let slack = ORDER_SLACK * scale;

        let tol = BRACKET_TOL * scale;
        let mut gap = (&upper - &lower).max();
        if (&upper - &lower).min() < -slack {
            return Err(Error::BracketViolation { what, iteration: 0 });
        }
        let mut it = 0;
        while gap > tol {
            if it == max_iter {
                return Err(Error::NoConvergence { what, iterations: it, gap });
            }
            it += 1;
            prev_upper.copy_from(&upper);
            prev_lower.copy_from(&lower);
            self.step(&mut upper, &mut scratch);
            self.step(&mut lower, &mut scratch);

            let mut g = f64::NEG_INFINITY;
            for i in 0..upper.len() {
                let (u, l) = (upper[i], lower[i]);
                if u < l - slack || u > prev_upper[i] + slack || l < prev_lower[i] - slack {
                    return Err(Error::BracketViolation { what, iteration: it });
                }
                g = g.max(u - l);
            }
            gap = g;
        }
        let value = (&upper + &lower) * 0.5;
        Ok(MonotoneSolution {
            value: Field(value),
            upper: Field(upper),
            lower: Field(lower),
            iterations: it,
            gap,
            tau: self.tau,
        })
    }

    /// Brackets from `upper0` and `lower0`; on exhausting the cap the step is
    /// halved and the solve retried once.
    pub fn solve(mut self, upper0: &DVector<f64>, lower0: &DVector<f64>, what: &'static str) -> Result<MonotoneSolution> {
        match self.bracket(upper0, lower0, MAX_ITERATIONS, what) {
            Err(Error::NoConvergence { .. }) => {
                log::warn!("{what}: no convergence with tau = {}, retrying with tau/2", self.tau);
                self.tau *= 0.5;
                self.bracket(upper0, lower0, MAX_ITERATIONS, what)
            }
            other => other,
        }
    }

    /// Plain damped iteration from `start` until the per-step change drops
    /// below `tol`; used to probe uniqueness from perturbed starts.
    pub fn relax(&self, start: &DVector<f64>, tol: f64, max_iter: usize) -> (DVector<f64>, usize) {
        let mut u = start.clone();
        let mut scratch = DVector::zeros(u.len());
        for it in 1..=max_iter {
            if self.step(&mut u, &mut scratch) <= tol {
                return (u, it);
            }
        }
        (u, max_iter)
    }

    /// Largest `δ = 0.5 / 2^m`, `m < 60`, with `F(δ φ) >= 0` at every node.
    pub fn subsolution(&self, phi: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
        let peak = phi.max();
        let mut delta = 0.5 / peak;
        for _ in 0..60 {
            let candidate = phi * delta;
            let r = self.residual(&candidate);
            // noise floor of the eigenvector itself
            let floor = -1e-13 * delta;
            if r.iter().all(|&v| v >= floor) {
                return Ok(candidate);
            }
            delta *= 0.5;
        }
        Err(Error::NoConvergence { what, iterations: 60, gap: delta })
    }
}

/// Principal eigenvector oriented positive, clamped at zero and scaled to max 1.
pub(crate) fn positive_profile(v: &Field) -> DVector<f64> {
    let mut phi = v.0.clone();
    if phi.sum() < 0.0 {
        phi.neg_mut();
    }
    phi.apply(|x| *x = x.max(0.0));
    let peak = phi.max();
    phi / peak
}
