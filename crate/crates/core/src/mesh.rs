//! Uniform midpoint discretization of an interval and the dispersal kernel on it.
//!
//! Every node carries the same quadrature weight `h = (b - a) / n`, so the
//! discrete kernel matrix `K[i][j] = J(x_i - x_j) h` stays exactly symmetric.
//! Rows near the boundary see less kernel mass than interior rows: individuals
//! cannot jump outside the domain and nothing is renormalized.

use std::f64::consts::{PI, SQRT_2};
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of cell midpoints over `(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
    weight: f64,
}

impl Mesh {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(b > a) || n < 2 || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidDomain { a, b, n });
        }
        let weight = (b - a) / n as f64;
        let nodes = (0..n).map(|i| a + (i as f64 + 0.5) * weight).collect();
        Ok(Self { a, b, nodes, weight })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature weight `h`, identical for every node.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `|Ω| = b - a`.
    pub fn measure(&self) -> f64 {
        self.b - self.a
    }

    /// Midpoint-rule integral `h Σ f_i`.
    pub fn integrate(&self, f: &Field) -> Result<f64> {
        self.check_len(f)?;
        Ok(self.weight * f.sum())
    }

    /// `integrate(f) / |Ω|`.
    pub fn average(&self, f: &Field) -> Result<f64> {
        Ok(self.integrate(f)? / self.measure())
    }

    pub fn check_len(&self, f: &Field) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: f.len() });
        }
        Ok(())
    }

    /// Samples `f` at every node.
    pub fn field_from_fn(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(DVector::from_iterator(self.len(), self.nodes.iter().map(|&x| f(x))))
    }

    pub fn constant(&self, value: f64) -> Field {
        Field(DVector::from_element(self.len(), value))
    }
}

/// Node values aligned with a [`Mesh`].
///
/// Carrier for densities (S, I), rates (β, γ) and eigenvectors. Dereferences to
/// the underlying `DVector` for arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Field(pub DVector<f64>);

impl Field {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn min_value(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Errors unless every entry is strictly positive.
    pub fn check_positive(&self, name: &'static str) -> Result<()> {
        match self.0.iter().position(|&v| !(v > 0.0)) {
            Some(node) => Err(Error::NonpositiveField { name, node, value: self.0[node] }),
            None => Ok(()),
        }
    }
}

impl Deref for Field {
    type Target = DVector<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(values: Vec<f64>) -> Self {
        Field(DVector::from_vec(values))
    }
}

impl From<DVector<f64>> for Field {
    fn from(values: DVector<f64>) -> Self {
        Field(values)
    }
}

impl From<Field> for Vec<f64> {
    fn from(field: Field) -> Self {
        field.0.as_slice().to_vec()
    }
}

/// Kernel family descriptor, serialized as
/// `{"family": "triangle", "delta": ..}` or
/// `{"family": "gaussian", "sigma": .., "cutoff": ..}`.
///
/// Both families are even, continuous on their support, positive at the
/// origin and carry unit mass on the whole line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    /// `J(x) = max(0, 1 - |x|/δ) / δ`.
    Triangle { delta: f64 },
    /// Gaussian with standard deviation `sigma`, truncated to `|x| <= cutoff`
    /// and renormalized analytically.
    Gaussian { sigma: f64, cutoff: f64 },
}

impl KernelSpec {
    fn validate(&self) -> Result<()> {
        let positive = |name, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(Error::NonpositiveParameter { name, value })
            }
        };
        match *self {
            KernelSpec::Triangle { delta } => positive("delta", delta),
            KernelSpec::Gaussian { sigma, cutoff } => {
                positive("sigma", sigma)?;
                positive("cutoff", cutoff)
            }
        }
    }

    /// Radius of the support.
    pub fn support(&self) -> f64 {
        match *self {
            KernelSpec::Triangle { delta } => delta,
            KernelSpec::Gaussian { cutoff, .. } => cutoff,
        }
    }

    /// Evaluates `J(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            KernelSpec::Triangle { delta } => (1.0 - x.abs() / delta).max(0.0) / delta,
            KernelSpec::Gaussian { sigma, cutoff } => {
                if x.abs() > cutoff {
                    0.0
                } else {
                    let norm = sigma * (2.0 * PI).sqrt() * libm::erf(cutoff / (sigma * SQRT_2));
                    (-x * x / (2.0 * sigma * sigma)).exp() / norm
                }
            }
        }
    }
}

/// Row masses above `1 + ROW_MASS_SLACK` are quadrature overshoot at the edge
/// of the kernel support (support not a multiple of the spacing) and are
/// reported, not rejected.
const ROW_MASS_SLACK: f64 = 1e-8;

/// Discretized dispersal kernel on a mesh.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    mesh: Mesh,
    matrix: DMatrix<f64>,
    row_integral: Field,
}

impl Kernel {
    pub fn new(mesh: &Mesh, spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        let min = 2.0 * mesh.weight();
        if spec.support() < min {
            return Err(Error::KernelTooNarrow { support: spec.support(), min });
        }

        let n = mesh.len();
        let x = mesh.nodes();
        let h = mesh.weight();
        let mut matrix = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = spec.eval(x[i] - x[j]) * h;
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        let row_integral = Field(DVector::from_iterator(n, matrix.row_iter().map(|r| r.sum())));

        let max_row = row_integral.max_value();
        if max_row > 1.0 + ROW_MASS_SLACK {
            log::warn!(
                "discrete kernel row mass {max_row} exceeds one: midpoint quadrature overshoots at the support edge {} (spacing {h})",
                spec.support()
            );
        }
        if row_integral.min_value() >= 1.0 {
            return Err(Error::KernelMassComplete);
        }

        Ok(Self { spec, mesh: mesh.clone(), matrix, row_integral })
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// `K[i][j] = J(x_i - x_j) h`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `Σ_j K[i][j] ≈ ∫_Ω J(x_i - y) dy`.
    pub fn row_integral(&self) -> &Field {
        &self.row_integral
    }

    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.is_empty()
    }

    /// `(K u)_i - row_i u_i`, the un-scaled nonlocal dispersal of `u`.
    pub fn disperse(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.matrix * u;
        out -= self.row_integral.component_mul(u);
        out
    }

    /// In-place variant of [`Kernel::disperse`] scaled by `d`, written into `out`.
    pub fn disperse_into(&self, d: f64, u: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(d, &self.matrix, u, 0.0);
        for ((o, r), v) in out.iter_mut().zip(self.row_integral.iter()).zip(u.iter()) {
            *o -= d * r * v;
        }
    }
}
