//! Dense nonlocal dispersal operators and their spectral bounds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::{Field, Kernel};

/// An assembled operator on mesh fields.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    entries: DMatrix<f64>,
    symmetric: bool,
}

impl OperatorMatrix {
    /// Wraps an arbitrary square matrix, recording whether it is exactly symmetric.
    pub fn from_matrix(entries: DMatrix<f64>) -> Self {
        let symmetric = entries.is_square() && entries == entries.transpose();
        Self { entries, symmetric }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        if u.len() != self.entries.ncols() {
            return Err(Error::LengthMismatch { expected: self.entries.ncols(), got: u.len() });
        }
        Ok(Field(&self.entries * &u.0))
    }
}

fn check_diffusivity(name: &'static str, d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveParameter { name, value: d })
    }
}

/// `d (K - diag(row_integral))`.
pub fn assemble_dispersal(kernel: &Kernel, d: f64) -> Result<OperatorMatrix> {
    check_diffusivity("d", d)?;
    let mut m = kernel.matrix() * d;
    for (i, r) in kernel.row_integral().iter().enumerate() {
        m[(i, i)] -= d * r;
    }
    Ok(OperatorMatrix { entries: m, symmetric: true })
}

/// The linearized infection operator `A = d_I (K - D) - diag(γ)`.
pub fn assemble_infection(kernel: &Kernel, d_i: f64, gamma: &Field) -> Result<OperatorMatrix> {
    kernel.mesh().check_len(gamma)?;
    gamma.check_positive("gamma")?;
    let mut op = assemble_dispersal(kernel, d_i)?;
    for (i, g) in gamma.iter().enumerate() {
        op.entries[(i, i)] -= g;
    }
    Ok(op)
}

/// Largest eigenvalue of a symmetric operator, `S(A) = sup Re σ(A)`.
pub fn spectral_bound(op: &OperatorMatrix) -> Result<f64> {
    if !op.symmetric {
        return Err(Error::AsymmetricOperator);
    }
    Ok(eigenvalues(op.entries.clone()).max())
}

/// All eigenvalues of a symmetric matrix, unsorted.
pub(crate) fn eigenvalues(m: DMatrix<f64>) -> DVector<f64> {
    m.symmetric_eigenvalues()
}

/// Smallest eigenvalue of a symmetric matrix with a unit-norm eigenvector.
pub(crate) fn lowest_eigenpair(m: DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(m);
    let k = eig.eigenvalues.imin();
    (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned())
}

/// The two smallest eigenvalues of a symmetric matrix, ascending.
pub(crate) fn two_lowest_eigenvalues(m: DMatrix<f64>) -> (f64, f64) {
    let mut v: Vec<f64> = eigenvalues(m).iter().copied().collect();
    v.sort_by(f64::total_cmp);
    (v[0], v[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{KernelSpec, Mesh};

    fn kernel(n: usize) -> Kernel {
        let m = Mesh::new(-1.0, 1.0, n).unwrap();
        Kernel::new(&m, KernelSpec::Triangle { delta: 0.5 }).unwrap()
    }

    #[test]
    fn dispersal_kills_constants() {
        let k = kernel(200);
        let l = assemble_dispersal(&k, 1.0).unwrap();
        let out = l.apply(&k.mesh().constant(1.0)).unwrap();
        assert!(out.amax() <= 1e-12);
    }

    #[test]
    fn dispersal_scales_linearly() {
        let k = kernel(200);
        let l1 = assemble_dispersal(&k, 1.0).unwrap();
        let l2 = assemble_dispersal(&k, 2.0).unwrap();
        assert_eq!(l2.entries(), &(l1.entries() * 2.0));
    }

    #[test]
    fn dispersal_conserves_mass_of_odd_field() {
        let k = kernel(200);
        let m = k.mesh();
        let l = assemble_dispersal(&k, 1.0).unwrap();
        let out = l.apply(&m.field_from_fn(|x| x)).unwrap();
        // direct column-sum oracle
        let max_col = (0..200).map(|j| l.entries().column(j).sum().abs()).fold(0.0, f64::max);
        assert!(max_col <= 1e-12);
        assert!(m.integrate(&out).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn nonpositive_diffusivity() {
        let k = kernel(50);
        assert!(matches!(assemble_dispersal(&k, 0.0), Err(Error::NonpositiveParameter { .. })));
        assert!(matches!(assemble_dispersal(&k, -1.0), Err(Error::NonpositiveParameter { .. })));
    }

    #[test]
    fn infection_operator_on_constants() {
        let k = kernel(200);
        let gamma = k.mesh().constant(1.0);
        let a = assemble_infection(&k, 1.0, &gamma).unwrap();
        let out = a.apply(&k.mesh().constant(1.0)).unwrap();
        assert!(out.iter().all(|v| (v + 1.0).abs() <= 1e-12));
        assert!((spectral_bound(&a).unwrap() + 1.0).abs() <= 1e-10);
        for d in [1e-3, 0.1, 10.0, 1e3] {
            assert!(spectral_bound(&assemble_infection(&k, d, &gamma).unwrap()).unwrap() < 0.0);
        }
    }

    #[test]
    fn infection_operator_rejects_nonpositive_gamma() {
        let k = kernel(50);
        let mut gamma = k.mesh().constant(1.0);
        gamma.0[3] = 0.0;
        assert!(matches!(
            assemble_infection(&k, 1.0, &gamma),
            Err(Error::NonpositiveField { name: "gamma", node: 3, .. })
        ));
    }

    #[test]
    fn spectral_bound_matches_full_decomposition() {
        let k = kernel(50);
        let a = assemble_infection(&k, 1.0, &k.mesh().constant(1.0)).unwrap();
        let full = SymmetricEigen::new(a.entries().clone());
        let top = full.eigenvalues.max();
        let l = assemble_dispersal(&k, 1.0).unwrap();
        let disp_top = SymmetricEigen::new(l.entries().clone()).eigenvalues.max();
        let sb = spectral_bound(&a).unwrap();
        assert!((sb - top).abs() <= 1e-10);
        assert!((sb - (-1.0 + disp_top)).abs() <= 1e-10);
    }

    #[test]
    fn spectral_bound_examples() {
        let diag = OperatorMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])));
        assert_eq!(spectral_bound(&diag).unwrap(), -1.0);
        let k = kernel(200);
        let l = assemble_dispersal(&k, 3.0).unwrap();
        assert!(spectral_bound(&l).unwrap().abs() <= 1e-10);
        let skew = OperatorMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]));
        assert!(matches!(spectral_bound(&skew), Err(Error::AsymmetricOperator)));
    }
}
