//! Symmetric-definite generalized eigenproblems `A v = λ (B + εI) v`.
//!
//! `B + εI` is Cholesky-factored as `L Lᵀ`, the problem is reduced to the
//! standard symmetric problem `L⁻¹ A L⁻ᵀ u = λ u`, and eigenvectors are
//! recovered as `v = L⁻ᵀ u`, so that `vᵀ (B + εI) v = 1`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest problem handled by cyclic Jacobi under [`EigenMethod::Auto`].
pub const JACOBI_MAX_AUTO: usize = 64;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    /// Cyclic Jacobi rotations.
    Jacobi,
    /// Householder tridiagonalization followed by implicit QR.
    Tridiagonal,
    /// Jacobi up to [`JACOBI_MAX_AUTO`], tridiagonal beyond.
    #[default]
    Auto,
}

/// Eigenpairs sorted by ascending eigenvalue; column `i` of `vectors`
/// belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Largest absolute asymmetry, `max |a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::dims("square matrix", a.nrows(), a.ncols()));
    }
    let scale = a.amax().max(1.0);
    let asym = asymmetry(a);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Sweeps until
/// the off-diagonal Frobenius norm falls below `1e-12 * ||A||_F`.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> EigenPairs {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::identity(n, n);
    let norm = m.norm();
    let target = JACOBI_TOL * norm.max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (i, j)))
            .map(|ij| m[ij] * m[ij])
            .sum::<f64>()
            .sqrt();
        if off < target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // M <- Jᵀ M J, rotating rows and columns p, q.
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    sort_pairs(m.diagonal(), v)
}

fn tridiagonal_eigen(a: &DMatrix<f64>) -> EigenPairs {
    let eig = a.clone().symmetric_eigen();
    sort_pairs(eig.eigenvalues, eig.eigenvectors)
}

fn sort_pairs(values: DVector<f64>, vectors: DMatrix<f64>) -> EigenPairs {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    EigenPairs {
        values: DVector::from_iterator(n, order.iter().map(|&i| values[i])),
        vectors: DMatrix::from_fn(vectors.nrows(), n, |r, c| vectors[(r, order[c])]),
    }
}

/// Standard symmetric eigendecomposition, ascending.
pub fn symmetric_eigen(a: &DMatrix<f64>, method: EigenMethod) -> Result<EigenPairs> {
    check_symmetric(a)?;
    let sym = (a + a.transpose()) * 0.5;
    Ok(match method {
        EigenMethod::Jacobi => jacobi_eigen(&sym),
        EigenMethod::Tridiagonal => tridiagonal_eigen(&sym),
        EigenMethod::Auto if sym.nrows() <= JACOBI_MAX_AUTO => jacobi_eigen(&sym),
        EigenMethod::Auto => tridiagonal_eigen(&sym),
    })
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Solves `A v = λ (B + εI) v` for symmetric `A` and symmetric PSD `B`.
pub fn solve_generalized_eig(a: &DMatrix<f64>, b: &DMatrix<f64>, eps: f64) -> Result<EigenPairs> {
    solve_generalized_eig_with(a, b, eps, EigenMethod::Auto)
}

pub fn solve_generalized_eig_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    eps: f64,
    method: EigenMethod,
) -> Result<EigenPairs> {
    if a.shape() != b.shape() {
        return Err(Error::dims("generalized eigenproblem size", a.nrows(), b.nrows()));
    }
    check_symmetric(a)?;
    check_symmetric(b)?;
    let n = a.nrows();
    let mut breg = (b + b.transpose()) * 0.5;
    for i in 0..n {
        breg[(i, i)] += eps;
    }
    let chol = Cholesky::new(breg).ok_or(Error::CholeskyFailure)?;
    let l = chol.l();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::CholeskyFailure)?;
    let reduced = &l_inv * a * l_inv.transpose();
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let std = symmetric_eigen(&reduced, method)?;
    let mut vectors = l_inv.transpose() * std.vectors;
    fix_signs(&mut vectors);
    Ok(EigenPairs {
        values: std.values,
        vectors,
    })
}
