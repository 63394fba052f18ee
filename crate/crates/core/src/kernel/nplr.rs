//! Normal-plus-low-rank factorization `A ≈ V Λ V* - P Q*`.

use nalgebra::{DMatrix, DVector};

use crate::error::{FlamesError, Result};
use crate::linalg::{self, C64};

#[derive(Debug, Clone)]
pub struct NplrFactors {
    pub v: DMatrix<C64>,
    pub lambda: DVector<C64>,
    pub p: DMatrix<C64>,
    pub q: DMatrix<C64>,
    pub rank: usize,
    /// `‖A - (VΛV* - PQ*)‖_F`.
    pub residual_error: f64,
}

/// Normal part of a real matrix: `A` itself when it is normal, otherwise
/// `skew(A) + (tr A / N)·I`. Returns `(V, Λ)` with `V` unitary.
fn normal_part(a: &DMatrix<f64>) -> (DMatrix<C64>, DVector<C64>) {
    let n = a.nrows();
    if linalg::is_normal(a, 1e-13) {
        let (v, t) = linalg::to_complex(a).schur().unpack();
        let lambda = DVector::from_fn(n, |i, _| t[(i, i)]);
        return (v, lambda);
    }
    let shift = a.trace() / n as f64;
    let skew = (a - a.transpose()) * 0.5;
    // i·K is Hermitian for skew K, so its eigenvectors are unitary
    let herm = skew.map(|v| C64::new(0.0, v));
    let eig = herm.symmetric_eigen();
    let lambda = eig.eigenvalues.map(|mu| C64::new(shift, -mu));
    (eig.eigenvectors, lambda)
}

pub fn nplr_decompose(a: &DMatrix<f64>, rank: usize) -> Result<NplrFactors> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(FlamesError::invalid("A_S", "matrix must be square and non-empty"));
    }
    if rank == 0 || rank > n {
        return Err(FlamesError::invalid("rank", format!("must satisfy 1 <= r <= {n}, got {rank}")));
    }
    let (v, lambda) = normal_part(a);
    let normal = &v * DMatrix::from_diagonal(&lambda) * v.adjoint();
    let ac = linalg::to_complex(a);
    let neg_residual = &normal - &ac;
    let svd = neg_residual.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V*");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let floor = 1e-14 * ac.norm().max(1.0);
    let mut p = DMatrix::zeros(n, rank);
    let mut q = DMatrix::zeros(n, rank);
    for (col, &idx) in order.iter().take(rank).enumerate() {
        let s = svd.singular_values[idx];
        if s <= floor {
            continue;
        }
        let root = s.sqrt();
        for row in 0..n {
            p[(row, col)] = u[(row, idx)] * root;
            q[(row, col)] = vt[(idx, row)].conj() * root;
        }
    }
    let recon = &normal - &p * q.adjoint();
    let residual_error = (recon - ac).norm();
    Ok(NplrFactors {
        v,
        lambda,
        p,
        q,
        rank,
        residual_error,
    })
}

/// Scratch space for allocation-free products.
#[derive(Debug, Clone)]
pub struct NplrScratch {
    n: DVector<C64>,
    r: DVector<C64>,
}

impl NplrFactors {
    pub fn order(&self) -> usize {
        self.v.nrows()
    }

    pub fn scratch(&self) -> NplrScratch {
        NplrScratch {
            n: DVector::zeros(self.order()),
            r: DVector::zeros(self.rank),
        }
    }

    /// Dense reconstruction `VΛV* - PQ*`.
    pub fn reconstruct(&self) -> DMatrix<C64> {
        &self.v * DMatrix::from_diagonal(&self.lambda) * self.v.adjoint() - &self.p * self.q.adjoint()
    }

    /// `out = V(Λ(V* x)) - P(Q* x)`.
    pub fn matvec_into(&self, x: &DVector<C64>, out: &mut DVector<C64>, scratch: &mut NplrScratch) {
        scratch.n.gemv_ad(C64::new(1.0, 0.0), &self.v, x, C64::new(0.0, 0.0));
        scratch.n.component_mul_assign(&self.lambda);
        out.gemv(C64::new(1.0, 0.0), &self.v, &scratch.n, C64::new(0.0, 0.0));
        self.lowrank_accumulate(x, out, scratch);
    }

    /// `out -= P(Q* x)`, the rank-r correction alone.
    pub fn lowrank_accumulate(&self, x: &DVector<C64>, out: &mut DVector<C64>, scratch: &mut NplrScratch) {
        scratch.r.gemv_ad(C64::new(1.0, 0.0), &self.q, x, C64::new(0.0, 0.0));
        out.gemv(C64::new(-1.0, 0.0), &self.p, &scratch.r, C64::new(1.0, 0.0));
    }

    /// Real-input convenience wrapper; returns the real part.
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let xc = x.map(|v| C64::new(v, 0.0));
        let mut out = DVector::zeros(self.order());
        let mut scratch = self.scratch();
        self.matvec_into(&xc, &mut out, &mut scratch);
        out.map(|z| z.re)
    }
}

pub fn nplr_matvec(f: &NplrFactors, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != f.order() {
        return Err(FlamesError::invalid("v", format!("expected length {}, got {}", f.order(), v.len())));
    }
    Ok(f.matvec(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hippo::hippo_legs;

    fn test_matrix(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| (((i * 31 + j * 17) % 13) as f64 - 6.0) / 7.0)
    }

    fn unitary_error(v: &DMatrix<C64>) -> f64 {
        let n = v.nrows();
        (v * v.adjoint() - DMatrix::<C64>::identity(n, n)).norm()
    }

    #[test]
    fn skew_symmetric_is_exact() {
        let a = test_matrix(6);
        let skew = (&a - a.transpose()) * 0.5;
        let f = nplr_decompose(&skew, 1).unwrap();
        assert!(f.residual_error < 1e-12);
        assert!(f.p.norm() < 1e-12 && f.q.norm() < 1e-12);
        assert!(unitary_error(&f.v) < 1e-10);
    }

    #[test]
    fn full_rank_reconstructs() {
        for a in [test_matrix(7), -hippo_legs(9).unwrap().into_inner()] {
            let n = a.nrows();
            let f = nplr_decompose(&a, n).unwrap();
            assert!(f.residual_error < 1e-10, "{}", f.residual_error);
            assert!(unitary_error(&f.v) < 1e-10);
        }
    }

    #[test]
    fn residual_nonincreasing_in_rank() {
        let a = test_matrix(8);
        let errs: Vec<f64> = (1..=8).map(|r| nplr_decompose(&a, r).unwrap().residual_error).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn rank_checked() {
        assert!(nplr_decompose(&test_matrix(3), 4).is_err());
        assert!(nplr_decompose(&test_matrix(3), 0).is_err());
    }

    #[test]
    fn matvec_matches_dense_at_full_rank() {
        let a = test_matrix(10);
        let f = nplr_decompose(&a, 10).unwrap();
        let v = DVector::from_fn(10, |i, _| (i as f64).cos());
        assert!((nplr_matvec(&f, &v).unwrap() - &a * &v).norm() < 1e-9);
        assert_eq!(nplr_matvec(&f, &DVector::zeros(10)).unwrap(), DVector::zeros(10));
    }
}
