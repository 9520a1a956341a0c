//! Thin wrappers over LAPACK/BLAS for the dense complex kernels.
//!
//! Everything else in the crate works on [`CMat`] (column-major nalgebra
//! storage), which is the layout LAPACK expects, so no copies beyond the
//! workspace buffers are made.

use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

extern crate openblas_src;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl Eigensystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V f(Λ) V†`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> CMat {
        let mut scaled = self.vectors.clone();
        for (j, &e) in self.values.iter().enumerate() {
            let w = f(e);
            for x in scaled.column_mut(j).iter_mut() {
                *x *= w;
            }
        }
        mul_adj(&scaled, &self.vectors)
    }
}

/// Stable 64-bit fingerprint of a matrix, used to name inputs in errors.
pub fn fingerprint(a: &CMat) -> u64 {
    let mut h = DefaultHasher::new();
    a.nrows().hash(&mut h);
    a.ncols().hash(&mut h);
    for z in a.iter() {
        z.re.to_bits().hash(&mut h);
        z.im.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Hermitian eigendecomposition (MRRR, `zheevr`). Only the upper triangle
/// of `a` is read.
///
/// The divide-and-conquer driver shipped with the system OpenBLAS returns
/// wrong eigenvectors from n ≈ 400 on, so it is not used.
pub fn eigh(a: &CMat) -> Result<Eigensystem> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh needs a square matrix");
    if n == 0 {
        return Ok(Eigensystem { values: vec![], vectors: CMat::zeros(0, 0) });
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite entry in matrix {:016x}",
            fingerprint(a)
        )));
    }
    let ni = n as i32;
    let mut work_a = a.clone();
    let mut w = vec![0.0; n];
    let mut v = CMat::zeros(n, n);
    let mut found = 0;
    let mut isuppz = vec![0i32; 2 * n];
    let mut info = 0;
    let mut work = vec![ZERO; 1];
    let mut rwork = vec![0.0; 1];
    let mut iwork = vec![0i32; 1];
    // workspace query
    unsafe {
        lapack::zheevr(
            b'V', b'A', b'U', ni, work_a.as_mut_slice(), ni, 0.0, 0.0, 0, 0, 0.0, &mut found,
            &mut w, v.as_mut_slice(), ni, &mut isuppz, &mut work, -1, &mut rwork, -1,
            &mut iwork, -1, &mut info,
        );
    }
    let lwork = (work[0].re as i32).max(2 * ni);
    let lrwork = (rwork[0] as i32).max(24 * ni);
    let liwork = iwork[0].max(10 * ni);
    let mut work = vec![ZERO; lwork as usize];
    let mut rwork = vec![0.0; lrwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        lapack::zheevr(
            b'V', b'A', b'U', ni, work_a.as_mut_slice(), ni, 0.0, 0.0, 0, 0, 0.0, &mut found,
            &mut w, v.as_mut_slice(), ni, &mut isuppz, &mut work, lwork, &mut rwork, lrwork,
            &mut iwork, liwork, &mut info,
        );
    }
    if info != 0 || found != ni {
        return Err(Error::Eigensolver { info, fingerprint: fingerprint(a) });
    }
    Ok(Eigensystem { values: w, vectors: v })
}

fn gemm(ta: u8, tb: u8, a: &CMat, b: &CMat) -> CMat {
    let (m, ka) = if ta == b'N' { (a.nrows(), a.ncols()) } else { (a.ncols(), a.nrows()) };
    let (kb, n) = if tb == b'N' { (b.nrows(), b.ncols()) } else { (b.ncols(), b.nrows()) };
    assert_eq!(ka, kb, "inner dimensions differ");
    let mut c = CMat::zeros(m, n);
    if m == 0 || n == 0 || ka == 0 {
        return c;
    }
    let lda = a.nrows().max(1) as i32;
    let ldb = b.nrows().max(1) as i32;
    unsafe {
        blas::zgemm(
            ta, tb, m as i32, n as i32, ka as i32, ONE, a.as_slice(), lda, b.as_slice(), ldb,
            ZERO, c.as_mut_slice(), m as i32,
        );
    }
    c
}

/// `a b`
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    gemm(b'N', b'N', a, b)
}

/// `a† b`
pub fn adj_mul(a: &CMat, b: &CMat) -> CMat {
    gemm(b'C', b'N', a, b)
}

/// `a b†`
pub fn mul_adj(a: &CMat, b: &CMat) -> CMat {
    gemm(b'N', b'C', a, b)
}

/// `V† X V`: change of basis into the columns of `v`.
pub fn to_basis(x: &CMat, v: &CMat) -> CMat {
    adj_mul(v, &mul(x, v))
}

/// `V X V†`: back out of the basis.
pub fn from_basis(x: &CMat, v: &CMat) -> CMat {
    mul_adj(&mul(v, x), v)
}

/// Largest |eigenvalue| of a Hermitian matrix.
pub fn hermitian_norm(a: &CMat) -> Result<f64> {
    let e = eigh(a)?;
    Ok(e.values.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Operator 2-norm: the largest singular value. Non-finite input gives NaN.
pub fn op_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return f64::NAN;
    }
    // work with the smaller Gram matrix
    let gram = if a.nrows() <= a.ncols() { mul_adj(a, a) } else { adj_mul(a, a) };
    let gram = (&gram + gram.adjoint()).scale(0.5);
    match eigh(&gram) {
        Ok(e) => e.values.last().copied().unwrap_or(0.0).max(0.0).sqrt(),
        Err(_) => f64::NAN,
    }
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Largest absolute entry.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// `‖A†A − I‖` for a matrix with orthonormal columns.
pub fn isometry_defect(a: &CMat) -> f64 {
    let g = adj_mul(a, a) - identity(a.ncols());
    op_norm(&g)
}

pub fn diag_real(d: &[f64]) -> CMat {
    CMat::from_fn(d.len(), d.len(), |i, j| if i == j { C64::new(d[i], 0.0) } else { ZERO })
}

pub fn from_real(a: &DMatrix<f64>) -> CMat {
    a.map(|x| C64::new(x, 0.0))
}

/// Seeded random matrices for property suites and test paths.
pub mod random {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn complex<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> CMat {
        CMat::from_fn(rows, cols, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im)
        })
    }

    /// GUE-like Hermitian matrix, exactly Hermitian by construction.
    pub fn hermitian<R: Rng>(n: usize, rng: &mut R) -> CMat {
        let a = complex(n, n, rng);
        let h = (&a + a.adjoint()).scale(0.5);
        CMat::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(h[(i, i)].re, 0.0)
            } else if i < j {
                h[(i, j)]
            } else {
                h[(j, i)].conj()
            }
        })
    }

    pub fn anti_hermitian<R: Rng>(n: usize, rng: &mut R) -> CMat {
        hermitian(n, rng) * I
    }

    pub fn unitary<R: Rng>(n: usize, rng: &mut R) -> CMat {
        let h = hermitian(n, rng);
        let e = eigh(&h).expect("random Hermitian diagonalizes");
        e.vectors
    }
}
