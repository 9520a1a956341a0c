//! Dense Hermitian operator algebra: spectral splits, the twiddle map, τ,
//! projected block norms and the c_k positivity certificate.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Eigensystem, C64};

/// Which discretization a matrix lives in. Carried through reports so that
/// truncation artifacts can be attributed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisTag {
    PhaseGrid,
    HalfIntegerCharge,
    OscillatorNumber,
    Abstract,
}

impl fmt::Display for BasisTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisTag::PhaseGrid => "phase-grid",
            BasisTag::HalfIntegerCharge => "half-integer-charge",
            BasisTag::OscillatorNumber => "oscillator-number",
            BasisTag::Abstract => "abstract",
        })
    }
}

/// Relative Hermiticity tolerance, scaled by the largest entry.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Absolute width below which the P/Q boundary counts as degenerate.
pub const GAP_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct HermitianOperator {
    entries: CMat,
    basis: BasisTag,
}

impl HermitianOperator {
    pub fn new(entries: CMat, basis: BasisTag) -> Result<Self> {
        let n = entries.nrows();
        if n != entries.ncols() {
            return Err(Error::Validation(format!(
                "operator must be square, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::Validation(format!("operator dimension {n} < 2")));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("operator has non-finite entries".into()));
        }
        let scale = linalg::max_abs(&entries);
        let mut worst = 0.0_f64;
        for j in 0..n {
            for i in 0..=j {
                worst = worst.max((entries[(i, j)] - entries[(j, i)].conj()).norm());
            }
        }
        if worst > HERMITIAN_TOL * scale {
            return Err(Error::Validation(format!(
                "operator is not Hermitian: max |A - A†| = {worst:e} exceeds {:e}",
                HERMITIAN_TOL * scale
            )));
        }
        Ok(Self { entries, basis })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    pub fn basis(&self) -> BasisTag {
        self.basis
    }

    pub fn into_entries(self) -> CMat {
        self.entries
    }

    /// `Σ aᵢ Xᵢ` over operators sharing a basis. Real weights keep the
    /// result Hermitian.
    pub fn combine(terms: &[(f64, &HermitianOperator)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Validation("empty linear combination".into()))?;
        let mut acc = CMat::zeros(first.1.dim(), first.1.dim());
        for (a, op) in terms {
            if op.dim() != first.1.dim() || op.basis != first.1.basis {
                return Err(Error::Validation("combined operators differ in dim or basis".into()));
            }
            acc += op.entries.scale(*a);
        }
        Self::new(acc, first.1.basis)
    }
}

/// Eigenvalues ascending, eigenvectors as columns, reconstruction checked.
pub fn eigendecompose(h: &HermitianOperator) -> Result<Eigensystem> {
    let eig = linalg::eigh(h.entries())?;
    let scale = eig.values.iter().fold(0.0_f64, |m, e| m.max(e.abs())).max(f64::MIN_POSITIVE);
    let rebuilt = eig.apply_fn(|e| C64::new(e, 0.0));
    let residual = linalg::op_norm(&(rebuilt - h.entries()));
    if !(residual <= 1e-10 * scale) {
        return Err(Error::Numerical(format!(
            "eigendecomposition of {:016x} reconstructs with relative residual {:e}",
            linalg::fingerprint(h.entries()),
            residual / scale
        )));
    }
    Ok(eig)
}

/// Eigendecomposition with the low `d`-dimensional subspace singled out.
#[derive(Clone, Debug)]
pub struct SpectralSplit {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
    pub d: usize,
    pub p: CMat,
    pub q: CMat,
    /// Half the separation between the retained block and the rest.
    pub gap_delta: f64,
    /// Spread of the retained eigenvalues.
    pub diameter_r: f64,
    /// H itself, kept so commutator checks need no extra argument.
    pub h: CMat,
}

impl SpectralSplit {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvectors spanning the retained subspace (dim × d).
    pub fn low_vectors(&self) -> CMat {
        self.eigenvectors.columns(0, self.d).into_owned()
    }

    pub fn tau(&self) -> f64 {
        tau(self)
    }
}

/// Gap and diameter for the lowest `d` of ascending `values`, or a
/// gap-closure error naming both boundary eigenvalues.
pub fn gap_and_diameter(values: &[f64], d: usize) -> Result<(f64, f64)> {
    if d == 0 || d >= values.len() {
        return Err(Error::Validation(format!(
            "retained dimension d = {d} must satisfy 1 <= d < {}",
            values.len()
        )));
    }
    let lower = values[d - 1];
    let upper = values[d];
    if upper - lower <= GAP_TOL {
        return Err(Error::GapClosure { lower, upper, s: None });
    }
    Ok(((upper - lower) / 2.0, lower - values[0]))
}

pub fn split(h: &HermitianOperator, d: usize) -> Result<SpectralSplit> {
    let eig = eigendecompose(h)?;
    split_from(eig, h.entries().clone(), d)
}

/// Builds the split from an eigendecomposition that is already known good.
pub fn split_from(eig: Eigensystem, h: CMat, d: usize) -> Result<SpectralSplit> {
    let (gap_delta, diameter_r) = gap_and_diameter(&eig.values, d)?;
    let low = eig.vectors.columns(0, d).into_owned();
    let p = linalg::mul_adj(&low, &low);
    let q = linalg::identity(eig.dim()) - &p;
    Ok(SpectralSplit {
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        d,
        p,
        q,
        gap_delta,
        diameter_r,
        h,
    })
}

/// Largest singular value.
pub fn op_norm(a: &CMat) -> f64 {
    linalg::op_norm(a)
}

/// τ = min(√d/Δ, (2r + 2πΔ)/(2πΔ²)).
pub fn tau(s: &SpectralSplit) -> f64 {
    tau_from(s.d, s.gap_delta, s.diameter_r)
}

pub fn tau_from(d: usize, delta: f64, r: f64) -> f64 {
    let a = (d as f64).sqrt() / delta;
    let b = (2.0 * r + 2.0 * PI * delta) / (2.0 * PI * delta * delta);
    a.min(b)
}

/// Applies the twiddle map to a matrix already expressed in the eigenbasis.
pub(crate) fn twiddle_eigenbasis(xe: &CMat, values: &[f64], d: usize) -> CMat {
    let n = values.len();
    let mut out = CMat::zeros(n, n);
    for col in 0..n {
        for row in 0..n {
            let row_low = row < d;
            let col_low = col < d;
            if row_low == col_low {
                continue;
            }
            // Q-row/P-col divides by (E_row - E_col); P-row/Q-col by (E_col - E_row)
            let denom = if col_low { values[row] - values[col] } else { values[col] - values[row] };
            out[(row, col)] = xe[(row, col)] / denom;
        }
    }
    out
}

/// The block-off-diagonal solution X̃ of `[X, P] = [H, X̃]`.
pub fn twiddle(x: &CMat, s: &SpectralSplit) -> Result<CMat> {
    check_dim(x, s)?;
    let xe = linalg::to_basis(x, &s.eigenvectors);
    let te = twiddle_eigenbasis(&xe, &s.eigenvalues, s.d);
    Ok(linalg::from_basis(&te, &s.eigenvectors))
}

fn check_dim(x: &CMat, s: &SpectralSplit) -> Result<()> {
    if x.nrows() != s.dim() || x.ncols() != s.dim() {
        return Err(Error::Validation(format!(
            "matrix is {}x{} but the split has dimension {}",
            x.nrows(),
            x.ncols(),
            s.dim()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockNorms {
    /// ‖P X Q‖
    pub pq: f64,
    /// ‖P X P‖
    pub pp: f64,
    /// ‖P X Hᵏ Q‖ for each requested k, in request order.
    pub pq_powers: Vec<(u32, f64)>,
}

/// Projected norms, evaluated on blocks in the eigenbasis (unitarily
/// equivalent to the projected products). Powers of H are diagonal there.
pub fn block_norms(x: &CMat, s: &SpectralSplit, ks: &[u32]) -> Result<BlockNorms> {
    check_dim(x, s)?;
    let xe = linalg::to_basis(x, &s.eigenvectors);
    Ok(block_norms_eigenbasis(&xe, &s.eigenvalues, s.d, ks))
}

pub(crate) fn block_norms_eigenbasis(xe: &CMat, values: &[f64], d: usize, ks: &[u32]) -> BlockNorms {
    let n = values.len();
    let pq_block = xe.view((0, 0), (d, n)).columns(d, n - d).into_owned();
    let pp_block = xe.view((0, 0), (d, d)).into_owned();
    let pq_powers = ks
        .iter()
        .map(|&k| {
            let mut b = pq_block.clone();
            for (j, mut col) in b.column_iter_mut().enumerate() {
                col *= C64::new(values[d + j].powi(k as i32), 0.0);
            }
            (k, linalg::op_norm(&b))
        })
        .collect();
    BlockNorms { pq: linalg::op_norm(&pq_block), pp: linalg::op_norm(&pp_block), pq_powers }
}

/// P′ = −twiddle(H′). Basis independent, so no eigenvector phase tracking.
pub fn projector_derivative(hprime: &HermitianOperator, s: &SpectralSplit) -> Result<CMat> {
    Ok(-twiddle(hprime.entries(), s)?)
}

/// Nonnegative coefficients of the bound H′² ≤ Σ c_k H^{2k}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkList {
    coefficients: Vec<f64>,
}

impl CkList {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Validation("c_k list is empty".into()));
        }
        if let Some(c) = coefficients.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
            return Err(Error::Validation(format!("c_k coefficient {c} is not a finite nonnegative number")));
        }
        Ok(Self { coefficients })
    }

    /// Certificate with k_max = 0, valid whenever ‖H′‖ is finite.
    pub fn bounded(hprime_norm: f64) -> Self {
        Self { coefficients: vec![hprime_norm * hprime_norm] }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn k_max(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Σ c_k x^{2k}
    pub fn eval(&self, x: f64) -> f64 {
        let x2 = x * x;
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x2 + c)
    }
}

#[derive(Clone, Debug)]
pub struct CkReport {
    pub lambda_min: f64,
    pub tol: f64,
    pub passed: bool,
    pub basis: BasisTag,
    pub dim: usize,
}

/// Smallest eigenvalue of Σ c_k H^{2k} − H′². `tol` defaults to
/// 1e-8·‖Σ c_k H^{2k}‖.
pub fn verify_ck(
    h: &HermitianOperator,
    hprime: &HermitianOperator,
    c: &CkList,
    tol: Option<f64>,
) -> Result<CkReport> {
    if h.dim() != hprime.dim() {
        return Err(Error::Validation("H and H′ differ in dimension".into()));
    }
    let eig = eigendecompose(h)?;
    let bound_diag: Vec<f64> = eig.values.iter().map(|&e| c.eval(e)).collect();
    let bound = eig.apply_fn(|e| C64::new(c.eval(e), 0.0));
    let hp2 = linalg::mul(hprime.entries(), hprime.entries());
    let diff = bound - hp2;
    let diff = (&diff + diff.adjoint()).scale(0.5);
    let lambda_min = linalg::eigh(&diff)?.values[0];
    let tol = tol.unwrap_or_else(|| 1e-8 * bound_diag.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    Ok(CkReport { lambda_min, tol, passed: lambda_min >= -tol, basis: h.basis(), dim: h.dim() })
}

#[derive(Clone, Copy, Debug)]
pub struct AvronElgart {
    /// ‖H R′(i)‖
    pub lhs: f64,
    /// 2√(c0 + 4c1)
    pub rhs: f64,
}

impl AvronElgart {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// ‖H R′(i)‖ with R(z) = (H − z)⁻¹ and R′ = −R H′ R, against 2√(c0 + 4c1).
pub fn avron_elgart_check(
    h: &HermitianOperator,
    hprime: &HermitianOperator,
    c0: f64,
    c1: f64,
) -> Result<AvronElgart> {
    let n = h.dim();
    let shifted = h.entries() - CMat::identity(n, n) * linalg::I;
    let r = shifted
        .try_inverse()
        .ok_or_else(|| Error::Numerical("H − iI is singular".into()))?;
    let r_prime = -linalg::mul(&r, &linalg::mul(hprime.entries(), &r));
    let lhs = linalg::op_norm(&linalg::mul(h.entries(), &r_prime));
    Ok(AvronElgart { lhs, rhs: 2.0 * (c0 + 4.0 * c1).sqrt() })
}

/// Residual ‖[X, P] − [H, X̃]‖ of the defining relation.
pub fn twiddle_residual(x: &CMat, xt: &CMat, s: &SpectralSplit) -> f64 {
    let lhs = linalg::mul(x, &s.p) - linalg::mul(&s.p, x);
    let rhs = linalg::mul(&s.h, xt) - linalg::mul(xt, &s.h);
    linalg::op_norm(&(lhs - rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag_real, I, ONE, ZERO};

    fn op(m: CMat) -> HermitianOperator {
        HermitianOperator::new(m, BasisTag::Abstract).unwrap()
    }

    fn pauli_x() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    #[test]
    fn diagonal_eigendecomposition_sorts() {
        let e = eigendecompose(&op(diag_real(&[3.0, 1.0, 2.0]))).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        // permutation: column 0 is e_1
        assert!((e.vectors[(1, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pauli_x_spectrum() {
        let e = eigendecompose(&op(pauli_x())).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian_and_tiny() {
        let m = CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(HermitianOperator::new(m, BasisTag::Abstract).is_err());
        assert!(HermitianOperator::new(CMat::zeros(1, 1), BasisTag::Abstract).is_err());
    }

    #[test]
    fn split_examples() {
        let h = op(diag_real(&[0.0, 1.0, 5.0]));
        let s = split(&h, 2).unwrap();
        assert_eq!((s.gap_delta, s.diameter_r), (2.0, 1.0));
        let s = split(&h, 1).unwrap();
        assert_eq!((s.gap_delta, s.diameter_r), (0.5, 0.0));
    }

    #[test]
    fn degenerate_boundary_names_both_eigenvalues() {
        let h = op(diag_real(&[1.0 - 1e-13, 1.0, 5.0]));
        match split(&h, 1) {
            Err(Error::GapClosure { lower, upper, .. }) => {
                assert_eq!(upper, 1.0);
                assert_eq!(lower, 1.0 - 1e-13);
            }
            other => panic!("expected gap closure, got {other:?}"),
        }
        // degeneracy inside P is allowed
        assert!(split(&h, 2).is_ok());
    }

    #[test]
    fn norms_of_simple_matrices() {
        assert_eq!(op_norm(&diag_real(&[-3.0, 2.0])), 3.0);
        assert_eq!(op_norm(&CMat::zeros(3, 3)), 0.0);
    }

    #[test]
    fn tau_examples() {
        assert!((tau_from(1, 2.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((tau_from(4, 1.0, 10.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn twiddle_two_level() {
        let s = split(&op(diag_real(&[0.0, 1.0])), 1).unwrap();
        let xt = twiddle(&pauli_x(), &s).unwrap();
        assert!((xt - pauli_x()).norm() < 1e-14);
        let pp = projector_derivative(&op(pauli_x()), &s).unwrap();
        assert!((pp + pauli_x()).norm() < 1e-14);
    }

    #[test]
    fn twiddle_of_commuting_operator_vanishes() {
        let h = op(diag_real(&[0.0, 1.0, 3.0, 7.0]));
        let s = split(&h, 2).unwrap();
        let x = diag_real(&[2.0, -1.0, 4.0, 0.5]);
        assert!(twiddle(&x, &s).unwrap().norm() < 1e-15);
        assert_eq!(block_norms(&x, &s, &[]).unwrap().pq, 0.0);
    }

    #[test]
    fn projector_block_norms() {
        let h = op(diag_real(&[0.0, 1.0, 3.0]));
        let s = split(&h, 1).unwrap();
        let b = block_norms(&s.p.clone(), &s, &[1]).unwrap();
        assert!(b.pq < 1e-15 && (b.pp - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ck_examples() {
        // H′ = 0
        let h = op(diag_real(&[0.0, 1.0, 2.0]));
        let z = op(CMat::zeros(3, 3));
        assert!(verify_ck(&h, &z, &CkList::new(vec![0.0]).unwrap(), None).unwrap().passed);

        // H = m + sin(s) m², H′ = cos(s) m², certificate H′² ≤ H⁴
        for &s in &[0.0, 0.3, 1.0] {
            let m: Vec<f64> = (0..12).map(|k| k as f64).collect();
            let h = op(diag_real(&m.iter().map(|m| m + f64::sin(s) * m * m).collect::<Vec<_>>()));
            let hp = op(diag_real(&m.iter().map(|m| f64::cos(s) * m * m).collect::<Vec<_>>()));
            let r = verify_ck(&h, &hp, &CkList::new(vec![0.0, 0.0, 1.0]).unwrap(), None).unwrap();
            assert!(r.passed, "s = {s}: λ_min = {}", r.lambda_min);
        }
    }

    #[test]
    fn avron_elgart_closed_form() {
        let h = op(diag_real(&[0.0, 10.0]));
        let hp = op(pauli_x());
        let ae = avron_elgart_check(&h, &hp, 1.0, 0.0).unwrap();
        // H R H′ R in closed form: only the (1,0) entry survives,
        // 10/(10 − i) · 1/(0 − i)
        let expect = (C64::new(10.0, 0.0) / (C64::new(10.0, 0.0) - I) / (-I)).norm();
        assert!((ae.lhs - expect).abs() < 1e-12);
        assert!(ae.holds() && ae.rhs == 2.0);

        let z = op(CMat::zeros(2, 2));
        assert_eq!(avron_elgart_check(&h, &z, 0.0, 0.0).unwrap().lhs, 0.0);
    }
}
