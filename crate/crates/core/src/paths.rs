//! Parameterized Hamiltonian paths H(s), s ∈ [0, 1], with their first two
//! s-derivatives and the c_k certificate.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::circuits::{harmonic_frequency, CsfqSinModel, PhaseGrid};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::operator_core::{BasisTag, CkList, HermitianOperator};
use crate::schedule::{self, AnnealParams, DerivativeMode};

/// Where H′ and H″ come from. Stamped into every report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeSource {
    Analytic,
    /// Central differences in s with step `h`.
    CentralDifference { h: f64 },
}

impl std::fmt::Display for DerivativeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DerivativeSource::Analytic => write!(f, "analytic"),
            DerivativeSource::CentralDifference { h } => write!(f, "central-difference(h={h:e})"),
        }
    }
}

pub trait OperatorPath: Send + Sync {
    fn dim(&self) -> usize;
    /// Dimension of the retained low-energy subspace.
    fn d(&self) -> usize;
    fn basis(&self) -> BasisTag;
    fn hamiltonian(&self, s: f64) -> Result<HermitianOperator>;
    fn first_derivative(&self, s: f64) -> Result<HermitianOperator>;
    fn second_derivative(&self, s: f64) -> Result<HermitianOperator>;
    fn derivative_source(&self) -> DerivativeSource {
        DerivativeSource::Analytic
    }
    /// Coefficients with H′(s)² ≤ Σ c_k H(s)^{2k}. Matrices have bounded H′,
    /// so ‖H′(s)‖² with k_max = 0 is always a valid default.
    fn certificate(&self, s: f64) -> Result<CkList> {
        let hp = self.first_derivative(s)?;
        Ok(CkList::bounded(linalg::op_norm(hp.entries())))
    }
    fn label(&self) -> String;
}

fn check_s(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Validation(format!("s = {s} outside [0, 1]")));
    }
    Ok(())
}

type MatFn = Arc<dyn Fn(f64) -> CMat + Send + Sync>;

/// A path given by closures. Missing derivatives fall back to central
/// differences with step `h`, one-sided near the ends.
#[derive(Clone)]
pub struct FnPath {
    pub name: String,
    pub dim: usize,
    pub d: usize,
    pub basis: BasisTag,
    h: MatFn,
    h1: Option<MatFn>,
    h2: Option<MatFn>,
    pub fd_step: f64,
}

impl FnPath {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        d: usize,
        h: impl Fn(f64) -> CMat + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            d,
            basis: BasisTag::Abstract,
            h: Arc::new(h),
            h1: None,
            h2: None,
            fd_step: 1e-4,
        }
    }

    pub fn with_derivatives(
        mut self,
        h1: impl Fn(f64) -> CMat + Send + Sync + 'static,
        h2: impl Fn(f64) -> CMat + Send + Sync + 'static,
    ) -> Self {
        self.h1 = Some(Arc::new(h1));
        self.h2 = Some(Arc::new(h2));
        self
    }

    fn op(&self, m: CMat) -> Result<HermitianOperator> {
        if m.nrows() != self.dim {
            return Err(Error::Validation(format!(
                "path {} produced a {}x{} matrix, expected dimension {}",
                self.name,
                m.nrows(),
                m.ncols(),
                self.dim
            )));
        }
        HermitianOperator::new(m, self.basis)
    }

    // stencil points kept inside [0, 1]
    fn stencil(&self, s: f64) -> (f64, f64) {
        let h = self.fd_step;
        (s.clamp(h, 1.0 - h) - h, s.clamp(h, 1.0 - h) + h)
    }
}

impl OperatorPath for FnPath {
    fn dim(&self) -> usize {
        self.dim
    }
    fn d(&self) -> usize {
        self.d
    }
    fn basis(&self) -> BasisTag {
        self.basis
    }
    fn hamiltonian(&self, s: f64) -> Result<HermitianOperator> {
        check_s(s)?;
        self.op((self.h)(s))
    }
    fn first_derivative(&self, s: f64) -> Result<HermitianOperator> {
        check_s(s)?;
        match &self.h1 {
            Some(f) => self.op(f(s)),
            None => {
                let (a, b) = self.stencil(s);
                self.op(((self.h)(b) - (self.h)(a)).scale(1.0 / (b - a)))
            }
        }
    }
    fn second_derivative(&self, s: f64) -> Result<HermitianOperator> {
        check_s(s)?;
        match &self.h2 {
            Some(f) => self.op(f(s)),
            None => {
                let (a, b) = self.stencil(s);
                let m = 0.5 * (a + b);
                let h = 0.5 * (b - a);
                self.op(((self.h)(b) - (self.h)(m).scale(2.0) + (self.h)(a)).scale(1.0 / (h * h)))
            }
        }
    }
    fn derivative_source(&self) -> DerivativeSource {
        if self.h1.is_some() && self.h2.is_some() {
            DerivativeSource::Analytic
        } else {
            DerivativeSource::CentralDifference { h: self.fd_step }
        }
    }
    fn label(&self) -> String {
        self.name.clone()
    }
}

fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
}

fn pauli_z() -> CMat {
    linalg::diag_real(&[1.0, -1.0])
}

/// scale·((1 − s)X + sZ), d = 1. The gap never closes: its minimum is
/// scale·√2 at s = ½.
pub fn two_level(scale: f64) -> FnPath {
    let (x, z) = (pauli_x(), pauli_z());
    let (x1, z1) = (x.clone(), z.clone());
    FnPath::new(format!("two-level(scale={scale})"), 2, 1, move |s| (x.scale(1.0 - s) + z.scale(s)).scale(scale))
        .with_derivatives(move |_| (z1.clone() - x1.clone()).scale(scale), |_| CMat::zeros(2, 2))
}

/// H = a(s)·diag(levels): every H(s) commutes with every other.
pub fn commuting(levels: Vec<f64>, d: usize, a: impl Fn(f64) -> (f64, f64, f64) + Send + Sync + 'static) -> FnPath {
    let dim = levels.len();
    let base = linalg::diag_real(&levels);
    let a = Arc::new(a);
    let (b1, b2, a1, a2) = (base.clone(), base.clone(), a.clone(), a.clone());
    FnPath::new("commuting", dim, d, move |s| base.scale(a(s).0))
        .with_derivatives(move |s| b1.scale(a1(s).1), move |s| b2.scale(a2(s).2))
}

/// D + ε(R₀ + sR₁ + s²R₂) with D = diag(0, ½, 3, 3½, 4, …) and unit-norm
/// random Hermitian R_k. With ε = 0.35 Weyl's inequality keeps the d = 2
/// gap above 0.4 for all s.
pub fn random_smooth(dim: usize, seed: u64) -> FnPath {
    assert!(dim >= 3, "random smooth path needs dim >= 3");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 0.35;
    let mut r = Vec::new();
    for _ in 0..3 {
        let m = linalg::random::hermitian(dim, &mut rng);
        let n = linalg::op_norm(&m);
        r.push(m.scale(eps / n));
    }
    let levels: Vec<f64> = (0..dim).map(|j| if j < 2 { 0.5 * j as f64 } else { 3.0 + 0.5 * (j - 2) as f64 }).collect();
    let dmat = linalg::diag_real(&levels);
    let (r0, r1, r2) = (r[0].clone(), r[1].clone(), r[2].clone());
    let (r1b, r2b, r2c) = (r1.clone(), r2.clone(), r2.clone());
    FnPath::new(format!("random-smooth(dim={dim},seed={seed})"), dim, 2, move |s| {
        &dmat + &r0 + r1.scale(s) + r2.scale(s * s)
    })
    .with_derivatives(move |s| &r1b + r2b.scale(2.0 * s), move |_| r2c.scale(2.0))
}

/// The sin-variant CSFQ driven by the anneal schedule.
#[derive(Clone, Debug)]
pub struct CsfqSinPath {
    pub params: AnnealParams,
    pub mode: DerivativeMode,
    pub model: CsfqSinModel,
}

impl CsfqSinPath {
    pub fn new(params: AnnealParams, n_max: usize, mode: DerivativeMode) -> Self {
        let model = CsfqSinModel::new(params.e_c, params.e_j(), params.e_alpha(), n_max);
        Self { params, mode, model }
    }

    fn controls(&self, s: f64) -> Result<(f64, f64, schedule::ControlDerivatives)> {
        check_s(s)?;
        let b = schedule::solve_b(s, &self.params)?;
        let f = schedule::solve_f(s, &self.params);
        Ok((b, f, schedule::derivatives(s, b, &self.params, self.mode)))
    }
}

impl OperatorPath for CsfqSinPath {
    fn dim(&self) -> usize {
        self.model.ops.dim()
    }
    fn d(&self) -> usize {
        2
    }
    fn basis(&self) -> BasisTag {
        BasisTag::HalfIntegerCharge
    }
    fn hamiltonian(&self, s: f64) -> Result<HermitianOperator> {
        let (b, f, _) = self.controls(s)?;
        self.model.hamiltonian(b, f)
    }
    fn first_derivative(&self, s: f64) -> Result<HermitianOperator> {
        let (_, f, c) = self.controls(s)?;
        self.model.first_derivative(f, c.b1, c.f1)
    }
    fn second_derivative(&self, s: f64) -> Result<HermitianOperator> {
        let (_, f, c) = self.controls(s)?;
        self.model.second_derivative(f, c.b2, c.f1, c.f2)
    }
    fn label(&self) -> String {
        format!(
            "csfq-sin(A={},B={},n_max={},mode={:?})",
            self.params.a, self.params.b_final, self.model.ops.n_max, self.mode
        )
    }
}

/// The left harmonic well E_C n̂² + E_J b(s)(φ + π)²/2 following the
/// barrier schedule, on a grid centred at the well.
#[derive(Clone, Debug)]
pub struct WellPath {
    pub params: AnnealParams,
    pub mode: DerivativeMode,
    pub grid: PhaseGrid,
    kinetic: CMat,
    quadratic: CMat,
}

impl WellPath {
    pub fn new(params: AnnealParams, grid_points: usize, mode: DerivativeMode) -> Self {
        // ground state width σ² = ½√(2E_C/(E_J b)) is largest at b = 1
        let sigma = (0.5 * (2.0 * params.e_c / params.e_j()).sqrt()).sqrt();
        let grid = PhaseGrid { center: -std::f64::consts::PI, halfwidth: 12.0 * sigma, points: grid_points };
        let kinetic = linalg::from_real(&grid.kinetic(params.e_c));
        let quadratic = linalg::from_real(&grid.potential(|x| 0.5 * (x - grid.center).powi(2)));
        Self { params, mode, grid, kinetic, quadratic }
    }

    fn controls(&self, s: f64) -> Result<(f64, schedule::ControlDerivatives)> {
        check_s(s)?;
        let b = schedule::solve_b(s, &self.params)?;
        Ok((b, schedule::derivatives(s, b, &self.params, self.mode)))
    }

    /// √(2 E_C E_J b): the well's small-oscillation frequency.
    pub fn frequency(&self, b: f64) -> f64 {
        harmonic_frequency(self.params.e_c, 0.5 * self.params.e_j() * b)
    }
}

impl OperatorPath for WellPath {
    fn dim(&self) -> usize {
        self.grid.points
    }
    fn d(&self) -> usize {
        1
    }
    fn basis(&self) -> BasisTag {
        BasisTag::PhaseGrid
    }
    fn hamiltonian(&self, s: f64) -> Result<HermitianOperator> {
        let (b, _) = self.controls(s)?;
        HermitianOperator::new(&self.kinetic + self.quadratic.scale(self.params.e_j() * b), BasisTag::PhaseGrid)
    }
    fn first_derivative(&self, s: f64) -> Result<HermitianOperator> {
        let (_, c) = self.controls(s)?;
        HermitianOperator::new(self.quadratic.scale(self.params.e_j() * c.b1), BasisTag::PhaseGrid)
    }
    fn second_derivative(&self, s: f64) -> Result<HermitianOperator> {
        let (_, c) = self.controls(s)?;
        HermitianOperator::new(self.quadratic.scale(self.params.e_j() * c.b2), BasisTag::PhaseGrid)
    }
    fn label(&self) -> String {
        format!("well(A={},B={},points={})", self.params.a, self.params.b_final, self.grid.points)
    }
}

/// The same evolution in a logarithmic time variable σ ∈ [0, 1]:
/// s(σ) = 1 + δ − e^{−u}, u running linearly from −ln(1 + δ) to −ln δ, and
/// H̃(σ) = s′(σ) H(s(σ)). Resolves paths whose rate of change grows like
/// 1/(1 − s + δ) near the end.
#[derive(Clone, Debug)]
pub struct LogTime<P> {
    pub inner: P,
    pub delta: f64,
    u0: f64,
    len: f64,
}

impl<P: OperatorPath> LogTime<P> {
    pub fn new(inner: P, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Validation(format!("log-time offset δ = {delta} must be positive")));
        }
        let u0 = -(1.0 + delta).ln();
        Ok(Self { inner, delta, u0, len: -delta.ln() - u0 })
    }

    /// s(σ) and its first three derivatives.
    pub fn map(&self, sigma: f64) -> (f64, [f64; 3]) {
        let e = (-(self.u0 + sigma * self.len)).exp();
        let l = self.len;
        ((1.0 + self.delta - e).clamp(0.0, 1.0), [l * e, -l * l * e, l * l * l * e])
    }
}

impl<P: OperatorPath> OperatorPath for LogTime<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn d(&self) -> usize {
        self.inner.d()
    }
    fn basis(&self) -> BasisTag {
        self.inner.basis()
    }
    fn hamiltonian(&self, sigma: f64) -> Result<HermitianOperator> {
        check_s(sigma)?;
        let (s, [d1, _, _]) = self.map(sigma);
        let h = self.inner.hamiltonian(s)?;
        HermitianOperator::new(h.entries().scale(d1), h.basis())
    }
    fn first_derivative(&self, sigma: f64) -> Result<HermitianOperator> {
        check_s(sigma)?;
        let (s, [d1, d2, _]) = self.map(sigma);
        let h = self.inner.hamiltonian(s)?;
        let h1 = self.inner.first_derivative(s)?;
        HermitianOperator::new(h.entries().scale(d2) + h1.entries().scale(d1 * d1), h.basis())
    }
    fn second_derivative(&self, sigma: f64) -> Result<HermitianOperator> {
        check_s(sigma)?;
        let (s, [d1, d2, d3]) = self.map(sigma);
        let h = self.inner.hamiltonian(s)?;
        let h1 = self.inner.first_derivative(s)?;
        let h2 = self.inner.second_derivative(s)?;
        HermitianOperator::new(
            h.entries().scale(d3) + h1.entries().scale(3.0 * d1 * d2) + h2.entries().scale(d1 * d1 * d1),
            h.basis(),
        )
    }
    fn derivative_source(&self) -> DerivativeSource {
        self.inner.derivative_source()
    }
    fn label(&self) -> String {
        format!("log-time(δ={:e}, {})", self.delta, self.inner.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_core::{eigendecompose, split};

    fn fd_matches(path: &dyn OperatorPath, s: f64, h: f64) -> (f64, f64) {
        let a = path.hamiltonian(s - h).unwrap().into_entries();
        let b = path.hamiltonian(s + h).unwrap().into_entries();
        let c = path.hamiltonian(s).unwrap().into_entries();
        let d1 = (&b - &a).scale(0.5 / h) - path.first_derivative(s).unwrap().into_entries();
        let d2 = (&b - c.scale(2.0) + &a).scale(1.0 / (h * h)) - path.second_derivative(s).unwrap().into_entries();
        (linalg::op_norm(&d1), linalg::op_norm(&d2))
    }

    #[test]
    fn csfq_derivatives_match_differences() {
        let p = AnnealParams::from_delta(1e-9, 10.0, 1.0).unwrap();
        let path = CsfqSinPath::new(p, 12, DerivativeMode::ExactImplicit);
        let scale = linalg::op_norm(path.first_derivative(0.4).unwrap().entries());
        let (e1, e2) = fd_matches(&path, 0.4, 1e-3);
        let (f1, _) = fd_matches(&path, 0.4, 5e-4);
        assert!(e1 < 1e-5 * scale, "{e1}");
        assert!(e1 / f1 > 3.0 && e1 / f1 < 5.0, "first differences not O(h²): {}", e1 / f1);
        assert!(e2 < 1e-3 * scale, "{e2}");
    }

    #[test]
    fn random_smooth_gap_stays_open() {
        let path = random_smooth(5, 7);
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            let sp = split(&path.hamiltonian(s).unwrap(), 2).unwrap();
            assert!(sp.gap_delta > 0.2);
        }
        let (e1, e2) = fd_matches(&path, 0.3, 1e-4);
        assert!(e1 < 1e-7 && e2 < 1e-4);
    }

    #[test]
    fn well_path_spacing() {
        let p = AnnealParams::new(10.0, 3.0, 1.0).unwrap();
        let path = WellPath::new(p.clone(), 200, DerivativeMode::ExactImplicit);
        let b = schedule::solve_b(0.5, &p).unwrap();
        let e = eigendecompose(&path.hamiltonian(0.5).unwrap()).unwrap();
        assert!(((e.values[1] - e.values[0]) / path.frequency(b) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn log_time_derivatives_match_differences() {
        let p = AnnealParams::new(10.0, 3.0, 1.0).unwrap();
        let delta = p.delta_b();
        let path = LogTime::new(WellPath::new(p, 64, DerivativeMode::ExactImplicit), delta).unwrap();
        let (s, _) = path.map(1.0);
        assert!((s - 1.0).abs() < 1e-12);
        let scale = linalg::op_norm(path.first_derivative(0.7).unwrap().entries());
        let (e1, e2) = fd_matches(&path, 0.7, 1e-4);
        assert!(e1 < 1e-6 * scale && e2 < 1e-3 * scale, "{e1} {e2}");
    }

    #[test]
    fn finite_difference_fallback_is_stamped() {
        let p = FnPath::new("fd", 2, 1, |s| pauli_x().scale(s.sin()) + pauli_z());
        assert_eq!(p.derivative_source(), DerivativeSource::CentralDifference { h: 1e-4 });
        let d = p.first_derivative(0.0).unwrap().into_entries();
        assert!((d[(0, 1)].re - 1.0).abs() < 1e-8);
    }
}
