//! Discretized circuit Hamiltonians and their analytic parameter derivatives.
//!
//! Conventions: [φ̂, n̂] = i, energies in units where E_C = 1 unless given,
//! kinetic term E_C n̂² (the transmon literature writes 4E_C n̂²).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::operator_core::{self, BasisTag, CkList, HermitianOperator};

/// Uniform Dirichlet grid: `points` interior nodes on
/// (center − halfwidth, center + halfwidth).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseGrid {
    pub center: f64,
    pub halfwidth: f64,
    pub points: usize,
}

impl PhaseGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.halfwidth / (self.points as f64 + 1.0)
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..=self.points).map(|j| self.center - self.halfwidth + j as f64 * h).collect()
    }

    /// `coef · n̂²` as −coef times the three-point second difference.
    pub fn kinetic(&self, coef: f64) -> DMatrix<f64> {
        let n = self.points;
        let h2 = self.spacing().powi(2);
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            k[(j, j)] = 2.0 * coef / h2;
            if j + 1 < n {
                k[(j, j + 1)] = -coef / h2;
                k[(j + 1, j)] = -coef / h2;
            }
        }
        k
    }

    pub fn potential(&self, v: impl Fn(f64) -> f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.nodes().into_iter().map(v).collect()))
    }
}

fn real_op(m: DMatrix<f64>, basis: BasisTag) -> Result<HermitianOperator> {
    HermitianOperator::new(linalg::from_real(&m), basis)
}

// ---------------------------------------------------------------- CJJ

#[derive(Clone, Debug, PartialEq)]
pub struct CjjParams {
    pub e_c: f64,
    pub e_j: f64,
    pub e_l: f64,
    pub b: f64,
    pub f: f64,
    pub halfwidth: f64,
    pub points: usize,
}

/// Minimum grid half-width: wide enough to hold the ±3π minima.
pub const CJJ_MIN_HALFWIDTH: f64 = 3.0 * std::f64::consts::PI;
pub const CJJ_MIN_POINTS: usize = 64;

impl CjjParams {
    fn validate(&self) -> Result<()> {
        if !(self.e_c > 0.0 && self.e_j >= 0.0 && self.e_l >= 0.0) {
            return Err(Error::Validation("CJJ energies must be positive (E_J, E_L may be 0)".into()));
        }
        if self.halfwidth < CJJ_MIN_HALFWIDTH {
            return Err(Error::Validation(format!(
                "grid half-width {} is below 3π",
                self.halfwidth
            )));
        }
        if self.points < CJJ_MIN_POINTS {
            return Err(Error::Validation(format!("grid has {} points, need at least 64", self.points)));
        }
        Ok(())
    }

    pub fn grid(&self) -> PhaseGrid {
        PhaseGrid { center: 0.0, halfwidth: self.halfwidth, points: self.points }
    }
}

/// H with its partial derivatives in b and f.
#[derive(Clone, Debug)]
pub struct CircuitMatrices {
    pub h: HermitianOperator,
    pub d_db: HermitianOperator,
    pub d_df: HermitianOperator,
    pub warnings: Vec<String>,
}

/// E_C n̂² + E_J b cos φ + E_L (φ − f)² on the phase grid.
pub fn build_cjj(p: &CjjParams) -> Result<CircuitMatrices> {
    p.validate()?;
    let g = p.grid();
    let h = g.kinetic(p.e_c) + g.potential(|x| p.e_j * p.b * x.cos() + p.e_l * (x - p.f).powi(2));
    let d_db = g.potential(|x| p.e_j * x.cos());
    let d_df = g.potential(|x| -2.0 * p.e_l * (x - p.f));
    Ok(CircuitMatrices {
        h: real_op(h, BasisTag::PhaseGrid)?,
        d_db: real_op(d_db, BasisTag::PhaseGrid)?,
        d_df: real_op(d_df, BasisTag::PhaseGrid)?,
        warnings: vec![],
    })
}

/// Relative change of the lowest `count` eigenvalues under a refinement.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub max_relative_change: f64,
    pub flagged: bool,
}

/// Threshold above which a refinement is flagged.
pub const CONVERGENCE_TOL: f64 = 0.01;

fn compare_low(coarse: &HermitianOperator, fine: &HermitianOperator, count: usize) -> Result<ConvergenceReport> {
    let a = operator_core::eigendecompose(coarse)?.values;
    let b = operator_core::eigendecompose(fine)?.values;
    let count = count.min(a.len()).min(b.len());
    let (a, b) = (a[..count].to_vec(), b[..count].to_vec());
    let scale = a.iter().chain(b.iter()).fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let change = a.iter().zip(&b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs() / scale));
    Ok(ConvergenceReport { coarse: a, fine: b, max_relative_change: change, flagged: change >= CONVERGENCE_TOL })
}

/// Doubles the grid density and compares the lowest four levels. Changes
/// are measured relative to the largest of those levels.
pub fn cjj_grid_convergence(p: &CjjParams) -> Result<ConvergenceReport> {
    let fine = CjjParams { points: 2 * p.points + 1, ..p.clone() };
    compare_low(&build_cjj(p)?.h, &build_cjj(&fine)?.h, 4)
}

// ---------------------------------------------------------------- CSFQ

#[derive(Clone, Debug, PartialEq)]
pub struct CsfqParams {
    pub e_c: f64,
    pub e_j: f64,
    pub e_alpha: f64,
    pub b: f64,
    pub f: f64,
    /// Charges run over −n_max, −n_max + ½, …, n_max: dimension 4 n_max + 1.
    pub n_max: usize,
}

/// Below this cutoff a warning is attached to the built matrices.
pub const CSFQ_MIN_CUTOFF: usize = 10;
/// Barriers are accepted down to 1 − this, since the schedule root at s = 0
/// sits a hair below 1.
pub const BARRIER_SLACK: f64 = 1e-8;

impl CsfqParams {
    fn validate(&self) -> Result<()> {
        if !(self.e_c > 0.0 && self.e_j > 0.0 && self.e_alpha >= 0.0) {
            return Err(Error::Validation("CSFQ energies must be positive".into()));
        }
        if !(self.b >= 1.0 - BARRIER_SLACK) {
            return Err(Error::Validation(format!("barrier b = {} is below 1", self.b)));
        }
        if !(self.f >= 0.0 && self.f < std::f64::consts::PI) {
            return Err(Error::Validation(format!("flux f = {} outside [0, π)", self.f)));
        }
        if self.n_max == 0 {
            return Err(Error::Validation("charge cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// Charge-lattice primitives shared by every CSFQ matrix at a given cutoff.
#[derive(Clone, Debug)]
pub struct ChargeOperators {
    pub n_max: usize,
    /// n̂² (diagonal)
    pub n2: CMat,
    /// cos φ̂ = ½(S₊₁ + S₋₁)
    pub cos_phi: CMat,
    /// sin(φ̂/2) = (S₊½ − S₋½)/(2i)
    pub sin_half: CMat,
    /// cos(φ̂/2) = ½(S₊½ + S₋½)
    pub cos_half: CMat,
}

impl ChargeOperators {
    pub fn new(n_max: usize) -> Self {
        let dim = 4 * n_max + 1;
        let charge = |j: usize| -(n_max as f64) + j as f64 / 2.0;
        let n2 = linalg::diag_real(&(0..dim).map(|j| charge(j).powi(2)).collect::<Vec<_>>());
        let cos_phi = (shift(dim, 2) + shift_down(dim, 2)).scale(0.5);
        let sin_half = (shift(dim, 1) - shift_down(dim, 1)) * C64::new(0.0, -0.5);
        let cos_half = (shift(dim, 1) + shift_down(dim, 1)).scale(0.5);
        Self { n_max, n2, cos_phi, sin_half, cos_half }
    }

    pub fn dim(&self) -> usize {
        self.n2.nrows()
    }

    pub fn charges(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| -(self.n_max as f64) + j as f64 / 2.0).collect()
    }
}

/// S₊: |j⟩ → |j + k⟩ in lattice steps of ½ charge, truncated at the edge.
fn shift(dim: usize, k: usize) -> CMat {
    let mut s = CMat::zeros(dim, dim);
    for j in 0..dim.saturating_sub(k) {
        s[(j + k, j)] = C64::new(1.0, 0.0);
    }
    s
}

fn shift_down(dim: usize, k: usize) -> CMat {
    shift(dim, k).transpose()
}

/// Assembles the sin-variant Hamiltonian and its derivatives from the
/// charge primitives.
#[derive(Clone, Debug)]
pub struct CsfqSinModel {
    pub ops: ChargeOperators,
    pub e_c: f64,
    pub e_j: f64,
    pub e_alpha: f64,
}

impl CsfqSinModel {
    pub fn new(e_c: f64, e_j: f64, e_alpha: f64, n_max: usize) -> Self {
        Self { ops: ChargeOperators::new(n_max), e_c, e_j, e_alpha }
    }

    fn op(&self, m: CMat) -> Result<HermitianOperator> {
        HermitianOperator::new(m, BasisTag::HalfIntegerCharge)
    }

    /// E_C n̂² + E_J b cos φ̂ − E_α sin(φ̂/2) sin(f/2)
    pub fn hamiltonian(&self, b: f64, f: f64) -> Result<HermitianOperator> {
        let o = &self.ops;
        self.op(o.n2.scale(self.e_c) + o.cos_phi.scale(self.e_j * b) - o.sin_half.scale(self.e_alpha * (f / 2.0).sin()))
    }

    /// ∂H/∂b = E_J cos φ̂
    pub fn d_db(&self) -> Result<HermitianOperator> {
        self.op(self.ops.cos_phi.scale(self.e_j))
    }

    /// ∂H/∂f = −(E_α/2) sin(φ̂/2) cos(f/2)
    pub fn d_df(&self, f: f64) -> Result<HermitianOperator> {
        self.op(self.ops.sin_half.scale(-0.5 * self.e_alpha * (f / 2.0).cos()))
    }

    /// H′ = b′ ∂H/∂b + f′ ∂H/∂f
    pub fn first_derivative(&self, f: f64, b1: f64, f1: f64) -> Result<HermitianOperator> {
        let o = &self.ops;
        self.op(o.cos_phi.scale(self.e_j * b1) - o.sin_half.scale(0.5 * self.e_alpha * f1 * (f / 2.0).cos()))
    }

    /// H″ = E_J b″ cos φ̂ − (E_α/2) sin(φ̂/2) (f″ cos(f/2) − (f′²/2) sin(f/2))
    pub fn second_derivative(&self, f: f64, b2: f64, f1: f64, f2: f64) -> Result<HermitianOperator> {
        let o = &self.ops;
        let flux = f2 * (f / 2.0).cos() - 0.5 * f1 * f1 * (f / 2.0).sin();
        self.op(o.cos_phi.scale(self.e_j * b2) - o.sin_half.scale(0.5 * self.e_alpha * flux))
    }
}

fn cutoff_warning(n_max: usize) -> Vec<String> {
    if n_max < CSFQ_MIN_CUTOFF {
        vec![format!("charge cutoff n_max = {n_max} is below {CSFQ_MIN_CUTOFF}; truncation may dominate")]
    } else {
        vec![]
    }
}

/// The sin-variant CSFQ on the half-integer charge lattice.
pub fn build_csfq_sin(p: &CsfqParams) -> Result<CircuitMatrices> {
    p.validate()?;
    let m = CsfqSinModel::new(p.e_c, p.e_j, p.e_alpha, p.n_max);
    Ok(CircuitMatrices {
        h: m.hamiltonian(p.b, p.f)?,
        d_db: m.d_db()?,
        d_df: m.d_df(p.f)?,
        warnings: cutoff_warning(p.n_max),
    })
}

/// Full CSFQ: the bias term −E_α cos(½(φ̂ − f)) expanded into both shift
/// terms. Spectra only.
pub fn build_csfq_full(p: &CsfqParams) -> Result<HermitianOperator> {
    p.validate()?;
    let o = ChargeOperators::new(p.n_max);
    let (sf, cf) = ((p.f / 2.0).sin(), (p.f / 2.0).cos());
    let h = o.n2.scale(p.e_c) + o.cos_phi.scale(p.e_j * p.b)
        - (o.cos_half.scale(cf) + o.sin_half.scale(sf)).scale(p.e_alpha);
    HermitianOperator::new(h, BasisTag::HalfIntegerCharge)
}

/// Raises the cutoff by half and compares the lowest four levels.
pub fn csfq_cutoff_convergence(p: &CsfqParams) -> Result<ConvergenceReport> {
    let fine = CsfqParams { n_max: p.n_max + (p.n_max + 1) / 2, ..p.clone() };
    compare_low(&build_csfq_sin(p)?.h, &build_csfq_sin(&fine)?.h, 4)
}

// ---------------------------------------------------------------- wells

#[derive(Clone, Debug, PartialEq)]
pub struct WellParams {
    pub e_c: f64,
    pub e_j: f64,
    pub b: f64,
    pub grid: PhaseGrid,
}

/// E_C n̂² + (stiffness/2)(φ − center)² on `grid`.
pub fn harmonic_well(e_c: f64, stiffness: f64, center: f64, grid: &PhaseGrid) -> Result<HermitianOperator> {
    real_op(grid.kinetic(e_c) + grid.potential(|x| 0.5 * stiffness * (x - center).powi(2)), BasisTag::PhaseGrid)
}

/// Harmonic approximations of the two cosine wells at φ = ∓π:
/// H_{L,R} = E_C n̂² + E_J b (φ ± π)²/2.
pub fn build_wells(p: &WellParams) -> Result<(HermitianOperator, HermitianOperator)> {
    if !(p.e_c > 0.0 && p.e_j > 0.0 && p.b > 0.0) {
        return Err(Error::Validation("well energies must be positive".into()));
    }
    let k = p.e_j * p.b;
    let pi = std::f64::consts::PI;
    Ok((harmonic_well(p.e_c, k, -pi, &p.grid)?, harmonic_well(p.e_c, k, pi, &p.grid)?))
}

/// Small-oscillation frequency 2√(αβ) of α n̂² + β φ̂².
pub fn harmonic_frequency(kinetic: f64, quadratic: f64) -> f64 {
    2.0 * (kinetic * quadratic).sqrt()
}

// ---------------------------------------------------------------- flux network

/// A value and its s-derivative.
pub type Scalar = Box<dyn Fn(f64) -> (f64, f64) + Send + Sync>;
/// A symmetric matrix and its s-derivative.
pub type MatrixFn = Box<dyn Fn(f64) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync>;

/// One rf-SQUID mode: p̂² + B(s) cos(x̂ + φ(s)). Barriers are taken
/// nonnegative.
pub struct FluxMode {
    pub barrier: Scalar,
    pub flux: Scalar,
}

/// Inductively coupled modes with mutual inductance matrix M(s).
pub struct FluxNetwork {
    pub modes: Vec<FluxMode>,
    pub inductance: MatrixFn,
}

/// Grid for discretizing a network; every mode uses the same one.
#[derive(Clone, Copy, Debug)]
pub struct NetworkGrid {
    pub halfwidth: f64,
    pub points: usize,
}

/// Largest mode count the dense discretization accepts.
pub const MAX_NETWORK_MODES: usize = 2;

impl FluxNetwork {
    fn check_inductance(&self, s: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
        let (m, dm) = (self.inductance)(s);
        let n = self.modes.len();
        if m.nrows() != n || m.ncols() != n || dm.nrows() != n || dm.ncols() != n {
            return Err(Error::Validation(format!("inductance matrices must be {n}x{n}")));
        }
        let asym = (&m - m.transpose()).amax().max((&dm - dm.transpose()).amax());
        if asym > 1e-12 * m.amax().max(1.0) {
            return Err(Error::Validation(format!("inductance matrix not symmetric (defect {asym:e})")));
        }
        let l = m.clone().symmetric_eigenvalues().min();
        Ok((m, dm, l))
    }

    fn barrier_terms(&self, s: f64) -> Result<(f64, f64)> {
        // Σ (|B′| + B|φ′|) and Σ |B|
        let mut drive = 0.0;
        let mut total = 0.0;
        for mode in &self.modes {
            let (b, db) = (mode.barrier)(s);
            let (_, dphi) = (mode.flux)(s);
            if b < 0.0 {
                return Err(Error::Validation(format!("barrier height {b} is negative")));
            }
            drive += db.abs() + b * dphi.abs();
            total += b.abs();
        }
        Ok((drive, total))
    }

    /// Dense H(s) and H′(s) on a tensor grid (at most two modes).
    pub fn discretize(&self, s: f64, grid: &NetworkGrid) -> Result<(HermitianOperator, HermitianOperator)> {
        let n_modes = self.modes.len();
        if n_modes == 0 || n_modes > MAX_NETWORK_MODES {
            return Err(Error::Validation(format!("network discretization supports 1..=2 modes, got {n_modes}")));
        }
        let (m, dm, _) = self.check_inductance(s)?;
        let g = PhaseGrid { center: 0.0, halfwidth: grid.halfwidth, points: grid.points };
        let x = g.potential(|x| x);
        let eye = DMatrix::<f64>::identity(grid.points, grid.points);
        // embed a one-mode operator at slot i
        let embed = |op: &DMatrix<f64>, i: usize| -> DMatrix<f64> {
            let mut acc = DMatrix::<f64>::identity(1, 1);
            for k in 0..n_modes {
                acc = acc.kronecker(if k == i { op } else { &eye });
            }
            acc
        };
        let dim = grid.points.pow(n_modes as u32);
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut hp = DMatrix::<f64>::zeros(dim, dim);
        let xs: Vec<DMatrix<f64>> = (0..n_modes).map(|i| embed(&x, i)).collect();
        for (i, mode) in self.modes.iter().enumerate() {
            let (b, db) = (mode.barrier)(s);
            let (phi, dphi) = (mode.flux)(s);
            let local = g.kinetic(1.0) + g.potential(|x| b * (x + phi).cos());
            let local_d = g.potential(|x| db * (x + phi).cos() - b * dphi * (x + phi).sin());
            h += embed(&local, i);
            hp += embed(&local_d, i);
        }
        for i in 0..n_modes {
            for j in 0..n_modes {
                let xx = &xs[i] * &xs[j];
                h += &xx * m[(i, j)];
                hp += &xx * dm[(i, j)];
            }
        }
        Ok((real_op(h, BasisTag::PhaseGrid)?, real_op(hp, BasisTag::PhaseGrid)?))
    }
}

/// c₀ = (Σ |B_i′| + B_i |φ_i′|)² for a constant inductance matrix.
pub fn ck_constant_m(net: &FluxNetwork, s: f64) -> Result<CkList> {
    let (_, dm, _) = net.check_inductance(s)?;
    if dm.amax() != 0.0 {
        return Err(Error::WrongVariant(
            "inductance matrix varies with s; use ck_time_dependent_m".into(),
        ));
    }
    let (drive, _) = net.barrier_terms(s)?;
    CkList::new(vec![drive * drive])
}

/// (c₀, c₁) = (2a₀², 2a₁²) with a₁ = ‖M′‖/l and
/// a₀ = Σ(|B_i′| + B_i|φ_i′|) + a₁ Σ|B_i|, l the smallest eigenvalue of M.
pub fn ck_time_dependent_m(net: &FluxNetwork, s: f64) -> Result<CkList> {
    let (_, dm, l) = net.check_inductance(s)?;
    if !(l > 0.0) {
        return Err(Error::Positivity(format!("inductance matrix has smallest eigenvalue {l}")));
    }
    let dm_norm = dm.clone().symmetric_eigenvalues().amax();
    let a1 = dm_norm / l;
    let (drive, total) = net.barrier_terms(s)?;
    let a0 = drive + a1 * total;
    CkList::new(vec![2.0 * a0 * a0, 2.0 * a1 * a1])
}
