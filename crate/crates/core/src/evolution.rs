//! Exact, intertwined and effective-frame propagation, with the
//! diagnostics comparing them.
//!
//! All three evolutions are stepped jointly on one s-grid with midpoint
//! exponentials: each step exponentiates the generator frozen at the
//! midpoint exactly, in the eigenbasis of H(s_mid). Only the columns U·S of
//! a start matrix S are carried (S = V₀ by default, the low eigenvectors of
//! H(0)), which is all any diagnostic needs. The grid is doubled until the
//! checkpoints stop moving.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Eigensystem, C64, I};
use crate::operator_core::{eigendecompose, gap_and_diameter, SpectralSplit};
use crate::paths::OperatorPath;

/// Default whole-path tolerance for the step controller.
pub const DEFAULT_TOL: f64 = 1e-7;

/// Which columns of the propagators are carried.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Columns {
    /// U V₀: the low eigenvectors of H(0).
    Low,
    /// The full unitary. Only sensible for small dimensions.
    Full,
}

/// Which generators are stepped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Generators {
    /// t_f H
    pub tot: bool,
    /// t_f H + i[P′, P]
    pub ad: bool,
    /// G + [P′, P], plus the effective evolution u when G = 0
    pub eff: bool,
}

impl Generators {
    pub const ALL: Self = Self { tot: true, ad: true, eff: true };
    pub const TOT: Self = Self { tot: true, ad: false, eff: false };
    pub const AD: Self = Self { tot: false, ad: true, eff: false };
    pub const EFF: Self = Self { tot: false, ad: false, eff: true };
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub s_star: f64,
    pub tol: f64,
    pub initial_steps: usize,
    pub max_steps: usize,
    /// Number of equally spaced checkpoints after s = 0; must divide
    /// `initial_steps`.
    pub checkpoints: usize,
    pub columns: Columns,
    pub generators: Generators,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            s_star: 1.0,
            tol: DEFAULT_TOL,
            initial_steps: 64,
            max_steps: 1 << 17,
            checkpoints: 16,
            columns: Columns::Low,
            generators: Generators::ALL,
        }
    }
}

/// Block-diagonal anti-Hermitian gauge G(s), given the split at s.
pub type Gauge = dyn Fn(f64, &SpectralSplit) -> CMat + Send + Sync;

/// Propagated columns at one checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub s: f64,
    pub tot: Option<CMat>,
    pub ad: Option<CMat>,
    pub eff: Option<CMat>,
    /// Effective evolution u(s) (d × d), carried with G = 0 and low columns.
    pub u: Option<CMat>,
}

/// Per refinement level: the change against the previous level and the
/// worst intertwining residuals over checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelStats {
    pub steps: usize,
    pub delta: Option<f64>,
    pub intertwining_ad: Option<f64>,
    pub intertwining_eff: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EvolutionRun {
    pub label: String,
    pub t_f: f64,
    pub s_star: f64,
    pub d: usize,
    /// Start columns S (V₀ or the identity).
    pub start: CMat,
    /// V₀, the phase-fixed low eigenvectors of H(0).
    pub v0: CMat,
    pub checkpoints: Vec<Checkpoint>,
    pub levels: Vec<LevelStats>,
    pub gauge: bool,
}

impl EvolutionRun {
    pub fn steps(&self) -> usize {
        self.levels.last().map(|l| l.steps).unwrap_or(0)
    }

    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("runs always hold s = 0")
    }

    /// Change between the two finest levels.
    pub fn step_delta(&self) -> f64 {
        self.levels.last().and_then(|l| l.delta).unwrap_or(0.0)
    }
}

/// Low eigenvectors with the largest-magnitude component of each made real
/// positive.
pub fn phase_fixed_low(eig: &Eigensystem, d: usize) -> CMat {
    let mut v = eig.vectors.columns(0, d).into_owned();
    for mut col in v.column_iter_mut() {
        let big = col.iter().copied().fold(C64::new(0.0, 0.0), |m, z| if z.norm() > m.norm() { z } else { m });
        if big.norm() > 0.0 {
            let phase = big.conj() / big.norm();
            col *= phase;
        }
    }
    v
}

/// Rotates V₀ so that V₀† X V₀ is diagonal (ascending), e.g. the
/// well-localized basis for X a position-like operator.
pub fn well_basis(v0: &CMat, x: &CMat) -> Result<CMat> {
    let small = linalg::to_basis(x, v0);
    let small = (&small + small.adjoint()).scale(0.5);
    let e = linalg::eigh(&small)?;
    Ok(linalg::mul(v0, &e.vectors))
}

fn check_gauge(g: &CMat, sp: &SpectralSplit, s: f64) -> Result<()> {
    let n = g.nrows();
    if n != sp.dim() || g.ncols() != n {
        return Err(Error::Validation(format!("gauge at s = {s} has the wrong shape")));
    }
    let scale = linalg::max_abs(g).max(1.0);
    let herm = linalg::max_abs(&(g + g.adjoint()));
    let off = linalg::op_norm(&linalg::mul(&sp.p, &linalg::mul(g, &sp.q)));
    if herm > 1e-10 * scale {
        return Err(Error::Validation(format!("gauge at s = {s} is not anti-Hermitian (defect {herm:e})")));
    }
    if off > 1e-10 * scale {
        return Err(Error::Validation(format!("gauge at s = {s} is not block-diagonal (‖PGQ‖ = {off:e})")));
    }
    Ok(())
}

/// `f(A)` for Hermitian A via its eigendecomposition.
fn herm_fn(a: &CMat, f: impl Fn(f64) -> C64) -> Result<CMat> {
    let a = (a + a.adjoint()).scale(0.5);
    Ok(linalg::eigh(&a)?.apply_fn(f))
}

/// exp(h M) y with M = [[0, −B†], [B, 0]] in the eigenbasis blocks, via
/// functions of the small Gram matrix B†B.
fn connection_step(b: &CMat, y: &CMat, h: f64, d: usize) -> Result<CMat> {
    let gram = linalg::adj_mul(b, b);
    let cosf = |x: f64| C64::new((h * x.max(0.0).sqrt()).cos(), 0.0);
    let sinc = |x: f64| {
        let x = x.max(0.0);
        let t = h * h * x;
        C64::new(if t < 1e-6 { h * (1.0 - t / 6.0 + t * t / 120.0) } else { (h * x.sqrt()).sin() / x.sqrt() }, 0.0)
    };
    let versine = |x: f64| {
        let x = x.max(0.0);
        let t = h * h * x;
        C64::new(
            if t < 1e-6 { -0.5 * h * h * (1.0 - t / 12.0 + t * t / 360.0) } else { ((h * x.sqrt()).cos() - 1.0) / x },
            0.0,
        )
    };
    let (c, f, g) = (herm_fn(&gram, cosf)?, herm_fn(&gram, sinc)?, herm_fn(&gram, versine)?);
    let yp = y.rows(0, d).into_owned();
    let yq = y.rows(d, y.nrows() - d).into_owned();
    let bty = linalg::adj_mul(b, &yq);
    let top = &c * &yp - &f * &bty;
    let bottom = &yq + linalg::mul(b, &(&f * &yp + &g * &bty));
    let mut out = CMat::zeros(y.nrows(), y.ncols());
    out.rows_mut(0, d).copy_from(&top);
    out.rows_mut(d, y.nrows() - d).copy_from(&bottom);
    Ok(out)
}

/// V f(λ) V† applied to `w` for the eigensystem of a generator.
fn apply_phases(eig: &Eigensystem, w: &CMat, phase: impl Fn(f64) -> C64) -> CMat {
    let mut y = linalg::adj_mul(&eig.vectors, w);
    for (i, &e) in eig.values.iter().enumerate() {
        let p = phase(e);
        for z in y.row_mut(i).iter_mut() {
            *z *= p;
        }
    }
    linalg::mul(&eig.vectors, &y)
}

struct State {
    tot: Option<CMat>,
    ad: Option<CMat>,
    eff: Option<CMat>,
    u: Option<CMat>,
}

impl State {
    fn snapshot(&self, s: f64) -> Checkpoint {
        Checkpoint { s, tot: self.tot.clone(), ad: self.ad.clone(), eff: self.eff.clone(), u: self.u.clone() }
    }
}

fn h_eff(h: &CMat, w: &CMat) -> CMat {
    let m = linalg::adj_mul(w, &linalg::mul(h, w));
    (&m + m.adjoint()).scale(0.5)
}

struct Sweep<'a> {
    path: &'a dyn OperatorPath,
    t_f: f64,
    s_star: f64,
    d: usize,
    start: CMat,
    gens: Generators,
    gauge: Option<&'a Gauge>,
    carry_u: bool,
    every: usize,
}

impl Sweep<'_> {
    fn run(&self, n: usize) -> Result<Vec<Checkpoint>> {
        let h = self.s_star / n as f64;
        let d = self.d;
        let mut st = State {
            tot: self.gens.tot.then(|| self.start.clone()),
            ad: self.gens.ad.then(|| self.start.clone()),
            eff: self.gens.eff.then(|| self.start.clone()),
            u: self.carry_u.then(|| linalg::identity(d)),
        };
        let mut out = vec![st.snapshot(0.0)];
        let mut heff_prev = if self.carry_u {
            Some(h_eff(self.path.hamiltonian(0.0)?.entries(), st.eff.as_ref().unwrap()))
        } else {
            None
        };
        for k in 0..n {
            let s_mid = (k as f64 + 0.5) * h;
            let s_next = (k + 1) as f64 * h;
            let hm = self.path.hamiltonian(s_mid)?;
            // H is Hermitian by construction; skip the reconstruction check
            let eig = linalg::eigh(hm.entries())?;
            if let Some(w) = st.tot.as_mut() {
                let tf = self.t_f;
                *w = apply_phases(&eig, w, |e| (-I * (h * tf * e)).exp());
            }
            if self.gens.ad || self.gens.eff {
                gap_and_diameter(&eig.values, d).map_err(|e| e.at(s_mid))?;
                let n_dim = eig.dim();
                // B = P′ restricted to Q ← P, in the eigenbasis
                let hp = self.path.first_derivative(s_mid)?;
                let vp = eig.vectors.columns(0, d).into_owned();
                let vq = eig.vectors.columns(d, n_dim - d).into_owned();
                let xqp = linalg::adj_mul(&vq, &linalg::mul(hp.entries(), &vp));
                let b = CMat::from_fn(n_dim - d, d, |q, p| -xqp[(q, p)] / (eig.values[d + q] - eig.values[p]));
                let conn = || {
                    let mut c = CMat::zeros(n_dim, n_dim);
                    c.view_mut((d, 0), (n_dim - d, d)).copy_from(&b);
                    c.view_mut((0, d), (d, n_dim - d)).copy_from(&(-b.adjoint()));
                    c
                };
                if let Some(w) = st.ad.as_mut() {
                    // K = t_f H + i[P′, P] in the eigenbasis
                    let mut k_e = conn() * I;
                    for (i, &e) in eig.values.iter().enumerate() {
                        k_e[(i, i)] += C64::new(self.t_f * e, 0.0);
                    }
                    let ke = linalg::eigh(&k_e)?;
                    let y = linalg::adj_mul(&eig.vectors, w);
                    let y = apply_phases(&ke, &y, |e| (-I * (h * e)).exp());
                    *w = linalg::mul(&eig.vectors, &y);
                }
                if let Some(w) = st.eff.as_mut() {
                    let y = linalg::adj_mul(&eig.vectors, w);
                    let y = match self.gauge {
                        None => connection_step(&b, &y, h, d)?,
                        Some(gauge) => {
                            let sp = crate::operator_core::split_from(eig.clone(), hm.entries().clone(), d)?;
                            let g = gauge(s_mid, &sp);
                            check_gauge(&g, &sp, s_mid)?;
                            // exp(h(G + C)) through the Hermitian i(G + C)
                            let a = (linalg::to_basis(&g, &eig.vectors) + conn()) * I;
                            let ae = linalg::eigh(&((&a + a.adjoint()).scale(0.5)))?;
                            apply_phases(&ae, &y, |e| (-I * (h * e)).exp())
                        }
                    };
                    *w = linalg::mul(&eig.vectors, &y);
                }
            }
            if let (Some(u), Some(prev)) = (st.u.as_mut(), heff_prev.as_mut()) {
                let hn = self.path.hamiltonian(s_next)?;
                let next = h_eff(hn.entries(), st.eff.as_ref().unwrap());
                let avg = (&*prev + &next).scale(0.5);
                let e = linalg::eigh(&avg)?;
                let tf = self.t_f;
                *u = apply_phases(&e, u, |x| (-I * (h * tf * x)).exp());
                *prev = next;
            }
            if (k + 1) % self.every == 0 {
                out.push(st.snapshot(s_next));
            }
        }
        Ok(out)
    }
}

fn diff(a: &Option<CMat>, b: &Option<CMat>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => linalg::op_norm(&(a - b)),
        _ => 0.0,
    }
}

/// ‖Q(s) W‖ given the low eigenvectors at s.
fn outside(w: &CMat, low: &CMat) -> f64 {
    let w_p = linalg::mul(low, &linalg::adj_mul(low, w));
    linalg::op_norm(&(w - w_p))
}

/// Runs the joint propagation with step doubling.
pub fn evolve(path: &dyn OperatorPath, t_f: f64, opts: &EvolveOptions, gauge: Option<&Gauge>) -> Result<EvolutionRun> {
    if !(t_f >= 0.0 && t_f.is_finite()) {
        return Err(Error::Validation(format!("t_f = {t_f} must be finite and nonnegative")));
    }
    if !(opts.s_star > 0.0 && opts.s_star <= 1.0) {
        return Err(Error::Validation(format!("s* = {} must lie in (0, 1]", opts.s_star)));
    }
    if opts.checkpoints == 0 || opts.initial_steps % opts.checkpoints != 0 {
        return Err(Error::Validation("checkpoint count must divide the initial step count".into()));
    }
    if gauge.is_some() && !opts.generators.eff {
        return Err(Error::Validation("a gauge only applies to the effective frame".into()));
    }
    let d = path.d();
    let eig0 = eigendecompose(&path.hamiltonian(0.0)?)?;
    gap_and_diameter(&eig0.values, d).map_err(|e| e.at(0.0))?;
    let v0 = phase_fixed_low(&eig0, d);
    let start = match opts.columns {
        Columns::Low => v0.clone(),
        Columns::Full => linalg::identity(path.dim()),
    };
    let carry_u = opts.generators.eff && gauge.is_none() && opts.columns == Columns::Low;

    // low eigenvectors at the checkpoints, for intertwining residuals
    let checkpoint_low: Vec<CMat> = if opts.generators.ad || opts.generators.eff {
        (0..=opts.checkpoints)
            .map(|c| {
                let s = opts.s_star * c as f64 / opts.checkpoints as f64;
                let e = eigendecompose(&path.hamiltonian(s)?)?;
                Ok(e.vectors.columns(0, d).into_owned())
            })
            .collect::<Result<_>>()?
    } else {
        vec![]
    };
    let residual = |cps: &[Checkpoint], pick: fn(&Checkpoint) -> &Option<CMat>| -> Option<f64> {
        if checkpoint_low.is_empty() {
            return None;
        }
        let mut worst: Option<f64> = None;
        for (cp, low) in cps.iter().zip(&checkpoint_low) {
            if let Some(w) = pick(cp) {
                let w = if opts.columns == Columns::Full { linalg::mul(w, &v0) } else { w.clone() };
                worst = Some(worst.unwrap_or(0.0).max(outside(&w, low)));
            }
        }
        worst
    };

    let mut n = opts.initial_steps;
    let mut levels = Vec::new();
    let mut prev: Option<Vec<Checkpoint>> = None;
    loop {
        let sweep = Sweep {
            path,
            t_f,
            s_star: opts.s_star,
            d,
            start: start.clone(),
            gens: opts.generators,
            gauge,
            carry_u,
            every: n / opts.checkpoints,
        };
        let cps = sweep.run(n)?;
        let delta = prev.as_ref().map(|p| {
            p.iter().zip(&cps).fold(0.0_f64, |m, (a, b)| {
                m.max(diff(&a.tot, &b.tot)).max(diff(&a.ad, &b.ad)).max(diff(&a.eff, &b.eff)).max(diff(&a.u, &b.u))
            })
        });
        levels.push(LevelStats {
            steps: n,
            delta,
            intertwining_ad: residual(&cps, |c| &c.ad),
            intertwining_eff: residual(&cps, |c| &c.eff),
        });
        if let Some(dl) = delta {
            if dl < opts.tol {
                return Ok(EvolutionRun {
                    label: path.label(),
                    t_f,
                    s_star: opts.s_star,
                    d,
                    start,
                    v0,
                    checkpoints: cps,
                    levels,
                    gauge: gauge.is_some(),
                });
            }
        }
        if 2 * n > opts.max_steps {
            let k = levels.len();
            let last = levels[k - 1].delta.unwrap_or(f64::NAN);
            let before = if k >= 2 { levels[k - 2].delta.unwrap_or(f64::NAN) } else { f64::NAN };
            return Err(Error::StepControl { steps: n, last_deltas: (before, last) });
        }
        prev = Some(cps);
        n *= 2;
    }
}

/// Exact evolution only.
pub fn propagate_tot(path: &dyn OperatorPath, t_f: f64, opts: &EvolveOptions) -> Result<EvolutionRun> {
    evolve(path, t_f, &EvolveOptions { generators: Generators::TOT, ..opts.clone() }, None)
}

/// Intertwined evolution only.
pub fn propagate_ad(path: &dyn OperatorPath, t_f: f64, opts: &EvolveOptions) -> Result<EvolutionRun> {
    evolve(path, t_f, &EvolveOptions { generators: Generators::AD, ..opts.clone() }, None)
}

/// Effective-frame basis change with gauge `g` (None for G = 0). t_f only
/// enters through u.
pub fn propagate_eff(path: &dyn OperatorPath, t_f: f64, opts: &EvolveOptions, g: Option<&Gauge>) -> Result<EvolutionRun> {
    evolve(path, t_f, &EvolveOptions { generators: Generators::EFF, ..opts.clone() }, g)
}

/// H_eff(s) = V(s) H(s) V(s)† at every checkpoint (G = 0 frame).
pub fn effective_hamiltonians(path: &dyn OperatorPath, run: &EvolutionRun) -> Result<Vec<(f64, CMat)>> {
    if run.gauge {
        return Err(Error::WrongVariant("effective Hamiltonian needs the G = 0 frame".into()));
    }
    run.checkpoints
        .iter()
        .map(|cp| {
            let w = cp.eff.as_ref().ok_or_else(|| Error::WrongVariant("run carried no effective frame".into()))?;
            let w = low_columns(run, w);
            Ok((cp.s, h_eff(path.hamiltonian(cp.s)?.entries(), &w)))
        })
        .collect()
}

fn low_columns(run: &EvolutionRun, w: &CMat) -> CMat {
    if run.start.ncols() == run.d {
        w.clone()
    } else {
        linalg::mul(w, &run.v0)
    }
}

/// Probe state and observable for the state-level diagnostics.
#[derive(Clone, Debug)]
pub struct Probe {
    /// Normalized, inside the span of V₀.
    pub phi: DVector<C64>,
    /// Hermitian, unit operator norm.
    pub observable: CMat,
}

impl Probe {
    /// Ground state of H(0) and a seeded random unit-norm observable.
    pub fn default_for(run: &EvolutionRun, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = linalg::random::hermitian(run.v0.nrows(), &mut rng);
        let n = linalg::op_norm(&o);
        Self { phi: run.v0.column(0).into_owned(), observable: o.scale(1.0 / n) }
    }
}

/// Every quantity compared at s*.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionReport {
    pub t_f: f64,
    pub s_star: f64,
    pub steps: usize,
    pub step_delta: f64,
    /// ‖(U_ad − U_tot)P₀‖
    pub diff_norm: f64,
    /// ‖x‖ = ‖P₀U_ad†U_tot − P₀‖, from the Gram form √‖2 − M − M†‖
    pub x_norm: f64,
    /// ‖U_tot P₀ U_tot† − U_ad P₀ U_ad†‖
    pub jrs_quantity: f64,
    pub state_diff: f64,
    pub leakage: f64,
    pub observable_error: f64,
    /// max over checkpoints of ‖Q(s)U_ad P₀‖
    pub intertwining_ad: f64,
    /// max over checkpoints of ‖Q(s)U_eff P₀‖
    pub intertwining_eff: f64,
    /// ‖u − V U_tot V₀†‖ at s*
    pub effective_residual: f64,
    /// max over checkpoints of |eig H_eff − lowest eig H|
    pub heff_spectrum_error: f64,
    /// worst ‖W†W − I‖ at s*
    pub unitarity_defect: f64,
}

impl EvolutionReport {
    pub const CSV_HEADER: [&'static str; 15] = [
        "t_f",
        "s_star",
        "steps",
        "step_delta",
        "diff_norm",
        "x_norm",
        "jrs_quantity",
        "state_diff",
        "leakage",
        "observable_error",
        "intertwining_ad",
        "intertwining_eff",
        "effective_residual",
        "heff_spectrum_error",
        "unitarity_defect",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.12e}");
        vec![
            f(self.t_f),
            f(self.s_star),
            self.steps.to_string(),
            f(self.step_delta),
            f(self.diff_norm),
            f(self.x_norm),
            f(self.jrs_quantity),
            f(self.state_diff),
            f(self.leakage),
            f(self.observable_error),
            f(self.intertwining_ad),
            f(self.intertwining_eff),
            f(self.effective_residual),
            f(self.heff_spectrum_error),
            f(self.unitarity_defect),
        ]
    }
}

/// Computes the diagnostics of a run that carried all three generators.
pub fn diagnostics(path: &dyn OperatorPath, run: &EvolutionRun, probe: &Probe) -> Result<EvolutionReport> {
    let last = run.last();
    let (Some(wt), Some(wa), Some(we)) = (&last.tot, &last.ad, &last.eff) else {
        return Err(Error::WrongVariant("diagnostics need the tot, ad and eff generators".into()));
    };
    let v0 = &run.v0;
    let n = v0.nrows();
    if probe.phi.len() != n || probe.observable.nrows() != n || probe.observable.ncols() != n {
        return Err(Error::Validation("probe dimensions do not match the path".into()));
    }
    let phi = CMat::from_column_slice(n, 1, probe.phi.as_slice());
    let norm = phi.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Validation(format!("probe state has norm {norm}")));
    }
    let coef = linalg::adj_mul(v0, &phi);
    if (linalg::mul(v0, &coef) - &phi).norm() > 1e-10 {
        return Err(Error::Validation("probe state leaves the initial low-energy subspace".into()));
    }
    let (wt, wa, we) = (low_columns(run, wt), low_columns(run, wa), low_columns(run, we));

    let diff_norm = linalg::op_norm(&(&wa - &wt));
    let m = linalg::adj_mul(&wa, &wt);
    let gram = linalg::identity(run.d).scale(2.0) - &m - m.adjoint();
    let x_norm = linalg::hermitian_norm(&gram)?.sqrt();
    let jrs_quantity = linalg::op_norm(&(linalg::mul_adj(&wt, &wt) - linalg::mul_adj(&wa, &wa)));

    let psi_t = linalg::mul(&wt, &coef);
    let psi_a = linalg::mul(&wa, &coef);
    let state_diff = (&psi_a - &psi_t).norm();
    let eig_end = eigendecompose(&path.hamiltonian(run.s_star)?)?;
    let low_end = eig_end.vectors.columns(0, run.d).into_owned();
    let leakage = outside(&psi_t, &low_end).powi(2);
    let expect = |psi: &CMat| linalg::adj_mul(psi, &linalg::mul(&probe.observable, psi))[(0, 0)].re;
    let observable_error = (expect(&psi_t) - expect(&psi_a)).abs();

    let lvl = run.levels.last().unwrap();
    let effective_residual = match &last.u {
        Some(u) => linalg::op_norm(&(u - linalg::adj_mul(&we, &wt))),
        None => f64::NAN,
    };
    let mut heff_spectrum_error: f64 = 0.0;
    for (s, he) in effective_hamiltonians(path, run)? {
        let ev = linalg::eigh(&he)?.values;
        let full = eigendecompose(&path.hamiltonian(s)?)?.values;
        for (a, b) in ev.iter().zip(&full) {
            heff_spectrum_error = heff_spectrum_error.max((a - b).abs());
        }
    }
    let unitarity_defect = [&last.tot, &last.ad, &last.eff]
        .iter()
        .filter_map(|w| w.as_ref())
        .map(linalg::isometry_defect)
        .fold(0.0, f64::max);
    Ok(EvolutionReport {
        t_f: run.t_f,
        s_star: run.s_star,
        steps: run.steps(),
        step_delta: run.step_delta(),
        diff_norm,
        x_norm,
        jrs_quantity,
        state_diff,
        leakage,
        observable_error,
        intertwining_ad: lvl.intertwining_ad.unwrap_or(f64::NAN),
        intertwining_eff: lvl.intertwining_eff.unwrap_or(f64::NAN),
        effective_residual,
        heff_spectrum_error,
        unitarity_defect,
    })
}

/// ‖d/ds O_eff‖ at the final checkpoint for a constant observable O,
/// from the propagated frame: O_eff′ = V [O, G + [P′, P]] V†.
pub fn observable_rate(
    path: &dyn OperatorPath,
    run: &EvolutionRun,
    observable: &CMat,
    gauge: Option<&Gauge>,
) -> Result<f64> {
    let w = run.last().eff.as_ref().ok_or_else(|| Error::WrongVariant("run carried no effective frame".into()))?;
    let w = low_columns(run, w);
    let s = run.s_star;
    let h = path.hamiltonian(s)?;
    let sp = crate::operator_core::split(&h, run.d)?;
    let pprime = crate::operator_core::projector_derivative(&path.first_derivative(s)?, &sp)?;
    let mut gen = linalg::mul(&pprime, &sp.p) - linalg::mul(&sp.p, &pprime);
    if let Some(g) = gauge {
        let gm = g(s, &sp);
        check_gauge(&gm, &sp, s)?;
        gen += gm;
    }
    let comm = linalg::mul(observable, &gen) - linalg::mul(&gen, observable);
    Ok(linalg::op_norm(&linalg::adj_mul(&w, &linalg::mul(&comm, &w))))
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{two_level, FnPath};

    fn const_z() -> FnPath {
        FnPath::new("Z", 2, 1, |_| linalg::diag_real(&[1.0, -1.0]))
            .with_derivatives(|_| CMat::zeros(2, 2), |_| CMat::zeros(2, 2))
    }

    #[test]
    fn constant_z_gives_minus_identity() {
        let opts = EvolveOptions { columns: Columns::Full, ..Default::default() };
        let run = propagate_tot(&const_z(), std::f64::consts::PI, &opts).unwrap();
        let u = run.last().tot.clone().unwrap();
        assert!(linalg::max_abs(&(u + linalg::identity(2))) < 1e-12);
    }

    #[test]
    fn zero_time_is_identity() {
        let opts = EvolveOptions { columns: Columns::Full, ..Default::default() };
        let run = propagate_tot(&two_level(1.0), 0.0, &opts).unwrap();
        for cp in &run.checkpoints {
            assert!(linalg::max_abs(&(cp.tot.clone().unwrap() - linalg::identity(2))) < 1e-14);
        }
    }

    #[test]
    fn constant_path_diagnostics_vanish() {
        let run = evolve(&const_z(), 3.0, &EvolveOptions::default(), None).unwrap();
        let rep = diagnostics(&const_z(), &run, &Probe::default_for(&run, 1)).unwrap();
        assert!(rep.diff_norm < 1e-14 && rep.leakage < 1e-28 && rep.effective_residual < 1e-13);
        let eff = run.last().eff.clone().unwrap();
        assert!(linalg::max_abs(&(eff - &run.v0)) < 1e-15);
    }

    #[test]
    fn connection_step_matches_dense_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d, h) = (6, 2, 0.3);
        let b = linalg::random::complex(n - d, d, &mut rng);
        let y = linalg::random::complex(n, 3, &mut rng);
        let mut m = CMat::zeros(n, n);
        m.view_mut((d, 0), (n - d, d)).copy_from(&b);
        m.view_mut((0, d), (d, n - d)).copy_from(&(-b.adjoint()));
        let dense = herm_fn(&(m.clone() * I), |e| (-I * (h * e)).exp()).unwrap();
        let want = linalg::mul(&dense, &y);
        let got = connection_step(&b, &y, h, d).unwrap();
        assert!(linalg::max_abs(&(want - got)) < 1e-12);
    }

    #[test]
    fn non_block_diagonal_gauge_rejected() {
        let g = |_: f64, sp: &SpectralSplit| CMat::from_fn(sp.dim(), sp.dim(), |i, j| if i != j { C64::new(1.0, 0.0) * if i < j { 1.0 } else { -1.0 } } else { C64::new(0.0, 0.0) });
        let err = propagate_eff(&two_level(1.0), 1.0, &EvolveOptions::default(), Some(&g)).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 / v).collect();
        assert!((loglog_slope(&x, &y) + 1.0).abs() < 1e-12);
    }
}
