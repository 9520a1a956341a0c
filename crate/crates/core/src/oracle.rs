//! Brute-force leakage out of the ground state of a single harmonic well
//! E_C n̂² + E_J b(s) φ̂²/2 whose curvature follows the barrier schedule.
//!
//! In the instantaneous number basis the amplitudes obey
//! c′ = κ (a†² − a²) c − i t_f ω(s) m̂ c with κ = r b′/b. The integration runs
//! in u = −ln(1 − s + δ_B), where e^{−u} = g(b) makes b(u) smooth all the way
//! to s = 1, and in the interaction picture of the fast phase, so the step
//! size follows the schedule rather than t_f.

use std::io::Write;

use nalgebra::DVector;

use crate::circuits::harmonic_frequency;
use crate::error::{Error, Result};
use crate::evolution::{propagate_tot, EvolveOptions};
use crate::linalg::{self, CMat, C64, I};
use crate::operator_core::eigendecompose;
use crate::paths::{LogTime, OperatorPath, WellPath};
use crate::schedule::{barrier_ratio, bisect_decreasing, AnnealParams, DerivativeMode};

/// Coefficient r in the generator r (b′/b)(a†² − a²).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DilationRate {
    /// r = 1/8. The ground-state width scales as b^{−1/4}, so this is the
    /// rate at which the instantaneous eigenstates actually move; it matches
    /// finite differences of the discretized well eigenstates.
    Exact,
    /// r = 1/4, from the dilation e^{−i ln b (n̂φ̂ + φ̂n̂)/4}, which rescales
    /// φ by √b instead of b^{1/4}.
    Dilation,
}

impl DilationRate {
    pub fn coefficient(self) -> f64 {
        match self {
            DilationRate::Exact => 0.125,
            DilationRate::Dilation => 0.25,
        }
    }
}

/// a†² − a² on the number states 0..=m_max.
pub fn squeeze(m_max: usize) -> CMat {
    let n = m_max + 1;
    let mut m = CMat::zeros(n, n);
    for k in 0..n.saturating_sub(2) {
        let v = (((k + 1) * (k + 2)) as f64).sqrt();
        m[(k + 2, k)] = C64::new(v, 0.0);
        m[(k, k + 2)] = C64::new(-v, 0.0);
    }
    m
}

/// r (b′/b)(a†² − a²) in the s = 0 number basis.
pub fn dilation_generator(b: f64, b_prime: f64, m_max: usize, rate: DilationRate) -> Result<CMat> {
    // b(0) sits a relative O(δ_B/𝒜) below 1, so only positivity is required
    if !(b > 0.0 && b.is_finite() && b_prime.is_finite()) {
        return Err(Error::Validation(format!("dilation needs b > 0 and finite b′, got b = {b}, b′ = {b_prime}")));
    }
    Ok(squeeze(m_max).scale(rate.coefficient() * b_prime / b))
}

#[derive(Clone, Debug)]
pub struct LeakageOptions {
    pub m_max: usize,
    pub rate: DilationRate,
    /// Relative change of the profile between step levels.
    pub tol: f64,
    pub initial_steps: usize,
    pub max_steps: usize,
    pub profile_points: usize,
    /// Repeat at m_max + 4 and flag a relative change above 2%.
    pub check_cutoff: bool,
}

impl Default for LeakageOptions {
    fn default() -> Self {
        Self {
            m_max: 16,
            rate: DilationRate::Exact,
            tol: 1e-4,
            initial_steps: 1024,
            max_steps: 1 << 21,
            profile_points: 16,
            check_cutoff: true,
        }
    }
}

/// Relative change tolerated under m_max → m_max + 4.
pub const CUTOFF_TOL: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfilePoint {
    pub s: f64,
    pub delta_c: f64,
}

#[derive(Clone, Debug)]
pub struct LeakageReport {
    pub t_f: f64,
    pub m_max: usize,
    pub rate: DilationRate,
    /// Norm of the excited amplitudes at s = 1.
    pub delta_c: f64,
    pub profile: Vec<ProfilePoint>,
    pub steps: usize,
    pub step_delta: f64,
    pub norm_error: f64,
    /// Relative change at m_max + 4, when checked.
    pub cutoff_change: Option<f64>,
    /// Well frequency √(2 E_C E_J b) at both ends (2√(αβ) rule).
    pub omega_start: f64,
    pub omega_end: f64,
}

impl LeakageReport {
    pub fn flagged(&self) -> bool {
        self.cutoff_change.is_some_and(|c| !(c < CUTOFF_TOL))
    }
}

/// Coupling κ(u) and phase rate R(u) of the rotating-frame equation
/// d′ = κ e^{iΦm̂}(a†² − a²)e^{−iΦm̂} d, Φ′ = R, on [u0, u1].
pub trait RotatingProblem {
    fn span(&self) -> (f64, f64);
    fn coefficients(&self, u: f64) -> Result<(f64, f64)>;
    /// s at u, for the profile.
    fn s_at(&self, u: f64) -> f64;
}

struct WellSchedule {
    a: f64,
    b_final: f64,
    delta_b: f64,
    t_f: f64,
    e_c: f64,
    e_j: f64,
    rate: f64,
}

impl WellSchedule {
    fn new(p: &AnnealParams, t_f: f64, rate: DilationRate) -> Self {
        Self {
            a: p.a,
            b_final: p.b_final,
            delta_b: p.delta_b(),
            t_f,
            e_c: p.e_c,
            e_j: p.e_j(),
            rate: rate.coefficient(),
        }
    }

    fn barrier(&self, u: f64) -> Result<f64> {
        let target = (-u).exp();
        let g = |b: f64| barrier_ratio(b, self.a);
        let (lo, hi) = (1.0 - 1.0 / self.a, self.b_final);
        if !(g(lo) >= target && g(hi) <= target * (1.0 + 1e-12)) {
            return Err(Error::ScheduleInfeasible { target, g_low: g(lo), g_high: g(hi) });
        }
        Ok(bisect_decreasing(g, target, lo, hi))
    }

    fn omega(&self, b: f64) -> f64 {
        harmonic_frequency(self.e_c, 0.5 * self.e_j * b)
    }
}

impl RotatingProblem for WellSchedule {
    fn span(&self) -> (f64, f64) {
        (-(1.0 + self.delta_b).ln(), -self.delta_b.ln())
    }
    fn coefficients(&self, u: f64) -> Result<(f64, f64)> {
        let b = self.barrier(u)?;
        // g(b) = e^{−u} gives db/du = −g/g′ = −1/(ln g)′
        let dlng = 0.75 / b - self.a / (2.0 * b.sqrt());
        let db_du = -1.0 / dlng;
        Ok((self.rate * db_du / b, self.t_f * self.omega(b) * (-u).exp()))
    }
    fn s_at(&self, u: f64) -> f64 {
        (1.0 + self.delta_b - (-u).exp()).clamp(0.0, 1.0)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// One pass with n uniform steps in u. Each step applies exp(Ω), Ω the
/// first Magnus term with the phase linearized about the midpoint, whose
/// integral over the step is exact: h·sinc(k R h/2)·e^{ikΦ_mid}.
fn sweep(problem: &dyn RotatingProblem, m_max: usize, n: usize, profile_points: usize) -> Result<(DVector<C64>, Vec<ProfilePoint>)> {
    let (u0, u1) = problem.span();
    let h = (u1 - u0) / n as f64;
    let dim = m_max + 1;
    let a2 = squeeze(m_max);
    let every = n / profile_points;
    let mut d = DVector::<C64>::zeros(dim);
    d[0] = C64::new(1.0, 0.0);
    let excited = |d: &DVector<C64>| d.rows(1, dim - 1).norm();
    let mut profile = vec![ProfilePoint { s: problem.s_at(u0), delta_c: 0.0 }];
    let mut phi = 0.0;
    let (_, mut r_left) = problem.coefficients(u0)?;
    for j in 0..n {
        let ul = u0 + j as f64 * h;
        let (kappa, r_mid) = problem.coefficients(ul + 0.5 * h)?;
        let (_, r_right) = problem.coefficients(ul + h)?;
        // quadratic interpolation of R through the three nodes
        let phi_mid = phi + h * (5.0 * r_left + 8.0 * r_mid - r_right) / 24.0;
        let mut omega = CMat::zeros(dim, dim);
        if kappa != 0.0 {
            for k in 0..dim {
                for l in 0..dim {
                    let v = a2[(k, l)];
                    if v.re == 0.0 {
                        continue;
                    }
                    let dk = k as f64 - l as f64;
                    let w = kappa * h * sinc(0.5 * dk * r_mid * h);
                    omega[(k, l)] = v * w * (I * (dk * phi_mid)).exp();
                }
            }
        }
        d = omega.exp() * d;
        phi += h * (r_left + 4.0 * r_mid + r_right) / 6.0;
        r_left = r_right;
        if (j + 1) % every == 0 {
            profile.push(ProfilePoint { s: problem.s_at(ul + h), delta_c: excited(&d) });
        }
    }
    Ok((d, profile))
}

/// Integrates a rotating problem with step doubling.
pub fn integrate(problem: &dyn RotatingProblem, opts: &LeakageOptions, m_max: usize) -> Result<(DVector<C64>, Vec<ProfilePoint>, usize, f64)> {
    if m_max < 8 {
        return Err(Error::Validation(format!("m_max = {m_max} must be at least 8")));
    }
    if opts.profile_points == 0 || opts.initial_steps % opts.profile_points != 0 {
        return Err(Error::Validation("profile point count must divide the initial step count".into()));
    }
    let mut n = opts.initial_steps;
    let mut prev: Option<Vec<ProfilePoint>> = None;
    let mut last_delta = f64::NAN;
    loop {
        let (d, profile) = sweep(problem, m_max, n, opts.profile_points)?;
        if let Some(p) = &prev {
            let scale = profile.iter().map(|x| x.delta_c).fold(0.0, f64::max).max(1e-300);
            let change = p.iter().zip(&profile).map(|(a, b)| (a.delta_c - b.delta_c).abs()).fold(0.0, f64::max);
            let before = last_delta;
            last_delta = change / scale;
            if last_delta < opts.tol || scale == 1e-300 {
                return Ok((d, profile, n, last_delta));
            }
            if 2 * n > opts.max_steps {
                return Err(Error::StepControl { steps: n, last_deltas: (before, last_delta) });
            }
        }
        prev = Some(profile);
        n *= 2;
    }
}

/// ‖δc‖ at s = 1 and its profile over s for the well following `params`.
pub fn brute_force_leakage(params: &AnnealParams, t_f: f64, opts: &LeakageOptions) -> Result<LeakageReport> {
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(Error::Validation(format!("t_f = {t_f} must be positive and finite")));
    }
    let problem = WellSchedule::new(params, t_f, opts.rate);
    let (d, profile, steps, step_delta) = integrate(&problem, opts, opts.m_max)?;
    let delta_c = d.rows(1, d.len() - 1).norm();
    let norm_error = (d.norm() - 1.0).abs();
    if norm_error > 1e-8 {
        return Err(Error::Numerical(format!("oracle norm drifted by {norm_error:e}")));
    }
    let cutoff_change = if opts.check_cutoff {
        let (d2, ..) = integrate(&problem, opts, opts.m_max + 4)?;
        let other = d2.rows(1, d2.len() - 1).norm();
        Some((other - delta_c).abs() / other.max(1e-300))
    } else {
        None
    };
    let (u0, u1) = problem.span();
    Ok(LeakageReport {
        t_f,
        m_max: opts.m_max,
        rate: opts.rate,
        delta_c,
        profile,
        steps,
        step_delta,
        norm_error,
        cutoff_change,
        omega_start: problem.omega(problem.barrier(u0)?),
        omega_end: problem.omega(problem.barrier(u1)?),
    })
}

/// Closed-form trend and the two terms of the integral behind it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeakageScaling {
    /// e^{𝒜(√ℬ−1)}/(𝒜²ℬ^{7/4})
    pub trend: f64,
    /// 2e^{𝒜(√ℬ−1)}/(𝒜ℬ^{7/4}) and e^{𝒜(√ℬ−1)}/(𝒜²ℬ^{9/4}), the asymptotic forms.
    pub leading_asymptotic: f64,
    pub subleading_asymptotic: f64,
    /// The boundary term [b′/b^{3/2}] from s = 0 to 1 and the integral
    /// ∫ b′²/(2b^{5/2}) ds, both evaluated with the leading-order b′.
    pub leading: f64,
    pub subleading: f64,
}

impl LeakageScaling {
    pub fn ratio(&self) -> f64 {
        self.leading / self.subleading
    }
}

pub fn leakage_scaling(params: &AnnealParams) -> Result<LeakageScaling> {
    let (a, bf) = (params.a, params.b_final);
    if !(a >= 8.0) {
        return Err(Error::Validation(format!("A = {a} must be at least 8")));
    }
    let e = (a * (bf.sqrt() - 1.0)).exp();
    // with b′ = (2/(𝒜 b^{1/4})) e^{𝒜(√b−1)}
    let boundary = |b: f64| 2.0 / (a * b.powf(1.75)) * (a * (b.sqrt() - 1.0)).exp();
    // ∫₁^ℬ e^{𝒜(√b−1)}/(𝒜 b^{11/4}) db with b = x², Simpson in x
    let n = 4000;
    let (x0, x1) = (1.0, bf.sqrt());
    let hx = (x1 - x0) / n as f64;
    let f = |x: f64| 2.0 * x * (a * (x - 1.0) - 5.5 * x.ln()).exp() / a;
    let mut sum = f(x0) + f(x1);
    for k in 1..n {
        sum += f(x0 + k as f64 * hx) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    Ok(LeakageScaling {
        trend: e / (a * a * bf.powf(1.75)),
        leading_asymptotic: 2.0 * e / (a * bf.powf(1.75)),
        subleading_asymptotic: e / (a * a * bf.powf(2.25)),
        leading: boundary(bf) - boundary(1.0),
        subleading: sum * hx / 3.0,
    })
}

/// ‖Q(1) U |0⟩‖ from the full propagator of the discretized well, run in
/// log time so the final approach is resolved.
pub fn propagator_leakage(params: &AnnealParams, t_f: f64, grid_points: usize, tol: f64) -> Result<f64> {
    let well = WellPath::new(params.clone(), grid_points, DerivativeMode::ExactImplicit);
    let path = LogTime::new(well, params.delta_b())?;
    let opts = EvolveOptions { tol, ..Default::default() };
    let run = propagate_tot(&path, t_f, &opts)?;
    let psi = run.last().tot.clone().ok_or_else(|| Error::Numerical("propagator carried no columns".into()))?;
    let end = eigendecompose(&path.hamiltonian(1.0)?)?;
    let ground = end.vectors.columns(0, 1).into_owned();
    let overlap = linalg::adj_mul(&ground, &psi)[(0, 0)];
    Ok((1.0 - overlap.norm_sqr()).max(0.0).sqrt())
}

/// One row of an oracle sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub a: f64,
    pub b: f64,
    pub t_f: f64,
    pub m_max: usize,
    pub delta_c: f64,
    /// ‖δc‖ t_f E_C over the trend e^{𝒜(√ℬ−1)}/(𝒜²ℬ^{7/4}).
    pub scaled_constant: f64,
}

impl OracleRow {
    pub fn new(params: &AnnealParams, report: &LeakageReport) -> Result<Self> {
        let trend = leakage_scaling(params)?.trend;
        Ok(Self {
            a: params.a,
            b: params.b_final,
            t_f: report.t_f,
            m_max: report.m_max,
            delta_c: report.delta_c,
            scaled_constant: report.delta_c * report.t_f * params.e_c / trend,
        })
    }

    pub const CSV_HEADER: [&'static str; 6] = ["A", "B", "t_f", "m_max", "delta_c_norm", "scaled_constant"];

    pub fn csv_record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.12e}");
        vec![f(self.a), f(self.b), f(self.t_f), self.m_max.to_string(), f(self.delta_c), f(self.scaled_constant)]
    }
}

pub fn write_csv<W: Write>(rows: &[OracleRow], w: W) -> Result<()> {
    let io = |e: csv::Error| Error::Numerical(format!("writing oracle CSV: {e}"));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(OracleRow::CSV_HEADER).map_err(io)?;
    for r in rows {
        out.write_record(r.csv_record()).map_err(io)?;
    }
    out.flush().map_err(|e| Error::Numerical(format!("writing oracle CSV: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_examples() {
        assert_eq!(linalg::max_abs(&dilation_generator(2.0, 0.0, 10, DilationRate::Dilation).unwrap()), 0.0);
        let g = dilation_generator(2.0, 0.6, 10, DilationRate::Dilation).unwrap();
        assert!(linalg::max_abs(&(&g + g.adjoint())) == 0.0);
        assert!((g[(2, 0)].re - 0.6 / 8.0 * 2f64.sqrt()).abs() < 1e-15);
        let e = dilation_generator(2.0, 0.6, 10, DilationRate::Exact).unwrap();
        assert!((e[(2, 0)].re - 0.5 * g[(2, 0)].re).abs() < 1e-15);
    }

    /// ⟨2|∂_s 0⟩ of the discretized well from central differences of its
    /// ground state against the generator.
    #[test]
    fn exact_rate_matches_well_eigenstates() {
        let p = AnnealParams::new(10.0, 3.0, 1.0).unwrap();
        let well = WellPath::new(p.clone(), 300, DerivativeMode::ExactImplicit);
        let (s, h) = (0.5, 1e-4);
        let vec_at = |s: f64| {
            let e = eigendecompose(&well.hamiltonian(s).unwrap()).unwrap();
            let mut v = e.vectors.columns(0, 3).into_owned();
            for mut c in v.column_iter_mut() {
                // fix the sign by the largest component
                let big = c.iter().copied().fold(C64::new(0.0, 0.0), |m, z| if z.norm() > m.norm() { z } else { m });
                c *= big.conj() / big.norm();
            }
            v
        };
        let (vm, vp, v0) = (vec_at(s - h), vec_at(s + h), vec_at(s));
        let dpsi = (vp.column(0) - vm.column(0)) / C64::new(2.0 * h, 0.0);
        let amp = (v0.column(2).adjoint() * dpsi)[(0, 0)].norm();
        let b = crate::schedule::solve_b(s, &p).unwrap();
        let b1 = crate::schedule::derivatives(s, b, &p, DerivativeMode::ExactImplicit).b1;
        let gen = dilation_generator(b, b1, 10, DilationRate::Exact).unwrap();
        assert!((amp / gen[(2, 0)].re.abs() - 1.0).abs() < 1e-2, "{amp} vs {}", gen[(2, 0)].re);
    }

    struct Frozen;
    impl RotatingProblem for Frozen {
        fn span(&self) -> (f64, f64) {
            (0.0, 1.0)
        }
        fn coefficients(&self, _: f64) -> Result<(f64, f64)> {
            Ok((0.0, 5.0))
        }
        fn s_at(&self, u: f64) -> f64 {
            u
        }
    }

    #[test]
    fn frozen_schedule_does_not_leak() {
        let (d, ..) = integrate(&Frozen, &LeakageOptions::default(), 10).unwrap();
        assert_eq!(d.rows(1, 10).norm(), 0.0);
    }

    /// Constant κ and R: the three-level truncation has a closed form via
    /// the dense exponential of the rotating-frame Hamiltonian.
    struct Constant;
    impl RotatingProblem for Constant {
        fn span(&self) -> (f64, f64) {
            (0.0, 2.0)
        }
        fn coefficients(&self, _: f64) -> Result<(f64, f64)> {
            Ok((0.05, 3.0))
        }
        fn s_at(&self, u: f64) -> f64 {
            u / 2.0
        }
    }

    #[test]
    fn constant_coefficients_match_dense_exponential() {
        let m = 12;
        let opts = LeakageOptions { tol: 1e-7, ..Default::default() };
        let (d, ..) = integrate(&Constant, &opts, m).unwrap();
        // lab frame: c(2) = exp(2(κA − iR m̂)) e₀, then back to the rotating frame
        let mut gen = squeeze(m).scale(0.05);
        for k in 0..=m {
            gen[(k, k)] -= I * (3.0 * k as f64);
        }
        let mut e0 = DVector::<C64>::zeros(m + 1);
        e0[0] = C64::new(1.0, 0.0);
        let c = (gen.scale(2.0)).exp() * e0;
        for k in 0..=m {
            assert!((c[k].norm() - d[k].norm()).abs() < 1e-6, "{k}: {} vs {}", c[k], d[k]);
        }
    }

    #[test]
    fn leakage_scaling_terms() {
        let p = AnnealParams::new(12.0, 4.0, 1.0).unwrap();
        let s = leakage_scaling(&p).unwrap();
        // Laplace expansion of the integral to second order: 𝒜√ℬ/(1 + 9/(2𝒜√ℬ))
        let x = 12.0 * 2.0;
        let expect = x / (1.0 + 4.5 / x);
        assert!((s.ratio() / expect - 1.0).abs() < 0.05, "ratio {}", s.ratio());
        assert!((s.leading_asymptotic / s.subleading_asymptotic - 2.0 * x).abs() < 1e-9);
        let q = leakage_scaling(&AnnealParams::new(12.0, 5.0, 1.0).unwrap()).unwrap();
        assert!(q.trend > s.trend);
    }
}
