//! CSFQ anneal controls: the barrier b(s) and flux f(s) that make the
//! two-level tunneling and bias follow the linear ramp (1 − s)X + sZ.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual target for the barrier root.
pub const ROOT_TOL: f64 = 1e-12;

/// How b′ and b″ are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    /// Leading-order exponential forms, dropping the 3/(4b) term.
    LeadingOrder,
    /// Implicit differentiation of the barrier equation, nothing dropped.
    ExactImplicit,
}

/// Dimensionless anneal parameters. `a` is the barrier-area ratio
/// √(32 E_J / E_C), `b_final` the barrier ratio at s = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealParams {
    pub a: f64,
    pub b_final: f64,
    pub flux_final: f64,
    pub e_c: f64,
}

/// The final flux used unless explicitly overridden.
pub const DEFAULT_FLUX_FINAL: f64 = PI / 3.0;

impl AnnealParams {
    pub fn new(a: f64, b_final: f64, e_c: f64) -> Result<Self> {
        let p = Self { a, b_final, flux_final: DEFAULT_FLUX_FINAL, e_c };
        p.validate()?;
        Ok(p)
    }

    /// (δ, 𝒜) parameterization: the final barrier is the smallest one
    /// reaching residual transverse field δ.
    pub fn from_delta(delta: f64, a: f64, e_c: f64) -> Result<Self> {
        Self::new(a, solve_b0(delta, a)?, e_c)
    }

    /// Replace the final flux. Returns a warning when it approaches π,
    /// where f′(1) diverges.
    pub fn with_flux_override(mut self, flux_final: f64) -> Result<(Self, Option<String>)> {
        if !(flux_final > 0.0 && flux_final <= PI) {
            return Err(Error::Validation(format!("final flux {flux_final} must lie in (0, π]")));
        }
        self.flux_final = flux_final;
        let k = (flux_final / 2.0).sin();
        let warning = (k > 0.99).then(|| {
            format!(
                "final flux {flux_final} is near π: f′(s) = 2k/√(1 − k²s²) reaches {:.3e} at s = 1",
                2.0 * k / (1.0 - k * k).max(0.0).sqrt()
            )
        });
        Ok((self, warning))
    }

    fn validate(&self) -> Result<()> {
        if !(self.a >= 8.0) {
            return Err(Error::Validation(format!("A = {} must be at least 8", self.a)));
        }
        if !(self.b_final > 1.0) || !self.b_final.is_finite() {
            return Err(Error::Validation(format!("final barrier B = {} must exceed 1", self.b_final)));
        }
        if !(self.e_c > 0.0) {
            return Err(Error::Validation(format!("E_C = {} must be positive", self.e_c)));
        }
        if self.delta_b() >= 1.0 {
            return Err(Error::Validation(format!("δ_B = {} is not below 1", self.delta_b())));
        }
        Ok(())
    }

    /// E_J = 𝒜² E_C / 32
    pub fn e_j(&self) -> f64 {
        self.a * self.a * self.e_c / 32.0
    }

    /// Qubit frequency, the tunneling energy at b = 1.
    pub fn omega_q(&self) -> f64 {
        xi(1.0, self)
    }

    /// Bias amplitude chosen so that the final bias equals ω_q; equal to ω_q
    /// at the default final flux.
    pub fn e_alpha(&self) -> f64 {
        self.omega_q() / (2.0 * (self.flux_final / 2.0).sin())
    }

    /// Residual relative transverse field at s = 1.
    pub fn delta_b(&self) -> f64 {
        barrier_ratio(self.b_final, self.a)
    }
}

/// g(b) = b^{3/4} e^{−𝒜(√b − 1)}, the tunneling energy relative to b = 1.
pub fn barrier_ratio(b: f64, a: f64) -> f64 {
    b.powf(0.75) * (-a * (b.sqrt() - 1.0)).exp()
}

/// ξ(b) = E_C √(2/π) (𝒜√b)^{3/2} e^{−𝒜√b}
pub fn xi(b: f64, p: &AnnealParams) -> f64 {
    let x = p.a * b.sqrt();
    p.e_c * (2.0 / PI).sqrt() * x.powf(1.5) * (-x).exp()
}

/// Bias term ζ = 2 E_α sin(f/2).
pub fn zeta(f: f64, p: &AnnealParams) -> f64 {
    2.0 * p.e_alpha() * (f / 2.0).sin()
}

/// f(s) with 2 sin(f/2) / (2 sin(ℱ/2)) = s.
pub fn solve_f(s: f64, p: &AnnealParams) -> f64 {
    let k = (p.flux_final / 2.0).sin();
    2.0 * (k * s).asin()
}

pub(crate) fn bisect_decreasing(g: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    // g decreasing: g(lo) ≥ target ≥ g(hi); run to full precision in b so
    // the root stays sharp where g itself is tiny
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == target || hi - lo <= f64::EPSILON * hi {
            return mid;
        }
        if gm > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Barrier b(s) solving g(b) = 1 − s + δ_B by bisection.
///
/// The right-hand side slightly exceeds g(1) = 1 at s = 0, so the root there
/// sits a relative O(δ_B/𝒜) below 1; the equation is solved as written.
pub fn solve_b(s: f64, p: &AnnealParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Validation(format!("s = {s} outside [0, 1]")));
    }
    let target = 1.0 - s + p.delta_b();
    let g = |b: f64| barrier_ratio(b, p.a);
    let lo = 1.0 - 1.0 / p.a;
    let hi = p.b_final;
    if !(g(lo) >= target && g(hi) <= target) {
        return Err(Error::ScheduleInfeasible { target, g_low: g(1.0), g_high: g(hi) });
    }
    let b = bisect_decreasing(g, target, lo, hi);
    if (g(b) - target).abs() > ROOT_TOL {
        return Err(Error::Numerical(format!(
            "barrier root at s = {s} has residual {:e}",
            (g(b) - target).abs()
        )));
    }
    Ok(b)
}

/// ℬ₀: the barrier ratio at which g(ℬ₀) = δ.
pub fn solve_b0(delta: f64, a: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Validation(format!("δ = {delta} must lie in (0, 1]")));
    }
    if !(a > 1.5) {
        return Err(Error::Validation(format!("A = {a} too small for a monotone barrier ratio")));
    }
    let g = |b: f64| barrier_ratio(b, a);
    let mut hi = 2.0;
    while g(hi) > delta {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::ScheduleInfeasible { target: delta, g_low: g(1.0), g_high: g(hi) });
        }
    }
    Ok(bisect_decreasing(g, delta, 1.0, hi))
}

/// Control derivatives at one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlDerivatives {
    pub f1: f64,
    pub f2: f64,
    pub b1: f64,
    pub b2: f64,
}

pub fn derivatives(s: f64, b: f64, p: &AnnealParams, mode: DerivativeMode) -> ControlDerivatives {
    let k = (p.flux_final / 2.0).sin();
    let w = 1.0 - k * k * s * s;
    let f1 = 2.0 * k / w.sqrt();
    let f2 = 2.0 * k.powi(3) * s / w.powf(1.5);
    let a = p.a;
    let (b1, b2) = match mode {
        DerivativeMode::LeadingOrder => {
            let e = (a * (b.sqrt() - 1.0)).exp();
            (2.0 / (a * b.powf(0.25)) * e, 2.0 / (a * b) * e * e)
        }
        DerivativeMode::ExactImplicit => {
            let g = barrier_ratio(b, a);
            let kk = 0.75 / b - a / (2.0 * b.sqrt());
            let g1 = g * kk;
            let g2 = g * (kk * kk - 0.75 / (b * b) + a / (4.0 * b.powf(1.5)));
            let b1 = -1.0 / g1;
            (b1, -g2 * b1 * b1 / g1)
        }
    };
    ControlDerivatives { f1, f2, b1, b2 }
}

/// Plasma frequency in the E_C 𝒜 √(b/8) convention.
pub fn omega_pl(b: f64, p: &AnnealParams) -> f64 {
    p.e_c * p.a * (b / 8.0).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleRow {
    pub s: f64,
    pub b: f64,
    pub f: f64,
    pub b1: f64,
    pub b2: f64,
    pub f1: f64,
    pub f2: f64,
    pub xi: f64,
    pub zeta: f64,
    pub omega_pl_formula: f64,
    /// Numerical P/Q gap, filled in when a circuit was diagonalized.
    pub omega_pl_exact: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ScheduleGrid {
    pub params: AnnealParams,
    pub mode: DerivativeMode,
    pub rows: Vec<ScheduleRow>,
}

impl ScheduleRow {
    pub fn at(s: f64, p: &AnnealParams, mode: DerivativeMode) -> Result<Self> {
        let b = solve_b(s, p)?;
        let f = solve_f(s, p);
        let d = derivatives(s, b, p, mode);
        Ok(Self {
            s,
            b,
            f,
            b1: d.b1,
            b2: d.b2,
            f1: d.f1,
            f2: d.f2,
            xi: xi(b, p),
            zeta: zeta(f, p),
            omega_pl_formula: omega_pl(b, p),
            omega_pl_exact: None,
        })
    }
}

impl ScheduleGrid {
    pub fn new(p: &AnnealParams, s: &[f64], mode: DerivativeMode) -> Result<Self> {
        if s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("schedule grid must be strictly ascending".into()));
        }
        let rows = s.iter().map(|&s| ScheduleRow::at(s, p, mode)).collect::<Result<_>>()?;
        Ok(Self { params: p.clone(), mode, rows })
    }

    /// n + 1 evenly spaced points on [0, s*].
    pub fn uniform(p: &AnnealParams, s_star: f64, n: usize, mode: DerivativeMode) -> Result<Self> {
        let s: Vec<f64> = (0..=n).map(|k| s_star * k as f64 / n as f64).collect();
        Self::new(p, &s, mode)
    }

    pub const CSV_HEADER: [&'static str; 11] = [
        "s", "b", "f", "b1", "b2", "f1", "f2", "xi", "zeta", "omega_pl_formula", "omega_pl_exact",
    ];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Numerical(format!("writing schedule CSV: {e}"));
        out.write_record(Self::CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            let mut rec: Vec<String> = [r.s, r.b, r.f, r.b1, r.b2, r.f1, r.f2, r.xi, r.zeta, r.omega_pl_formula]
                .iter()
                .map(|x| format!("{x:.12e}"))
                .collect();
            rec.push(r.omega_pl_exact.map(|x| format!("{x:.12e}")).unwrap_or_default());
            out.write_record(&rec).map_err(io)?;
        }
        out.flush().map_err(|e| Error::Numerical(format!("writing schedule CSV: {e}")))?;
        Ok(())
    }
}
