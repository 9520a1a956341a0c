//! Adiabatic timescales θ: the general projected bound, the bounded-H′
//! (JRS) form and its projected refinement, plus the CSFQ closed forms.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator_core::{self, block_norms_eigenbasis, eigendecompose, split_from, verify_ck};
pub use crate::paths::{DerivativeSource, OperatorPath};
use crate::schedule::{self, AnnealParams};

/// Quadrature intervals used unless overridden.
pub const DEFAULT_INTERVALS: usize = 64;
/// Relative change under grid doubling above which a report is flagged.
pub const REFINEMENT_TOL: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct BoundOptions {
    /// Intervals of the coarse trapezoid rule. The report is computed on
    /// twice as many and compared against this one.
    pub intervals: usize,
    /// Run verify_ck at every row.
    pub check_certificates: bool,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self { intervals: DEFAULT_INTERVALS, check_certificates: true }
    }
}

/// Everything needed to rebuild the three integrands at one s.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub s: f64,
    pub delta: f64,
    pub r: f64,
    pub tau: f64,
    /// ‖PH′Q‖
    pub pq: f64,
    /// ‖PH′P‖
    pub pp: f64,
    /// ‖H′‖
    pub hp: f64,
    /// ‖PH″Q‖
    pub hpp_pq: f64,
    /// ‖H″‖
    pub hpp: f64,
    /// √(Σ c_k ‖PH′HᵏQ‖²)
    pub ck_term: f64,
    /// Smallest eigenvalue from verify_ck, when checked.
    pub ck_lambda_min: Option<f64>,
    pub ck_passed: Option<bool>,
}

impl BoundRow {
    fn d32(d: usize) -> f64 {
        (d as f64).powf(1.5)
    }

    pub fn general_boundary(&self) -> f64 {
        self.tau * self.tau * self.pq
    }

    pub fn general_integrand(&self) -> f64 {
        let t = self.tau;
        t.powi(3) * (5.0 * self.pq + 3.0 * self.pp) * self.pq + t * t * self.hpp_pq + 3.0 * t.powi(3) * self.ck_term
    }

    pub fn jrs_boundary(&self, d: usize) -> f64 {
        d as f64 * self.hp / self.delta.powi(2)
    }

    pub fn jrs_integrand(&self, d: usize) -> f64 {
        d as f64 * self.hpp / self.delta.powi(2) + 7.0 * Self::d32(d) * self.hp.powi(2) / self.delta.powi(3)
    }

    pub fn new_boundary(&self, d: usize) -> f64 {
        d as f64 * self.pq / self.delta.powi(2)
    }

    pub fn new_integrand(&self, d: usize) -> f64 {
        d as f64 * self.hpp_pq / self.delta.powi(2)
            + Self::d32(d) * self.pq * (5.0 * self.pq + 3.0 * self.pp + 3.0 * self.hp) / self.delta.powi(3)
    }
}

/// Row for the path at `s`.
pub fn bound_row(path: &dyn OperatorPath, s: f64, check_certificate: bool) -> Result<BoundRow> {
    let h = path.hamiltonian(s)?;
    let hp = path.first_derivative(s)?;
    let hpp = path.second_derivative(s)?;
    let ck = path.certificate(s)?;
    let d = path.d();
    let eig = eigendecompose(&h)?;
    let sp = split_from(eig, h.entries().clone(), d).map_err(|e| e.at(s))?;
    let ks: Vec<u32> = (0..=ck.k_max() as u32).collect();
    let hp_e = linalg::to_basis(hp.entries(), &sp.eigenvectors);
    let hpp_e = linalg::to_basis(hpp.entries(), &sp.eigenvectors);
    let n1 = block_norms_eigenbasis(&hp_e, &sp.eigenvalues, d, &ks);
    let n2 = block_norms_eigenbasis(&hpp_e, &sp.eigenvalues, d, &[]);
    let ck_term = ck
        .coefficients()
        .iter()
        .zip(&n1.pq_powers)
        .map(|(c, (_, norm))| c * norm * norm)
        .sum::<f64>()
        .sqrt();
    let (lambda, passed) = if check_certificate {
        let rep = verify_ck(&h, &hp, &ck, None)?;
        (Some(rep.lambda_min), Some(rep.passed))
    } else {
        (None, None)
    };
    Ok(BoundRow {
        s,
        delta: sp.gap_delta,
        r: sp.diameter_r,
        tau: operator_core::tau(&sp),
        pq: n1.pq,
        pp: n1.pp,
        hp: linalg::hermitian_norm(hp.entries())?,
        hpp_pq: n2.pq,
        hpp: linalg::hermitian_norm(hpp.entries())?,
        ck_term,
        ck_lambda_min: lambda,
        ck_passed: passed,
    })
}

/// One θ with its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theta {
    pub total: f64,
    pub boundary_start: f64,
    pub boundary_end: f64,
    pub integral: f64,
    /// The same total on the coarse (half-density) grid.
    pub coarse_total: f64,
}

impl Theta {
    pub fn relative_refinement_change(&self) -> f64 {
        if self.total == 0.0 {
            0.0
        } else {
            (self.total - self.coarse_total).abs() / self.total
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundReport {
    pub label: String,
    pub d: usize,
    pub s_star: f64,
    pub rows: Vec<BoundRow>,
    pub general: Theta,
    pub jrs: Theta,
    pub new: Theta,
    /// Intervals of the fine grid the totals use.
    pub intervals: usize,
    pub derivative_source: DerivativeSource,
    /// Some row changed by more than [`REFINEMENT_TOL`] under doubling.
    pub under_resolved: bool,
    /// verify_ck passed at every row (false when unchecked).
    pub certificate_valid: bool,
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

fn assemble(rows: &[BoundRow], h: f64, boundary: impl Fn(&BoundRow) -> f64, integrand: impl Fn(&BoundRow) -> f64) -> Theta {
    let vals: Vec<f64> = rows.iter().map(&integrand).collect();
    let coarse: Vec<f64> = vals.iter().step_by(2).copied().collect();
    let b0 = boundary(&rows[0]);
    let b1 = boundary(rows.last().unwrap());
    let integral = trapezoid(&vals, h);
    Theta {
        total: b0 + b1 + integral,
        boundary_start: b0,
        boundary_end: b1,
        integral,
        coarse_total: b0 + b1 + trapezoid(&coarse, 2.0 * h),
    }
}

/// Totals from rows on a uniform grid (odd row count, so the coarse grid is
/// every other row).
pub fn totals_from_rows(rows: &[BoundRow], d: usize) -> Result<(Theta, Theta, Theta)> {
    if rows.len() < 3 || rows.len() % 2 == 0 {
        return Err(Error::Validation("bound rows must form a uniform grid with an even interval count".into()));
    }
    let h = rows[1].s - rows[0].s;
    Ok((
        assemble(rows, h, BoundRow::general_boundary, BoundRow::general_integrand),
        assemble(rows, h, |r| r.jrs_boundary(d), |r| r.jrs_integrand(d)),
        assemble(rows, h, |r| r.new_boundary(d), |r| r.new_integrand(d)),
    ))
}

/// Evaluates all three timescales on [0, s*].
pub fn evaluate(path: &dyn OperatorPath, s_star: f64, opts: &BoundOptions) -> Result<BoundReport> {
    if !(s_star > 0.0 && s_star <= 1.0) {
        return Err(Error::Validation(format!("s* = {s_star} must lie in (0, 1]")));
    }
    if opts.intervals == 0 {
        return Err(Error::Validation("quadrature needs at least one interval".into()));
    }
    let n = 2 * opts.intervals;
    let rows = (0..=n)
        .map(|k| bound_row(path, s_star * k as f64 / n as f64, opts.check_certificates))
        .collect::<Result<Vec<_>>>()?;
    let d = path.d();
    let (general, jrs, new) = totals_from_rows(&rows, d)?;
    let under_resolved = [general, jrs, new].iter().any(|t| t.relative_refinement_change() >= REFINEMENT_TOL);
    if under_resolved {
        log::warn!("{}: θ changes by ≥ 1% under grid doubling at s* = {s_star}", path.label());
    }
    let certificate_valid = rows.iter().all(|r| r.ck_passed == Some(true));
    if opts.check_certificates && !certificate_valid {
        log::warn!("{}: c_k certificate failed at some s; θ_general is flagged", path.label());
    }
    Ok(BoundReport {
        label: path.label(),
        d,
        s_star,
        rows,
        general,
        jrs,
        new,
        intervals: n,
        derivative_source: path.derivative_source(),
        under_resolved,
        certificate_valid,
    })
}

/// General projected timescale.
pub fn theta_general(path: &dyn OperatorPath, s_star: f64, opts: &BoundOptions) -> Result<BoundReport> {
    evaluate(path, s_star, opts)
}

/// Bounded-H′ timescale (full operator norms).
pub fn theta_jrs(path: &dyn OperatorPath, s_star: f64, opts: &BoundOptions) -> Result<BoundReport> {
    evaluate(path, s_star, &BoundOptions { check_certificates: false, ..opts.clone() })
}

/// Bounded-H′ timescale with projected norms.
pub fn theta_new_bounded(path: &dyn OperatorPath, s_star: f64, opts: &BoundOptions) -> Result<BoundReport> {
    theta_jrs(path, s_star, opts)
}

impl BoundReport {
    pub const CSV_HEADER: [&'static str; 15] = [
        "s",
        "delta",
        "r",
        "tau",
        "norm_pq",
        "norm_pp",
        "norm_hp",
        "norm_hpp_pq",
        "norm_hpp",
        "ck_term",
        "ck_lambda_min",
        "ck_passed",
        "integrand_general",
        "integrand_jrs",
        "integrand_new",
    ];

    pub fn flagged(&self) -> bool {
        self.under_resolved || !self.certificate_valid
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Numerical(format!("writing bound rows: {e}"));
        out.write_record(Self::CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            let f = |x: f64| format!("{x:.12e}");
            out.write_record([
                f(r.s),
                f(r.delta),
                f(r.r),
                f(r.tau),
                f(r.pq),
                f(r.pp),
                f(r.hp),
                f(r.hpp_pq),
                f(r.hpp),
                f(r.ck_term),
                r.ck_lambda_min.map(f).unwrap_or_default(),
                r.ck_passed.map(|b| b.to_string()).unwrap_or_default(),
                f(r.general_integrand()),
                f(r.jrs_integrand(self.d)),
                f(r.new_integrand(self.d)),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(())
    }

    /// Human-readable block with totals and boundary terms.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "path: {}\nd: {}\ns_star: {:.12e}\nintervals: {}\nderivatives: {}\ncertificate_valid: {}\nunder_resolved: {}\n",
            self.label,
            self.d,
            self.s_star,
            self.intervals,
            self.derivative_source,
            self.certificate_valid,
            self.under_resolved
        );
        for (name, t) in [("general", &self.general), ("jrs", &self.jrs), ("new", &self.new)] {
            s += &format!(
                "theta_{name}: {:.12e} (boundary {:.12e} + {:.12e}, integral {:.12e}, coarse {:.12e})\n",
                t.total, t.boundary_start, t.boundary_end, t.integral, t.coarse_total
            );
        }
        s
    }
}

/// Asymptotic CSFQ timescales at s*.
#[derive(Clone, Debug, PartialEq)]
pub struct CsfqClosedForms {
    pub s_star: f64,
    pub b_star: f64,
    /// h_x = ω_q(1 − s* + δ_B)
    pub h_x: f64,
    pub omega_pl: f64,
    pub theta_jrs: f64,
    pub theta_new: f64,
    /// θ_new / θ_jrs = 1/ln(ω_pl/h_x·ω_q…)
    pub ratio: f64,
    /// 𝒜√b(s*)
    pub log_lhs: f64,
    /// −ln[(1 − s* + δ_B) ω_q / ω_pl]
    pub log_rhs: f64,
    /// b(s*) is not large compared to 1.
    pub outside_regime: bool,
}

/// Leading constant of the JRS closed form.
pub const JRS_CLOSED_FORM_CONSTANT: f64 = 11.0 / std::f64::consts::SQRT_2;

/// θ_JRS = (11/√2)/(ω_pl (1 − s* + δ_B)) and θ_new = θ_JRS / −ln[(1 − s* +
/// δ_B) ω_q/ω_pl]. `omega_pl` overrides the plasma-frequency convention,
/// e.g. with a numerically measured gap. Constants are order-of-magnitude
/// only.
pub fn csfq_closed_forms(p: &AnnealParams, s_star: f64, omega_pl: Option<f64>) -> Result<CsfqClosedForms> {
    let b = schedule::solve_b(s_star, p)?;
    let w = omega_pl.unwrap_or_else(|| schedule::omega_pl(b, p));
    let residual = 1.0 - s_star + p.delta_b();
    let h_x = p.omega_q() * residual;
    let arg = h_x / w;
    if arg >= 1.0 {
        return Err(Error::Regime(format!(
            "(1 − s* + δ_B) ω_q / ω_pl = {arg:e} ≥ 1; the logarithm has the wrong sign"
        )));
    }
    let theta_jrs = JRS_CLOSED_FORM_CONSTANT / (w * residual);
    let log = -arg.ln();
    Ok(CsfqClosedForms {
        s_star,
        b_star: b,
        h_x,
        omega_pl: w,
        theta_jrs,
        theta_new: theta_jrs / log,
        ratio: 1.0 / log,
        log_lhs: p.a * b.sqrt(),
        log_rhs: log,
        outside_regime: b < 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag_real, CMat};
    use crate::operator_core::CkList;
    use crate::paths::{two_level, FnPath};

    #[test]
    fn constant_path_has_zero_theta() {
        let h = diag_real(&[0.0, 1.0, 3.0]);
        let path = FnPath::new("const", 3, 1, move |_| h.clone())
            .with_derivatives(|_| CMat::zeros(3, 3), |_| CMat::zeros(3, 3));
        let r = evaluate(&path, 1.0, &BoundOptions::default()).unwrap();
        assert_eq!((r.general.total, r.jrs.total, r.new.total), (0.0, 0.0, 0.0));
        assert!(r.certificate_valid && !r.flagged());
    }

    #[test]
    fn two_level_totals_recompute_from_rows() {
        let r = evaluate(&two_level(1.0), 0.5, &BoundOptions { intervals: 16, ..Default::default() }).unwrap();
        assert!(r.general.total > 0.0 && r.general.total.is_finite());
        let (g, j, n) = totals_from_rows(&r.rows, 1).unwrap();
        assert_eq!((g, j, n), (r.general, r.jrs, r.new));
        // d = 1: every ‖PH′P‖ is the diagonal element |E₀′|
        assert!(r.rows.iter().all(|row| row.pq <= row.hp + 1e-12));
    }

    #[test]
    fn ck_term_uses_powers() {
        // H′ = H² on a diagonal H with c = (0, 0, 1): block norms vanish
        let path = FnPath::new("diag", 3, 1, |s| diag_real(&[1.0 + s, 2.0 + s, 4.0]))
            .with_derivatives(|_| diag_real(&[1.0, 1.0, 0.0]), |_| CMat::zeros(3, 3));
        let row = bound_row(&path, 0.3, true).unwrap();
        assert_eq!(row.ck_term, 0.0);
        assert_eq!(CkList::new(vec![0.0, 0.0, 1.0]).unwrap().k_max(), 2);
    }

    #[test]
    fn closed_form_regime_error() {
        let p = AnnealParams::new(10.0, 10.5, 1.0).unwrap();
        assert!(matches!(csfq_closed_forms(&p, 0.5, Some(1e-12)), Err(Error::Regime(_))));
        let c = csfq_closed_forms(&p, 0.5, None).unwrap();
        assert!(c.ratio < 1.0 && c.theta_new < c.theta_jrs);
    }
}
