//! The property suite behind `verify`: each check names the invariant it
//! tests and reports pass/fail with a short detail string.

use adiabound::bounds::{evaluate, BoundOptions};
use adiabound::circuits::{
    build_cjj, build_csfq_full, build_csfq_sin, build_wells, ck_constant_m, ck_time_dependent_m,
    csfq_cutoff_convergence, CjjParams, CsfqParams, FluxMode, FluxNetwork, NetworkGrid, PhaseGrid, WellParams,
};
use adiabound::evolution::{diagnostics, evolve, observable_rate, EvolveOptions, Generators, Probe};
use adiabound::linalg::{self, random, CMat, C64};
use adiabound::operator_core::{
    avron_elgart_check, eigendecompose, split, twiddle, twiddle_residual, verify_ck, BasisTag, HermitianOperator,
    SpectralSplit,
};
use adiabound::oracle::{brute_force_leakage, leakage_scaling, LeakageOptions};
use adiabound::paths::{random_smooth, two_level};
use adiabound::schedule::{barrier_ratio, solve_b, solve_b0, solve_f, AnnealParams};
use adiabound::OperatorPath;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Fixture, RunConfig};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name, passed, detail: detail.into() }
    }

    fn from_result(name: &'static str, r: adiabound::Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// Every check at default sizes.
pub fn run_suite(cfg: &RunConfig) -> Vec<Check> {
    let seed = cfg.run.seed;
    let mut out = vec![circuit_hermiticity(cfg.verify.inject)];
    out.extend(twiddle_checks(seed, cfg.verify.instances));
    out.push(schedule_residuals());
    out.push(final_barrier());
    out.push(cutoff_convergence());
    out.extend(certificates());
    out.push(bounds_refinement());
    out.push(bounds_monotone());
    out.extend(theorem_checks(&two_level(1.0), 0.5, seed));
    out.extend(theorem_checks(&random_smooth(5, 7), 1.0, seed));
    out.push(intertwining_convergence(&two_level(1.0), 0.5, 20.0, 1e-9));
    out.push(gauge_minimality(&random_smooth(5, 7), 1.0, 10.0, seed, 10));
    out.push(oracle_conservation());
    out
}

fn hermitian_defect(m: &CMat) -> f64 {
    linalg::max_abs(&(m - m.adjoint())) / linalg::max_abs(m).max(1.0)
}

/// Rebuilds every circuit matrix through the Hermitian constructor.
pub fn circuit_hermiticity(inject: Fixture) -> Check {
    let run = || -> adiabound::Result<(bool, String)> {
        let csfq = CsfqParams { e_c: 1.0, e_j: 3.125, e_alpha: 0.2, b: 1.5, f: 0.7, n_max: 10 };
        let cjj = CjjParams { e_c: 1.0, e_j: 5.0, e_l: 0.3, b: 1.3, f: 0.4, halfwidth: 3.0 * std::f64::consts::PI, points: 64 };
        let grid = PhaseGrid { center: 0.0, halfwidth: 8.0, points: 101 };
        let sin = build_csfq_sin(&csfq)?;
        let c = build_cjj(&cjj)?;
        let (l, r) = build_wells(&WellParams { e_c: 1.0, e_j: 3.125, b: 1.5, grid })?;
        let mut mats: Vec<(&str, CMat)> = vec![
            ("csfq-sin H", sin.h.into_entries()),
            ("csfq-sin dH/db", sin.d_db.into_entries()),
            ("csfq-sin dH/df", sin.d_df.into_entries()),
            ("csfq-full H", build_csfq_full(&csfq)?.into_entries()),
            ("cjj H", c.h.into_entries()),
            ("cjj dH/db", c.d_db.into_entries()),
            ("cjj dH/df", c.d_df.into_entries()),
            ("left well", l.into_entries()),
            ("right well", r.into_entries()),
        ];
        if inject == Fixture::Hermiticity {
            mats[0].1[(0, 1)] += C64::new(0.0, 1e-3);
        }
        let mut worst: f64 = 0.0;
        for (name, m) in mats {
            worst = worst.max(hermitian_defect(&m));
            if let Err(e) = HermitianOperator::new(m, BasisTag::Abstract) {
                return Ok((false, format!("{name}: {e}")));
            }
        }
        Ok((worst < 1e-12, format!("max relative defect {worst:.3e}")))
    };
    Check::from_result("circuit-hermiticity", run())
}

/// Random H with its lowest d levels in [−1, 1] and the rest in [1.5, 3.5].
pub fn gapped_split(dim: usize, d: usize, rng: &mut ChaCha8Rng) -> adiabound::Result<SpectralSplit> {
    let u = random::unitary(dim, rng);
    let mut e: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    e.sort_by(f64::total_cmp);
    for v in e.iter_mut().skip(d) {
        *v += 2.5;
    }
    let h = linalg::from_basis(&linalg::diag_real(&e), &u);
    split(&HermitianOperator::new((&h + h.adjoint()).scale(0.5), BasisTag::Abstract)?, d)
}

/// The five twiddle invariants over `instances` random splits at dims
/// 4, 8 and 16 in turn.
pub fn twiddle_checks(seed: u64, instances: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    let mut failures = [0usize; 5];
    let mut errors = Vec::new();
    for k in 0..instances {
        let n = [4, 8, 16][k % 3];
        let d = rng.random_range(1..=n / 2);
        let sp = match gapped_split(n, d, &mut rng) {
            Ok(sp) => sp,
            Err(e) => {
                errors.push(e.to_string());
                continue;
            }
        };
        let x = random::complex(n, n, &mut rng);
        let scale = linalg::op_norm(&x);
        let (Ok(xt), Ok(dag)) = (twiddle(&x, &sp), twiddle(&x.adjoint(), &sp)) else {
            errors.push(format!("twiddle failed at instance {k}"));
            continue;
        };
        // each measure is normalized so that the invariant reads "< 1"
        let res = twiddle_residual(&x, &xt, &sp) / (1e-10 * scale);
        let pp = linalg::op_norm(&linalg::mul(&sp.p, &linalg::mul(&xt, &sp.p)));
        let qq = linalg::op_norm(&linalg::mul(&sp.q, &linalg::mul(&xt, &sp.q)));
        let block = pp.max(qq) / (1e-12 * linalg::op_norm(&xt).max(1.0));
        let tau = linalg::op_norm(&xt) / (sp.tau() * scale * (1.0 + 1e-12));
        let adjoint = linalg::max_abs(&(&xt - dag.adjoint())) / (1e-12 * scale);
        let fvals: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let y = linalg::from_basis(&CMat::from_diagonal(&DVector::from_vec(fvals)), &sp.eigenvectors);
        let xy = linalg::mul(&x, &y);
        let pull = match twiddle(&xy, &sp) {
            Ok(lhs) => linalg::op_norm(&(lhs - linalg::mul(&xt, &y))) / (1e-10 * linalg::op_norm(&xy).max(1e-300)),
            Err(_) => f64::INFINITY,
        };
        for (i, v) in [res, block, tau, adjoint, pull].into_iter().enumerate() {
            worst[i] = worst[i].max(v);
            if !(v < 1.0 || (i == 2 && v <= 1.0)) {
                failures[i] += 1;
            }
        }
    }
    let names = [
        "twiddle-defining-relation",
        "twiddle-block-structure",
        "twiddle-tau-bound",
        "twiddle-adjoint-relation",
        "twiddle-pull-through",
    ];
    names
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let passed = failures[i] == 0 && errors.is_empty();
            let mut detail = format!("{instances} instances, {} failures, worst/threshold {:.3e}", failures[i], worst[i]);
            if let Some(e) = errors.first() {
                detail += &format!("; {e}");
            }
            Check::new(name, passed, detail)
        })
        .collect()
}

pub fn schedule_residuals() -> Check {
    let run = || -> adiabound::Result<(bool, String)> {
        let mut worst: f64 = 0.0;
        for a in [10.0, 12.0, 14.0] {
            let p = AnnealParams::from_delta(1e-9, a, 1.0)?;
            for k in 0..=20 {
                let s = k as f64 / 20.0;
                let f = solve_f(s, &p);
                let b = solve_b(s, &p)?;
                worst = worst.max((2.0 * (f / 2.0).sin() - s).abs());
                worst = worst.max((barrier_ratio(b, a) - (1.0 - s + p.delta_b())).abs());
            }
        }
        Ok((worst < 1e-10, format!("max residual {worst:.3e}")))
    };
    Check::from_result("schedule-residuals", run())
}

pub fn final_barrier() -> Check {
    Check::from_result(
        "schedule-final-barrier",
        solve_b0(1e-9, 10.0).map(|b| ((10.5..=10.7).contains(&b), format!("B0(1e-9, 10) = {b:.6}"))),
    )
}

pub fn cutoff_convergence() -> Check {
    let p = CsfqParams { e_c: 1.0, e_j: 3.125, e_alpha: 0.2, b: 1.0, f: 0.5, n_max: 12 };
    Check::from_result(
        "csfq-cutoff-convergence",
        csfq_cutoff_convergence(&p).map(|r| (!r.flagged, format!("relative change {:.3e}", r.max_relative_change))),
    )
}

/// Two coupled rf-SQUID modes with constant and with varying inductance.
pub fn flux_networks() -> [FluxNetwork; 2] {
    let modes = || {
        vec![
            FluxMode { barrier: Box::new(|s| (1.0 + s, 1.0)), flux: Box::new(|s| (0.3 * s, 0.3)) },
            FluxMode { barrier: Box::new(|s| (2.0 - s, -1.0)), flux: Box::new(|s| (-0.2 * s, -0.2)) },
        ]
    };
    let constant = FluxNetwork {
        modes: modes(),
        inductance: Box::new(|_| (DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]), DMatrix::zeros(2, 2))),
    };
    let varying = FluxNetwork {
        modes: modes(),
        inductance: Box::new(|s| {
            (
                DMatrix::from_row_slice(2, 2, &[0.5 + 0.1 * s, 0.1, 0.1, 0.4]),
                DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.0]),
            )
        }),
    };
    [constant, varying]
}

/// verify_ck and the Avron–Elgart inequality on both networks.
pub fn certificates() -> Vec<Check> {
    let grid = NetworkGrid { halfwidth: 6.0, points: 15 };
    let [constant, varying] = flux_networks();
    let mut ck_ok = true;
    let mut ae_ok = true;
    let mut worst_lambda = f64::INFINITY;
    let mut worst_ae: f64 = 0.0;
    let mut error = None;
    for (net, time_dependent) in [(&constant, false), (&varying, true)] {
        for s in [0.0, 0.5, 1.0] {
            let r = (|| -> adiabound::Result<()> {
                let (h, hp) = net.discretize(s, &grid)?;
                let c = if time_dependent { ck_time_dependent_m(net, s)? } else { ck_constant_m(net, s)? };
                let rep = verify_ck(&h, &hp, &c, None)?;
                ck_ok &= rep.passed;
                worst_lambda = worst_lambda.min(rep.lambda_min);
                let cs = c.coefficients();
                let ae = avron_elgart_check(&h, &hp, cs[0], cs.get(1).copied().unwrap_or(0.0))?;
                ae_ok &= ae.holds();
                worst_ae = worst_ae.max(ae.lhs / ae.rhs);
                Ok(())
            })();
            if let Err(e) = r {
                error.get_or_insert(e.to_string());
            }
        }
    }
    let suffix = error.map(|e| format!("; error: {e}")).unwrap_or_default();
    vec![
        Check::new("ck-certificates", ck_ok && suffix.is_empty(), format!("min λ {worst_lambda:.3e}{suffix}")),
        Check::new("avron-elgart", ae_ok && suffix.is_empty(), format!("max lhs/rhs {worst_ae:.3e}{suffix}")),
    ]
}

pub fn bounds_refinement() -> Check {
    let run = || -> adiabound::Result<(bool, String)> {
        let mut worst: f64 = 0.0;
        let mut ok = true;
        for (path, s) in [(two_level(1.0), 0.5), (random_smooth(5, 7), 1.0)] {
            let r = evaluate(&path, s, &BoundOptions::default())?;
            ok &= !r.under_resolved && r.certificate_valid;
            worst = worst.max(r.general.relative_refinement_change());
        }
        Ok((ok, format!("max refinement change {worst:.3e}")))
    };
    Check::from_result("bounds-refinement", run())
}

pub fn bounds_monotone() -> Check {
    let run = || -> adiabound::Result<(bool, String)> {
        let opts = BoundOptions { intervals: 32, check_certificates: false };
        let mut ok = true;
        for path in [two_level(1.0), random_smooth(5, 7)] {
            let mut last = [0.0f64; 3];
            for k in 1..=8 {
                let r = evaluate(&path, k as f64 / 8.0, &opts)?;
                let now = [r.general.total, r.jrs.total, r.new.total];
                ok &= now.iter().zip(&last).all(|(n, l)| n >= l);
                last = now;
            }
        }
        Ok((ok, "theta(s*) at s* = 1/8 .. 1 on two paths".into()))
    };
    Check::from_result("bounds-monotone", run())
}

/// Bound validity, leakage/observable bounds, unitarity, effective frame
/// and the projector identity on one path, for t_f ∈ {2, 8, 32}·θ.
pub fn theorem_checks(path: &dyn OperatorPath, s_star: f64, seed: u64) -> Vec<Check> {
    let mut worst = [0.0f64; 5];
    let mut failed = [false; 5];
    let mut error = None;
    let r = (|| -> adiabound::Result<()> {
        let theta = evaluate(path, s_star, &BoundOptions::default())?.general.total;
        for m in [2.0, 8.0, 32.0] {
            let t_f = m * theta;
            let run = evolve(path, t_f, &EvolveOptions { s_star, ..Default::default() }, None)?;
            let rep = diagnostics(path, &run, &Probe::default_for(&run, seed))?;
            let b = rep.x_norm;
            let vals = [
                rep.diff_norm / (theta / t_f),
                rep.leakage.max(rep.observable_error) / (2.0 * b + b * b).max(1e-300),
                rep.unitarity_defect / 1e-9,
                rep.heff_spectrum_error / 1e-8,
                rep.effective_residual / (b + 1e-7),
            ];
            for (i, v) in vals.into_iter().enumerate() {
                worst[i] = worst[i].max(v);
                failed[i] |= !(v <= 1.0);
            }
        }
        Ok(())
    })();
    if let Err(e) = r {
        error = Some(e.to_string());
        failed = [true; 5];
    }
    let names = [
        "bound-validity",
        "leakage-observable-bounds",
        "unitarity",
        "effective-spectrum",
        "effective-residual",
    ];
    names
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let detail = match &error {
                Some(e) => format!("{}: error: {e}", path.label()),
                None => format!("{}: worst ratio to bound {:.3e}", path.label(), worst[i]),
            };
            Check::new(n, !failed[i], detail)
        })
        .collect()
}

/// Intertwining residuals below 1e-7 and shrinking ~4× per step halving.
pub fn intertwining_convergence(path: &dyn OperatorPath, s_star: f64, t_f: f64, tol: f64) -> Check {
    let run = || -> adiabound::Result<(bool, String)> {
        let run = evolve(path, t_f, &EvolveOptions { s_star, tol, ..Default::default() }, None)?;
        let lv = &run.levels;
        if lv.len() < 2 {
            return Ok((false, "fewer than two refinement levels".into()));
        }
        let (a, b) = (&lv[lv.len() - 2], &lv[lv.len() - 1]);
        let mut ok = true;
        let mut detail = format!("{}:", path.label());
        for (name, coarse, fine) in [
            ("ad", a.intertwining_ad, b.intertwining_ad),
            ("eff", a.intertwining_eff, b.intertwining_eff),
        ] {
            let (c, f) = (coarse.unwrap_or(f64::NAN), fine.unwrap_or(f64::NAN));
            ok &= f < 1e-7 && (c / f) > 3.0 && (c / f) < 5.0;
            detail += &format!(" {name} {f:.3e} (ratio {:.2})", c / f);
        }
        Ok((ok, detail))
    };
    Check::from_result("intertwining", run())
}

/// ‖d/ds O_eff‖ at s* for O a function of H(s*) (block-diagonal, unit
/// norm) is smallest for G = 0 against `count` random block-diagonal gauges.
pub fn gauge_minimality(path: &dyn OperatorPath, s_star: f64, t_f: f64, seed: u64, count: usize) -> Check {
    let run = || -> adiabound::Result<(bool, String)> {
        let opts = EvolveOptions { s_star, generators: Generators::EFF, ..Default::default() };
        let h = path.hamiltonian(s_star)?;
        let eig = eigendecompose(&h)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fvals: Vec<f64> = eig.values.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let o = linalg::from_basis(&linalg::diag_real(&fvals), &eig.vectors);
        let o = o.scale(1.0 / linalg::op_norm(&o));
        let base_run = evolve(path, t_f, &opts, None)?;
        let base = observable_rate(path, &base_run, &o, None)?;
        let mut min_other = f64::INFINITY;
        for _ in 0..count {
            let n = path.dim();
            let a = random::anti_hermitian(n, &mut rng);
            let b = random::anti_hermitian(n, &mut rng);
            let g = move |_: f64, sp: &SpectralSplit| {
                linalg::mul(&sp.p, &linalg::mul(&a, &sp.p)) + linalg::mul(&sp.q, &linalg::mul(&b, &sp.q))
            };
            let run = evolve(path, t_f, &opts, Some(&g))?;
            min_other = min_other.min(observable_rate(path, &run, &o, Some(&g))?);
        }
        Ok((base <= min_other, format!("{}: G = 0 rate {base:.3e}, smallest gauged rate {min_other:.3e}", path.label())))
    };
    Check::from_result("gauge-minimality", run())
}

pub fn oracle_conservation() -> Check {
    let run = || -> adiabound::Result<(bool, String)> {
        let p = AnnealParams::new(10.0, 3.0, 1.0)?;
        let t_f = 100.0 * leakage_scaling(&p)?.trend / p.e_c;
        let r = brute_force_leakage(&p, t_f, &LeakageOptions::default())?;
        Ok((
            r.norm_error < 1e-8 && !r.flagged(),
            format!("norm error {:.3e}, cutoff change {:.3e}", r.norm_error, r.cutoff_change.unwrap_or(f64::NAN)),
        ))
    };
    Check::from_result("oracle-norm-and-cutoff", run())
}
