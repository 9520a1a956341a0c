//! Acceptance criteria 1–12. Every criterion runs even when an earlier one
//! fails; one line per criterion goes straight to stderr so it shows
//! without --nocapture, and the test fails if any criterion did.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use adiabound::bounds::{evaluate, BoundOptions};
use adiabound::circuits::CsfqSinModel;
use adiabound::evolution::{diagnostics, evolve, loglog_slope, EvolutionReport, EvolveOptions, Probe};
use adiabound::oracle::{brute_force_leakage, leakage_scaling, propagator_leakage, LeakageOptions};
use adiabound::paths::{random_smooth, two_level, CsfqSinPath};
use adiabound::schedule::{solve_b, solve_b0, xi, AnnealParams, DerivativeMode};
use adiabound::OperatorPath;
use adiabound_cli::{run, Command, RunConfig};
use adiabound_cli::verify::{certificates, gauge_minimality, intertwining_convergence, twiddle_checks};

type Outcome = Result<(bool, String), String>;

fn report(n: usize, title: &str, started: Instant, outcome: Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    let line = format!(
        "criterion {n:>2} {:<4} {title} [{secs:.1} s]: {detail}\n",
        if passed { "PASS" } else { "FAIL" }
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    passed
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn csfq(a: f64) -> CsfqSinPath {
    CsfqSinPath::new(AnnealParams::from_delta(1e-9, a, 1.0).unwrap(), 20, DerivativeMode::ExactImplicit)
}

/// The three test paths with their horizons.
fn paths() -> Vec<(Box<dyn OperatorPath>, f64)> {
    vec![(Box::new(two_level(1.0)), 0.5), (Box::new(random_smooth(5, 7)), 1.0), (Box::new(csfq(10.0)), 0.5)]
}

struct Sweep {
    label: String,
    theta: f64,
    reports: Vec<EvolutionReport>,
}

/// t_f ∈ {2, 4, 8, 16, 32}·θ_general on one path.
fn sweep(path: &dyn OperatorPath, s_star: f64) -> Result<Sweep, String> {
    let theta = evaluate(path, s_star, &BoundOptions::default()).map_err(e)?.general.total;
    let mut reports = Vec::new();
    for m in [2.0, 4.0, 8.0, 16.0, 32.0] {
        let run = evolve(path, m * theta, &EvolveOptions { s_star, ..Default::default() }, None).map_err(e)?;
        reports.push(diagnostics(path, &run, &Probe::default_for(&run, 7)).map_err(e)?);
    }
    Ok(Sweep { label: path.label(), theta, reports })
}

fn all<T>(items: &[T], check: impl Fn(&T) -> (bool, String)) -> (bool, String) {
    let parts: Vec<(bool, String)> = items.iter().map(check).collect();
    (parts.iter().all(|p| p.0), parts.into_iter().map(|p| p.1).collect::<Vec<_>>().join("; "))
}

fn spread(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[test]
fn acceptance_criteria() {
    let mut passed = Vec::new();

    let t = Instant::now();
    passed.push(report(1, "final barrier B0(1e-9, 10)", t, {
        solve_b0(1e-9, 10.0).map_err(e).map(|b| ((10.5..=10.7).contains(&b), format!("B0 = {b:.6}, want [10.5, 10.7]")))
    }));

    let t = Instant::now();
    let sweeps: Result<Vec<Sweep>, String> = paths().iter().map(|(p, s)| sweep(p.as_ref(), *s)).collect();
    passed.push(report(2, "diff <= theta/t_f on paths (a)-(c)", t, {
        sweeps.clone_ok().map(|sw| {
            all(&sw, |s| {
                let worst = s.reports.iter().map(|r| r.diff_norm * r.t_f / s.theta).fold(0.0, f64::max);
                (worst <= 1.0, format!("{}: max diff·t_f/θ = {worst:.3e}", s.label))
            })
        })
    }));

    let t = Instant::now();
    passed.push(report(3, "1/t_f law, slope in [-1.3, -0.7]", t, {
        sweeps.clone_ok().map(|sw| {
            all(&sw, |s| {
                let x: Vec<f64> = s.reports.iter().map(|r| r.t_f).collect();
                let y: Vec<f64> = s.reports.iter().map(|r| r.diff_norm).collect();
                let slope = loglog_slope(&x, &y);
                ((-1.3..=-0.7).contains(&slope), format!("{}: slope {slope:.3}", s.label))
            })
        })
    }));

    let t = Instant::now();
    let checks = twiddle_checks(2024, 102);
    let ok = checks.iter().all(|c| c.passed) && t.elapsed().as_secs_f64() < 30.0;
    let detail = checks.iter().map(|c| format!("{} {}", c.name, if c.passed { "ok" } else { "failed" })).collect::<Vec<_>>().join(", ");
    passed.push(report(4, "twiddle calculus, 102 instances at dims 4/8/16", t, Ok((ok, detail))));

    let t = Instant::now();
    passed.push(report(5, "intertwining < 1e-7 with O(ds²) convergence", t, {
        sweeps.clone_ok().map(|sw| {
            let cases: Vec<(&(Box<dyn OperatorPath>, f64), &Sweep)> = paths_ref().iter().zip(sw.iter()).collect();
            all(&cases, |((path, s_star), s)| {
                let c = intertwining_convergence(path.as_ref(), *s_star, 2.0 * s.theta, 1e-9);
                (c.passed, c.detail)
            })
        })
    }));

    let t = Instant::now();
    passed.push(report(6, "leakage and observable error <= 2b + b²", t, {
        sweeps.clone_ok().map(|sw| {
            all(&sw, |s| {
                let worst = s
                    .reports
                    .iter()
                    .map(|r| r.leakage.max(r.observable_error) / (2.0 * r.x_norm + r.x_norm * r.x_norm))
                    .fold(0.0, f64::max);
                (worst <= 1.0, format!("{}: worst ratio {worst:.3e}", s.label))
            })
        })
    }));

    let t = Instant::now();
    passed.push(report(7, "effective frame: spectrum, residual, gauge minimality", t, {
        sweeps.clone_ok().map(|sw| {
            let (spec_ok, spec) = all(&sw, |s| {
                let spec = s.reports.iter().map(|r| r.heff_spectrum_error).fold(0.0, f64::max);
                let resid = s.reports.iter().map(|r| r.effective_residual / (r.x_norm + 1e-7)).fold(0.0, f64::max);
                (spec < 1e-8 && resid <= 1.0, format!("{}: spectrum {spec:.2e}, residual/(b+tol) {resid:.3}", s.label))
            });
            // gauges only act inside a block when d >= 2: paths (b) and (c)
            let g: Vec<_> = paths_ref()
                .iter()
                .zip(sw.iter())
                .skip(1)
                .map(|((p, s_star), s)| gauge_minimality(p.as_ref(), *s_star, 8.0 * s.theta, 7, 10))
                .collect();
            let gauge_ok = g.iter().all(|c| c.passed);
            let detail = g.iter().map(|c| c.detail.clone()).collect::<Vec<_>>().join("; ");
            (spec_ok && gauge_ok, format!("{spec}; {detail}"))
        })
    }));

    let t = Instant::now();
    passed.push(report(8, "new vs JRS timescale on the CSFQ path", t, {
        (|| -> Outcome {
            let mut rows_ok = true;
            let mut k = Vec::new();
            for a in [10.0, 12.0, 14.0] {
                let path = csfq(a);
                let r = evaluate(&path, 0.5, &BoundOptions::default()).map_err(e)?;
                for row in &r.rows {
                    if row.pq / row.hp < 0.125 {
                        rows_ok &= row.new_integrand(r.d) <= row.jrs_integrand(r.d);
                    }
                }
                let b = solve_b(0.5, &path.params).map_err(e)?;
                k.push(r.new.total / r.jrs.total * a * b.sqrt());
            }
            let in_band = k.iter().all(|v| (1.0 / 3.0..=3.0).contains(v));
            Ok((rows_ok && in_band, format!("rows ok: {rows_ok}; (θ_new/θ_JRS)·A√b(s*) = {k:.3?}, want [1/3, 3]")))
        })()
    }));

    let t = Instant::now();
    let c = certificates();
    let detail = c.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    passed.push(report(9, "c_k certificates and Avron–Elgart on two-mode networks", t, Ok((c.iter().all(|c| c.passed), detail))));

    let t = Instant::now();
    passed.push(report(10, "CSFQ splitting at b = 1, f = 0 against 2ξ", t, {
        (|| -> Outcome {
            let mut ratios = Vec::new();
            for a in [10.0, 12.0, 14.0, 16.0] {
                let p = AnnealParams::from_delta(1e-9, a, 1.0).map_err(e)?;
                let model = CsfqSinModel::new(p.e_c, p.e_j(), p.e_alpha(), 20);
                let ev = adiabound::operator_core::eigendecompose(&model.hamiltonian(1.0, 0.0).map_err(e)?).map_err(e)?;
                ratios.push((ev.values[1] - ev.values[0]) / (2.0 * xi(1.0, &p)));
            }
            let ok = ratios.iter().all(|r| (r - 1.0).abs() <= 0.3);
            Ok((ok, format!("splitting/2ξ = {ratios:.3?}, want within 30% of 1")))
        })()
    }));

    let t = Instant::now();
    passed.push(report(11, "oracle trend across (A, B) and full-propagator check", t, {
        (|| -> Outcome {
            let mut k = Vec::new();
            let mut first = None;
            for a in [10.0, 12.0, 14.0] {
                for b in [3.0, 4.0] {
                    let p = AnnealParams::new(a, b, 1.0).map_err(e)?;
                    let t_f = 100.0 * leakage_scaling(&p).map_err(e)?.trend / p.e_c;
                    let r = brute_force_leakage(&p, t_f, &LeakageOptions::default()).map_err(e)?;
                    if r.flagged() {
                        return Ok((false, format!("A = {a}, B = {b}: cutoff unstable")));
                    }
                    k.push(r.delta_c * t_f * p.e_c / leakage_scaling(&p).map_err(e)?.trend);
                    first.get_or_insert((p, t_f, r.delta_c));
                }
            }
            let (p, t_f, oracle) = first.unwrap();
            let full = propagator_leakage(&p, t_f, 64, 1e-7).map_err(e)?;
            let ratio = full / oracle;
            let ok = spread(&k) <= 3.0 && (0.5..=2.0).contains(&ratio);
            Ok((ok, format!("‖δc‖t_f E_C/trend = {k:.3?} (spread {:.3}); propagator/oracle = {ratio:.3}", spread(&k))))
        })()
    }));

    let t = Instant::now();
    passed.push(report(12, "byte-identical CSVs and verify under 10 min", t, reproducibility()));

    let failed: Vec<usize> = passed.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}

fn paths_ref() -> &'static [(Box<dyn OperatorPath>, f64)] {
    use std::sync::OnceLock;
    static P: OnceLock<Vec<(Box<dyn OperatorPath>, f64)>> = OnceLock::new();
    P.get_or_init(paths)
}

trait CloneOk<T> {
    fn clone_ok(&self) -> Result<&T, String>;
}

impl<T> CloneOk<T> for Result<T, String> {
    fn clone_ok(&self) -> Result<&T, String> {
        self.as_ref().map_err(Clone::clone)
    }
}

fn run_in(command: Command, cfg: &RunConfig, out: &Path, workers: usize) -> Result<adiabound_cli::Outcome, String> {
    let mut cfg = cfg.clone();
    cfg.run.out = out.to_string_lossy().into_owned();
    cfg.run.workers = workers;
    run(command, &cfg).map_err(e)
}

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(e)?
        .filter_map(|f| f.ok().map(|f| f.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).map_err(e)?)))
        .collect()
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let cfg = RunConfig::from_toml(
        "[path]\nkind = \"random-smooth\"\n[evolution]\ns_star = 1.0\n[bounds]\ns_star_sweep = [0.5, 1.0]\n",
    )
    .map_err(e)?;
    let mut identical = true;
    let mut detail = Vec::new();
    for command in [Command::Evolve, Command::Bounds] {
        let mut outputs = Vec::new();
        for (tag, workers) in [("a", 1), ("b", 2)] {
            let out = dir.path().join(format!("{}-{tag}", command.name()));
            let o = run_in(command, &cfg, &out, workers)?;
            if o.flagged {
                return Ok((false, format!("{} flagged: {:?}", command.name(), o.summary)));
            }
            outputs.push(csv_files(&out)?);
        }
        let same = outputs[0] == outputs[1] && !outputs[0].is_empty();
        identical &= same;
        detail.push(format!("{}: {} CSV files {}", command.name(), outputs[0].len(), if same { "identical" } else { "differ" }));
    }
    let start = Instant::now();
    let o = run_in(Command::Verify, &RunConfig::default(), &dir.path().join("verify"), 1)?;
    let secs = start.elapsed().as_secs_f64();
    let verify_ok = !o.flagged && secs < 600.0;
    detail.push(format!("verify {} in {secs:.1} s", if o.flagged { "flagged" } else { "passed" }));
    Ok((identical && verify_ok, detail.join("; ")))
}
