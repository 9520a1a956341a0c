use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adiabound::bounds::{csfq_closed_forms, evaluate, BoundOptions, BoundReport};
use adiabound::circuits::CsfqSinModel;
use adiabound::evolution::{diagnostics, effective_hamiltonians, evolve, loglog_slope, EvolveOptions, Probe};
use adiabound::linalg;
use adiabound::operator_core::{eigendecompose, gap_and_diameter};
use adiabound::oracle::{brute_force_leakage, leakage_scaling, propagator_leakage, LeakageOptions, OracleRow};
use adiabound::schedule::{solve_b, AnnealParams, ScheduleGrid};
use adiabound::OperatorPath;
use rayon::prelude::*;

use crate::config::{Derived, Manifest, PathKind, RunConfig, SweepTarget};
use crate::{verify, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Schedule,
    Bounds,
    Evolve,
    Effective,
    Oracle,
    Verify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Schedule => "schedule",
            Command::Bounds => "bounds",
            Command::Evolve => "evolve",
            Command::Effective => "effective",
            Command::Oracle => "oracle",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

/// Result of a completed command.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub flagged: bool,
    /// Lines for stdout and summary.txt.
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn line(&mut self, s: impl Into<String>) {
        self.summary.push(s.into());
    }

    fn flag(&mut self, s: impl Into<String>) {
        self.flagged = true;
        self.summary.push(format!("FLAGGED: {}", s.into()));
    }
}

fn f(x: f64) -> String {
    format!("{x:.12e}")
}

struct Out {
    dir: PathBuf,
}

impl Out {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn create(&self, name: &str, outcome: &mut Outcome) -> Result<BufWriter<File>, CliError> {
        let p = self.dir.join(name);
        outcome.files.push(p.clone());
        Ok(BufWriter::new(File::create(p)?))
    }

    fn table(&self, name: &str, header: &[&str], rows: &[Vec<String>], outcome: &mut Outcome) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(self.create(name, outcome)?);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `cells` on a pool of `workers` threads, keeping input order.
fn par_map<T: Sync, R: Send>(
    workers: usize,
    cells: &[T],
    work: impl Fn(&T) -> Result<R, CliError> + Sync + Send,
) -> Result<Vec<R>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Numerical(format!("worker pool: {e}")))?;
    pool.install(|| cells.par_iter().map(&work).collect::<Vec<_>>()).into_iter().collect()
}

/// Runs `command`, writing its files and `manifest.toml` under `run.out`.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let out = Out::new(Path::new(&cfg.run.out))?;
    let mut outcome = Outcome::default();
    let label = match command {
        Command::Verify | Command::Oracle => String::new(),
        _ => cfg.build_path()?.0.label(),
    };
    let manifest = Manifest { command: command.name(), config: cfg, derived: Derived::new(cfg, label) };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Numerical(format!("manifest: {e}")))?;
    out.create("manifest.toml", &mut outcome)?.write_all(text.as_bytes())?;

    match command {
        Command::Spectrum => spectrum(cfg, &out, &mut outcome)?,
        Command::Schedule => schedule(cfg, &out, &mut outcome)?,
        Command::Bounds => bounds(cfg, &out, &mut outcome)?,
        Command::Evolve => evolve_sweep(cfg, &out, &mut outcome)?,
        Command::Effective => effective(cfg, &out, &mut outcome)?,
        Command::Oracle => oracle(cfg, &out, &mut outcome)?,
        Command::Verify => verify_suite(cfg, &out, &mut outcome)?,
        Command::Sweep => sweep(cfg, &out, &mut outcome)?,
    }
    for w in &outcome.warnings {
        outcome.summary.insert(0, format!("warning: {w}"));
    }
    let mut s = out.create("summary.txt", &mut outcome)?;
    for line in &outcome.summary {
        writeln!(s, "{line}")?;
    }
    s.flush()?;
    Ok(outcome)
}

fn path_with_warning(cfg: &RunConfig, outcome: &mut Outcome) -> Result<Box<dyn OperatorPath>, CliError> {
    let (path, warn) = cfg.build_path()?;
    outcome.warnings.extend(warn);
    Ok(path)
}

fn bound_options(cfg: &RunConfig) -> BoundOptions {
    BoundOptions { intervals: cfg.bounds.intervals, check_certificates: cfg.bounds.check_certificates }
}

fn evolve_options(cfg: &RunConfig, s_star: f64) -> EvolveOptions {
    let e = &cfg.evolution;
    EvolveOptions {
        s_star,
        tol: e.tol,
        initial_steps: e.initial_steps,
        max_steps: e.max_steps,
        checkpoints: e.checkpoints,
        ..Default::default()
    }
}

fn grid(n: usize, end: f64) -> Vec<f64> {
    (0..n).map(|k| end * k as f64 / (n - 1) as f64).collect()
}

fn spectrum(cfg: &RunConfig, out: &Out, outcome: &mut Outcome) -> Result<(), CliError> {
    let path = path_with_warning(cfg, outcome)?;
    let (d, levels) = (path.d(), (path.d() + 2).min(path.dim()));
    let s = grid(cfg.schedule.points, cfg.schedule.s_end);
    let rows = par_map(cfg.run.workers, &s, |&s| {
        let eig = eigendecompose(&path.hamiltonian(s)?)?;
        let (gap, r) = gap_and_diameter(&eig.values, d).map_err(|e| e.at(s))?;
        let mut row = vec![f(s), f(gap), f(r)];
        row.extend(eig.values[..levels].iter().map(|&e| f(e)));
        Ok((gap, row))
    })?;
    let min_gap = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let mut header = vec!["s".to_string(), "gap".into(), "diameter".into()];
    header.extend((0..levels).map(|k| format!("e{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = rows.into_iter().map(|r| r.1).collect();
    out.table("spectrum.csv", &header, &rows, outcome)?;
    outcome.line(format!("path: {}", path.label()));
    outcome.line(format!("min_gap: {}", f(min_gap)));
    Ok(())
}

fn schedule(cfg: &RunConfig, out: &Out, outcome: &mut Outcome) -> Result<(), CliError> {
    let (p, warn) = cfg.schedule.params()?;
    outcome.warnings.extend(warn);
    let mut g = ScheduleGrid::uniform(&p, cfg.schedule.s_end, cfg.schedule.points - 1, cfg.schedule.derivatives)?;
    // measured plasma gap: E₂ − E₁ of the CSFQ at each (b, f)
    let model = CsfqSinModel::new(p.e_c, p.e_j(), p.e_alpha(), cfg.path.n_max);
    let gaps = par_map(cfg.run.workers, &g.rows, |r| {
        let e = eigendecompose(&model.hamiltonian(r.b, r.f)?)?.values;
        Ok(e[2] - e[1])
    })?;
    for (r, gap) in g.rows.iter_mut().zip(gaps) {
        r.omega_pl_exact = Some(gap);
    }
    g.write_csv(out.create("schedule.csv", outcome)?)?;
    outcome.line(format!("A: {}  B: {}  delta_B: {}", f(p.a), f(p.b_final), f(p.delta_b())));
    Ok(())
}

fn csfq_params(cfg: &RunConfig, a: f64) -> Result<Option<AnnealParams>, CliError> {
    Ok(match cfg.path.kind {
        PathKind::CsfqSin | PathKind::Well => Some(cfg.schedule.params_at(a)?.0),
        _ => None,
    })
}

fn bounds(cfg: &RunConfig, out: &Out, outcome: &mut Outcome) -> Result<(), CliError> {
    let path = path_with_warning(cfg, outcome)?;
    let opts = bound_options(cfg);
    let report = evaluate(path.as_ref(), cfg.bounds.s_star, &opts)?;
    report.write_csv(out.create("bounds.csv", outcome)?)?;
    outcome.summary.extend(report.summary().lines().map(String::from));
    if report.flagged() {
        outcome.flag(format!("bound report at s* = {} is under-resolved or uncertified", cfg.bounds.s_star));
    }
    if let Some(p) = csfq_params(cfg, cfg.schedule.a)? {
        // closed forms with the measured gap, and with the plasma-frequency convention
        let gap = 2.0 * report.rows.last().map(|r| r.delta).unwrap_or(f64::NAN);
        for (name, w) in [("measured-gap", Some(gap)), ("plasma-convention", None)] {
            match csfq_closed_forms(&p, cfg.bounds.s_star, w) {
                Ok(c) => outcome.line(format!(
                    "closed_form[{name}]: theta_jrs {} theta_new {} ratio {} (A√b {} vs log {})",
                    f(c.theta_jrs),
                    f(c.theta_new),
                    f(c.ratio),
                    f(c.log_lhs),
                    f(c.log_rhs)
                )),
                Err(e) => outcome.line(format!("closed_form[{name}]: {e}")),
            }
        }
    }
    if !cfg.bounds.s_star_sweep.is_empty() {
        let reports = par_map(cfg.run.workers, &cfg.bounds.s_star_sweep, |&s| Ok(evaluate(path.as_ref(), s, &opts)?))?;
        let rows: Vec<Vec<String>> = reports.iter().map(theta_row).collect();
        out.table("bounds_sweep.csv", &THETA_HEADER, &rows, outcome)?;
        let mut order: Vec<&BoundReport> = reports.iter().collect();
        order.sort_by(|a, b| a.s_star.total_cmp(&b.s_star));
        if order.windows(2).any(|w| w[1].general.total < w[0].general.total) {
            outcome.flag("theta_general decreases along the s* sweep");
        }
        if reports.iter().any(BoundReport::flagged) {
            outcome.flag("a report in the s* sweep is under-resolved or uncertified");
        }
    }
    Ok(())
}

const THETA_HEADER: [&str; 7] =
    ["s_star", "theta_general", "theta_jrs", "theta_new", "ratio_new_jrs", "under_resolved", "certificate_valid"];

fn theta_row(r: &BoundReport) -> Vec<String> {
    vec![
        f(r.s_star),
        f(r.general.total),
        f(r.jrs.total),
        f(r.new.total),
        f(r.new.total / r.jrs.total),
        r.under_resolved.to_string(),
        r.certificate_valid.to_string(),
    ]
}

/// t_f values for the sweep and the θ they derive from.
fn times(cfg: &RunConfig, path: &dyn OperatorPath, s_star: f64) -> Result<(f64, Vec<f64>), CliError> {
    let theta = evaluate(path, s_star, &bound_options(cfg))?.general.total;
    if !cfg.evolution.t_f.is_empty() {
        return Ok((theta, cfg.evolution.t_f.clone()));
    }
    if !(theta > 0.0) {
        return Err(CliError::Config(
            "theta_general vanishes on this path; set evolution.t_f explicitly".into(),
        ));
    }
    Ok((theta, cfg.evolution.t_f_multiples.iter().map(|m| m * theta).collect()))
}

struct EvolveCell {
    row: Vec<String>,
    t_f: f64,
    diff: f64,
    violations: Vec<String>,
}

fn evolve_cell(cfg: &RunConfig, path: &dyn OperatorPath, s_star: f64, theta: f64, t_f: f64) -> Result<EvolveCell, CliError> {
    let run = evolve(path, t_f, &evolve_options(cfg, s_star), None)?;
    let rep = diagnostics(path, &run, &Probe::default_for(&run, cfg.run.seed))?;
    let bound = theta / t_f;
    let b = rep.x_norm;
    let b_bound = 2.0 * b + b * b;
    let mut violations = Vec::new();
    if rep.diff_norm > bound {
        violations.push(format!("t_f = {t_f}: diff {} exceeds theta/t_f {}", f(rep.diff_norm), f(bound)));
    }
    if rep.leakage > b_bound || rep.observable_error > b_bound {
        violations.push(format!("t_f = {t_f}: leakage or observable error exceeds 2b + b²"));
    }
    let mut row = rep.csv_record();
    row.extend([f(theta), f(bound), (rep.diff_norm <= bound).to_string()]);
    Ok(EvolveCell { row, t_f, diff: rep.diff_norm, violations })
}

const EVOLVE_EXTRA: [&str; 3] = ["theta_general", "bound", "within_bound"];

fn evolve_sweep(cfg: &RunConfig, out: &Out, outcome: &mut Outcome) -> Result<(), CliError> {
    let path = path_with_warning(cfg, outcome)?;
    let s_star = cfg.evolution.s_star;
    let (theta, t) = times(cfg, path.as_ref(), s_star)?;
    let cells = par_map(cfg.run.workers, &t, |&t_f| evolve_cell(cfg, path.as_ref(), s_star, theta, t_f))?;
    let mut header: Vec<&str> = adiabound::evolution::EvolutionReport::CSV_HEADER.to_vec();
    header.extend(EVOLVE_EXTRA);
    let rows: Vec<Vec<String>> = cells.iter().map(|c| c.row.clone()).collect();
    out.table("evolve.csv", &header, &rows, outcome)?;
    outcome.line(format!("path: {}", path.label()));
    outcome.line(format!("theta_general: {}", f(theta)));
    for c in &cells {
        for v in &c.violations {
            outcome.flag(v.clone());
        }
    }
    summarize_slope(&cells, outcome);
    Ok(())
}

/// Regression slope of diff vs t_f; flagged outside [−1.3, −0.7] when the
/// sweep spans at least a decade.
fn summarize_slope(cells: &[EvolveCell], outcome: &mut Outcome) {
    let kept: Vec<&EvolveCell> = cells.iter().filter(|c| c.diff > 0.0).collect();
    if kept.len() < 2 {
        return;
    }
    let t: Vec<f64> = kept.iter().map(|c| c.t_f).collect();
    let d: Vec<f64> = kept.iter().map(|c| c.diff).collect();
    let slope = loglog_slope(&t, &d);
    outcome.line(format!("slope: {}", f(slope)));
    let span = t.iter().cloned().fold(0.0, f64::max) / t.iter().cloned().fold(f64::INFINITY, f64::min);
    if span >= 10.0 && !(-1.3..=-0.7).contains(&slope) {
        outcome.flag(format!("slope {} outside [-1.3, -0.7]", f(slope)));
    }
}

fn effective(cfg: &RunConfig, out: &Out, outcome: &mut Outcome) -> Result<(), CliError> {
    let path = path_with_warning(cfg, outcome)?;
    let s_star = cfg.evolution.s_star;
    let (_, t) = times(cfg, path.as_ref(), s_star)?;
    let t_f = t[0];
    let run = evolve(path.as_ref(), t_f, &evolve_options(cfg, s_star), None)?;
    let d = run.d;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (s, he) in effective_hamiltonians(path.as_ref(), &run)? {
        let eff = linalg::eigh(&he)?.values;
        let exact = eigendecompose(&path.hamiltonian(s)?)?.values;
        let err = eff.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        let mut row = vec![f(s)];
        row.extend(eff.iter().map(|&e| f(e)));
        row.extend(exact[..d].iter().map(|&e| f(e)));
        row.push(f(err));
        rows.push(row);
    }
    let mut header = vec!["s".to_string()];
    header.extend((0..d).map(|k| format!("eff{k}")));
    header.extend((0..d).map(|k| format!("exact{k}")));
    header.push("max_abs_error".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.table("effective.csv", &header, &rows, outcome)?;
    let rep = diagnostics(path.as_ref(), &run, &Probe::default_for(&run, cfg.run.seed))?;
    outcome.line(format!("path: {}", path.label()));
    outcome.line(format!("t_f: {}", f(t_f)));
    outcome.line(format!("spectrum_error: {}", f(worst)));
    outcome.line(format!("effective_residual: {}  x_norm: {}", f(rep.effective_residual), f(rep.x_norm)));
    if worst > 1e-8 {
        outcome.flag(format!("effective spectrum deviates by {}", f(worst)));
    }
    if rep.effective_residual > rep.x_norm + cfg.evolution.tol {
        outcome.flag("effective residual exceeds ‖x‖ + tolerance");
    }
    Ok(())
}

fn oracle(cfg: &RunConfig, out: &Out, outcome: &mut Outcome) -> Result<(), CliError> {
    let o = &cfg.oracle;
    let cells: Vec<(f64, f64)> = o.a.iter().flat_map(|&a| o.b.iter().map(move |&b| (a, b))).collect();
    if cells.is_empty() {
        return Err(CliError::Config("oracle.a and oracle.b must be nonempty".into()));
    }
    let opts = LeakageOptions {
        m_max: o.m_max,
        rate: o.rate.into(),
        tol: o.tol,
        check_cutoff: o.check_cutoff,
        ..Default::default()
    };
    let params = |a: f64, b: f64| -> Result<(AnnealParams, f64), CliError> {
        let p = AnnealParams::new(a, b, cfg.schedule.e_c)?;
        let t_f = o.trend_multiple * leakage_scaling(&p)?.trend / p.e_c;
        Ok((p, t_f))
    };
    let results = par_map(cfg.run.workers, &cells, |&(a, b)| {
        let (p, t_f) = params(a, b)?;
        let rep = brute_force_leakage(&p, t_f, &opts)?;
        Ok((OracleRow::new(&p, &rep)?, rep.flagged()))
    })?;
    let rows: Vec<OracleRow> = results.iter().map(|r| r.0.clone()).collect();
    adiabound::oracle::write_csv(&rows, out.create("oracle.csv", outcome)?)?;
    let k: Vec<f64> = rows.iter().map(|r| r.scaled_constant).collect();
    let (lo, hi) = (k.iter().cloned().fold(f64::INFINITY, f64::min), k.iter().cloned().fold(0.0, f64::max));
    outcome.line(format!("scaled_constant range: {} .. {} (spread {})", f(lo), f(hi), f(hi / lo)));
    for (r, flagged) in &results {
        if *flagged {
            outcome.flag(format!("A = {}, B = {}: cutoff change above tolerance", r.a, r.b));
        }
    }
    if o.propagator_points > 0 {
        let (a, b) = cells[0];
        let (p, t_f) = params(a, b)?;
        let full = propagator_leakage(&p, t_f, o.propagator_points, cfg.evolution.tol)?;
        let ratio = full / rows[0].delta_c;
        outcome.line(format!("propagator check at A = {a}, B = {b}: {} vs oracle {} (ratio {})", f(full), f(rows[0].delta_c), f(ratio)));
        if !(0.5..=2.0).contains(&ratio) {
            outcome.flag("oracle and full propagator differ by more than a factor 2");
        }
    }
    Ok(())
}

fn verify_suite(cfg: &RunConfig, out: &Out, outcome: &mut Outcome) -> Result<(), CliError> {
    let checks = verify::run_suite(cfg);
    let rows: Vec<Vec<String>> = checks.iter().map(|c| vec![c.name.to_string(), c.passed.to_string(), c.detail.clone()]).collect();
    out.table("verify.csv", &["invariant", "passed", "detail"], &rows, outcome)?;
    for c in &checks {
        if c.passed {
            outcome.line(format!("pass  {}  {}", c.name, c.detail));
        } else {
            outcome.flag(format!("{}  {}", c.name, c.detail));
        }
    }
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &Out, outcome: &mut Outcome) -> Result<(), CliError> {
    if cfg.sweep.a.is_empty() {
        return Err(CliError::Config("sweep.a must be nonempty".into()));
    }
    match cfg.sweep.target {
        SweepTarget::Bounds => {
            let s_star = cfg.bounds.s_star;
            let rows = par_map(cfg.run.workers, &cfg.sweep.a, |&a| {
                let (path, _) = cfg.build_path_at(a)?;
                let r = evaluate(path.as_ref(), s_star, &bound_options(cfg))?;
                let (b_final, predicted) = match csfq_params(cfg, a)? {
                    Some(p) => (p.b_final, 1.0 / (a * solve_b(s_star, &p)?.sqrt())),
                    None => (f64::NAN, f64::NAN),
                };
                let mut row = vec![f(a), f(b_final)];
                row.extend(theta_row(&r));
                row.push(f(predicted));
                Ok((row, r.flagged()))
            })?;
            let mut header = vec!["A", "b_final"];
            header.extend(THETA_HEADER);
            header.push("inverse_a_sqrt_b");
            let table: Vec<Vec<String>> = rows.iter().map(|r| r.0.clone()).collect();
            out.table("sweep_bounds.csv", &header, &table, outcome)?;
            if rows.iter().any(|r| r.1) {
                outcome.flag("a sweep cell is under-resolved or uncertified");
            }
        }
        SweepTarget::Evolve => {
            let s_star = cfg.evolution.s_star;
            // one cell per (A, t_f); θ is evaluated once per A
            let prepared = par_map(cfg.run.workers, &cfg.sweep.a, |&a| {
                let (path, _) = cfg.build_path_at(a)?;
                Ok((a, times(cfg, path.as_ref(), s_star)?))
            })?;
            let cells: Vec<(f64, f64, f64)> =
                prepared.iter().flat_map(|(a, (theta, t))| t.iter().map(move |&t_f| (*a, *theta, t_f))).collect();
            let results = par_map(cfg.run.workers, &cells, |&(a, theta, t_f)| {
                let (path, _) = cfg.build_path_at(a)?;
                let mut c = evolve_cell(cfg, path.as_ref(), s_star, theta, t_f)?;
                c.row.insert(0, f(a));
                Ok(c)
            })?;
            let mut header = vec!["A"];
            header.extend(adiabound::evolution::EvolutionReport::CSV_HEADER);
            header.extend(EVOLVE_EXTRA);
            let table: Vec<Vec<String>> = results.iter().map(|c| c.row.clone()).collect();
            out.table("sweep_evolve.csv", &header, &table, outcome)?;
            for c in &results {
                for v in &c.violations {
                    outcome.flag(v.clone());
                }
            }
        }
    }
    outcome.line(format!("cells: {}", cfg.sweep.a.len()));
    Ok(())
}
