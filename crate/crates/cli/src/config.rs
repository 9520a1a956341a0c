//! Run configuration: TOML, one level of sections, unknown keys rejected.

use std::path::Path;

use adiabound::oracle::DilationRate;
use adiabound::paths::{commuting, random_smooth, two_level, CsfqSinPath, WellPath};
use adiabound::schedule::{solve_b0, AnnealParams, DerivativeMode, DEFAULT_FLUX_FINAL};
use adiabound::OperatorPath;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub path: PathSection,
    pub schedule: ScheduleSection,
    pub bounds: BoundsSection,
    pub evolution: EvolutionSection,
    pub oracle: OracleSection,
    pub sweep: SweepSection,
    pub verify: VerifySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Seed for every randomized input (probe observables, verify instances).
    pub seed: u64,
    /// Worker threads for sweep cells.
    pub workers: usize,
    pub out: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 7, workers: 1, out: "out".into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    TwoLevel,
    RandomSmooth,
    CsfqSin,
    Well,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSection {
    pub kind: PathKind,
    /// two-level: energy scale
    pub scale: f64,
    /// random-smooth: dimension and seed of the perturbations
    pub dim: usize,
    pub seed: u64,
    /// csfq-sin: charge cutoff
    pub n_max: usize,
    /// well: phase-grid points
    pub grid_points: usize,
    /// constant: diagonal levels and retained dimension
    pub levels: Vec<f64>,
    pub d: usize,
}

impl Default for PathSection {
    fn default() -> Self {
        Self {
            kind: PathKind::TwoLevel,
            scale: 1.0,
            dim: 5,
            seed: 7,
            n_max: 20,
            grid_points: 200,
            levels: vec![0.0, 1.0, 2.5],
            d: 1,
        }
    }
}

/// Final barrier: a number, or "from-delta" for the smallest barrier
/// reaching the residual field `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FinalBarrier {
    Value(f64),
    Rule(BarrierRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierRule {
    FromDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub a: f64,
    pub delta: f64,
    pub b_final: FinalBarrier,
    pub e_c: f64,
    pub flux_final: f64,
    pub derivatives: DerivativeMode,
    /// Grid size for `schedule` and `spectrum`.
    pub points: usize,
    pub s_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            a: 10.0,
            delta: 1e-9,
            b_final: FinalBarrier::Rule(BarrierRule::FromDelta),
            e_c: 1.0,
            flux_final: DEFAULT_FLUX_FINAL,
            derivatives: DerivativeMode::ExactImplicit,
            points: 65,
            s_end: 1.0,
        }
    }
}

impl ScheduleSection {
    /// Anneal parameters at barrier-area ratio `a`, with any flux warning.
    pub fn params_at(&self, a: f64) -> Result<(AnnealParams, Option<String>), CliError> {
        let b = match self.b_final {
            FinalBarrier::Value(b) => b,
            FinalBarrier::Rule(BarrierRule::FromDelta) => solve_b0(self.delta, a)?,
        };
        let p = AnnealParams::new(a, b, self.e_c)?;
        Ok(p.with_flux_override(self.flux_final)?)
    }

    pub fn params(&self) -> Result<(AnnealParams, Option<String>), CliError> {
        self.params_at(self.a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub s_star: f64,
    pub intervals: usize,
    pub check_certificates: bool,
    /// Extra horizons for a θ(s*) table; empty for none.
    pub s_star_sweep: Vec<f64>,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self { s_star: 0.5, intervals: 64, check_certificates: true, s_star_sweep: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionSection {
    pub s_star: f64,
    pub tol: f64,
    pub initial_steps: usize,
    pub max_steps: usize,
    pub checkpoints: usize,
    /// t_f as multiples of θ_general(s*), used when `t_f` is empty.
    pub t_f_multiples: Vec<f64>,
    /// Explicit t_f values.
    pub t_f: Vec<f64>,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self {
            s_star: 0.5,
            tol: 1e-7,
            initial_steps: 64,
            max_steps: 1 << 17,
            checkpoints: 16,
            t_f_multiples: vec![2.0, 4.0, 8.0, 16.0, 32.0],
            t_f: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateChoice {
    Exact,
    Dilation,
}

impl From<RateChoice> for DilationRate {
    fn from(r: RateChoice) -> Self {
        match r {
            RateChoice::Exact => DilationRate::Exact,
            RateChoice::Dilation => DilationRate::Dilation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// t_f in units of the trend e^{𝒜(√ℬ−1)}/(𝒜²ℬ^{7/4}E_C).
    pub trend_multiple: f64,
    pub m_max: usize,
    pub rate: RateChoice,
    pub tol: f64,
    pub check_cutoff: bool,
    /// Grid points for the full-propagator cross-check of the first cell;
    /// 0 skips it.
    pub propagator_points: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            a: vec![10.0, 12.0, 14.0],
            b: vec![3.0, 4.0],
            trend_multiple: 100.0,
            m_max: 16,
            rate: RateChoice::Exact,
            tol: 1e-4,
            check_cutoff: true,
            propagator_points: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepTarget {
    Bounds,
    Evolve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub target: SweepTarget,
    /// Barrier-area ratios; each cell rebuilds the schedule at 𝒜.
    pub a: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { target: SweepTarget::Bounds, a: vec![10.0, 12.0, 14.0] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fixture {
    None,
    /// Break the Hermiticity of one circuit matrix before it is checked.
    Hermiticity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub inject: Fixture,
    /// Random instances per twiddle invariant.
    pub instances: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { inject: Fixture::None, instances: 100 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.run.workers == 0 {
            return bad("run.workers must be at least 1".into());
        }
        for (key, s) in [("bounds.s_star", self.bounds.s_star), ("evolution.s_star", self.evolution.s_star)] {
            if !(s > 0.0 && s <= 1.0) {
                return bad(format!("{key} = {s} must lie in (0, 1]"));
            }
        }
        if self.bounds.s_star_sweep.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return bad("bounds.s_star_sweep entries must lie in (0, 1]".into());
        }
        if self.evolution.t_f.iter().chain(&self.evolution.t_f_multiples).any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("evolution.t_f and evolution.t_f_multiples must be positive".into());
        }
        if self.evolution.checkpoints == 0 || self.evolution.initial_steps % self.evolution.checkpoints != 0 {
            return bad("evolution.checkpoints must divide evolution.initial_steps".into());
        }
        if self.schedule.points < 2 || !(self.schedule.s_end > 0.0 && self.schedule.s_end <= 1.0) {
            return bad("schedule.points must be at least 2 and schedule.s_end in (0, 1]".into());
        }
        if self.oracle.m_max < 8 {
            return bad(format!("oracle.m_max = {} must be at least 8", self.oracle.m_max));
        }
        if self.path.d == 0 || self.path.d >= self.path.levels.len() {
            return bad("path.d must be between 1 and the number of path.levels minus one".into());
        }
        Ok(())
    }

    /// The path named in `[path]`, with any schedule warning.
    pub fn build_path(&self) -> Result<(Box<dyn OperatorPath>, Option<String>), CliError> {
        self.build_path_at(self.schedule.a)
    }

    pub fn build_path_at(&self, a: f64) -> Result<(Box<dyn OperatorPath>, Option<String>), CliError> {
        let p = &self.path;
        Ok(match p.kind {
            PathKind::TwoLevel => (Box::new(two_level(p.scale)), None),
            PathKind::RandomSmooth => {
                if p.dim < 3 {
                    return Err(CliError::Config("path.dim must be at least 3 for random-smooth".into()));
                }
                (Box::new(random_smooth(p.dim, p.seed)), None)
            }
            PathKind::Constant => (Box::new(commuting(p.levels.clone(), p.d, |_| (1.0, 0.0, 0.0))), None),
            PathKind::CsfqSin => {
                let (params, warn) = self.schedule.params_at(a)?;
                (Box::new(CsfqSinPath::new(params, p.n_max, self.schedule.derivatives)), warn)
            }
            PathKind::Well => {
                let (params, warn) = self.schedule.params_at(a)?;
                (Box::new(WellPath::new(params, p.grid_points, self.schedule.derivatives)), warn)
            }
        })
    }
}

/// What `manifest.toml` holds: the full configuration with every default
/// written out, plus values derived from it.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub derived: Derived,
}

#[derive(Clone, Debug, Serialize)]
pub struct Derived {
    pub path_label: String,
    pub b_final: Option<f64>,
    pub delta_b: Option<f64>,
    pub e_j: Option<f64>,
    pub omega_q: Option<f64>,
}

impl Derived {
    pub fn new(cfg: &RunConfig, label: String) -> Self {
        match cfg.schedule.params() {
            Ok((p, _)) => Self {
                path_label: label,
                b_final: Some(p.b_final),
                delta_b: Some(p.delta_b()),
                e_j: Some(p.e_j()),
                omega_q: Some(p.omega_q()),
            },
            Err(_) => Self { path_label: label, b_final: None, delta_b: None, e_j: None, omega_q: None },
        }
    }
}
