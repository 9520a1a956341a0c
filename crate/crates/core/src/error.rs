use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    /// Degenerate P/Q boundary. `s` is filled in when the split was taken
    /// along a path.
    #[error(
        "gap closes at the P/Q boundary{}: E_low = {lower:.15e}, E_high = {upper:.15e}",
        at_s(*s)
    )]
    GapClosure { lower: f64, upper: f64, s: Option<f64> },

    #[error("eigensolver did not converge (info = {info}) on matrix {fingerprint:016x}")]
    Eigensolver { info: i32, fingerprint: u64 },

    #[error("schedule infeasible: target {target:e} outside [g(B) = {g_high:e}, g(1) = {g_low:e}]")]
    ScheduleInfeasible { target: f64, g_low: f64, g_high: f64 },

    #[error("outside the asymptotic regime: {0}")]
    Regime(String),

    #[error("wrong variant: {0}")]
    WrongVariant(String),

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error(
        "step control did not converge after {steps} steps; last two refinement deltas {:e}, {:e}",
        last_deltas.0, last_deltas.1
    )]
    StepControl { steps: usize, last_deltas: (f64, f64) },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn at_s(s: Option<f64>) -> String {
    match s {
        Some(s) => format!(" at s = {s}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach the path position to a gap-closure error.
    pub fn at(self, s: f64) -> Self {
        match self {
            Error::GapClosure { lower, upper, .. } => Error::GapClosure { lower, upper, s: Some(s) },
            other => other,
        }
    }

    /// True for errors caused by the inputs rather than the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::WrongVariant(_))
    }
}
