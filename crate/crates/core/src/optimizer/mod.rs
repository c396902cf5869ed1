//! Unconstrained first-order minimization over a flat variable vector.

mod line_search;
mod ncg;

pub use line_search::{more_thuente_search, LineSearchFailure, LineSearchStep};
pub use ncg::{ncg_minimize, ncg_minimize_observed};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moré-Thuente line search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant `c1`.
    pub c1: f64,
    /// Curvature constant `c2`.
    pub c2: f64,
    pub initial_step: f64,
    /// Maximum function evaluations per search.
    pub max_trials: usize,
    /// Relative width of the uncertainty interval below which the search gives up.
    pub xtol: f64,
    pub step_min: f64,
    pub step_max: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            c1: 1e-4,
            c2: 1e-2,
            initial_step: 1.0,
            max_trials: 20,
            xtol: 1e-15,
            step_min: 1e-15,
            step_max: 1e15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    /// Stop when `|f_{k-1} - f_k| / max(1, |f_{k-1}|)` falls to this value.
    pub rel_f_tol: f64,
    /// Stop when `‖g‖₂ / P` falls to this value, `P` being the variable count.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub max_fevals: usize,
    /// Restart with steepest descent every this many iterations;
    /// `None` means every `P` iterations.
    pub restart_every: Option<usize>,
    /// Restart when `|gₖᵀ gₖ₋₁| ≥ ν ‖gₖ‖²`; `None` disables the test.
    pub restart_orthogonality: Option<f64>,
    /// Restart instead of taking a negative `β`.
    pub nonnegative_beta: bool,
    pub line_search: LineSearchConfig,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            rel_f_tol: 1e-8,
            grad_tol: 1e-8,
            max_iters: 500,
            max_fevals: 10_000,
            restart_every: None,
            restart_orthogonality: None,
            nonnegative_beta: false,
            line_search: LineSearchConfig::default(),
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let checks = [
            (self.rel_f_tol > 0.0, "rel_f_tol must be positive"),
            (self.grad_tol > 0.0, "grad_tol must be positive"),
            (self.max_iters >= 1, "max_iters must be at least 1"),
            (self.max_fevals >= 1, "max_fevals must be at least 1"),
            (self.restart_every != Some(0), "restart_every must be positive"),
            (0.0 < ls.c1 && ls.c1 < ls.c2 && ls.c2 < 1.0, "need 0 < c1 < c2 < 1"),
            (ls.initial_step > 0.0, "initial_step must be positive"),
            (ls.max_trials >= 1, "max_trials must be at least 1"),
            (ls.xtol >= 0.0, "xtol must be nonnegative"),
            (0.0 <= ls.step_min && ls.step_min < ls.step_max, "need 0 <= step_min < step_max"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidParameter((*msg).into())),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FTol,
    GTol,
    MaxIters,
    MaxFevals,
    LineSearchFailure,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::FTol => "f_tol",
            StopReason::GTol => "g_tol",
            StopReason::MaxIters => "max_iters",
            StopReason::MaxFevals => "max_fevals",
            StopReason::LineSearchFailure => "line_search_failure",
        }
    }

    /// Stopped on a tolerance rather than a cap or a failure.
    pub fn converged(&self) -> bool {
        matches!(self, StopReason::FTol | StopReason::GTol)
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub f: f64,
    /// `‖g‖₂ / P` at the returned point; absent for methods without gradients.
    pub grad_norm: Option<f64>,
    pub iterations: usize,
    pub fevals: usize,
    pub stop_reason: StopReason,
    pub seconds: f64,
}

/// One accepted line-search step, as seen from the line function
/// `φ(α) = f(x + α d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub iteration: usize,
    pub alpha: f64,
    pub phi0: f64,
    pub dphi0: f64,
    pub phi: f64,
    pub dphi: f64,
    pub trials: usize,
}

impl StepInfo {
    /// Both strong Wolfe inequalities for the given constants.
    pub fn satisfies_strong_wolfe(&self, c1: f64, c2: f64) -> bool {
        self.phi <= self.phi0 + c1 * self.alpha * self.dphi0 && self.dphi.abs() <= c2 * self.dphi0.abs()
    }
}
