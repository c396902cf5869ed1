//! Nonlinear conjugate gradient with Hestenes-Stiefel updates.

use std::time::Instant;

use super::{more_thuente_search, LineSearchFailure, OptConfig, OptResult, StepInfo, StopReason};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f` from `x0`. `oracle(x, g)` returns `f(x)` and writes the
/// gradient into `g`.
///
/// Returns the final iterate with its summary. On a line-search failure the
/// last accepted iterate is returned.
pub fn ncg_minimize(
    oracle: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    cfg: &OptConfig,
) -> (Vec<f64>, OptResult) {
    ncg_minimize_observed(oracle, x0, cfg, |_| {})
}

/// [`ncg_minimize`] that reports every accepted step to `observer`.
pub fn ncg_minimize_observed(
    mut oracle: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    cfg: &OptConfig,
    mut observer: impl FnMut(&StepInfo),
) -> (Vec<f64>, OptResult) {
    let start = Instant::now();
    let p = x0.len();
    let scale = p.max(1) as f64;
    let restart_every = cfg.restart_every.unwrap_or(p).max(1);

    let mut x = x0;
    let mut g = vec![0.0; p];
    let mut f = oracle(&x, &mut g);
    let mut fevals = 1;

    let finish = |x: Vec<f64>, f: f64, g: &[f64], iterations, fevals, stop_reason| {
        (
            x,
            OptResult {
                f,
                grad_norm: Some(norm(g) / scale),
                iterations,
                fevals,
                stop_reason,
                seconds: start.elapsed().as_secs_f64(),
            },
        )
    };

    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(x, f, &g, 0, fevals, StopReason::LineSearchFailure);
    }
    if norm(&g) / scale <= cfg.grad_tol {
        return finish(x, f, &g, 0, fevals, StopReason::GTol);
    }

    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut x_trial = vec![0.0; p];
    let mut g_trial = vec![0.0; p];
    let mut y = vec![0.0; p];
    let mut iterations = 0;

    loop {
        let dphi0 = dot(&g, &d);
        let budget = cfg.max_fevals - fevals;
        let mut ls_cfg = cfg.line_search.clone();
        ls_cfg.max_trials = ls_cfg.max_trials.min(budget);

        let outcome = more_thuente_search(
            |alpha| {
                for ((xt, xi), di) in x_trial.iter_mut().zip(&x).zip(&d) {
                    *xt = xi + alpha * di;
                }
                let ft = oracle(&x_trial, &mut g_trial);
                (ft, dot(&g_trial, &d))
            },
            f,
            dphi0,
            cfg.line_search.initial_step,
            &ls_cfg,
        );

        let step = match outcome {
            Ok(step) => step,
            Err((why, trials)) => {
                fevals += trials;
                let reason = if why == LineSearchFailure::MaxTrials && budget < cfg.line_search.max_trials {
                    StopReason::MaxFevals
                } else {
                    StopReason::LineSearchFailure
                };
                return finish(x, f, &g, iterations, fevals, reason);
            }
        };
        fevals += step.trials;
        iterations += 1;
        observer(&StepInfo {
            iteration: iterations,
            alpha: step.alpha,
            phi0: f,
            dphi0,
            phi: step.phi,
            dphi: step.dphi,
            trials: step.trials,
        });

        let f_old = f;
        std::mem::swap(&mut x, &mut x_trial);
        for ((yi, gn), go) in y.iter_mut().zip(&g_trial).zip(&g) {
            *yi = gn - go;
        }
        std::mem::swap(&mut g, &mut g_trial);
        f = step.phi;

        let reason = if norm(&g) / scale <= cfg.grad_tol {
            Some(StopReason::GTol)
        } else if (f_old - f).abs() / f_old.abs().max(1.0) <= cfg.rel_f_tol {
            Some(StopReason::FTol)
        } else if fevals >= cfg.max_fevals {
            Some(StopReason::MaxFevals)
        } else if iterations >= cfg.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if let Some(reason) = reason {
            return finish(x, f, &g, iterations, fevals, reason);
        }

        // β_HS = gᵀ(g − g_old) / dᵀ(g − g_old)
        let beta = dot(&g, &y) / dot(&d, &y);
        let gg = dot(&g, &g);
        // gᵀg_old = gᵀg − gᵀy
        let nonorthogonal = cfg
            .restart_orthogonality
            .is_some_and(|nu| (gg - dot(&g, &y)).abs() >= nu * gg);
        let restart = iterations % restart_every == 0
            || !beta.is_finite()
            || (cfg.nonnegative_beta && beta < 0.0)
            || nonorthogonal;
        if restart {
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
        } else {
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi + beta * *di;
            }
            if dot(&g, &d) >= 0.0 {
                for (di, gi) in d.iter_mut().zip(&g) {
                    *di = -gi;
                }
            }
        }
    }
}
