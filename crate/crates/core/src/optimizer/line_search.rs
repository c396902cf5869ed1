//! Moré-Thuente line search (MINPACK-2 `dcsrch`/`dcstep`).

use super::LineSearchConfig;

const XTRAPL: f64 = 1.1;
const XTRAPU: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchStep {
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
    /// Evaluations of `φ` spent, the accepted one included.
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineSearchFailure {
    /// `φ′(0)` is not negative.
    NotDescent,
    /// The trial budget ran out.
    MaxTrials,
    /// The uncertainty interval shrank below `xtol`.
    IntervalTooSmall,
    /// Rounding errors prevent further progress.
    Rounding,
    /// The step reached `step_max` while still decreasing.
    StepAtMax,
    /// The step reached `step_min` without sufficient decrease.
    StepAtMin,
}

/// Finds `α` satisfying the strong Wolfe conditions
/// `φ(α) ≤ φ(0) + c1 α φ′(0)` and `|φ′(α)| ≤ c2 |φ′(0)|`.
///
/// `phi` returns `(φ(α), φ′(α))`. The accepted step is always the last
/// point handed to `phi`. A non-finite trial value halves the step toward
/// the best point found so far.
pub fn more_thuente_search(
    mut phi: impl FnMut(f64) -> (f64, f64),
    phi0: f64,
    dphi0: f64,
    alpha0: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchStep, (LineSearchFailure, usize)> {
    if !(dphi0 < 0.0) {
        return Err((LineSearchFailure::NotDescent, 0));
    }
    let ftol = cfg.c1;
    let gtol = cfg.c2;
    let (stpmin, stpmax) = (cfg.step_min, cfg.step_max);

    let mut stp = alpha0.clamp(stpmin, stpmax);
    let mut brackt = false;
    let mut stage1 = true;
    let finit = phi0;
    let ginit = dphi0;
    let gtest = ftol * ginit;
    let mut width = stpmax - stpmin;
    let mut width1 = 2.0 * width;

    let mut stx = 0.0;
    let mut fx = finit;
    let mut gx = ginit;
    let mut sty = 0.0;
    let mut fy = finit;
    let mut gy = ginit;
    let mut stmin = 0.0;
    let mut stmax = stp + XTRAPU * stp;

    // Upper limit lowered whenever a trial step produces a non-finite value.
    let mut hi = stpmax;
    let mut trials = 0;
    loop {
        if trials >= cfg.max_trials {
            return Err((LineSearchFailure::MaxTrials, trials));
        }
        let (f, g) = phi(stp);
        trials += 1;

        if !f.is_finite() || !g.is_finite() {
            hi = stx + 0.5 * (stp - stx);
            if hi - stx <= cfg.xtol * hi.abs().max(stpmin) {
                return Err((LineSearchFailure::IntervalTooSmall, trials));
            }
            stp = hi;
            continue;
        }

        let ftest = finit + stp * gtest;
        if stage1 && f <= ftest && g >= 0.0 {
            stage1 = false;
        }

        if f <= ftest && g.abs() <= gtol * (-ginit) {
            return Ok(LineSearchStep {
                alpha: stp,
                phi: f,
                dphi: g,
                trials,
            });
        }
        if brackt && (stp <= stmin || stp >= stmax) {
            return Err((LineSearchFailure::Rounding, trials));
        }
        if brackt && stmax - stmin <= cfg.xtol * stmax {
            return Err((LineSearchFailure::IntervalTooSmall, trials));
        }
        if stp == hi && f <= ftest && g <= gtest {
            return Err((LineSearchFailure::StepAtMax, trials));
        }
        if stp == stpmin && (f > ftest || g >= gtest) {
            return Err((LineSearchFailure::StepAtMin, trials));
        }

        if stage1 && f <= fx && f > ftest {
            // Work with the modified function ψ(α) = φ(α) - α·gtest.
            let mut fxm = fx - stx * gtest;
            let mut fym = fy - sty * gtest;
            let mut gxm = gx - gtest;
            let mut gym = gy - gtest;
            let fm = f - stp * gtest;
            let gm = g - gtest;
            step(
                &mut Bracket {
                    stx: &mut stx,
                    fx: &mut fxm,
                    dx: &mut gxm,
                    sty: &mut sty,
                    fy: &mut fym,
                    dy: &mut gym,
                },
                &mut stp,
                fm,
                gm,
                &mut brackt,
                stmin,
                stmax,
            );
            fx = fxm + stx * gtest;
            fy = fym + sty * gtest;
            gx = gxm + gtest;
            gy = gym + gtest;
        } else {
            step(
                &mut Bracket {
                    stx: &mut stx,
                    fx: &mut fx,
                    dx: &mut gx,
                    sty: &mut sty,
                    fy: &mut fy,
                    dy: &mut gy,
                },
                &mut stp,
                f,
                g,
                &mut brackt,
                stmin,
                stmax,
            );
        }

        if brackt {
            if (sty - stx).abs() >= 0.66 * width1 {
                stp = stx + 0.5 * (sty - stx);
            }
            width1 = width;
            width = (sty - stx).abs();
        }

        if brackt {
            stmin = stx.min(sty);
            stmax = stx.max(sty);
        } else {
            stmin = stp + XTRAPL * (stp - stx);
            stmax = stp + XTRAPU * (stp - stx);
        }

        stp = stp.clamp(stpmin, hi);

        if (brackt && (stp <= stmin || stp >= stmax))
            || (brackt && stmax - stmin <= cfg.xtol * stmax)
        {
            stp = stx;
        }
    }
}

struct Bracket<'a> {
    stx: &'a mut f64,
    fx: &'a mut f64,
    dx: &'a mut f64,
    sty: &'a mut f64,
    fy: &'a mut f64,
    dy: &'a mut f64,
}

/// Safeguarded cubic/quadratic step and interval update (`dcstep`).
#[allow(clippy::too_many_arguments)]
fn step(
    b: &mut Bracket<'_>,
    stp: &mut f64,
    fp: f64,
    dp: f64,
    brackt: &mut bool,
    stpmin: f64,
    stpmax: f64,
) {
    let (stx, fx, dx) = (*b.stx, *b.fx, *b.dx);
    let (sty, fy, dy) = (*b.sty, *b.fy, *b.dy);
    let sgnd = dp * (dx / dx.abs());

    let stpf;
    if fp > fx {
        // Higher function value: the minimum is bracketed.
        let theta = 3.0 * (fx - fp) / (*stp - stx) + dx + dp;
        let s = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = s * ((theta / s).powi(2) - (dx / s) * (dp / s)).max(0.0).sqrt();
        if *stp < stx {
            gamma = -gamma;
        }
        let p = (gamma - dx) + theta;
        let q = ((gamma - dx) + gamma) + dp;
        let r = p / q;
        let stpc = stx + r * (*stp - stx);
        let stpq = stx + ((dx / ((fx - fp) / (*stp - stx) + dx)) / 2.0) * (*stp - stx);
        stpf = if (stpc - stx).abs() < (stpq - stx).abs() {
            stpc
        } else {
            stpc + (stpq - stpc) / 2.0
        };
        *brackt = true;
    } else if sgnd < 0.0 {
        // Derivatives of opposite sign: the minimum is bracketed.
        let theta = 3.0 * (fx - fp) / (*stp - stx) + dx + dp;
        let s = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = s * ((theta / s).powi(2) - (dx / s) * (dp / s)).max(0.0).sqrt();
        if *stp > stx {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = ((gamma - dp) + gamma) + dx;
        let r = p / q;
        let stpc = *stp + r * (stx - *stp);
        let stpq = *stp + (dp / (dp - dx)) * (stx - *stp);
        stpf = if (stpc - *stp).abs() > (stpq - *stp).abs() {
            stpc
        } else {
            stpq
        };
        *brackt = true;
    } else if dp.abs() < dx.abs() {
        // Same sign, derivative magnitude decreasing.
        let theta = 3.0 * (fx - fp) / (*stp - stx) + dx + dp;
        let s = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = s * ((theta / s).powi(2) - (dx / s) * (dp / s)).max(0.0).sqrt();
        if *stp > stx {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = (gamma + (dx - dp)) + gamma;
        let r = p / q;
        let stpc = if r < 0.0 && gamma != 0.0 {
            *stp + r * (stx - *stp)
        } else if *stp > stx {
            stpmax
        } else {
            stpmin
        };
        let stpq = *stp + (dp / (dp - dx)) * (stx - *stp);
        if *brackt {
            let mut f = if (stpc - *stp).abs() < (stpq - *stp).abs() {
                stpc
            } else {
                stpq
            };
            if *stp > stx {
                f = f.min(*stp + 0.66 * (sty - *stp));
            } else {
                f = f.max(*stp + 0.66 * (sty - *stp));
            }
            stpf = f;
        } else {
            let f = if (stpc - *stp).abs() > (stpq - *stp).abs() {
                stpc
            } else {
                stpq
            };
            stpf = f.min(stpmax).max(stpmin);
        }
    } else if *brackt {
        // Same sign, derivative magnitude not decreasing.
        let theta = 3.0 * (fp - fy) / (sty - *stp) + dy + dp;
        let s = theta.abs().max(dy.abs()).max(dp.abs());
        let mut gamma = s * ((theta / s).powi(2) - (dy / s) * (dp / s)).max(0.0).sqrt();
        if *stp > sty {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = ((gamma - dp) + gamma) + dy;
        let r = p / q;
        stpf = *stp + r * (sty - *stp);
    } else if *stp > stx {
        stpf = stpmax;
    } else {
        stpf = stpmin;
    }

    if fp > fx {
        *b.sty = *stp;
        *b.fy = fp;
        *b.dy = dp;
    } else {
        if sgnd < 0.0 {
            *b.sty = stx;
            *b.fy = fx;
            *b.dy = dx;
        }
        *b.stx = *stp;
        *b.fx = fp;
        *b.dx = dp;
    }
    *stp = stpf;
}
