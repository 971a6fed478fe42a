//! Lyapunov exponents, decay-law classification and critical parameter search.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{generate_input, step_into, ConvergenceTrace, InputSequence};
use crate::error::{Error, Result};
use crate::format_float;
use crate::reservoir::Reservoir;
use crate::transfer::{TransferFunction, TransferKind};

/// Samples before this index are treated as transient by [`fit_decay`] callers.
pub const DEFAULT_FIT_START: usize = 10;
/// Minimum number of positive samples for a decay fit.
pub const MIN_FIT_SAMPLES: usize = 20;
/// Margin by which one r² must beat the other to decide the law.
pub const R2_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub steps: usize,
    pub renorm_interval: usize,
    pub eps0: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            renorm_interval: 10,
            eps0: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovMethod {
    TwoTrajectory,
    JacobianProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Natural-log growth rate per step. `+inf` if the separation overflowed or the state escaped,
    /// `-inf` if the twin trajectories merged exactly.
    pub exponent: f64,
    pub t_used: usize,
    pub renorm_interval: usize,
    pub method: LyapunovMethod,
}

/// Largest Lyapunov exponent by the renormalized two-trajectory method.
///
/// A companion orbit starts `eps0` away from `x0` along the diagonal; every
/// `renorm_interval` steps the log of its stretch is accumulated and the
/// separation is rescaled back to `eps0`.
pub fn lyapunov_exponent(
    res: &Reservoir,
    input: &InputSequence,
    x0: &DVector<f64>,
    cfg: &LyapunovConfig,
) -> Result<LyapunovResult> {
    let LyapunovConfig {
        steps,
        renorm_interval,
        eps0,
    } = *cfg;
    if renorm_interval == 0 || steps < 10 * renorm_interval {
        return Err(Error::domain(format!(
            "need steps >= 10 * renorm_interval, got steps={steps} renorm_interval={renorm_interval}"
        )));
    }
    if !(eps0 > 0.0 && eps0 <= 1e-6) {
        return Err(Error::domain(format!(
            "eps0 must lie in (0, 1e-6], got {eps0}"
        )));
    }
    let k = res.k();
    if x0.len() != k {
        return Err(Error::Dimension {
            context: "initial state",
            expected: k,
            got: x0.len(),
        });
    }
    let t_used = steps / renorm_interval * renorm_interval;
    let inputs = generate_input(input, t_used + 1, res.n())?;

    let mut x = x0.clone();
    let mut y = x0.add_scalar(eps0 / (k as f64).sqrt());
    let mut lin = DVector::zeros(k);
    let mut next = DVector::zeros(k);
    let mut log_sum = 0.0;
    let escape = eps0 / (f64::EPSILON * 1e3);
    let result = |exponent| LyapunovResult {
        exponent,
        t_used,
        renorm_interval,
        method: LyapunovMethod::TwoTrajectory,
    };
    for t in 1..=t_used {
        step_into(res, &x, inputs.column(t), &mut lin, &mut next);
        std::mem::swap(&mut x, &mut next);
        step_into(res, &y, inputs.column(t), &mut lin, &mut next);
        std::mem::swap(&mut y, &mut next);
        if t % renorm_interval == 0 {
            let sep = &y - &x;
            let d = sep.norm();
            // Past `escape` the offset eps0 is below the state's rounding grain.
            if !d.is_finite() || !(x.amax() < escape) {
                return Ok(result(f64::INFINITY));
            }
            if d == 0.0 {
                return Ok(result(f64::NEG_INFINITY));
            }
            log_sum += (d / eps0).ln();
            y = &x + sep * (eps0 / d);
        }
    }
    Ok(result(log_sum / t_used as f64))
}

/// Single-neuron exponent as the orbit mean of `ln |W₁₁ θ'(x_lin,t)|`.
pub fn lyapunov_jacobian(
    res: &Reservoir,
    input: &InputSequence,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<LyapunovResult> {
    if res.k() != 1 {
        return Err(Error::domain(
            "the Jacobian-product method is only implemented for one neuron",
        ));
    }
    if steps == 0 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    if x0.len() != 1 {
        return Err(Error::Dimension {
            context: "initial state",
            expected: 1,
            got: x0.len(),
        });
    }
    let inputs = generate_input(input, steps + 1, res.n())?;
    let w = res.w()[(0, 0)];
    let mut x = x0.clone();
    let mut lin = DVector::zeros(1);
    let mut next = DVector::zeros(1);
    let mut log_sum = 0.0;
    for t in 1..=steps {
        step_into(res, &x, inputs.column(t), &mut lin, &mut next);
        std::mem::swap(&mut x, &mut next);
        log_sum += (w * res.tf().slope(lin[0])).abs().ln();
    }
    Ok(LyapunovResult {
        exponent: log_sum / steps as f64,
        t_used: steps,
        renorm_interval: 1,
        method: LyapunovMethod::JacobianProduct,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub b: f64,
    /// Per-cell failure is recorded, not propagated.
    pub result: std::result::Result<LyapunovResult, String>,
}

impl SweepPoint {
    pub fn exponent(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.exponent)
    }
}

/// Lyapunov exponent for each `b` of a reservoir family, in grid order.
pub fn lyapunov_sweep<F>(
    family: F,
    input: &InputSequence,
    x0: &DVector<f64>,
    b_grid: &[f64],
    cfg: &LyapunovConfig,
) -> Result<Vec<SweepPoint>>
where
    F: Fn(f64) -> Result<Reservoir> + Sync,
{
    if b_grid.is_empty() {
        return Err(Error::domain("empty parameter grid"));
    }
    Ok(b_grid
        .par_iter()
        .map(|&b| SweepPoint {
            b,
            result: family(b)
                .and_then(|res| lyapunov_exponent(&res, input, x0, cfg))
                .map_err(|e| e.to_string()),
        })
        .collect())
}

/// Writes `b,lyapunov`; failed cells get `NaN`.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "b,lyapunov")?;
    for p in points {
        let v = p.exponent().map_or_else(|| "NaN".to_string(), format_float);
        writeln!(out, "{},{v}", format_float(p.b))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayLaw {
    Exponential,
    PowerLaw,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub law: DecayLaw,
    /// Slope of `ln q` against `t`.
    pub exponent_exp: f64,
    /// Slope of `ln q` against `ln t`.
    pub exponent_pow: f64,
    pub r2_semilog: f64,
    pub r2_loglog: f64,
    /// Half-open `[start, end)` range of time indices considered.
    pub fit_window: (usize, usize),
}

/// Fits `ln q` against `t` and against `ln t` on `t >= t_start`, before the floor.
pub fn fit_decay(trace: &ConvergenceTrace, t_start: usize) -> DecayFit {
    fit_decay_window(trace, t_start, trace.q.len())
}

/// [`fit_decay`] restricted to `t < t_end`.
pub fn fit_decay_window(trace: &ConvergenceTrace, t_start: usize, t_end: usize) -> DecayFit {
    let start = t_start.max(1);
    let end = t_end
        .min(trace.floor_hit_at.unwrap_or(trace.q.len()))
        .min(trace.q.len());
    let samples: Vec<(f64, f64)> = (start..end.max(start))
        .filter(|&t| trace.q[t] > 0.0)
        .map(|t| (t as f64, trace.q[t].ln()))
        .collect();
    let window = (start, end.max(start));
    if samples.len() < MIN_FIT_SAMPLES {
        return DecayFit {
            law: DecayLaw::None,
            exponent_exp: 0.0,
            exponent_pow: 0.0,
            r2_semilog: 0.0,
            r2_loglog: 0.0,
            fit_window: window,
        };
    }
    let semi = least_squares(samples.iter().copied());
    let loglog = least_squares(samples.iter().map(|&(t, lq)| (t.ln(), lq)));
    let law = if loglog.r2 >= semi.r2 + R2_MARGIN && loglog.slope < -0.05 {
        DecayLaw::PowerLaw
    } else if semi.r2 >= loglog.r2 + R2_MARGIN && semi.slope < 0.0 {
        DecayLaw::Exponential
    } else {
        DecayLaw::None
    };
    DecayFit {
        law,
        exponent_exp: semi.slope,
        exponent_pow: loglog.slope,
        r2_semilog: semi.r2,
        r2_loglog: loglog.r2,
        fit_window: window,
    }
}

struct LineFit {
    slope: f64,
    r2: f64,
}

fn least_squares(points: impl Iterator<Item = (f64, f64)> + Clone) -> LineFit {
    let n = points.clone().count() as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    // A constant series is fit perfectly by a flat line.
    let r2 = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    LineFit { slope, r2 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub b_star: f64,
    /// `X` of the orbit `x_t = ±X` alternating with the input sign.
    pub orbit_amplitude: f64,
    /// `|θ(-b X + a) + X|`.
    pub orbit_residual: f64,
    /// `|b θ'(-b X + a) - 1|`.
    pub marginal_residual: f64,
}

/// Critical coupling of `x_t = θ(-b x_{t-1} + u_t)` under `u_t = ±amplitude` alternating.
///
/// The antisymmetric period-2 orbit maps `X` (with input `+a`) to `-X`, so
/// `-X = θ(-b X + a)`. It becomes marginally stable when `b θ'(-b X + a) = 1`.
/// Writing `y = b X - a` (the distance of the linear state from the origin),
/// the marginal condition pins `y` on the falling flank of θ' right of the
/// first non-negative epi-critical point, and the orbit condition becomes the
/// scalar residual `g(b) = b θ(y(b)) - a - y(b)`, bisected on `bracket`.
pub fn find_critical_b(
    tf: &TransferFunction,
    amplitude: f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<CriticalPoint> {
    if tf.kind() == TransferKind::Linear {
        return Err(Error::domain(
            "linear transfer has no isolated critical coupling",
        ));
    }
    if !(tol > 0.0) || !amplitude.is_finite() {
        return Err(Error::domain(format!(
            "need tol > 0 and finite amplitude, got {tol}, {amplitude}"
        )));
    }
    let critical = |b: f64, x: f64| {
        let arg = -b * x + amplitude;
        CriticalPoint {
            b_star: b,
            orbit_amplitude: x,
            orbit_residual: (tf.apply(arg) + x).abs(),
            marginal_residual: (b * tf.slope(arg) - 1.0).abs(),
        }
    };
    // Degenerate case: the zero orbit sits on the ECP at the origin and b = 1 is marginal.
    if amplitude == 0.0 && tf.apply(0.0) == 0.0 && tf.slope(0.0) == 1.0 {
        return Ok(critical(1.0, 0.0));
    }

    let (lo, hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::domain(format!("invalid bracket ({lo}, {hi})")));
    }
    let ecp = tf
        .epi_critical_points(0.0, 100.0)?
        .first()
        .copied()
        .ok_or_else(|| Error::domain("no epi-critical point at or right of the origin"))?;
    let flank_end = falling_flank_end(tf, ecp);
    let linear_state = |b: f64| -> f64 {
        let target = 1.0 / b;
        if b <= 1.0 {
            return ecp;
        }
        if tf.slope(flank_end) >= target {
            return flank_end;
        }
        let (mut a, mut c) = (ecp, flank_end);
        for _ in 0..200 {
            let m = 0.5 * (a + c);
            if tf.slope(m) > target {
                a = m;
            } else {
                c = m;
            }
            if c - a <= f64::EPSILON * (1.0 + m.abs()) {
                break;
            }
        }
        0.5 * (a + c)
    };
    let residual = |b: f64| {
        let y = linear_state(b);
        b * tf.apply(y) - amplitude - y
    };

    let (mut a, mut c) = (lo, hi);
    let (ga, gc) = (residual(a), residual(c));
    if ga == 0.0 {
        return Ok(critical(a, tf.apply(linear_state(a))));
    }
    if gc == 0.0 {
        return Ok(critical(c, tf.apply(linear_state(c))));
    }
    if ga.signum() == gc.signum() {
        return Err(Error::NoSignChange { lo, hi });
    }
    let mut ga = ga;
    while c - a > tol {
        let m = 0.5 * (a + c);
        let gm = residual(m);
        if gm == 0.0 {
            a = m;
            c = m;
            break;
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            c = m;
        }
    }
    let b = 0.5 * (a + c);
    Ok(critical(b, tf.apply(linear_state(b))))
}

/// End of the interval right of `ecp` on which θ' keeps falling.
fn falling_flank_end(tf: &TransferFunction, ecp: f64) -> f64 {
    const STEP: f64 = 1e-3;
    const REACH: f64 = 50.0;
    let mut x = ecp;
    let mut s = tf.slope(x);
    while x - ecp < REACH {
        let nx = x + STEP;
        let ns = tf.slope(nx);
        if ns >= s {
            break;
        }
        x = nx;
        s = ns;
    }
    x
}
