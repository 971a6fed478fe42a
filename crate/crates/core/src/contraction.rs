//! Weak-contraction machinery behind convergence at `S = 1`.
//!
//! The cover function
//!
//! ```text
//! φ(z) = 1 - η z^κ   if z < γ
//!        1 - η γ^κ   if z ≥ γ
//! ```
//!
//! bounds the squared contraction of one transfer step:
//! `d²(θ(y), θ(x)) ≤ d²(y, x) · φ_k(d²(y, x))` with `φ_k(z) = φ(z / n²)` for
//! `n` neurons. Iterating `q_{t+1} = q_t (1 - η q_t^κ)` is dominated by the
//! closed form `q*(t) = [(η/κ) t + q_0^{-κ}]^{-1/κ}`, which yields power-law
//! convergence time bounds. Everything here is checked on explicit grids;
//! a [`VerificationReport`] states the worst margin found.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ConvergenceTrace;
use crate::error::{Error, Result};
use crate::transfer::TransferFunction;

/// Slack allowed by every inequality check.
pub const MARGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverParams {
    pub eta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub n_neurons: usize,
}

impl CoverParams {
    pub fn new(eta: f64, gamma: f64, kappa: f64, n_neurons: usize) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::domain(format!("eta must lie in (0, 1), got {eta}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::domain(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(Error::domain(format!("kappa must be >= 1, got {kappa}")));
        }
        if n_neurons == 0 {
            return Err(Error::domain("n_neurons must be at least 1"));
        }
        Ok(Self {
            eta,
            gamma,
            kappa,
            n_neurons,
        })
    }

    /// `η = 1/(48 n²)`, `γ = 1/2`, `κ = 2`.
    pub fn for_neurons(n_neurons: usize) -> Result<Self> {
        let n = n_neurons as f64;
        Self::new(1.0 / (48.0 * n * n), 0.5, 2.0, n_neurons)
    }

    /// Copy with η multiplied by `factor`.
    pub fn with_eta_scaled(self, factor: f64) -> Result<Self> {
        Self::new(self.eta * factor, self.gamma, self.kappa, self.n_neurons)
    }

    /// The contraction factor of the far phase, `1 - η γ^κ`.
    pub fn far_factor(&self) -> f64 {
        1.0 - self.eta * self.gamma.powf(self.kappa)
    }
}

/// φ(z) with the parameters taken as given.
pub fn phi(z: f64, p: &CoverParams) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(Error::domain(format!(
            "cover function argument must be >= 0, got {z}"
        )));
    }
    Ok(phi_unchecked(z, p))
}

#[inline]
fn phi_unchecked(z: f64, p: &CoverParams) -> f64 {
    if z < p.gamma {
        1.0 - p.eta * z.powf(p.kappa)
    } else {
        p.far_factor()
    }
}

/// φ_k(z) = φ(z / n²) for a network of `p.n_neurons` neurons.
pub fn phi_k(z: f64, p: &CoverParams) -> Result<f64> {
    let n = p.n_neurons as f64;
    phi(z / (n * n), p)
}

/// ω(Δ, ζ) = ((θ(Δ + ζ) - θ(ζ)) / Δ)², the squared secant slope over `[ζ, ζ + Δ]`.
pub fn omega(tf: &TransferFunction, delta: f64, zeta: f64) -> Result<f64> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if !zeta.is_finite() {
        return Err(Error::domain("zeta must be finite"));
    }
    Ok(omega_unchecked(tf, delta, zeta))
}

#[inline]
fn omega_unchecked(tf: &TransferFunction, delta: f64, zeta: f64) -> f64 {
    let r = (tf.apply(delta + zeta) - tf.apply(zeta)) / delta;
    r * r
}

/// Golden-section search for the ζ maximizing ω(Δ, ·) on `[lo, hi]`.
///
/// Assumes ω is unimodal on the interval; for `tanh` the maximum sits at `ζ = -Δ/2`.
pub fn omega_argmax(
    tf: &TransferFunction,
    delta: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    omega(tf, delta, lo)?;
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::domain(format!(
            "need lo < hi and tol > 0, got [{lo}, {hi}], {tol}"
        )));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let f = |z| omega_unchecked(tf, delta, z);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let z = 0.5 * (a + b);
    Ok((z, f(z)))
}

/// Inclusive uniform grid `lo, lo + step, ..., <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && step > 0.0) {
            return Err(Error::domain(format!(
                "invalid grid lo={lo} hi={hi} step={step}"
            )));
        }
        Ok(Self { lo, hi, step })
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + self.step * i as f64).collect()
    }

    fn describe(&self) -> String {
        format!("[{}, {}] step {}", self.lo, self.hi, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    /// Minimum over the grid of `bound - value`.
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub grid_spec: String,
}

impl VerificationReport {
    fn from_worst(
        check: impl Into<String>,
        grid_spec: String,
        worst: Option<(f64, Vec<f64>)>,
    ) -> Self {
        let (worst_margin, worst_point) = worst.unwrap_or((f64::INFINITY, vec![]));
        Self {
            check: check.into(),
            passed: worst_margin >= -MARGIN_TOL,
            worst_margin,
            worst_point,
            grid_spec,
        }
    }
}

/// Deterministic min-reduction: smallest margin, earliest point on ties.
fn min_margin(a: Option<(f64, Vec<f64>)>, b: Option<(f64, Vec<f64>)>) -> Option<(f64, Vec<f64>)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.0 < x.0 { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Checks ω(Δ, ζ) ≤ φ(Δ²) on the grid; non-positive Δ are skipped.
///
/// The maximizing ζ is not assumed: the whole ζ grid is scanned, which also
/// covers transfer functions whose secant slope peaks away from `ζ = -Δ/2`.
pub fn verify_cover_inequality(
    tf: &TransferFunction,
    p: &CoverParams,
    delta_grid: &GridSpec,
    zeta_grid: &GridSpec,
) -> VerificationReport {
    let deltas: Vec<f64> = delta_grid
        .points()
        .into_iter()
        .filter(|&d| d > 0.0)
        .collect();
    let zetas = zeta_grid.points();
    let worst = deltas
        .par_iter()
        .map(|&d| {
            let bound = phi_unchecked(d * d, p);
            zetas
                .iter()
                .map(|&z| (bound - omega_unchecked(tf, d, z), vec![d, z]))
                .fold(None, |acc, cur| min_margin(acc, Some(cur)))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(None, min_margin);
    VerificationReport::from_worst(
        format!("cover_inequality[{:?}]", tf.kind()),
        format!(
            "delta {} x zeta {}",
            delta_grid.describe(),
            zeta_grid.describe()
        ),
        worst,
    )
}

/// Coarse extension of the cover check to `4 <= |ζ| <= 16`, where the
/// saturating transfer functions only flatten further.
pub fn verify_cover_saturation(tf: &TransferFunction, p: &CoverParams) -> VerificationReport {
    let deltas = GridSpec {
        lo: 0.05,
        hi: 4.0,
        step: 0.05,
    };
    let inner = GridSpec {
        lo: 4.0,
        hi: 16.0,
        step: 0.1,
    };
    let neg = GridSpec {
        lo: -16.0,
        hi: -4.0,
        step: 0.1,
    };
    let a = verify_cover_inequality(tf, p, &deltas, &inner);
    let b = verify_cover_inequality(tf, p, &deltas, &neg);
    let worst = min_margin(
        Some((a.worst_margin, a.worst_point)),
        Some((b.worst_margin, b.worst_point)),
    );
    VerificationReport::from_worst(
        format!("cover_saturation[{:?}]", tf.kind()),
        format!("delta {} x |zeta| in [4, 16] step 0.1", deltas.describe()),
        worst,
    )
}

/// Checks on a z grid the three properties of φ_k used by the convergence argument:
/// `φ_k ≤ 1`, `φ_k` non-increasing and `z φ_k(z)` non-decreasing.
pub fn verify_phi_monotonicity(p: &CoverParams, grid: &GridSpec) -> Result<VerificationReport> {
    let zs: Vec<f64> = grid.points();
    if zs.iter().any(|&z| z < 0.0) {
        return Err(Error::domain("monotonicity grid must be non-negative"));
    }
    let vals: Vec<f64> = zs.iter().map(|&z| phi_k(z, p)).collect::<Result<_>>()?;
    let mut worst = None;
    for (i, (&z, &v)) in zs.iter().zip(&vals).enumerate() {
        worst = min_margin(worst, Some((1.0 - v, vec![z])));
        if i > 0 {
            let (zp, vp) = (zs[i - 1], vals[i - 1]);
            worst = min_margin(worst, Some((vp - v, vec![zp, z])));
            worst = min_margin(worst, Some((z * v - zp * vp, vec![zp, z])));
        }
    }
    Ok(VerificationReport::from_worst(
        "phi_monotonicity",
        format!("z {}", grid.describe()),
        worst,
    ))
}

/// `q_0, ..., q_T` of `q_{t+1} = q_t (1 - η q_t^κ)`.
pub fn iterate_q(q0: f64, p: &CoverParams, steps: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&q0) {
        return Err(Error::domain(format!("q0 must lie in [0, 1], got {q0}")));
    }
    if p.eta * q0.powf(p.kappa) >= 1.0 {
        return Err(Error::domain("eta * q0^kappa must stay below 1"));
    }
    let mut q = Vec::with_capacity(steps + 1);
    let mut cur = q0;
    q.push(cur);
    for _ in 0..steps {
        cur *= 1.0 - p.eta * cur.powf(p.kappa);
        q.push(cur);
    }
    Ok(q)
}

/// Closed-form cover `q*(t) = [(η/κ) t + q_0^{-κ}]^{-1/κ}`.
pub fn q_star(t: f64, q0: f64, p: &CoverParams) -> f64 {
    if t == 0.0 {
        return q0;
    }
    (p.eta / p.kappa * t + q0.powf(-p.kappa)).powf(-1.0 / p.kappa)
}

/// Checks `q*(t) ≥ q_t` for `t = 0..=T`.
pub fn verify_dominance(q0: f64, p: &CoverParams, steps: usize) -> Result<VerificationReport> {
    if !(q0 > 0.0 && q0 <= 1.0) {
        return Err(Error::domain(format!("q0 must lie in (0, 1], got {q0}")));
    }
    let q = iterate_q(q0, p, steps)?;
    let worst = q
        .iter()
        .enumerate()
        .map(|(t, &qt)| (q_star(t as f64, q0, p) - qt, vec![t as f64]))
        .fold(None, |acc, cur| min_margin(acc, Some(cur)));
    Ok(VerificationReport::from_worst(
        format!("dominance[q0={q0}]"),
        format!("t in 0..={steps}"),
        worst,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    /// Largest singular value `S < 1`: plain exponential contraction.
    Subcritical { s: f64 },
    /// `S = 1` while `d² ≥ γ`: exponential with factor `1 - η γ^κ`.
    CriticalFar,
    /// `S = 1` once `d² < γ`: power-law phase.
    CriticalNear,
}

/// Upper bound on the steps needed to bring a distance `d0` below `epsilon`.
///
/// For `n > 1` neurons the bound uses φ_k, i.e. `η/n^{2κ}` and `γ n²`.
pub fn tau_bound(epsilon: f64, d0: f64, regime: Regime, p: &CoverParams) -> Result<f64> {
    if !(epsilon > 0.0 && d0 > 0.0 && epsilon.is_finite() && d0.is_finite()) {
        return Err(Error::domain(format!(
            "need positive epsilon and d0, got {epsilon}, {d0}"
        )));
    }
    let n2 = (p.n_neurons as f64).powi(2);
    let eta_k = p.eta / n2.powf(p.kappa);
    let gamma_k = p.gamma * n2;
    match regime {
        Regime::Subcritical { s } => {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::domain(format!(
                    "subcritical regime needs 0 < S < 1, got {s}"
                )));
            }
            if epsilon >= d0 {
                return Err(Error::domain("subcritical bound needs epsilon < d0"));
            }
            Ok((epsilon.ln() - d0.ln()) / s.ln())
        }
        Regime::CriticalFar => {
            if epsilon >= d0 {
                return Err(Error::domain("far-phase bound needs epsilon < d0"));
            }
            if epsilon * epsilon < gamma_k {
                return Err(Error::domain("far-phase bound needs epsilon² >= gamma"));
            }
            let factor = 1.0 - eta_k * gamma_k.powf(p.kappa);
            Ok((2.0 * epsilon.ln() - 2.0 * d0.ln()) / factor.ln())
        }
        Regime::CriticalNear => {
            if epsilon * epsilon >= gamma_k {
                return Err(Error::domain("near-phase bound needs epsilon² < gamma"));
            }
            let q0 = d0 * d0;
            let bound = p.kappa / eta_k * (epsilon.powf(-2.0 * p.kappa) - q0.powf(-p.kappa));
            Ok(bound.max(0.0))
        }
    }
}

/// Audits every step of a twin-trajectory trace against
/// `q²_{t+1} ≤ S² q²_t · φ_k(S² q²_t)` (plus [`MARGIN_TOL`]).
pub fn audit_step_inequality(
    trace: &ConvergenceTrace,
    s: f64,
    p: &CoverParams,
) -> VerificationReport {
    let worst = trace
        .q
        .windows(2)
        .enumerate()
        .map(|(t, w)| {
            let z = s * s * w[0] * w[0];
            let n = p.n_neurons as f64;
            let bound = z * phi_unchecked(z / (n * n), p);
            (bound - w[1] * w[1], vec![t as f64])
        })
        .fold(None, |acc, cur| min_margin(acc, Some(cur)));
    VerificationReport::from_worst(
        "step_inequality",
        format!(
            "t in 0..{} ({})",
            trace.q.len().saturating_sub(1),
            trace.meta.reservoir
        ),
        worst,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn defaults() -> CoverParams {
        CoverParams::for_neurons(1).unwrap()
    }

    fn delta_grid() -> GridSpec {
        GridSpec::new(0.0, 4.0, 1e-2).unwrap()
    }

    fn zeta_grid() -> GridSpec {
        GridSpec::new(-4.0, 4.0, 1e-2).unwrap()
    }

    #[test]
    fn params_validation() {
        let p = defaults();
        assert_eq!((p.eta, p.gamma, p.kappa), (1.0 / 48.0, 0.5, 2.0));
        assert_abs_diff_eq!(
            CoverParams::for_neurons(4).unwrap().eta,
            1.0 / 768.0,
            epsilon = 1e-18
        );
        assert!(CoverParams::new(0.0, 0.5, 2.0, 1).is_err());
        assert!(CoverParams::new(0.1, 1.0, 2.0, 1).is_err());
        assert!(CoverParams::new(0.1, 0.5, 0.5, 1).is_err());
        assert!(CoverParams::new(0.1, 0.5, 2.0, 0).is_err());
    }

    #[test]
    fn phi_examples() {
        let p = defaults();
        assert_eq!(phi(0.0, &p).unwrap(), 1.0);
        assert_abs_diff_eq!(phi(0.5, &p).unwrap(), 191.0 / 192.0, epsilon = 1e-15);
        assert_abs_diff_eq!(phi(2.0, &p).unwrap(), 191.0 / 192.0, epsilon = 1e-15);
        assert!(phi(-1e-3, &p).is_err());
        let p4 = CoverParams::for_neurons(4).unwrap();
        assert_eq!(phi_k(16.0 * 0.25, &p4).unwrap(), phi(0.25, &p4).unwrap());
    }

    #[test]
    fn omega_examples() {
        let t = TransferFunction::tanh();
        let peak = omega(&t, 1.0, -0.5).unwrap();
        assert_abs_diff_eq!(peak, (2.0 * 0.5f64.tanh()).powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(peak, 0.854209, epsilon = 1e-6);
        assert!(omega(&t, 1.0, 0.0).unwrap() < peak);
        for (d, z) in [(0.3, -2.0), (2.0, 5.0), (1e-3, 0.7)] {
            assert_abs_diff_eq!(
                omega(&TransferFunction::linear(), d, z).unwrap(),
                1.0,
                epsilon = 1e-12
            );
        }
        assert!(omega(&t, 0.0, 0.0).is_err());
    }

    #[test]
    fn omega_argmax_at_half_delta() {
        let t = TransferFunction::tanh();
        for d in [0.1, 1.0, 3.0] {
            let (z, _) = omega_argmax(&t, d, -4.0, 4.0, 1e-9).unwrap();
            assert_abs_diff_eq!(z, -d / 2.0, epsilon = 1e-6);
        }
        // The sine sigmoid peaks when the secant is centred on an ECP.
        let s = TransferFunction::sine_sigmoid();
        let (z, _) = omega_argmax(&s, 0.5, 0.0, 3.0, 1e-9).unwrap();
        assert_abs_diff_eq!(z, std::f64::consts::FRAC_PI_2 - 0.25, epsilon = 1e-6);
    }

    #[test]
    fn cover_inequality_examples() {
        let p = defaults();
        let tanh =
            verify_cover_inequality(&TransferFunction::tanh(), &p, &delta_grid(), &zeta_grid());
        assert!(tanh.passed, "{tanh:?}");
        assert!(tanh.worst_margin >= 0.0);
        let sine = verify_cover_inequality(
            &TransferFunction::sine_sigmoid(),
            &p,
            &delta_grid(),
            &zeta_grid(),
        );
        assert!(sine.passed, "{sine:?}");
        let lin =
            verify_cover_inequality(&TransferFunction::linear(), &p, &delta_grid(), &zeta_grid());
        assert!(!lin.passed);

        let greedy = CoverParams::new(0.5, 0.5, 2.0, 1).unwrap();
        let r = verify_cover_inequality(
            &TransferFunction::tanh(),
            &greedy,
            &delta_grid(),
            &zeta_grid(),
        );
        assert!(!r.passed);
        // Recompute the violation at the reported point.
        let (d, z) = (r.worst_point[0], r.worst_point[1]);
        let value = ((d + z).tanh() - z.tanh()).powi(2) / (d * d);
        let bound = if d * d < 0.5 {
            1.0 - 0.5 * d.powi(4)
        } else {
            1.0 - 0.5 * 0.25
        };
        assert!(bound < value);
    }

    #[test]
    fn cover_saturation_holds() {
        let p = defaults();
        assert!(verify_cover_saturation(&TransferFunction::tanh(), &p).passed);
        assert!(verify_cover_saturation(&TransferFunction::sine_sigmoid(), &p).passed);
    }

    #[test]
    fn phi_monotone() {
        for n in [1, 2, 4] {
            let p = CoverParams::for_neurons(n).unwrap();
            let r = verify_phi_monotonicity(&p, &GridSpec::new(0.0, 40.0, 1e-3).unwrap()).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn iterate_examples() {
        let p = defaults();
        let q = iterate_q(0.5, &p, 2).unwrap();
        assert_abs_diff_eq!(q[1], 0.5 * (1.0 - 1.0 / 192.0), epsilon = 1e-15);
        assert_eq!(q.len(), 3);
        assert!(iterate_q(0.0, &p, 5).unwrap().iter().all(|&v| v == 0.0));
        assert!(iterate_q(1.5, &p, 1).is_err());
        let long = iterate_q(0.5, &p, 1_000_000).unwrap();
        let ratio = q_star(1e6, 0.5, &p) / long[1_000_000];
        assert!((0.5..=2.0).contains(&ratio), "{ratio}");
        assert!(long.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn q_star_examples() {
        let p = defaults();
        assert_eq!(q_star(0.0, 0.5, &p), 0.5);
        assert_abs_diff_eq!(q_star(96.0, 0.5, &p), 5f64.powf(-0.5), epsilon = 1e-15);
        assert!(q_star(1e300, 0.5, &p) < 1e-140);
    }

    #[test]
    fn dominance_examples() {
        let p = defaults();
        assert!(verify_dominance(0.5, &p, 100_000).unwrap().passed);
        let one = verify_dominance(0.5, &p, 1).unwrap();
        assert!(one.passed);
        assert!(q_star(1.0, 0.5, &p) >= iterate_q(0.5, &p, 1).unwrap()[1]);
        assert!(verify_dominance(1.0, &p, 1000).unwrap().passed);
        assert!(verify_dominance(0.0, &p, 10).is_err());
    }

    #[test]
    fn tau_examples() {
        let p = defaults();
        let sub = tau_bound(0.01, 1.0, Regime::Subcritical { s: 0.5 }, &p).unwrap();
        assert_abs_diff_eq!(sub, 0.01f64.ln() / 0.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(sub, 6.64, epsilon = 5e-3);
        assert_abs_diff_eq!(p.kappa / p.eta, 96.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            tau_bound(0.3, 0.3, Regime::CriticalNear, &p).unwrap(),
            0.0,
            epsilon = 1e-9
        );
        let near = tau_bound(0.1, 0.5, Regime::CriticalNear, &p).unwrap();
        assert_abs_diff_eq!(near, 96.0 * (1e4 - 16.0), epsilon = 1e-6);
        let far = tau_bound(0.8, 2.0, Regime::CriticalFar, &p).unwrap();
        assert_abs_diff_eq!(
            far,
            2.0 * (0.8f64 / 2.0).ln() / (191.0f64 / 192.0).ln(),
            epsilon = 1e-9
        );

        assert!(tau_bound(0.5, 0.4, Regime::Subcritical { s: 0.5 }, &p).is_err());
        assert!(tau_bound(0.1, 1.0, Regime::Subcritical { s: 1.0 }, &p).is_err());
        assert!(tau_bound(0.1, 1.0, Regime::CriticalFar, &p).is_err());
        assert!(tau_bound(0.9, 1.0, Regime::CriticalNear, &p).is_err());
    }
}
