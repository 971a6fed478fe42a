//! Transfer functions θ with Lipschitz constant one and their epi-critical points.
//!
//! An epi-critical point (ECP) is a point where θ' reaches exactly one. Since
//! the slope never exceeds one, ECPs are inflection points of θ. A reservoir
//! whose linear states sit on ECPs for the expected input neither contracts
//! nor expands to first order.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Anchors further away than this fall back to the plain `tanh` piece.
const TAILORED_REACH: f64 = 1.0;
const ECP_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    /// `tanh(x)`, a single ECP at the origin.
    Tanh,
    /// `0.5 x - 0.25 sin(2x)`, ECPs at `(n + 1/2) π` lying on `y = x/2`.
    SineSigmoid,
    /// Piecewise `tanh(x - Π) + tanh(Π)` around user anchors Π, `tanh(x)` elsewhere.
    Tailored,
    /// Identity. Slope one everywhere, so not a weak contraction.
    Linear,
}

/// Immutable descriptor of a transfer function.
///
/// Serialized as `{"kind": "...", "params": [...]}` where `params` holds the
/// tailored anchors and is empty for the other kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransferRecord", into = "TransferRecord")]
pub struct TransferFunction {
    kind: TransferKind,
    anchors: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransferRecord {
    kind: TransferKind,
    #[serde(default)]
    params: Vec<f64>,
}

impl TryFrom<TransferRecord> for TransferFunction {
    type Error = Error;

    fn try_from(rec: TransferRecord) -> Result<Self> {
        match rec.kind {
            TransferKind::Tailored => TransferFunction::tailored(rec.params),
            kind if rec.params.is_empty() => Ok(TransferFunction {
                kind,
                anchors: vec![],
            }),
            kind => Err(Error::domain(format!(
                "transfer kind {kind:?} takes no params"
            ))),
        }
    }
}

impl From<TransferFunction> for TransferRecord {
    fn from(tf: TransferFunction) -> Self {
        TransferRecord {
            kind: tf.kind,
            params: tf.anchors,
        }
    }
}

impl TransferFunction {
    pub fn tanh() -> Self {
        Self {
            kind: TransferKind::Tanh,
            anchors: vec![],
        }
    }

    pub fn sine_sigmoid() -> Self {
        Self {
            kind: TransferKind::SineSigmoid,
            anchors: vec![],
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: TransferKind::Linear,
            anchors: vec![],
        }
    }

    /// Tailored function with ECPs at the given anchors (sorted, deduplicated).
    pub fn tailored(mut anchors: Vec<f64>) -> Result<Self> {
        for &a in &anchors {
            ensure_finite(a, "tailored anchor")?;
        }
        anchors.sort_by(f64::total_cmp);
        anchors.dedup();
        Ok(Self {
            kind: TransferKind::Tailored,
            anchors,
        })
    }

    /// Builds the non-tailored kinds; tailored needs [`TransferFunction::tailored`].
    pub fn from_kind(kind: TransferKind) -> Result<Self> {
        TransferRecord {
            kind,
            params: vec![],
        }
        .try_into()
    }

    pub fn kind(&self) -> TransferKind {
        self.kind
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    /// Whether the contraction theorem at `S = 1` applies to this function.
    pub fn is_weak_contraction(&self) -> bool {
        matches!(self.kind, TransferKind::Tanh | TransferKind::SineSigmoid)
    }

    /// θ(x).
    pub fn eval(&self, x: f64) -> Result<f64> {
        ensure_finite(x, "transfer argument")?;
        Ok(self.apply(x))
    }

    /// θ'(x), analytic.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        ensure_finite(x, "transfer argument")?;
        Ok(self.slope(x))
    }

    /// Unchecked θ(x) for the simulation hot loop. Non-finite inputs propagate.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            TransferKind::Tanh => x.tanh(),
            TransferKind::SineSigmoid => 0.5 * x - 0.25 * (2.0 * x).sin(),
            TransferKind::Linear => x,
            TransferKind::Tailored => match self.active_anchor(x) {
                Some(p) => (x - p).tanh() + p.tanh(),
                None => x.tanh(),
            },
        }
    }

    /// Unchecked θ'(x).
    #[inline]
    pub fn slope(&self, x: f64) -> f64 {
        match self.kind {
            TransferKind::Tanh => sech2(x),
            TransferKind::SineSigmoid => 0.5 - 0.5 * (2.0 * x).cos(),
            TransferKind::Linear => 1.0,
            TransferKind::Tailored => sech2(x - self.active_anchor(x).unwrap_or(0.0)),
        }
    }

    /// θ''(x), used by the Newton refinement of tailored ECPs.
    fn curvature(&self, x: f64) -> f64 {
        let c = |z: f64| -2.0 * z.tanh() * sech2(z);
        match self.kind {
            TransferKind::Tanh => c(x),
            TransferKind::SineSigmoid => (2.0 * x).sin(),
            TransferKind::Linear => 0.0,
            TransferKind::Tailored => c(x - self.active_anchor(x).unwrap_or(0.0)),
        }
    }

    /// Anchor whose piece covers `x`: the nearest one within reach, ties to the smaller.
    fn active_anchor(&self, x: f64) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for &a in &self.anchors {
            let d = (x - a).abs();
            if d <= TAILORED_REACH && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((a, d));
            }
        }
        best.map(|(a, _)| a)
    }

    /// All epi-critical points in `[lo, hi]`, sorted ascending.
    pub fn epi_critical_points(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        ensure_finite(lo, "lo")?;
        ensure_finite(hi, "hi")?;
        if lo >= hi {
            return Err(Error::domain(format!("empty window [{lo}, {hi}]")));
        }
        let points = match self.kind {
            TransferKind::Linear => {
                return Err(Error::domain(
                    "linear transfer has slope one everywhere; no isolated epi-critical points",
                ))
            }
            TransferKind::Tanh => {
                if lo <= 0.0 && 0.0 <= hi {
                    vec![0.0]
                } else {
                    vec![]
                }
            }
            TransferKind::SineSigmoid => {
                let first = (lo / PI - 0.5).ceil() as i64;
                let last = (hi / PI - 0.5).floor() as i64;
                (first..=last)
                    .map(|n| n as f64 * PI + FRAC_PI_2)
                    .filter(|p| (lo..=hi).contains(p))
                    .collect()
            }
            TransferKind::Tailored => {
                let mut pts: Vec<f64> = std::iter::once(0.0)
                    .chain(self.anchors.iter().copied())
                    .filter_map(|seed| self.refine_ecp(seed))
                    .filter(|p| (lo..=hi).contains(p))
                    .collect();
                pts.sort_by(f64::total_cmp);
                pts.dedup_by(|a, b| (*a - *b).abs() <= ECP_TOL);
                pts
            }
        };
        Ok(points)
    }

    /// Newton iterations on θ'(x) - 1 from `seed`; `None` if no slope-one point is reached.
    fn refine_ecp(&self, seed: f64) -> Option<f64> {
        let mut x = seed;
        for _ in 0..NEWTON_MAX_ITER {
            let f = self.slope(x) - 1.0;
            if f.abs() <= ECP_TOL {
                return Some(x);
            }
            let df = self.curvature(x);
            if df == 0.0 || !df.is_finite() {
                return None;
            }
            x -= f / df;
        }
        None
    }

    /// Jumps of a tailored function at its piece boundaries, as `(x, θ(x+) - θ(x-))`.
    ///
    /// The nearest-anchor rule does not make the pieces meet, so this reports
    /// where and by how much continuity fails. Empty for the other kinds.
    pub fn discontinuities(&self) -> Vec<(f64, f64)> {
        if self.kind != TransferKind::Tailored {
            return vec![];
        }
        let mut cuts: Vec<f64> = Vec::new();
        for (i, &a) in self.anchors.iter().enumerate() {
            cuts.push(a - TAILORED_REACH);
            cuts.push(a + TAILORED_REACH);
            if let Some(&b) = self.anchors.get(i + 1) {
                cuts.push(0.5 * (a + b));
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.into_iter()
            .filter_map(|c| {
                let h = 1e-9 * (1.0 + c.abs());
                let jump = self.apply(c + h) - self.apply(c - h);
                (jump.abs() > 1e-6).then_some((c, jump))
            })
            .collect()
    }
}

/// Largest secant slope of θ over a uniform grid of `n_grid` points on `[lo, hi]`.
pub fn max_slope_estimate(tf: &TransferFunction, lo: f64, hi: f64, n_grid: usize) -> Result<f64> {
    ensure_finite(lo, "lo")?;
    ensure_finite(hi, "hi")?;
    if lo >= hi {
        return Err(Error::domain(format!("empty interval [{lo}, {hi}]")));
    }
    if n_grid < 2 {
        return Err(Error::domain("grid needs at least two points"));
    }
    let step = (hi - lo) / (n_grid - 1) as f64;
    let xs: Vec<f64> = (0..n_grid).map(|i| lo + step * i as f64).collect();
    Ok(xs
        .windows(2)
        .map(|w| ((tf.apply(w[1]) - tf.apply(w[0])) / (w[1] - w[0])).abs())
        .fold(0.0, f64::max))
}

#[inline]
fn sech2(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}
