//! Reservoir construction, spectral summaries and the echo-state conditions.
//!
//! The necessary condition C1 asks for `max |λ(W)| < 1`, the sufficient
//! condition C2 for `max s(W) < 1`. For normal matrices both quantities
//! coincide, which leaves the single boundary `max s = max |λ| = 1` that
//! neither condition decides. [`check_esc`] reports where a reservoir sits
//! relative to these sets.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format_float;
use crate::transfer::TransferFunction;

/// Relative tolerance used by the normality test and spectral rescaling.
pub const SPECTRAL_TOL: f64 = 1e-9;

/// Recurrent weights `W` (k×k), input weights `w_in` (k×n) and a transfer function.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    w: DMatrix<f64>,
    w_in: DMatrix<f64>,
    tf: TransferFunction,
}

impl Reservoir {
    pub fn new(w: DMatrix<f64>, w_in: DMatrix<f64>, tf: TransferFunction) -> Result<Self> {
        if !w.is_square() || w.nrows() == 0 {
            return Err(Error::domain(format!(
                "recurrent matrix must be square and non-empty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w_in.nrows() != w.nrows() {
            return Err(Error::Dimension {
                context: "input matrix rows",
                expected: w.nrows(),
                got: w_in.nrows(),
            });
        }
        if w_in.ncols() == 0 {
            return Err(Error::domain("input matrix needs at least one column"));
        }
        if w.iter().chain(w_in.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("weights must be finite"));
        }
        Ok(Self { w, w_in, tf })
    }

    /// One neuron `x_t = θ(w x_{t-1} + w_in u_t)`.
    pub fn single_neuron(w: f64, w_in: f64, tf: TransferFunction) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, w),
            DMatrix::from_element(1, 1, w_in),
            tf,
        )
    }

    /// The alternating-input neuron `x_t = θ(-b x_{t-1} + (2 - b) u_t)`.
    ///
    /// With the sine sigmoid and `u_t = (-1)^t π/4` the orbit `x_t = (-1)^t π/4`
    /// is invariant for every `b`, and it sits on the epi-critical points ±π/2.
    pub fn alternating_neuron(b: f64, tf: TransferFunction) -> Result<Self> {
        Self::single_neuron(-b, 2.0 - b, tf)
    }

    pub fn with_transfer(mut self, tf: TransferFunction) -> Self {
        self.tf = tf;
        self
    }

    /// Replaces `W`, keeping the input matrix and transfer function.
    pub fn with_recurrent(self, w: DMatrix<f64>) -> Result<Self> {
        Self::new(w, self.w_in, self.tf)
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn w_in(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn tf(&self) -> &TransferFunction {
        &self.tf
    }

    /// Hidden dimension k.
    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    /// Input dimension n.
    pub fn n(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn describe(&self) -> String {
        format!(
            "k={} n={} transfer={:?}",
            self.k(),
            self.n(),
            self.tf.kind()
        )
    }
}

/// Random orthogonal `W` (Haar-distributed) and uniform `w_in` in `[-input_scale, input_scale]`.
///
/// The transfer function defaults to `tanh`; use [`Reservoir::with_transfer`] to change it.
pub fn make_orthogonal_reservoir(
    k: usize,
    n: usize,
    input_scale: f64,
    seed: u64,
) -> Result<Reservoir> {
    if k == 0 || n == 0 {
        return Err(Error::domain(format!(
            "dimensions must be positive, got k={k} n={n}"
        )));
    }
    if !input_scale.is_finite() || input_scale < 0.0 {
        return Err(Error::domain(format!(
            "input scale must be finite and >= 0, got {input_scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_orthogonal(k, &mut rng);
    let w_in = DMatrix::from_fn(k, n, |_, _| {
        if input_scale == 0.0 {
            0.0
        } else {
            rng.random_range(-input_scale..=input_scale)
        }
    });
    Reservoir::new(w, w_in, TransferFunction::tanh())
}

/// Orthonormalizes a Gaussian matrix; the sign fix on `R`'s diagonal makes the result Haar.
pub fn random_orthogonal(k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Gaussian `k×k` matrix with i.i.d. standard normal entries.
pub fn random_gaussian(k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMode {
    /// Largest singular value.
    Singular,
    /// Largest absolute eigenvalue (spectral radius).
    Eigen,
}

/// Uniformly rescales `w` so its largest singular value or spectral radius equals `target`.
pub fn scale_to_spectrum(
    w: &DMatrix<f64>,
    target: f64,
    mode: SpectralMode,
) -> Result<DMatrix<f64>> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::domain(format!(
            "target must be positive, got {target}"
        )));
    }
    let summary = spectral_summary(w)?;
    let current = match mode {
        SpectralMode::Singular => summary.max_singular_value,
        SpectralMode::Eigen => summary.max_abs_eigenvalue,
    };
    if current <= 0.0 {
        return Err(Error::domain(
            "matrix has zero spectrum; no finite scaling reaches the target",
        ));
    }
    if (current - target).abs() <= f64::EPSILON * target {
        return Ok(w.clone());
    }
    Ok(w * (target / current))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub max_abs_eigenvalue: f64,
    pub max_singular_value: f64,
    pub is_normal: bool,
    /// `max |W Wᵀ - Wᵀ W|` entrywise.
    pub normality_residual: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
}

pub fn spectral_summary(w: &DMatrix<f64>) -> Result<SpectralSummary> {
    if !w.is_square() {
        return Err(Error::domain(format!(
            "spectral summary needs a square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("matrix entries must be finite"));
    }
    if w.nrows() == 0 {
        return Err(Error::domain("empty matrix"));
    }
    let mut singular_values: Vec<f64> = w.singular_values().iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let max_abs_eigenvalue = w
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);

    let wt = w.transpose();
    let normality_residual = (w * &wt - &wt * w).amax();
    let scale = 1.0 + w.amax().powi(2);
    Ok(SpectralSummary {
        max_abs_eigenvalue,
        max_singular_value: singular_values[0],
        is_normal: normality_residual <= SPECTRAL_TOL * scale,
        normality_residual,
        singular_values,
    })
}

/// Where a reservoir sits relative to the echo-state conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscVerdict {
    /// C1: `max |λ| < 1`.
    pub c1_necessary: bool,
    /// C2: `max s < 1`.
    pub c2_sufficient: bool,
    /// `max s = max |λ| = 1` within tolerance.
    pub critical_boundary: bool,
    /// On the boundary with a transfer function for which convergence is still proven.
    pub covered_by_theorem: bool,
}

pub fn check_esc(reservoir: &Reservoir, tol: f64) -> Result<EscVerdict> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let s = spectral_summary(reservoir.w())?;
    let critical_boundary =
        (s.max_singular_value - 1.0).abs() <= tol && (s.max_abs_eigenvalue - 1.0).abs() <= tol;
    // Strict inequalities are taken outside the tolerance band so the boundary is exclusive of both.
    let c1_necessary = s.max_abs_eigenvalue < 1.0 - tol;
    let c2_sufficient = s.max_singular_value < 1.0 - tol;
    Ok(EscVerdict {
        c1_necessary,
        c2_sufficient,
        critical_boundary,
        covered_by_theorem: critical_boundary && reservoir.tf().is_weak_contraction(),
    })
}

/// Writes `W` and `w_in` as CSV: a `# k,n` comment line, then k rows of `W | w_in`.
pub fn write_reservoir_csv<W: Write>(reservoir: &Reservoir, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# {},{}", reservoir.k(), reservoir.n())?;
    for i in 0..reservoir.k() {
        let row: Vec<String> = reservoir
            .w()
            .row(i)
            .iter()
            .chain(reservoir.w_in().row(i).iter())
            .map(|&v| format_float(v))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads the format written by [`write_reservoir_csv`].
pub fn read_reservoir_csv<R: BufRead>(
    input: R,
    path: &Path,
    tf: TransferFunction,
) -> Result<Reservoir> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = input.lines().enumerate();
    let (k, n) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_err(1, "missing '# k,n' header".into()));
        };
        let line = line.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let Some(dims) = t.strip_prefix('#') else {
            return Err(parse_err(i + 1, "expected '# k,n' header".into()));
        };
        let parts: Vec<&str> = dims.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [k, n] => match (k.parse::<usize>(), n.parse::<usize>()) {
                (Ok(k), Ok(n)) if k > 0 && n > 0 => break (k, n),
                _ => return Err(parse_err(i + 1, format!("bad dimensions '{dims}'"))),
            },
            _ => return Err(parse_err(i + 1, format!("bad header '{t}'"))),
        }
    };
    let mut w = DMatrix::zeros(k, k);
    let mut w_in = DMatrix::zeros(k, n);
    let mut row = 0;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if row >= k {
            return Err(parse_err(i + 1, format!("more than {k} data rows")));
        }
        let vals: Vec<f64> = t
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        if vals.len() != k + n {
            return Err(parse_err(
                i + 1,
                format!("expected {} values, got {}", k + n, vals.len()),
            ));
        }
        w.row_mut(row)
            .copy_from(&DVector::from_column_slice(&vals[..k]).transpose());
        w_in.row_mut(row)
            .copy_from(&DVector::from_column_slice(&vals[k..]).transpose());
        row += 1;
    }
    if row != k {
        return Err(parse_err(0, format!("expected {k} data rows, got {row}")));
    }
    Reservoir::new(w, w_in, tf)
}
