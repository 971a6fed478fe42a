//! Linear readout training and memory capacity.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::step_into;
use crate::error::{Error, Result};
use crate::format_float;
use crate::reservoir::Reservoir;

pub const DEFAULT_MC_RIDGE: f64 = 1e-8;
pub const DEFAULT_MC_WASHOUT: usize = 200;

/// `w_out` (m×k) mapping a state to `m` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    pub w_out: DMatrix<f64>,
    pub ridge: f64,
    /// RMS error over all training entries.
    pub training_error: f64,
}

/// Ridge regression of `targets` (T×m) on `states` (T×k).
///
/// Solves `(AᵀA + ridge·I) W_outᵀ = AᵀB`; with `ridge = 0` this is ordinary least squares.
pub fn fit_readout(
    states: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    ridge: f64,
) -> Result<ReadoutModel> {
    if states.nrows() != targets.nrows() {
        return Err(Error::Dimension {
            context: "readout targets rows",
            expected: states.nrows(),
            got: targets.nrows(),
        });
    }
    if states.nrows() == 0 || states.ncols() == 0 {
        return Err(Error::domain("empty state matrix"));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::domain(format!("ridge must be >= 0, got {ridge}")));
    }
    let k = states.ncols();
    let mut gram = states.transpose() * states;
    for i in 0..k {
        gram[(i, i)] += ridge;
    }
    let rhs = states.transpose() * targets;
    let chol = gram.clone().cholesky().ok_or(Error::Singular)?;
    if ridge == 0.0 {
        // Cholesky can succeed on a numerically rank-deficient Gram matrix.
        let l = chol.l();
        let diag: Vec<f64> = (0..k).map(|i| l[(i, i)].powi(2)).collect();
        let max = diag.iter().copied().fold(0.0, f64::max);
        let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > max * 1e-14) {
            return Err(Error::Singular);
        }
    }
    let w_out = chol.solve(&rhs).transpose();
    let resid = states * w_out.transpose() - targets;
    let training_error = rms(&resid);
    Ok(ReadoutModel {
        w_out,
        ridge,
        training_error,
    })
}

fn rms(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        (m.norm_squared() / m.len() as f64).sqrt()
    }
}

/// Outputs `states · w_outᵀ` (T×m).
pub fn predict(model: &ReadoutModel, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if states.ncols() != model.w_out.ncols() {
        return Err(Error::Dimension {
            context: "readout state width",
            expected: model.w_out.ncols(),
            got: states.ncols(),
        });
    }
    Ok(states * model.w_out.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryCapacity {
    pub total: f64,
    /// Score for delays `1..=max_delay`.
    pub per_delay: Vec<f64>,
}

/// Memory capacity: sum over delays of the squared correlation between
/// `u_{t-d}` and its linear reconstruction from `x_t`.
///
/// Input is i.i.d. uniform on `[-amplitude, amplitude]`, fed identically to
/// every input channel. After `washout` steps the run is split in half: the
/// first half trains one readout per delay, the second half scores it.
pub fn memory_capacity(
    res: &Reservoir,
    input_amplitude: f64,
    max_delay: usize,
    steps: usize,
    washout: usize,
    ridge: f64,
    seed: u64,
) -> Result<MemoryCapacity> {
    if max_delay == 0 {
        return Err(Error::domain("max_delay must be at least 1"));
    }
    if !(input_amplitude > 0.0 && input_amplitude.is_finite()) {
        return Err(Error::domain(format!(
            "input amplitude must be positive, got {input_amplitude}"
        )));
    }
    let washout = washout.max(max_delay);
    let usable = steps.saturating_sub(washout);
    let k = res.k();
    if usable < 4 * (k + max_delay) {
        return Err(Error::domain(format!(
            "run too short: {steps} steps leave {usable} after washout, need >= {}",
            4 * (k + max_delay)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..=steps)
        .map(|_| rng.random_range(-input_amplitude..=input_amplitude))
        .collect();
    let mut states = DMatrix::zeros(usable, k);
    let mut x = DVector::zeros(k);
    let mut lin = DVector::zeros(k);
    let mut next = DVector::zeros(k);
    let mut u_vec = DVector::zeros(res.n());
    for t in 1..=steps {
        u_vec.fill(u[t]);
        step_into(res, &x, u_vec.as_view(), &mut lin, &mut next);
        std::mem::swap(&mut x, &mut next);
        if t > washout {
            states.set_row(t - washout - 1, &x.transpose());
        }
    }
    let split = usable / 2;
    let train = states.rows(0, split).into_owned();
    let test = states.rows(split, usable - split).into_owned();
    // Row r of `states` holds x_t with t = washout + 1 + r.
    let target = |rows: std::ops::Range<usize>, d: usize| {
        DMatrix::from_iterator(rows.len(), 1, rows.map(|r| u[washout + 1 + r - d]))
    };

    let per_delay: Vec<f64> = (1..=max_delay)
        .into_par_iter()
        .map(|d| -> Result<f64> {
            let model = fit_readout(&train, &target(0..split, d), ridge)?;
            let pred = predict(&model, &test)?;
            let truth = target(split..usable, d);
            Ok(squared_correlation(pred.as_slice(), truth.as_slice()))
        })
        .collect::<Result<_>>()?;
    Ok(MemoryCapacity {
        total: per_delay.iter().sum(),
        per_delay,
    })
}

fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab * sab / (saa * sbb)).clamp(0.0, 1.0)
    }
}

/// Writes `delay,score` rows followed by a `total,<sum>` row.
pub fn write_mc_csv<W: Write>(mc: &MemoryCapacity, mut out: W) -> std::io::Result<()> {
    writeln!(out, "delay,score")?;
    for (i, s) in mc.per_delay.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, format_float(*s))?;
    }
    writeln!(out, "total,{}", format_float(mc.total))
}
