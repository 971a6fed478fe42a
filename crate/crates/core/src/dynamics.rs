//! Input sequences, trajectories and twin-trajectory convergence experiments.
//!
//! Time convention: `x_0` is the initial state and for `t >= 1`
//!
//! ```text
//! x_lin,t = W x_{t-1} + w_in u_t
//! x_t     = θ(x_lin,t)
//! ```
//!
//! so the input `u_0` never drives an update; it only fixes the phase of
//! periodic inputs relative to `x_0`. Alternating input starts with
//! `u_0 = +amplitude`, hence `x_0 = π/4` is on the expected orbit of the
//! alternating neuron.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format_float;
use crate::reservoir::Reservoir;

/// Distances below this are flushed to zero.
pub const DISTANCE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSequence {
    /// `u_t = (-1)^t · amplitude`.
    Alternating {
        amplitude: f64,
    },
    /// `u_t = ±amplitude` with i.i.d. fair signs drawn from `seed`.
    IidSign {
        amplitude: f64,
        seed: u64,
    },
    Constant {
        value: f64,
    },
    /// CSV file, one row per time step starting at `t = 0`. A single column
    /// is broadcast to every input channel. `#` lines are comments.
    File {
        path: PathBuf,
    },
}

impl InputSequence {
    pub fn describe(&self) -> String {
        match self {
            Self::Alternating { amplitude } => format!("alternating({amplitude})"),
            Self::IidSign { amplitude, seed } => format!("iid_sign({amplitude}, seed={seed})"),
            Self::Constant { value } => format!("constant({value})"),
            Self::File { path } => format!("file({})", path.display()),
        }
    }

    /// Same sequence with its seed replaced, if it has one.
    pub fn reseeded(&self, new_seed: u64) -> Self {
        match self {
            Self::IidSign { amplitude, .. } => Self::IidSign {
                amplitude: *amplitude,
                seed: new_seed,
            },
            other => other.clone(),
        }
    }
}

/// Generates `u_0, ..., u_{len-1}` as a `dim × len` matrix (column t is `u_t`).
pub fn generate_input(spec: &InputSequence, len: usize, dim: usize) -> Result<DMatrix<f64>> {
    if len == 0 || dim == 0 {
        return Err(Error::domain(format!(
            "input length and dimension must be positive, got {len}x{dim}"
        )));
    }
    Ok(match spec {
        InputSequence::Alternating { amplitude } => {
            DMatrix::from_fn(
                dim,
                len,
                |_, t| {
                    if t % 2 == 0 {
                        *amplitude
                    } else {
                        -*amplitude
                    }
                },
            )
        }
        InputSequence::IidSign { amplitude, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            DMatrix::from_fn(dim, len, |_, _| {
                if rng.random::<bool>() {
                    *amplitude
                } else {
                    -*amplitude
                }
            })
        }
        InputSequence::Constant { value } => DMatrix::from_element(dim, len, *value),
        InputSequence::File { path } => read_input_file(path, len, dim)?,
    })
}

fn read_input_file(path: &PathBuf, len: usize, dim: usize) -> Result<DMatrix<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut out = DMatrix::zeros(dim, len);
    let mut t = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        if t == len {
            break;
        }
        let line = line.map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.clone(),
            line: i + 1,
            msg,
        };
        let vals: Vec<f64> = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(e.to_string()))?;
        match vals.len() {
            1 => out.column_mut(t).fill(vals[0]),
            n if n == dim => out.column_mut(t).copy_from_slice(&vals),
            n => return Err(parse_err(format!("expected 1 or {dim} values, got {n}"))),
        }
        t += 1;
    }
    if t < len {
        return Err(Error::Parse {
            path: path.clone(),
            line: 0,
            msg: format!("needs {len} input rows, found {t}"),
        });
    }
    Ok(out)
}

/// One update: returns `(x_next, x_lin_next)`.
pub fn step(
    res: &Reservoir,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_len("state", res.k(), x.len())?;
    check_len("input", res.n(), u.len())?;
    let mut lin = DVector::zeros(res.k());
    let mut next = DVector::zeros(res.k());
    step_into(res, x, u.as_view(), &mut lin, &mut next);
    Ok((next, lin))
}

/// Allocation-free update used by the simulation loops. Dimensions are the caller's job.
#[inline]
pub(crate) fn step_into(
    res: &Reservoir,
    x: &DVector<f64>,
    u: DVectorView<'_, f64>,
    lin: &mut DVector<f64>,
    next: &mut DVector<f64>,
) {
    lin.gemv(1.0, res.w(), x, 0.0);
    lin.gemv(1.0, res.w_in(), &u, 1.0);
    let tf = res.tf();
    next.zip_apply(lin, |o, l| *o = tf.apply(l));
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}

/// States `x_1..x_T` and linear states `x_lin,1..x_lin,T`, stored as k×T columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x0: DVector<f64>,
    pub states: DMatrix<f64>,
    pub linear_states: DMatrix<f64>,
    pub input: InputSequence,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    /// `x_t` for `t` in `0..=T`.
    pub fn state(&self, t: usize) -> DVector<f64> {
        if t == 0 {
            self.x0.clone()
        } else {
            self.states.column(t - 1).into_owned()
        }
    }
}

/// Simulates `T` updates from `x0`.
pub fn run(
    res: &Reservoir,
    input: &InputSequence,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    check_len("initial state", res.k(), x0.len())?;
    let inputs = generate_input(input, steps + 1, res.n())?;
    let k = res.k();
    let mut states = DMatrix::zeros(k, steps);
    let mut linear_states = DMatrix::zeros(k, steps);
    let mut x = x0.clone();
    let mut lin = DVector::zeros(k);
    let mut next = DVector::zeros(k);
    for t in 1..=steps {
        step_into(res, &x, inputs.column(t), &mut lin, &mut next);
        states.set_column(t - 1, &next);
        linear_states.set_column(t - 1, &lin);
        std::mem::swap(&mut x, &mut next);
    }
    Ok(Trajectory {
        x0: x0.clone(),
        states,
        linear_states,
        input: input.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub reservoir: String,
    pub input: InputSequence,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    /// Time index of the perturbed input, for perturbation experiments.
    pub perturb_at: Option<usize>,
    pub delta_u: Option<Vec<f64>>,
}

/// Distances `q_t = ‖x_t - y_t‖₂` for `t = 0..=T` between twin runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub q: Vec<f64>,
    pub meta: TraceMeta,
    /// First time the twins coincided after their difference was introduced.
    /// All later entries are zero.
    pub floor_hit_at: Option<usize>,
}

impl ConvergenceTrace {
    /// Horizon T (the trace holds T + 1 samples).
    pub fn horizon(&self) -> usize {
        self.q.len() - 1
    }

    /// Smallest `t` with `q_s <= eps` for every `s >= t` in the trace.
    pub fn settle_time(&self, eps: f64) -> Option<usize> {
        match self.q.iter().rposition(|&q| q > eps) {
            None => Some(0),
            Some(last) if last + 1 < self.q.len() => Some(last + 1),
            Some(_) => None,
        }
    }
}

/// Twin runs from `x0` and `y0` driven by the same input realization.
pub fn convergence_trace(
    res: &Reservoir,
    input: &InputSequence,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    steps: usize,
) -> Result<ConvergenceTrace> {
    let meta = TraceMeta {
        reservoir: res.describe(),
        input: input.clone(),
        x0: x0.iter().copied().collect(),
        y0: y0.iter().copied().collect(),
        perturb_at: None,
        delta_u: None,
    };
    twin_trace(res, input, x0, y0, steps, None, meta)
}

/// Two copies from the zero state; at time `perturb_at` one receives `u + delta_u`.
pub fn perturbation_experiment(
    res: &Reservoir,
    base_input: &InputSequence,
    perturb_at: usize,
    delta_u: &DVector<f64>,
    steps: usize,
) -> Result<ConvergenceTrace> {
    perturbation_experiment_from(
        res,
        base_input,
        &DVector::zeros(res.k()),
        perturb_at,
        delta_u,
        steps,
    )
}

/// [`perturbation_experiment`] from a chosen common initial state.
///
/// `perturb_at` is the time index of the perturbed input and must lie in `1..=T`.
pub fn perturbation_experiment_from(
    res: &Reservoir,
    base_input: &InputSequence,
    x0: &DVector<f64>,
    perturb_at: usize,
    delta_u: &DVector<f64>,
    steps: usize,
) -> Result<ConvergenceTrace> {
    if perturb_at == 0 || perturb_at > steps {
        return Err(Error::domain(format!(
            "perturbation time must lie in 1..={steps}, got {perturb_at}"
        )));
    }
    check_len("input perturbation", res.n(), delta_u.len())?;
    let meta = TraceMeta {
        reservoir: res.describe(),
        input: base_input.clone(),
        x0: x0.iter().copied().collect(),
        y0: x0.iter().copied().collect(),
        perturb_at: Some(perturb_at),
        delta_u: Some(delta_u.iter().copied().collect()),
    };
    twin_trace(
        res,
        base_input,
        x0,
        x0,
        steps,
        Some((perturb_at, delta_u)),
        meta,
    )
}

fn twin_trace(
    res: &Reservoir,
    input: &InputSequence,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    steps: usize,
    perturbation: Option<(usize, &DVector<f64>)>,
    meta: TraceMeta,
) -> Result<ConvergenceTrace> {
    if steps == 0 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    let k = res.k();
    check_len("initial state x0", k, x0.len())?;
    check_len("initial state y0", k, y0.len())?;
    let inputs = generate_input(input, steps + 1, res.n())?;
    // The floor only counts once the twins have been made to differ.
    let armed_from = perturbation.map_or(0, |(t, _)| t);

    let mut q = vec![0.0; steps + 1];
    let mut floor_hit_at = None;
    let (mut x, mut y) = (x0.clone(), y0.clone());
    let mut lin = DVector::zeros(k);
    let mut next = DVector::zeros(k);
    let mut u_y = DVector::zeros(res.n());

    q[0] = flush(distance(&x, &y));
    if q[0] == 0.0 && armed_from == 0 {
        floor_hit_at = Some(0);
    }
    if floor_hit_at.is_none() {
        for t in 1..=steps {
            step_into(res, &x, inputs.column(t), &mut lin, &mut next);
            std::mem::swap(&mut x, &mut next);
            match perturbation {
                Some((at, delta)) if at == t => {
                    u_y.copy_from(&inputs.column(t));
                    u_y += delta;
                    step_into(res, &y, u_y.as_view(), &mut lin, &mut next);
                }
                _ => step_into(res, &y, inputs.column(t), &mut lin, &mut next),
            }
            std::mem::swap(&mut y, &mut next);
            q[t] = flush(distance(&x, &y));
            if q[t] == 0.0 && t >= armed_from {
                floor_hit_at = Some(t);
                break;
            }
        }
    }
    Ok(ConvergenceTrace {
        q,
        meta,
        floor_hit_at,
    })
}

#[inline]
fn distance(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn flush(q: f64) -> f64 {
    if q < DISTANCE_FLOOR {
        0.0
    } else {
        q
    }
}

/// Writes `t,q` rows with a header.
pub fn write_trace_csv<W: Write>(trace: &ConvergenceTrace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,q")?;
    for (t, q) in trace.q.iter().enumerate() {
        writeln!(out, "{t},{}", format_float(*q))?;
    }
    Ok(())
}

/// Writes `t,x_0,...,x_{k-1}` rows for `t = 0..=T`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> std::io::Result<()> {
    let k = traj.x0.len();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..k).map(|i| format!("x_{i}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for t in 0..=traj.len() {
        let row: Vec<String> = traj.state(t).iter().map(|&v| format_float(v)).collect();
        writeln!(out, "{t},{}", row.join(","))?;
    }
    Ok(())
}
