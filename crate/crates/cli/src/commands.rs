use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use critesn::analysis::{fit_decay, lyapunov_sweep, LyapunovConfig};
use critesn::contraction::{
    audit_step_inequality, verify_cover_inequality, verify_cover_saturation, verify_dominance,
    verify_phi_monotonicity, CoverParams, GridSpec, VerificationReport,
};
use critesn::dynamics::{
    convergence_trace, perturbation_experiment, run, write_trace_csv, write_trajectory_csv,
    ConvergenceTrace, InputSequence,
};
use critesn::readout::{memory_capacity, write_mc_csv};
use critesn::reservoir::{
    check_esc, make_orthogonal_reservoir, read_reservoir_csv, scale_to_spectrum, spectral_summary,
    write_reservoir_csv, Reservoir, SPECTRAL_TOL,
};
use critesn::transfer::TransferFunction;
use nalgebra::{dvector, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ReservoirSpec};

/// Outcome of a subcommand: `true` when every check it ran passed.
pub type Checked = Result<bool>;

pub fn write_with(
    out: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let path = out.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|()| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_with(out, name, |w| writeln!(w, "{text}"))
}

fn build_reservoir(spec: &ReservoirSpec, seed: u64) -> Result<Reservoir> {
    if let Some(file) = &spec.file {
        let f = File::open(file).with_context(|| format!("opening reservoir {file}"))?;
        return Ok(read_reservoir_csv(
            BufReader::new(f),
            Path::new(file),
            spec.transfer.clone(),
        )?);
    }
    let base = make_orthogonal_reservoir(spec.k, spec.n, spec.input_scale, seed)?
        .with_transfer(spec.transfer.clone());
    let w = scale_to_spectrum(base.w(), spec.spectrum, spec.mode)?;
    Ok(base.with_recurrent(w)?)
}

pub fn figure3(cfg: &ExperimentConfig, out: &Path) -> Checked {
    let f = &cfg.figure3;
    let grid = f.grid()?;
    let lcfg = LyapunovConfig {
        steps: f.steps,
        renorm_interval: f.renorm_interval,
        eps0: f.eps0,
    };
    let family = |b| Reservoir::alternating_neuron(b, f.transfer.clone());
    let input = InputSequence::Alternating {
        amplitude: cfg.amplitude,
    };
    let sweep = lyapunov_sweep(family, &input, &dvector![f.x0], &grid, &lcfg)?;
    write_with(out, "figure3.csv", |w| {
        critesn::analysis::write_sweep_csv(&sweep, w)
    })?;

    let crossings: Vec<[f64; 2]> = sweep
        .windows(2)
        .filter_map(|w| match (w[0].exponent(), w[1].exponent()) {
            (Some(a), Some(b)) if a.signum() != b.signum() => Some([w[0].b, w[1].b]),
            _ => None,
        })
        .collect();
    let failed: Vec<_> = sweep
        .iter()
        .filter_map(|p| {
            p.result
                .as_ref()
                .err()
                .map(|e| json!({ "b": p.b, "error": e }))
        })
        .collect();
    write_json(
        out,
        "figure3.json",
        &json!({ "sign_changes": crossings, "failed_cells": failed }),
    )?;
    for [lo, hi] in &crossings {
        println!("lyapunov exponent changes sign between b={lo} and b={hi}");
    }
    Ok(failed.is_empty())
}

fn trace_summary(trace: &ConvergenceTrace, fit_start: usize) -> serde_json::Value {
    let perturb_at = trace.meta.perturb_at.unwrap_or(0);
    json!({
        "input": trace.meta.input,
        "fit": fit_decay(trace, fit_start),
        "floor_hit_at": trace.floor_hit_at,
        "steps_to_floor": trace.floor_hit_at.map(|t| t - perturb_at),
        "q_64": trace.q.get(64),
    })
}

pub fn figure45(cfg: &ExperimentConfig, out: &Path) -> Checked {
    let f = &cfg.figure45;
    let res = Reservoir::alternating_neuron(f.b, f.transfer.clone())?;
    let delta = DVector::from_element(res.n(), cfg.perturbation);
    let runs = [
        (
            "figure4_alternating",
            InputSequence::Alternating {
                amplitude: cfg.amplitude,
            },
        ),
        (
            "figure5_iid",
            InputSequence::IidSign {
                amplitude: cfg.amplitude,
                seed: cfg.seed,
            },
        ),
    ];
    for (name, input) in runs {
        let trace = perturbation_experiment(&res, &input, f.perturb_at, &delta, cfg.steps)?;
        write_with(out, &format!("{name}.csv"), |w| write_trace_csv(&trace, w))?;
        let summary = trace_summary(&trace, f.fit_start);
        println!(
            "{name}: law {}, steps to floor {}",
            summary["fit"]["law"], summary["steps_to_floor"]
        );
        write_json(out, &format!("{name}_fit.json"), &summary)?;
    }
    Ok(true)
}

fn audit_runs(
    tf: &TransferFunction,
    n: usize,
    p: &CoverParams,
    cfg: &ExperimentConfig,
) -> Result<VerificationReport> {
    let v = &cfg.verify;
    let reports = (0..v.audit_runs as u64)
        .into_par_iter()
        .map(|i| -> Result<VerificationReport> {
            let seed = cfg.seed.wrapping_add(i);
            let res = make_orthogonal_reservoir(n, 1, 1.0, seed)?.with_transfer(tf.clone());
            let input = if i % 2 == 0 {
                InputSequence::Alternating {
                    amplitude: cfg.amplitude,
                }
            } else {
                InputSequence::IidSign {
                    amplitude: cfg.amplitude,
                    seed,
                }
            };
            let x0 = DVector::from_fn(n, |j, _| ((seed as f64 + 1.0) * (j as f64 + 1.0)).sin());
            let y0 = DVector::from_fn(n, |j, _| ((seed as f64 + 2.0) * (j as f64 + 3.0)).cos());
            let trace = convergence_trace(&res, &input, &x0, &y0, v.audit_steps)?;
            Ok(audit_step_inequality(&trace, 1.0, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = reports
        .into_iter()
        .reduce(|a, b| {
            if b.worst_margin < a.worst_margin {
                b
            } else {
                a
            }
        })
        .context("audit_runs must be at least 1")?;
    Ok(VerificationReport {
        check: format!("step_audit[{:?}, n={n}]", tf.kind()),
        grid_spec: format!(
            "{} runs x {} steps; worst run: {}",
            v.audit_runs, v.audit_steps, worst.grid_spec
        ),
        ..worst
    })
}

pub fn verify(cfg: &ExperimentConfig, out: &Path) -> Checked {
    let v = &cfg.verify;
    let delta = GridSpec::new(v.delta[0], v.delta[1], v.delta[2])?;
    let zeta = GridSpec::new(v.zeta[0], v.zeta[1], v.zeta[2])?;
    let mut reports = Vec::new();
    for &n in &v.neurons {
        let p = CoverParams::for_neurons(n)?.with_eta_scaled(v.eta_scale)?;
        let nn = (n * n) as f64;
        let mut r = verify_phi_monotonicity(&p, &GridSpec::new(0.0, 4.0 * nn, nn / 400.0)?)?;
        r.check = format!("{} n={n}", r.check);
        reports.push(r);
        for &q0 in &v.dominance_q0 {
            let mut r = verify_dominance(q0, &p, v.dominance_steps)?;
            r.check = format!("{} n={n}", r.check);
            reports.push(r);
        }
        for tf in &v.transfers {
            let mut r = verify_cover_inequality(tf, &p, &delta, &zeta);
            r.check = format!("{} n={n}", r.check);
            reports.push(r);
            let mut r = verify_cover_saturation(tf, &p);
            r.check = format!("{} n={n}", r.check);
            reports.push(r);
            reports.push(audit_runs(tf, n, &p, cfg)?);
        }
    }
    let all_passed = reports.iter().all(|r| r.passed);
    for r in &reports {
        println!(
            "[{}] {} worst margin {:e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.check,
            r.worst_margin
        );
    }
    write_json(
        out,
        "verify.json",
        &json!({ "all_passed": all_passed, "eta_scale": v.eta_scale, "reports": reports }),
    )?;
    Ok(all_passed)
}

pub fn critical_b(cfg: &ExperimentConfig, out: &Path) -> Checked {
    let c = &cfg.critical_b;
    let amplitude = c.amplitude.unwrap_or(cfg.amplitude);
    let cp = critesn::analysis::find_critical_b(
        &c.transfer,
        amplitude,
        (c.bracket[0], c.bracket[1]),
        c.tol,
    )?;
    println!(
        "b* = {}, orbit amplitude = {}",
        cp.b_star, cp.orbit_amplitude
    );
    write_json(
        out,
        "critical_b.json",
        &json!({ "amplitude": amplitude, "transfer": c.transfer, "result": cp }),
    )?;
    Ok(true)
}

pub fn mc(cfg: &ExperimentConfig, out: &Path) -> Checked {
    let m = &cfg.mc;
    let mut rows = Vec::new();
    let mut passed = true;
    for &k in &m.neurons {
        let spec = ReservoirSpec {
            k,
            file: None,
            ..cfg.reservoir.clone()
        };
        let res = build_reservoir(&spec, cfg.seed)?;
        let result = memory_capacity(
            &res,
            m.input_amplitude,
            m.delays_per_neuron * k,
            m.steps,
            m.washout,
            m.ridge,
            cfg.seed,
        )?;
        write_with(out, &format!("mc_k{k}.csv"), |w| write_mc_csv(&result, w))?;
        let ceiling = k as f64 + 0.5;
        let ok = result.total <= ceiling;
        passed &= ok;
        println!(
            "k={k}: memory capacity {:.4} (ceiling {ceiling})",
            result.total
        );
        rows.push(json!({ "k": k, "mc_total": result.total, "ceiling": ceiling, "passed": ok }));
    }
    write_json(
        out,
        "mc.json",
        &json!({ "all_passed": passed, "runs": rows }),
    )?;
    Ok(passed)
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Checked {
    let res = build_reservoir(&cfg.reservoir, cfg.seed)?;
    let input = cfg.input.clone().unwrap_or(InputSequence::Alternating {
        amplitude: cfg.amplitude,
    });
    let traj = run(&res, &input, &DVector::zeros(res.k()), cfg.steps)?;
    write_with(out, "trajectory.csv", |w| write_trajectory_csv(&traj, w))?;
    write_with(out, "reservoir.csv", |w| write_reservoir_csv(&res, w))?;
    let summary = spectral_summary(res.w())?;
    let esc = check_esc(&res, SPECTRAL_TOL)?;
    println!(
        "{}: max |eigenvalue| {:.6}, max singular value {:.6}",
        res.describe(),
        summary.max_abs_eigenvalue,
        summary.max_singular_value
    );
    write_json(
        out,
        "spectrum.json",
        &json!({ "reservoir": res.describe(), "spectrum": summary, "esc": esc }),
    )?;
    Ok(true)
}
