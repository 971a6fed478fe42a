use std::f64::consts::FRAC_PI_4;
use std::path::Path;

use anyhow::{bail, Context, Result};
use critesn::dynamics::InputSequence;
use critesn::reservoir::SpectralMode;
use critesn::transfer::TransferFunction;
use serde::{Deserialize, Serialize};

/// One run's configuration. Every field has a default, so `{}` is a valid file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label copied into the run metadata.
    pub experiment: String,
    pub seed: u64,
    pub amplitude: f64,
    pub perturbation: f64,
    pub steps: usize,
    pub reservoir: ReservoirSpec,
    pub input: Option<InputSequence>,
    pub figure3: Figure3Config,
    pub figure45: Figure45Config,
    pub verify: VerifyConfig,
    pub critical_b: CriticalBConfig,
    pub mc: McConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            seed: 0,
            amplitude: FRAC_PI_4,
            perturbation: 0.01,
            steps: 10_000,
            reservoir: ReservoirSpec::default(),
            input: None,
            figure3: Figure3Config::default(),
            figure45: Figure45Config::default(),
            verify: VerifyConfig::default(),
            critical_b: CriticalBConfig::default(),
            mc: McConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirSpec {
    pub k: usize,
    pub n: usize,
    pub spectrum: f64,
    pub mode: SpectralMode,
    pub input_scale: f64,
    pub transfer: TransferFunction,
    /// Read W and w_in from this file instead of drawing them.
    pub file: Option<String>,
}

impl Default for ReservoirSpec {
    fn default() -> Self {
        Self {
            k: 16,
            n: 1,
            spectrum: 1.0,
            mode: SpectralMode::Singular,
            input_scale: 1.0,
            transfer: TransferFunction::tanh(),
            file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure3Config {
    pub b_min: f64,
    pub b_max: f64,
    pub b_step: f64,
    /// Explicit grid; overrides `b_min..=b_max`.
    pub b_grid: Option<Vec<f64>>,
    pub steps: usize,
    pub renorm_interval: usize,
    pub eps0: f64,
    pub x0: f64,
    pub transfer: TransferFunction,
}

impl Default for Figure3Config {
    fn default() -> Self {
        Self {
            b_min: 0.5,
            b_max: 1.5,
            b_step: 0.05,
            b_grid: None,
            steps: 100_000,
            renorm_interval: 10,
            eps0: 1e-9,
            x0: FRAC_PI_4,
            transfer: TransferFunction::sine_sigmoid(),
        }
    }
}

impl Figure3Config {
    pub fn grid(&self) -> Result<Vec<f64>> {
        let grid = match &self.b_grid {
            Some(g) => g.clone(),
            None => {
                if self.b_step.is_nan()
                    || self.b_step <= 0.0
                    || self.b_max.is_nan()
                    || self.b_max < self.b_min
                {
                    bail!(UsageError(format!(
                        "empty b grid: b_min={} b_max={} b_step={}",
                        self.b_min, self.b_max, self.b_step
                    )));
                }
                let n = ((self.b_max - self.b_min) / self.b_step + 1e-9).floor() as usize;
                (0..=n)
                    .map(|i| self.b_min + self.b_step * i as f64)
                    .collect()
            }
        };
        if grid.is_empty() {
            bail!(UsageError("empty b grid".into()));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure45Config {
    pub b: f64,
    pub transfer: TransferFunction,
    pub perturb_at: usize,
    pub fit_start: usize,
}

impl Default for Figure45Config {
    fn default() -> Self {
        Self {
            b: 1.0,
            transfer: TransferFunction::sine_sigmoid(),
            perturb_at: 1,
            fit_start: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub transfers: Vec<TransferFunction>,
    pub neurons: Vec<usize>,
    pub eta_scale: f64,
    pub delta: [f64; 3],
    pub zeta: [f64; 3],
    pub dominance_q0: Vec<f64>,
    pub dominance_steps: usize,
    pub audit_runs: usize,
    pub audit_steps: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            transfers: vec![TransferFunction::tanh()],
            neurons: vec![1, 2, 4],
            eta_scale: 1.0,
            delta: [0.0, 4.0, 1e-2],
            zeta: [-4.0, 4.0, 1e-2],
            dominance_q0: vec![0.1, 0.5, 1.0],
            dominance_steps: 100_000,
            audit_runs: 10,
            audit_steps: 2_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalBConfig {
    pub transfer: TransferFunction,
    /// Defaults to the top-level `amplitude`.
    pub amplitude: Option<f64>,
    pub bracket: [f64; 2],
    pub tol: f64,
}

impl Default for CriticalBConfig {
    fn default() -> Self {
        Self {
            transfer: TransferFunction::tanh(),
            amplitude: None,
            bracket: [1.0 + 1e-9, 10.0],
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub neurons: Vec<usize>,
    pub input_amplitude: f64,
    /// Delays per neuron; `max_delay = delays_per_neuron * k`.
    pub delays_per_neuron: usize,
    pub steps: usize,
    pub washout: usize,
    pub ridge: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            neurons: vec![4, 8, 16],
            input_amplitude: 0.1,
            delays_per_neuron: 10,
            steps: 20_000,
            washout: critesn::readout::DEFAULT_MC_WASHOUT,
            ridge: critesn::readout::DEFAULT_MC_RIDGE,
        }
    }
}

/// A problem with how the tool was invoked, as opposed to a failed run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse(&text).map_err(|e| {
        UsageError(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
        .into()
    })
}

pub fn parse(text: &str) -> serde_json::Result<ExperimentConfig> {
    serde_json::from_str(text)
}
