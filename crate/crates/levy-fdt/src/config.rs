//! Scenario configuration: TOML ingestion with full defaults, strict key
//! checking, and a canonical form whose SHA-256 digest stamps every output
//! file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::fokker_planck::FpSolveSpec;
use crate::model::{Perturbation, SdeModel};
use crate::nonlocal::Grid1D;
use crate::response::{McSpec, Observable, TimeGrid, VerifySpec};
use crate::simulate::IntegratorSpec;

fn default_model() -> String {
    "tanh-well".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// well strength of the built-in bistable drift
    pub a: f64,
    /// relaxation rate of the built-in linear drift
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// expression in x; used by `model = "custom"`
    pub drift: Option<String>,
    /// expression in x; used by `model = "custom"`
    pub diffusion: Option<String>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { a: 2.0, lambda: 1.0, sigma: 1.0, alpha: 1.5, drift: None, diffusion: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub half_width: f64,
    pub n_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_width: 32.0, n_points: 2048 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    pub burn_in: f64,
    pub thinning: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_max: 5.0, burn_in: 20.0, thinning: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub master_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { n_traj: 200_000, master_seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// spatial factor: "lorentzian" or "constant"
    pub k: String,
    /// amplitude of the constant spatial factor
    pub k_value: f64,
    /// time profile: "step" or "impulse"
    pub f: String,
    pub impulse_t0: f64,
    pub impulse_width: f64,
    pub eps_list: Vec<f64>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            k: "lorentzian".into(),
            k_value: 1.0,
            f: "step".into(),
            impulse_t0: 1.0,
            impulse_width: 0.2,
            eps_list: vec![0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservablesConfig {
    /// built-ins: "tanh", "x", "x_over_1px2", "bump:<center>:<width>"
    pub names: Vec<String>,
}

impl Default for ObservablesConfig {
    fn default() -> Self {
        Self { names: vec!["tanh".into()] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseConfig {
    pub t_max: f64,
    pub dt: f64,
    pub smoothing_window: usize,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self { t_max: 5.0, dt: 0.1, smoothing_window: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TolerancesConfig {
    /// absolute floor for Monte Carlo curves against the PDE curve
    pub pde_floor_mc: f64,
    /// absolute floor for the direct route against the PDE curve
    pub pde_floor_direct: f64,
    pub stationary_stop_tol: f64,
}

impl Default for TolerancesConfig {
    fn default() -> Self {
        Self { pde_floor_mc: 2e-2, pde_floor_direct: 3e-2, stationary_stop_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: "out".into() }
    }
}

/// Full scenario description. Every field has a default, so a file
/// containing only `model = "tanh-well"` is runnable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub model: String,
    pub model_params: ModelParams,
    pub grid: GridConfig,
    pub integrator: IntegratorConfig,
    pub ensemble: EnsembleConfig,
    pub perturbation: PerturbationConfig,
    pub observables: ObservablesConfig,
    pub response: ResponseConfig,
    pub tolerances: TolerancesConfig,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: default_model(),
            model_params: ModelParams::default(),
            grid: GridConfig::default(),
            integrator: IntegratorConfig::default(),
            ensemble: EnsembleConfig::default(),
            perturbation: PerturbationConfig::default(),
            observables: ObservablesConfig::default(),
            response: ResponseConfig::default(),
            tolerances: TolerancesConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    /// Canonical form: the fully resolved config re-serialized as TOML with
    /// the struct field order. Round-trips through `from_toml`.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex-encoded.  The output directory is
    /// excluded: the hash identifies the computation, not where its results
    /// land, so reruns into different directories stamp the same digest.
    pub fn hash(&self) -> String {
        let mut scientific = self.clone();
        scientific.output = OutputConfig::default();
        let digest = Sha256::digest(scientific.canonical_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_model(&self) -> Result<SdeModel, Error> {
        let p = &self.model_params;
        match self.model.as_str() {
            "tanh-well" => SdeModel::tanh_well(p.a, p.sigma, p.alpha),
            "stable-ou" => SdeModel::stable_ou(p.lambda, p.sigma, p.alpha),
            "custom" => {
                let drift = p.drift.as_deref().ok_or_else(|| {
                    Error::Config("custom model needs model_params.drift".into())
                })?;
                let diffusion = p.diffusion.as_deref().ok_or_else(|| {
                    Error::Config("custom model needs model_params.diffusion".into())
                })?;
                SdeModel::custom(drift, diffusion, p.alpha)
            }
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected tanh-well, stable-ou or custom)"
            ))),
        }
    }

    pub fn build_grid(&self) -> Result<Grid1D, Error> {
        Grid1D::new(self.grid.half_width, self.grid.n_points)
    }

    pub fn build_perturbation(&self) -> Result<Perturbation, Error> {
        let base = match self.perturbation.k.as_str() {
            "lorentzian" => Perturbation::lorentzian_step(),
            "constant" => Perturbation::constant_step(self.perturbation.k_value),
            other => {
                return Err(Error::Config(format!(
                    "unknown perturbation k '{other}' (expected lorentzian or constant)"
                )))
            }
        };
        match self.perturbation.f.as_str() {
            "step" => Ok(base),
            "impulse" => {
                Ok(base.with_impulse(self.perturbation.impulse_t0, self.perturbation.impulse_width))
            }
            other => Err(Error::Config(format!(
                "unknown perturbation f '{other}' (expected step or impulse)"
            ))),
        }
    }

    pub fn build_observables(&self) -> Result<Vec<Observable>, Error> {
        self.observables
            .names
            .iter()
            .map(|name| match name.as_str() {
                "tanh" => Ok(Observable::tanh()),
                "x" => Ok(Observable::coordinate()),
                "x_over_1px2" => Ok(Observable::rational()),
                other => {
                    if let Some(rest) = other.strip_prefix("bump:") {
                        let parts: Vec<&str> = rest.split(':').collect();
                        if let [c, w] = parts[..] {
                            let c: f64 = c.parse().map_err(|_| {
                                Error::Config(format!("bad bump center in '{other}'"))
                            })?;
                            let w: f64 = w.parse().map_err(|_| {
                                Error::Config(format!("bad bump width in '{other}'"))
                            })?;
                            return Ok(Observable::bump(c, w));
                        }
                    }
                    Err(Error::Config(format!(
                        "unknown observable '{other}' (expected tanh, x, x_over_1px2 or \
                         bump:<center>:<width>)"
                    )))
                }
            })
            .collect()
    }

    pub fn integrator_spec(&self) -> Result<IntegratorSpec, Error> {
        let stride = (self.response.dt / self.integrator.dt).round().max(1.0) as usize;
        IntegratorSpec::new(self.integrator.dt, self.integrator.t_max, stride)
    }

    pub fn mc_spec(&self) -> McSpec {
        McSpec {
            n_traj: self.ensemble.n_traj,
            integrator_dt: self.integrator.dt,
            burn_in: self.integrator.burn_in,
            thinning: self.integrator.thinning,
            master_seed: self.ensemble.master_seed,
            smoothing_window: self.response.smoothing_window,
            initial_window: None,
        }
    }

    pub fn fp_spec(&self) -> FpSolveSpec {
        FpSolveSpec {
            dt: self.integrator.dt,
            stop_tol: self.tolerances.stationary_stop_tol,
            ..Default::default()
        }
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid { t_max: self.response.t_max, dt: self.response.dt }
    }

    pub fn verify_spec(&self) -> Result<VerifySpec, Error> {
        Ok(VerifySpec {
            grid: self.build_grid()?,
            t_grid: self.time_grid(),
            eps_list: self.perturbation.eps_list.clone(),
            mc: self.mc_spec(),
            fp: self.fp_spec(),
            pde_floor_mc: self.tolerances.pde_floor_mc,
            pde_floor_direct: self.tolerances.pde_floor_direct,
            corrupt_y: false,
        })
    }

    /// Environment overrides (lowest precedence): applied before the loaded
    /// file values would be, so only fields still at their defaults change.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), Error> {
        let defaults = ScenarioConfig::default();
        if let Some(seed) = env("LEVYFDT_SEED") {
            if self.ensemble.master_seed == defaults.ensemble.master_seed {
                self.ensemble.master_seed = seed
                    .parse()
                    .map_err(|_| Error::Config(format!("bad LEVYFDT_SEED '{seed}'")))?;
            }
        }
        if let Some(dir) = env("LEVYFDT_OUTPUT") {
            if self.output.directory == defaults.output.directory {
                self.output.directory = dir;
            }
        }
        Ok(())
    }
}
