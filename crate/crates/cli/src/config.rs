//! Experiment configuration: TOML file, command-line overrides, validation
//! and the content hash stamped on every artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hypodens_core::decomp::VConvention;
use hypodens_core::density::Centering;
use hypodens_core::fields::{builtin_model, ModelSpec, PolynomialModel, VectorFieldModel, BUILTIN_MODELS};
use hypodens_core::paths::{QpConvention, MIN_STEPS_PER_SUB};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// A built-in model name, a path to a model TOML file, or an inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Named(String),
    Inline(ModelSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Starting point; zeros of the model dimension when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub delta_grid: Vec<f64>,
    pub n_paths: u64,
    pub steps_per_sub: usize,
    pub seed: u64,
    pub eps_grid: Vec<f64>,
    pub rho: f64,
    /// Ball radius of the lower-bound check, in `|·|_{A_δ}` units.
    pub r: f64,
    pub p_exponent: f64,
    pub centering: Centering,
    pub output_dir: PathBuf,
    pub v_convention: VConvention,
    pub qp_convention: QpConvention,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelChoice>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            x0: None,
            delta_grid: vec![0.02, 0.04, 0.08, 0.12, 0.2],
            n_paths: 10_000,
            steps_per_sub: 256,
            seed: 1,
            eps_grid: vec![0.1, 0.2, 0.3, 0.4],
            rho: 4.0,
            r: 0.5,
            p_exponent: 4.0,
            centering: Centering::X0PlusBDelta,
            output_dir: PathBuf::from("hypodens-out"),
            v_convention: VConvention::Weighted,
            qp_convention: QpConvention::PBlock,
            model: None,
        }
    }
}

/// A model ready to run, with its display name and starting point.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub name: String,
    pub model: PolynomialModel,
    pub x0: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Range checks on every field that does not need the model.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        check_grid("delta_grid", &self.delta_grid)?;
        check_grid("eps_grid", &self.eps_grid)?;
        if self.n_paths == 0 {
            return bad("n_paths", "must be at least 1".into());
        }
        if self.steps_per_sub < MIN_STEPS_PER_SUB {
            return bad("steps_per_sub", format!("{} is below the minimum {MIN_STEPS_PER_SUB}", self.steps_per_sub));
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed", format!("{} exceeds {}", self.seed, i64::MAX));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho", format!("{} must be positive and finite", self.rho));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad("r", format!("{} must be positive and finite", self.r));
        }
        if !(self.p_exponent >= 2.0 && self.p_exponent.is_finite()) {
            return bad("p_exponent", format!("{} must be at least 2", self.p_exponent));
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir", "must not be empty".into());
        }
        if let Some(x0) = &self.x0 {
            if let Some(k) = x0.iter().position(|v| !v.is_finite()) {
                return bad("x0", format!("entry {k} is not finite"));
            }
        }
        Ok(())
    }

    /// Build the model and check `x0` against its dimension.
    pub fn resolve_model(&self) -> CliResult<ResolvedModel> {
        let choice = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::Usage("no model given (use --model or `model` in the config file)".into()))?;
        let (name, model) = match choice {
            ModelChoice::Named(name) if BUILTIN_MODELS.contains(&name.as_str()) => (name.clone(), builtin_model(name)?),
            ModelChoice::Named(name) if name.ends_with(".toml") => {
                let text = std::fs::read_to_string(name).map_err(|e| CliError::Config(format!("model: {name}: {e}")))?;
                let spec = ModelSpec::from_toml(&text).map_err(|e| CliError::Config(format!("model: {name}: {e}")))?;
                (name.clone(), PolynomialModel::from_spec(name.as_str(), &spec)?)
            }
            ModelChoice::Named(name) => return Err(CliError::UnknownModel(name.clone())),
            ModelChoice::Inline(spec) => (
                "inline".to_string(),
                PolynomialModel::from_spec("inline", spec).map_err(|e| CliError::Config(format!("model: {e}")))?,
            ),
        };
        let x0 = match &self.x0 {
            Some(x0) if x0.len() != model.dim() => {
                return Err(CliError::Config(format!(
                    "x0: length {} does not match the model dimension {}",
                    x0.len(),
                    model.dim()
                )))
            }
            Some(x0) => x0.clone(),
            None => vec![0.0; model.dim()],
        };
        Ok(ResolvedModel { name, model, x0 })
    }

    /// SHA-256 of the canonical TOML form with the output directory blanked,
    /// so the same experiment hashes alike wherever it is written.
    pub fn hash(&self) -> CliResult<String> {
        let canonical = Self { output_dir: PathBuf::from("."), ..self.clone() };
        let digest = Sha256::digest(canonical.to_toml_string()?.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(hex, "{b:02x}");
        }
        Ok(hex)
    }
}

fn check_grid(field: &str, grid: &[f64]) -> CliResult<()> {
    if grid.is_empty() {
        return Err(CliError::Config(format!("{field}: must not be empty")));
    }
    for (k, &v) in grid.iter().enumerate() {
        if !(v > 0.0 && v <= 1.0) {
            return Err(CliError::Config(format!("{field}[{k}] = {v}: must lie in (0, 1]")));
        }
    }
    Ok(())
}
