//! Sectioned key-value configuration file (TOML) with explicit unit
//! suffixes, strict unknown-key rejection, logged defaults, and dotted-path
//! overrides.

use crate::CliError;
use levisim::constants::ATOMIC_MASS;
use levisim::dynamics::{Dof, FeedbackController, InitialState, SimulationConfig, Toggles};
use levisim::{FieldModel, GasEnvironment, Material, ParticleShape, TweezerField};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub particle: ParticleSection,
    pub tweezer: TweezerSection,
    pub environment: EnvironmentSection,
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSection {
    /// sphere | prolate | oblate | triaxial | shell
    pub shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r3_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness_m: Option<f64>,
    pub density_kg_m3: f64,
    pub relative_permittivity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TweezerSection {
    pub power_w: f64,
    pub wavelength_m: f64,
    pub waist_m: f64,
    /// Defaults to the diffraction-limited pi w0^2 / lambda.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rayleigh_range_m: Option<f64>,
    pub asymmetry: f64,
    pub ellipticity_rad: f64,
    /// first_order | two_mode_gouy
    #[serde(default = "default_field_model")]
    pub field_model: String,
}

fn default_field_model() -> String {
    "two_mode_gouy".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub pressure_pa: f64,
    pub temperature_k: f64,
    /// Defaults to N2 (28 amu).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gas_molecule_mass_amu: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub duration_s: f64,
    /// Defaults to 1 / (40 f_max).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    #[serde(default = "default_decimation")]
    pub decimation: usize,
    pub ensemble: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub gradient: bool,
    #[serde(default = "default_true")]
    pub scattering: bool,
    #[serde(default = "default_true")]
    pub gas_damping: bool,
    #[serde(default = "default_true")]
    pub gas_noise: bool,
    #[serde(default)]
    pub recoil_noise: bool,
    #[serde(default = "default_recoil_polar")]
    pub recoil_quadrature_polar: usize,
    #[serde(default = "default_recoil_azimuthal")]
    pub recoil_quadrature_azimuthal: usize,
    /// thermal | rest
    #[serde(default = "default_initial")]
    pub initial: String,
}

fn default_true() -> bool {
    true
}
fn default_decimation() -> usize {
    8
}
fn default_recoil_polar() -> usize {
    32
}
fn default_recoil_azimuthal() -> usize {
    64
}
fn default_initial() -> String {
    "thermal".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    /// cold_damping | parametric | parametric_pll
    pub kind: String,
    /// x | y | z | alpha | beta | gamma
    pub target: String,
    #[serde(default)]
    pub gain: f64,
    #[serde(default)]
    pub imprecision_psd: f64,
    #[serde(default)]
    pub depth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_omega_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_hz: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Welch segment length; power-of-two auto choice when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_len: Option<usize>,
    #[serde(default = "default_min_segments")]
    pub min_segments: usize,
    /// Half-width of the fit window around each predicted peak, fractional.
    #[serde(default = "default_fit_window")]
    pub fit_window: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            segment_len: None,
            min_segments: default_min_segments(),
            fit_window: default_fit_window(),
        }
    }
}

fn default_min_segments() -> usize {
    8
}
fn default_fit_window() -> f64 {
    0.2
}

/// Parsed configuration plus the log of defaulted keys.
pub struct LoadedConfig {
    pub file: ConfigFile,
    pub defaulted: Vec<String>,
}

/// Read, apply `key=value` overrides, and validate a configuration file.
pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut value = toml::Value::Table(table);
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    let file: ConfigFile = value
        .try_into()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut defaulted = Vec::new();
    if file.tweezer.rayleigh_range_m.is_none() {
        defaulted.push(format!(
            "tweezer.rayleigh_range_m = {:.6e} (diffraction limited)",
            std::f64::consts::PI * file.tweezer.waist_m.powi(2) / file.tweezer.wavelength_m
        ));
    }
    if file.environment.gas_molecule_mass_amu.is_none() {
        defaulted.push("environment.gas_molecule_mass_amu = 28 (N2)".into());
    }
    if file.simulation.dt_s.is_none() {
        defaulted.push("simulation.dt_s = 1 / (40 f_max)".into());
    }
    Ok(LoadedConfig { file, defaulted })
}

/// Apply one `section.key=value` override onto the raw TOML tree.
fn apply_override(root: &mut toml::Value, item: &str) -> Result<(), CliError> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{item}' is not key=value")))?;
    let parsed: toml::Value = match raw.parse::<i64>() {
        Ok(v) => toml::Value::Integer(v),
        Err(_) => match raw.parse::<f64>() {
            Ok(v) => toml::Value::Float(v),
            Err(_) => match raw {
                "true" => toml::Value::Boolean(true),
                "false" => toml::Value::Boolean(false),
                s => toml::Value::String(s.to_string()),
            },
        },
    };
    let mut node = root;
    let parts: Vec<&str> = path.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override path '{path}' not a table")))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    Err(CliError::Config(format!("empty override path in '{item}'")))
}

impl ConfigFile {
    pub fn shape(&self) -> Result<ParticleShape, CliError> {
        let p = &self.particle;
        let missing = |what: &str| CliError::Config(format!("particle.{what} required for shape '{}'", p.shape));
        let shape = match p.shape.as_str() {
            "sphere" => ParticleShape::sphere(p.radius_m.ok_or_else(|| missing("radius_m"))?),
            "prolate" => ParticleShape::prolate(
                p.r1_m.ok_or_else(|| missing("r1_m"))?,
                p.r3_m.ok_or_else(|| missing("r3_m"))?,
            ),
            "oblate" => ParticleShape::oblate(
                p.r1_m.ok_or_else(|| missing("r1_m"))?,
                p.r3_m.ok_or_else(|| missing("r3_m"))?,
            ),
            "triaxial" => ParticleShape::triaxial(
                p.r1_m.ok_or_else(|| missing("r1_m"))?,
                p.r2_m.ok_or_else(|| missing("r2_m"))?,
                p.r3_m.ok_or_else(|| missing("r3_m"))?,
            ),
            "shell" => ParticleShape::shell(
                p.r1_m.ok_or_else(|| missing("r1_m"))?,
                p.r2_m.ok_or_else(|| missing("r2_m"))?,
                p.r3_m.ok_or_else(|| missing("r3_m"))?,
                p.thickness_m.ok_or_else(|| missing("thickness_m"))?,
            ),
            other => {
                return Err(CliError::Config(format!(
                    "unknown particle.shape '{other}' (sphere|prolate|oblate|triaxial|shell)"
                )))
            }
        };
        shape.map_err(CliError::from)
    }

    pub fn material(&self) -> Result<Material, CliError> {
        Material::new(
            self.particle.density_kg_m3,
            self.particle.relative_permittivity,
        )
        .map_err(CliError::from)
    }

    pub fn field(&self) -> Result<TweezerField, CliError> {
        let t = &self.tweezer;
        let model = match t.field_model.as_str() {
            "first_order" => FieldModel::FirstOrder,
            "two_mode_gouy" => FieldModel::TwoModeGouy,
            other => {
                return Err(CliError::Config(format!(
                    "unknown tweezer.field_model '{other}' (first_order|two_mode_gouy)"
                )))
            }
        };
        Ok(TweezerField {
            power: t.power_w,
            wavelength: t.wavelength_m,
            waist: t.waist_m,
            rayleigh_range: t
                .rayleigh_range_m
                .unwrap_or(std::f64::consts::PI * t.waist_m * t.waist_m / t.wavelength_m),
            asymmetry: t.asymmetry,
            ellipticity: t.ellipticity_rad,
            model,
        })
    }

    pub fn gas(&self) -> GasEnvironment {
        GasEnvironment {
            pressure: self.environment.pressure_pa,
            temperature: self.environment.temperature_k,
            molecule_mass: self.environment.gas_molecule_mass_amu.unwrap_or(28.0) * ATOMIC_MASS,
        }
    }

    fn feedback(&self) -> Result<Option<FeedbackController>, CliError> {
        let Some(fb) = &self.feedback else {
            return Ok(None);
        };
        let target = Dof::from_label(&fb.target).ok_or_else(|| {
            CliError::Config(format!(
                "unknown feedback.target '{}' (x|y|z|alpha|beta|gamma)",
                fb.target
            ))
        })?;
        let controller = match fb.kind.as_str() {
            "cold_damping" => FeedbackController::ColdDamping {
                target,
                gain: fb.gain,
                imprecision_psd: fb.imprecision_psd,
            },
            "parametric" => FeedbackController::Parametric {
                target,
                gain: fb.gain,
            },
            "parametric_pll" => FeedbackController::ParametricPll {
                target,
                depth: fb.depth,
                reference_omega: fb.reference_omega_rad_s,
                bandwidth: fb.bandwidth_hz.ok_or_else(|| {
                    CliError::Config("feedback.bandwidth_hz required for parametric_pll".into())
                })?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown feedback.kind '{other}' (cold_damping|parametric|parametric_pll)"
                )))
            }
        };
        Ok(Some(controller))
    }

    /// Assemble the dynamics configuration.
    pub fn simulation(&self) -> Result<SimulationConfig, CliError> {
        let s = &self.simulation;
        let initial = match s.initial.as_str() {
            "thermal" => InitialState::Thermal,
            "rest" => InitialState::Rest,
            other => {
                return Err(CliError::Config(format!(
                    "unknown simulation.initial '{other}' (thermal|rest)"
                )))
            }
        };
        let mut config = SimulationConfig::new(self.shape()?, self.material()?, self.field()?, self.gas());
        config.dt = s.dt_s;
        config.duration = s.duration_s;
        config.decimation = s.decimation;
        config.ensemble = s.ensemble;
        config.seed = s.seed;
        config.toggles = Toggles {
            gradient: s.gradient,
            scattering: s.scattering,
            gas_damping: s.gas_damping,
            gas_noise: s.gas_noise,
            recoil_noise: s.recoil_noise,
        };
        config.recoil_quadrature = (s.recoil_quadrature_polar, s.recoil_quadrature_azimuthal);
        config.feedback = self.feedback()?;
        config.initial = initial;
        Ok(config)
    }
}
