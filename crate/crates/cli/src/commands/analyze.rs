//! `analyze`: spectra, Lorentzian peak fits, linewidth ratios and effective
//! temperatures from stored traces.

use crate::{load_config, CliError};
use levisim::analysis::{
    fit_peak, psd, trap_frequencies_corrected, ModeFrequency, WelchConfig,
};
use levisim::geometry::particle_properties;
use levisim::trace::read_trajectory;
use levisim::trajectory::{Observable, Trajectory};
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct Report {
    tool_version: String,
    config_hash: String,
    seed: u64,
    traces: usize,
    samples_per_trace: usize,
    sample_rate_hz: f64,
    modes: Vec<ModeReport>,
    linewidth_ratios: Vec<RatioReport>,
}

#[derive(Serialize)]
struct ModeReport {
    observable: String,
    predicted_frequency_hz: Option<f64>,
    confinement: String,
    fit: Option<FitReport>,
    fit_error: Option<String>,
}

#[derive(Serialize)]
struct FitReport {
    frequency_hz: f64,
    fwhm_hz: f64,
    area: f64,
    floor: f64,
    residual: f64,
    effective_temperature_k: Option<f64>,
}

#[derive(Serialize)]
struct RatioReport {
    pair: String,
    ratio: f64,
}

pub fn run(
    traces_dir: &Path,
    config_path: &Path,
    overrides: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (file, _) = load_config(config_path, overrides, None)?;
    let shape = file.shape()?;
    let material = file.material()?;
    let field = file.field()?;
    let props = particle_properties(&shape, &material)?;
    let predicted = trap_frequencies_corrected(&field, &props);
    let out_dir = out.unwrap_or(traces_dir);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;

    let mut entries: Vec<_> = std::fs::read_dir(traces_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", traces_dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "trc").unwrap_or(false))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::Io(format!(
            "{}: no .trc traces found",
            traces_dir.display()
        )));
    }
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut hash = None;
    for path in &entries {
        let (header, traj) = read_trajectory(path)?;
        match hash {
            None => hash = Some(header.config_hash),
            Some(h) if h != header.config_hash => {
                return Err(CliError::Io(format!(
                    "{}: config hash {:016x} differs from {:016x}; refusing to mix runs",
                    path.display(),
                    header.config_hash,
                    h
                )))
            }
            _ => {}
        }
        trajectories.push(traj);
    }
    let config_hash = hash.unwrap_or(0);
    let len = trajectories[0].states.len();
    let dt = trajectories[0].sample_dt();
    let welch = match file.analysis.segment_len {
        Some(seg) => WelchConfig { segment_len: seg },
        None => WelchConfig::auto(len, file.analysis.min_segments),
    };

    let mut modes = Vec::new();
    let mut fitted = std::collections::HashMap::new();
    for obs in Observable::ALL {
        let spectrum = psd(&trajectories, obs, &welch)?;
        crate::commands::write_spectrum_csv(
            &out_dir.join(format!("psd_{}.csv", obs.label())),
            &spectrum,
            obs.label(),
            config_hash,
            trajectories[0].seed,
        )?;
        // Fit around the predicted mode frequency, where one exists.
        let mode = predicted.mode(obs);
        let (fit, fit_error) = match mode {
            ModeFrequency::Trapped(w) => {
                let f0 = w / (2.0 * std::f64::consts::PI);
                let window = file.analysis.fit_window;
                match fit_peak(&spectrum, (1.0 - window) * f0, (1.0 + window) * f0) {
                    Ok(f) => {
                        fitted.insert(obs.label(), f);
                        let t_eff = match obs {
                            Observable::X | Observable::Y | Observable::Z => {
                                Some(f.effective_temperature(props.mass, w))
                            }
                            Observable::Alpha => Some(f.effective_temperature(props.inertia.x, w)),
                            Observable::Beta => Some(f.effective_temperature(props.inertia.y, w)),
                            Observable::Gamma => Some(f.effective_temperature(props.inertia.z, w)),
                            _ => None,
                        };
                        (
                            Some(FitReport {
                                frequency_hz: f.frequency,
                                fwhm_hz: f.fwhm,
                                area: f.area,
                                floor: f.floor,
                                residual: f.residual,
                                effective_temperature_k: t_eff,
                            }),
                            None,
                        )
                    }
                    Err(e) => (None, Some(e.to_string())),
                }
            }
            _ => (None, None),
        };
        modes.push(ModeReport {
            observable: obs.label().into(),
            predicted_frequency_hz: mode.frequency_hz(),
            confinement: match mode {
                ModeFrequency::Trapped(_) => "trapped".into(),
                ModeFrequency::Free => "free".into(),
                ModeFrequency::Untrapped => "untrapped".into(),
            },
            fit,
            fit_error,
        });
    }
    let mut linewidth_ratios = Vec::new();
    for (a, b) in [("x", "y"), ("x", "z"), ("y", "z")] {
        if let (Some(fa), Some(fb)) = (fitted.get(a), fitted.get(b)) {
            linewidth_ratios.push(RatioReport {
                pair: format!("{a}/{b}"),
                ratio: fa.fwhm / fb.fwhm,
            });
        }
    }

    let report = Report {
        tool_version: crate::TOOL_VERSION.into(),
        config_hash: format!("{config_hash:016x}"),
        seed: trajectories[0].seed,
        traces: trajectories.len(),
        samples_per_trace: len,
        sample_rate_hz: 1.0 / dt,
        modes,
        linewidth_ratios,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out_dir.join("report.json"), &json)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    println!("{json}");
    Ok(())
}
