//! `simulate`: integrate the ensemble, write traces and the run manifest.

use crate::{load_config, CliError};
use levisim::analysis::{psd, WelchConfig};
use levisim::dynamics::{simulate_with_context, SimContext};
use levisim::trace::{export_csv, write_trajectory, FORMAT_VERSION};
use levisim::trajectory::Observable;
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct Manifest {
    tool_version: String,
    trace_format_version: u32,
    config_hash: String,
    seed: u64,
    ensemble: usize,
    duration_s: f64,
    dt_s: f64,
    decimation: usize,
    traces: Vec<TraceEntry>,
    failures: Vec<FailureEntry>,
    effective_config: toml::Value,
}

#[derive(Serialize)]
struct TraceEntry {
    index: u64,
    file: String,
    samples: usize,
}

#[derive(Serialize)]
struct FailureEntry {
    index: u64,
    seed: u64,
    time_s: f64,
    message: String,
}

pub fn run(
    config_path: &Path,
    overrides: &[String],
    seed: Option<u64>,
    out: &Path,
    csv: bool,
    with_psd: bool,
) -> Result<(), CliError> {
    let (file, _) = load_config(config_path, overrides, seed)?;
    let sim_config = file.simulation()?;
    let (ctx, warnings) = SimContext::new(&sim_config)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    let started = std::time::Instant::now();
    let result = simulate_with_context(&sim_config, &ctx)?;
    let elapsed = started.elapsed().as_secs_f64();

    let mut traces = Vec::new();
    for t in &result.trajectories {
        let name = format!("traj_{:04}.trc", t.index);
        let path = out.join(&name);
        write_trajectory(&path, t, sim_config.decimation as u32)?;
        if csv {
            export_csv(&out.join(format!("traj_{:04}.csv", t.index)), t)?;
        }
        traces.push(TraceEntry {
            index: t.index,
            file: name,
            samples: t.times.len(),
        });
    }
    if with_psd && !result.trajectories.is_empty() {
        let len = result.trajectories[0].states.len();
        let welch = match file.analysis.segment_len {
            Some(seg) => WelchConfig { segment_len: seg },
            None => WelchConfig::auto(len, file.analysis.min_segments),
        };
        for obs in [
            Observable::X,
            Observable::Y,
            Observable::Z,
            Observable::Alpha,
            Observable::Beta,
            Observable::Gamma,
        ] {
            let spectrum = psd(&result.trajectories, obs, &welch)?;
            crate::commands::write_spectrum_csv(
                &out.join(format!("psd_{}.csv", obs.label())),
                &spectrum,
                obs.label(),
                result.config_hash,
                sim_config.seed,
            )?;
        }
    }

    let manifest = Manifest {
        tool_version: crate::TOOL_VERSION.into(),
        trace_format_version: FORMAT_VERSION,
        config_hash: format!("{:016x}", result.config_hash),
        seed: sim_config.seed,
        ensemble: sim_config.ensemble,
        duration_s: sim_config.duration,
        dt_s: result.dt,
        decimation: sim_config.decimation,
        traces,
        failures: result
            .failures
            .iter()
            .map(|f| FailureEntry {
                index: f.index,
                seed: f.seed,
                time_s: f.time,
                message: f.message.clone(),
            })
            .collect(),
        effective_config: toml::Value::try_from(&file)
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out.join("manifest.json"), manifest_json)
        .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    println!(
        "simulate: {} trajectories ({} failed), {:.3e} s simulated at dt {:.3e} s, wall {elapsed:.1} s",
        result.trajectories.len(),
        result.failures.len(),
        sim_config.duration,
        result.dt,
    );
    println!("config hash {:016x}, seed {}", result.config_hash, sim_config.seed);
    for f in &result.failures {
        eprintln!(
            "trajectory {} failed at t = {:.3e} s (seed {}): {}",
            f.index, f.time, f.seed, f.message
        );
    }
    Ok(())
}
