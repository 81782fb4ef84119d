//! `sweep`: scan the polarization ellipticity and emit summed-PSD maps
//! (rows = frequency, one column per psi value).

use crate::{load_config, CliError};
use levisim::analysis::{psd, PowerSpectrum, WelchConfig};
use levisim::dynamics::{simulate_with_context, SimContext};
use levisim::trajectory::Observable;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Serialize)]
struct SweepManifest {
    tool_version: String,
    config_hash_base: String,
    seed: u64,
    psi_grid: Vec<f64>,
    failures: Vec<String>,
}

pub fn run(
    config_path: &Path,
    overrides: &[String],
    seed: Option<u64>,
    out: &Path,
    points: usize,
    min: f64,
    max: f64,
) -> Result<(), CliError> {
    if points < 2 || max <= min {
        return Err(CliError::Config(
            "sweep needs at least 2 points and max > min".into(),
        ));
    }
    let (file, _) = load_config(config_path, overrides, seed)?;
    let base_config = file.simulation()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    let grid: Vec<f64> = (0..points)
        .map(|i| min + (max - min) * i as f64 / (points - 1) as f64)
        .collect();

    // Summed PSDs over the center-of-mass block and the librational block.
    let translational = [Observable::X, Observable::Y, Observable::Z];
    let rotational = [Observable::Alpha, Observable::Beta];
    let mut trans_columns: Vec<Option<PowerSpectrum>> = Vec::new();
    let mut rot_columns: Vec<Option<PowerSpectrum>> = Vec::new();
    let mut failures = Vec::new();

    for (i, &psi) in grid.iter().enumerate() {
        let mut config = base_config;
        config.field.ellipticity = psi;
        // Decorrelate the grid points while staying reproducible.
        config.seed = base_config.seed.wrapping_add(i as u64);
        let point = (|| -> Result<(PowerSpectrum, PowerSpectrum), CliError> {
            let (ctx, _) = SimContext::new(&config)?;
            let result = simulate_with_context(&config, &ctx)?;
            if result.trajectories.is_empty() {
                return Err(CliError::Numeric(format!(
                    "all {} trajectories failed (first: {})",
                    config.ensemble,
                    result
                        .failures
                        .first()
                        .map(|f| f.message.as_str())
                        .unwrap_or("unknown")
                )));
            }
            let len = result.trajectories[0].states.len();
            let welch = match file.analysis.segment_len {
                Some(seg) => WelchConfig { segment_len: seg },
                None => WelchConfig::auto(len, file.analysis.min_segments),
            };
            let sum_of = |set: &[Observable]| -> Result<PowerSpectrum, CliError> {
                let mut total: Option<PowerSpectrum> = None;
                for obs in set {
                    let s = psd(&result.trajectories, *obs, &welch)?;
                    total = Some(match total {
                        None => s,
                        Some(mut acc) => {
                            for (a, v) in acc.values.iter_mut().zip(&s.values) {
                                *a += v;
                            }
                            acc
                        }
                    });
                }
                Ok(total.expect("non-empty observable set"))
            };
            Ok((sum_of(&translational)?, sum_of(&rotational)?))
        })();
        match point {
            Ok((t, r)) => {
                println!("sweep point {i}: psi = {psi:.4} rad done");
                trans_columns.push(Some(t));
                rot_columns.push(Some(r));
            }
            Err(e) => {
                eprintln!("sweep point {i}: psi = {psi:.4} rad failed: {e}");
                failures.push(format!("point {i} (psi = {psi:.4}): {e}"));
                trans_columns.push(None);
                rot_columns.push(None);
            }
        }
    }

    write_map(&out.join("sweep_translational.csv"), &grid, &trans_columns)?;
    write_map(&out.join("sweep_rotational.csv"), &grid, &rot_columns)?;
    let manifest = SweepManifest {
        tool_version: crate::TOOL_VERSION.into(),
        config_hash_base: format!("{:016x}", base_config.hash64()),
        seed: base_config.seed,
        psi_grid: grid,
        failures,
    };
    std::fs::write(
        out.join("sweep_manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?,
    )
    .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    Ok(())
}

fn write_map(
    path: &Path,
    grid: &[f64],
    columns: &[Option<PowerSpectrum>],
) -> Result<(), CliError> {
    let Some(reference) = columns.iter().flatten().next() else {
        return Err(CliError::Numeric("no successful sweep points".into()));
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let header: Vec<String> = grid.iter().map(|psi| format!("psi_{psi:.6}")).collect();
    writeln!(w, "frequency_hz,{}", header.join(",")).map_err(io)?;
    for (k, f) in reference.frequencies.iter().enumerate() {
        write!(w, "{f:.9e}").map_err(io)?;
        for col in columns {
            match col {
                Some(s) => write!(w, ",{:.9e}", s.values[k]).map_err(io)?,
                None => write!(w, ",nan").map_err(io)?,
            }
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}
