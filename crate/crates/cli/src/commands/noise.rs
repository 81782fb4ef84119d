//! `noise`: print a 6x6 correlation matrix for a config/state pair as CSV.

use crate::{load_config, CliError};
use levisim::dynamics::SimContext;
use levisim::kinematics::PhaseState;
use levisim::nalgebra::Matrix6;
use levisim::noise::{gas_noise_correlation, recoil_correlation};
use std::path::Path;

fn parse_state(raw: &str) -> Result<PhaseState, CliError> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("state: {e}")))?;
    let arr: [f64; 12] = parts.try_into().map_err(|v: Vec<f64>| {
        CliError::Config(format!("state needs 12 numbers, got {}", v.len()))
    })?;
    Ok(PhaseState::from_array(&arr))
}

pub fn run(
    config_path: &Path,
    overrides: &[String],
    seed: Option<u64>,
    kind: &str,
    state: Option<&str>,
) -> Result<(), CliError> {
    let (file, _) = load_config(config_path, overrides, seed)?;
    let sim_config = file.simulation()?;
    let (ctx, _) = SimContext::new(&sim_config)?;
    let state = match state {
        Some(raw) => parse_state(raw)?,
        None => ctx.rest_state,
    };

    let gas = || {
        gas_noise_correlation(&state.orientation, &ctx.props, &ctx.gas, ctx.gamma_c)
            .matrix()
            .to_owned()
    };
    let recoil = || -> Result<Matrix6<f64>, CliError> {
        let (polar, azim) = ctx.recoil_quadrature;
        Ok(recoil_correlation(
            &ctx.field,
            &ctx.props,
            &state.position,
            &state.orientation,
            polar,
            azim,
        )?
        .matrix()
        .to_owned())
    };
    let matrix = match kind {
        "gas" => gas(),
        "recoil" => recoil()?,
        "total" => gas() + recoil()?,
        other => {
            return Err(CliError::Config(format!(
                "unknown noise kind '{other}' (gas|recoil|total)"
            )))
        }
    };
    println!("# correlation = {kind}, units: momentum rows kg^2 m^2/s^3, angle rows J^2 s");
    println!("# config_hash = {:016x}", sim_config.hash64());
    println!(
        "# state: r = ({:.4e}, {:.4e}, {:.4e}) m, angles = ({:.4}, {:.4}, {:.4}) rad",
        state.position.x,
        state.position.y,
        state.position.z,
        state.orientation.alpha,
        state.orientation.beta,
        state.orientation.gamma
    );
    println!("row,dpx,dpy,dpz,dpi_alpha,dpi_beta,dpi_gamma");
    let labels = ["dpx", "dpy", "dpz", "dpi_alpha", "dpi_beta", "dpi_gamma"];
    for i in 0..6 {
        let cells: Vec<String> = (0..6).map(|j| format!("{:.9e}", matrix[(i, j)])).collect();
        println!("{},{}", labels[i], cells.join(","));
    }
    Ok(())
}
