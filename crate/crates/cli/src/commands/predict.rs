//! `predict`: analytic steady-state table for the configured system.

use crate::commands::mode_cell;
use crate::{load_config, CliError};
use levisim::analysis::{
    steady_spin, trap_frequencies_corrected, trap_frequencies_zero_order,
};
use levisim::geometry::particle_properties;
use levisim::noise::gas_damping_rate;
use levisim::optics::{rayleigh_cross_section, scattering_rate};
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

pub fn run(config_path: &Path, overrides: &[String], seed: Option<u64>) -> Result<(), CliError> {
    let (file, _) = load_config(config_path, overrides, seed)?;
    let shape = file.shape()?;
    let material = file.material()?;
    let field = file.field()?;
    let gas = file.gas();
    let props = particle_properties(&shape, &material)?;
    let gamma_c = gas_damping_rate(&props, &gas);
    let gamma_s = scattering_rate(&field, &props);
    let sim_config = file.simulation()?;

    println!("# levisim predict, tool_version = {}", crate::TOOL_VERSION);
    println!("# config_hash = {:016x}", sim_config.hash64());
    println!(
        "# particle: M = {:.6e} kg, V = {:.6e} m^3, R_eq = {:.6e} m",
        props.mass, props.volume, props.equivalent_radius
    );
    println!(
        "# inertia = ({:.6e}, {:.6e}, {:.6e}) kg m^2",
        props.inertia.x, props.inertia.y, props.inertia.z
    );
    println!(
        "# susceptibility = ({:.6}, {:.6}, {:.6})",
        props.susceptibility.x, props.susceptibility.y, props.susceptibility.z
    );
    println!(
        "# tweezer: P = {} W, lambda = {:.4e} m, w0 = {:.4e} m, z_R = {:.4e} m, a1 = {}, psi = {} rad",
        field.power, field.wavelength, field.waist, field.rayleigh_range, field.asymmetry,
        field.ellipticity
    );
    println!(
        "# gas: {:.4e} Pa, {} K; gamma_c = {:.6e} 1/s; gamma_s = {:.6e} 1/s",
        gas.pressure, gas.temperature, gamma_c, gamma_s
    );
    match rayleigh_cross_section(&props, field.wavelength) {
        Ok(sr) => println!("# sigma_R = {sr:.6e} m^2"),
        Err(_) => println!("# sigma_R = n/a (anisotropic particle)"),
    }

    let zero = trap_frequencies_zero_order(&field, &props);
    let corrected = trap_frequencies_corrected(&field, &props);
    println!(
        "# z_s = {:.6e} m, axially_stable = {}",
        corrected.z_shift, corrected.axially_stable
    );
    println!("mode,f_zero_order_hz,f_corrected_hz");
    for (i, label) in ["x", "y", "z", "alpha", "beta", "gamma"].iter().enumerate() {
        println!(
            "{label},{},{}",
            mode_cell(&zero.modes[i]),
            mode_cell(&corrected.modes[i])
        );
    }

    let spin = steady_spin(&field, &props, &gas, gamma_c, FRAC_PI_2, true);
    if spin.driven {
        println!(
            "spin,omega_rot_rad_s = {:.6e},f_rot_hz = {:.6e},sigma_omega_rad_s = {:.6e}",
            spin.omega_rot,
            spin.omega_rot / (2.0 * std::f64::consts::PI),
            spin.sigma_omega
        );
    } else {
        println!("spin,undriven (zero deterministic torque)");
    }
    Ok(())
}
