pub mod analyze;
pub mod noise;
pub mod predict;
pub mod simulate;
pub mod sweep;

use crate::CliError;
use levisim::analysis::{ModeFrequency, PowerSpectrum};
use std::io::Write;
use std::path::Path;

/// One row per frequency bin: `frequency_hz,psd_value`, with `#` metadata.
pub fn write_spectrum_csv(
    path: &Path,
    spectrum: &PowerSpectrum,
    label: &str,
    config_hash: u64,
    seed: u64,
) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
    );
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    writeln!(w, "# observable = {label}").map_err(io)?;
    writeln!(w, "# config_hash = {config_hash:016x}").map_err(io)?;
    writeln!(w, "# seed = {seed}").map_err(io)?;
    writeln!(w, "# tool_version = {}", crate::TOOL_VERSION).map_err(io)?;
    writeln!(w, "# segments = {}", spectrum.segments).map_err(io)?;
    writeln!(w, "# window = {}", spectrum.window).map_err(io)?;
    writeln!(w, "frequency_hz,psd_value").map_err(io)?;
    for (f, v) in spectrum.frequencies.iter().zip(&spectrum.values) {
        writeln!(w, "{f:.9e},{v:.9e}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn mode_cell(mode: &ModeFrequency) -> String {
    match mode {
        ModeFrequency::Trapped(w) => format!("{:.6e}", w / (2.0 * std::f64::consts::PI)),
        ModeFrequency::Free => "free".into(),
        ModeFrequency::Untrapped => "untrapped".into(),
    }
}
