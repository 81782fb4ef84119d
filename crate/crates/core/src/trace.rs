//! Binary trajectory storage and CSV export.
//!
//! Record layout (little endian): a self-describing header — magic `LVTR`,
//! format version, config hash, master seed, trajectory index, output dt,
//! decimation — followed by `[t, 12 floats]` per sample. Readers refuse
//! mismatched format versions.

use crate::trajectory::Trajectory;
use crate::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"LVTR";

/// On-disk format version; bump on layout changes.
pub const FORMAT_VERSION: u32 = 1;

/// Trace header metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u32,
    pub config_hash: u64,
    pub seed: u64,
    pub index: u64,
    pub decimation: u32,
    pub samples: u64,
}

/// Write a trajectory; byte-identical output for identical inputs.
pub fn write_trajectory(path: &Path, trajectory: &Trajectory, decimation: u32) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&trajectory.config_hash.to_le_bytes())?;
    w.write_all(&trajectory.seed.to_le_bytes())?;
    w.write_all(&trajectory.index.to_le_bytes())?;
    w.write_all(&trajectory.sample_dt().to_le_bytes())?;
    w.write_all(&decimation.to_le_bytes())?;
    w.write_all(&(trajectory.times.len() as u64).to_le_bytes())?;
    for (t, state) in trajectory.times.iter().zip(&trajectory.states) {
        w.write_all(&t.to_le_bytes())?;
        for v in state {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Read a trace written by [`write_trajectory`].
pub fn read_trajectory(path: &Path) -> Result<(TraceHeader, Trajectory)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::TraceFormat(format!(
            "{}: bad magic {magic:02x?}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::TraceFormat(format!(
            "{}: format version {version} (this build reads {FORMAT_VERSION})",
            path.display()
        )));
    }
    let config_hash = read_u64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let index = read_u64(&mut r)?;
    let _dt = read_f64(&mut r)?;
    let decimation = read_u32(&mut r)?;
    let samples = read_u64(&mut r)?;
    let mut times = Vec::with_capacity(samples as usize);
    let mut states = Vec::with_capacity(samples as usize);
    for _ in 0..samples {
        times.push(read_f64(&mut r)?);
        let mut s = [0.0; 12];
        for v in &mut s {
            *v = read_f64(&mut r)?;
        }
        states.push(s);
    }
    let header = TraceHeader {
        version,
        config_hash,
        seed,
        index,
        decimation,
        samples,
    };
    Ok((
        header,
        Trajectory {
            times,
            states,
            seed,
            index,
            config_hash,
            wall_time: 0.0,
            pll_unlocked: false,
        },
    ))
}

/// CSV export: `# key = value` metadata lines, a column header, then one
/// row per sample.
pub fn export_csv(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config_hash = {:016x}", trajectory.config_hash)?;
    writeln!(w, "# seed = {}", trajectory.seed)?;
    writeln!(w, "# index = {}", trajectory.index)?;
    writeln!(w, "# tool_version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(
        w,
        "t_s,x_m,y_m,z_m,px_kg_m_s,py_kg_m_s,pz_kg_m_s,alpha_rad,beta_rad,gamma_rad,pi_alpha_J_s,pi_beta_J_s,pi_gamma_J_s"
    )?;
    for (t, state) in trajectory.times.iter().zip(&trajectory.states) {
        write!(w, "{t:.9e}")?;
        for v in state {
            write!(w, ",{v:.9e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
