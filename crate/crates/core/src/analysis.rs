//! Ensemble spectral analysis and analytic steady-state predictions: Welch
//! power spectral densities, trap frequencies (zero order and with the
//! scattering-force/Gouy corrections), terminal spin rates, and Lorentzian
//! peak fitting.

use crate::constants::{BOLTZMANN, SPEED_OF_LIGHT};
use crate::geometry::ParticleProperties;
use crate::kinematics::EulerAngles;
use crate::noise::GasEnvironment;
use crate::optics::{scattering_force_torques, TweezerField};
use crate::trajectory::{Observable, Trajectory};
use crate::{Error, Result};
use nalgebra::Vector3;
use rustfft::{num_complex::Complex, FftPlanner};

/// One-sided ensemble power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    /// Frequency grid, Hz.
    pub frequencies: Vec<f64>,
    /// PSD values, signal-units^2 / Hz.
    pub values: Vec<f64>,
    /// Number of averaged segments (all trajectories pooled).
    pub segments: usize,
    /// Window descriptor.
    pub window: &'static str,
}

impl PowerSpectrum {
    pub fn frequency_resolution(&self) -> f64 {
        if self.frequencies.len() < 2 {
            0.0
        } else {
            self.frequencies[1] - self.frequencies[0]
        }
    }

    /// Integral of the PSD over frequency; equals the signal variance by
    /// Parseval within the windowing bias.
    pub fn total_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.frequency_resolution()
    }

    /// Value and frequency of the largest bin inside `[f_lo, f_hi]`.
    pub fn peak_in(&self, f_lo: f64, f_hi: f64) -> Option<(f64, f64)> {
        self.frequencies
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, v)| (*f, *v))
    }
}

/// Welch estimator parameters: Hann window, 50% overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub segment_len: usize,
}

impl WelchConfig {
    /// Segment length as a power of two giving at least `min_segments`
    /// half-overlapping segments per trace.
    pub fn auto(trace_len: usize, min_segments: usize) -> Self {
        let mut seg = 2usize.pow((trace_len as f64).log2().floor().max(4.0) as u32);
        while seg > 16 && segment_count(trace_len, seg) < min_segments {
            seg /= 2;
        }
        Self { segment_len: seg }
    }
}

fn segment_count(len: usize, seg: usize) -> usize {
    if len < seg {
        0
    } else {
        (len - seg) / (seg / 2) + 1
    }
}

/// Welch PSD of one or more equal-rate signals, averaged over all segments
/// of all signals. Segments are mean-subtracted and Hann-windowed; the
/// normalization reproduces the flat level `2 sigma^2 / f_s` for white noise
/// of variance `sigma^2`.
pub fn welch_psd(
    signals: &[&[f64]],
    sample_rate: f64,
    config: &WelchConfig,
) -> Result<PowerSpectrum> {
    let seg = config.segment_len;
    if seg < 4 {
        return Err(Error::InvalidConfig("segment length below 4".into()));
    }
    if signals.is_empty() {
        return Err(Error::InvalidConfig("no signals".into()));
    }
    for s in signals {
        if s.len() < seg {
            return Err(Error::InvalidConfig(format!(
                "segment length {seg} exceeds trace length {}",
                s.len()
            )));
        }
    }
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos()))
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let hop = seg / 2;
    let n_bins = seg / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(seg);
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    let mut acc = vec![0.0f64; n_bins];
    let mut segments = 0usize;
    for signal in signals {
        let mut start = 0;
        while start + seg <= signal.len() {
            let chunk = &signal[start..start + seg];
            let mean = chunk.iter().sum::<f64>() / seg as f64;
            for (b, (x, w)) in buf.iter_mut().zip(chunk.iter().zip(&window)) {
                *b = Complex::new((x - mean) * w, 0.0);
            }
            fft.process(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                *a += buf[k].norm_sqr();
            }
            segments += 1;
            start += hop;
        }
    }
    let norm = 1.0 / (segments as f64 * sample_rate * window_power);
    let values: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (seg.is_multiple_of(2) && k == seg / 2) {
                1.0
            } else {
                2.0
            };
            a * norm * one_sided
        })
        .collect();
    let frequencies: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate / seg as f64)
        .collect();
    Ok(PowerSpectrum {
        frequencies,
        values,
        segments,
        window: "hann",
    })
}

/// Welch PSD of one observable over an ensemble of trajectories.
pub fn psd(
    trajectories: &[Trajectory],
    observable: Observable,
    config: &WelchConfig,
) -> Result<PowerSpectrum> {
    if trajectories.is_empty() {
        return Err(Error::InvalidConfig("empty ensemble".into()));
    }
    let dt = trajectories[0].sample_dt();
    if dt <= 0.0 {
        return Err(Error::InvalidConfig("trajectory too short".into()));
    }
    for t in trajectories {
        if ((t.sample_dt() - dt) / dt).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "trajectories have mismatched sampling rates".into(),
            ));
        }
    }
    let signals: Vec<Vec<f64>> = trajectories.iter().map(|t| t.signal(observable)).collect();
    let refs: Vec<&[f64]> = signals.iter().map(|s| s.as_slice()).collect();
    welch_psd(&refs, 1.0 / dt, config)
}

/// Confinement of one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeFrequency {
    /// Harmonically trapped at the given angular frequency, rad/s.
    Trapped(f64),
    /// No restoring force at this order (free diffusion).
    Free,
    /// Negative curvature: the mode is anti-trapped.
    Untrapped,
}

impl ModeFrequency {
    fn from_squared(omega_sq: f64, reference: f64) -> Self {
        if omega_sq.abs() <= 1e-9 * reference.abs().max(f64::MIN_POSITIVE) {
            ModeFrequency::Free
        } else if omega_sq > 0.0 {
            ModeFrequency::Trapped(omega_sq.sqrt())
        } else {
            ModeFrequency::Untrapped
        }
    }

    pub fn frequency_hz(&self) -> Option<f64> {
        match self {
            ModeFrequency::Trapped(w) => Some(w / (2.0 * std::f64::consts::PI)),
            _ => None,
        }
    }

    pub fn angular(&self) -> Option<f64> {
        match self {
            ModeFrequency::Trapped(w) => Some(*w),
            _ => None,
        }
    }
}

/// Predicted trap frequencies for the six modes, plus the steady axial
/// displacement when the scattering-corrected model is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapFrequencies {
    /// Modes in the order (x, y, z, alpha, beta, gamma).
    pub modes: [ModeFrequency; 6],
    /// Steady displacement z_s along the propagation axis, m.
    pub z_shift: f64,
    /// False when no stable axial equilibrium exists (discriminant < 0).
    pub axially_stable: bool,
}

impl TrapFrequencies {
    pub fn mode(&self, observable: Observable) -> ModeFrequency {
        match observable {
            Observable::X => self.modes[0],
            Observable::Y => self.modes[1],
            Observable::Z => self.modes[2],
            Observable::Alpha => self.modes[3],
            Observable::Beta => self.modes[4],
            Observable::Gamma => self.modes[5],
            _ => ModeFrequency::Free,
        }
    }

    /// Largest trapped angular frequency, rad/s.
    pub fn max_angular(&self) -> Option<f64> {
        self.modes
            .iter()
            .filter_map(|m| m.angular())
            .max_by(f64::total_cmp)
    }
}

/// Zero-order trap frequencies from the focal curvature of the gradient
/// potential at the aligned steady orientation (beta = pi/2), without
/// scattering-force corrections.
pub fn trap_frequencies_zero_order(
    field: &TweezerField,
    props: &ParticleProperties,
) -> TrapFrequencies {
    let i0 = field.focal_intensity();
    let rho = props.mass / props.volume;
    let (bx2, by2) = (field.b_x().powi(2), field.b_y().powi(2));
    let chi = &props.susceptibility;
    let a1 = field.asymmetry;
    let w0sq = field.waist * field.waist;
    let zrsq = field.rayleigh_range * field.rayleigh_range;
    let cos2psi = bx2 - by2;
    let base = i0 / (SPEED_OF_LIGHT * rho);

    let wx2 = base * 2.0 * (chi.z * bx2 + a1 * a1 * chi.y * by2) / (a1 * w0sq);
    let wy2 = base * 2.0 * (a1 * a1 * chi.z * bx2 + chi.y * by2) / (a1 * w0sq);
    let wz2 = base * (chi.z * bx2 + a1 * a1 * chi.y * by2) / zrsq;
    let rot = i0 * props.volume / SPEED_OF_LIGHT;
    let wa2 = rot * (chi.z - chi.y) * cos2psi / props.inertia.x;
    let wb2 = rot * (chi.z - chi.x) * bx2 / props.inertia.y;
    let wg2 = rot * (chi.y - chi.x) * by2 / props.inertia.z;

    let trans_ref = base * 2.0 * chi.z / (a1 * w0sq);
    let rot_ref = rot * chi.z / props.inertia.z;
    TrapFrequencies {
        modes: [
            ModeFrequency::from_squared(wx2, trans_ref),
            ModeFrequency::from_squared(wy2, trans_ref),
            ModeFrequency::from_squared(wz2, trans_ref),
            ModeFrequency::from_squared(wa2, rot_ref),
            ModeFrequency::from_squared(wb2, rot_ref),
            ModeFrequency::from_squared(wg2, rot_ref),
        ],
        z_shift: 0.0,
        axially_stable: true,
    }
}

/// Steady axial displacement from the gradient/scattering force balance,
/// with the Gouy-phase correction. `None` when the discriminant is negative
/// (no stable axial equilibrium).
pub fn steady_axial_shift(field: &TweezerField, props: &ParticleProperties) -> Option<f64> {
    let chi = &props.susceptibility;
    let (bx2, by2) = (field.b_x().powi(2), field.b_y().powi(2));
    let k = field.wavenumber();
    let v = props.volume;
    let zr = field.rayleigh_range;
    let pi = std::f64::consts::PI;
    let s = chi.z * bx2 + chi.y * by2;
    let a2 = chi.y * chi.y * (1.0 - bx2 + by2) + chi.z * chi.z * (1.0 + bx2 - by2);
    let disc = 144.0 * pi * pi * s * s - 4.0 * k.powi(7) * v * v * zr * (k * zr - 1.0) * a2 * a2;
    if disc < 0.0 {
        return None;
    }
    Some((6.0 * pi * s - 0.5 * disc.sqrt()) / (k.powi(4) * v * a2))
}

/// Trap frequencies including the steady axial displacement and the
/// scattering-force curvature corrections. Prolate/oblate particles are
/// covered by their degenerate susceptibility diagonals.
pub fn trap_frequencies_corrected(
    field: &TweezerField,
    props: &ParticleProperties,
) -> TrapFrequencies {
    let chi = &props.susceptibility;
    let (bx2, by2) = (field.b_x().powi(2), field.b_y().powi(2));
    let k = field.wavenumber();
    let v = props.volume;
    let zr = field.rayleigh_range;
    let pi = std::f64::consts::PI;
    let i0 = field.focal_intensity();
    let rho = props.mass / props.volume;
    let base = i0 / (SPEED_OF_LIGHT * rho);
    let a1 = field.asymmetry;
    let w0sq = field.waist * field.waist;

    let Some(zs) = steady_axial_shift(field, props) else {
        return TrapFrequencies {
            modes: [ModeFrequency::Untrapped; 6],
            z_shift: 0.0,
            axially_stable: false,
        };
    };

    let zr2 = zr * zr;
    let zs2 = zs * zs;
    let zz = zr2 + zs2;
    // Transverse curvature contribution of the scattering force.
    let kappa = k.powi(4) * v * chi.y * chi.y * chi.z * chi.z * zr2 * zs
        * (bx2 - by2 + 1.0)
        * (-bx2 + by2 + 1.0)
        / (12.0 * pi * zz * zz);
    let wx2 = base
        * (2.0 * zr2 * zr2 * (a1 * a1 * chi.y * by2 + chi.z * bx2) / (a1 * w0sq * zz * zz)
            - kappa);
    let wy2 = base
        * (2.0 * zr2 * zr2 * (a1 * a1 * chi.z * bx2 + chi.y * by2) / (a1 * w0sq * zz * zz)
            - kappa);

    let gouy = k * zz - 2.0 * zr;
    let wz2 = base * zr2 / (6.0 * pi * zz * zz * zz)
        * (k.powi(3) * v * (chi.y * chi.y + chi.z * chi.z) * zs * gouy
            - 3.0 * pi * (chi.y + chi.z) * (3.0 * zs2 - zr2)
            + (chi.y - chi.z)
                * (by2 - bx2)
                * (k.powi(3) * v * zs * (chi.y + chi.z) * gouy + 3.0 * pi * (zr2 - 3.0 * zs2)));

    let rot = i0 * v / SPEED_OF_LIGHT * zr2 / zz;
    let wa2 = rot * (chi.z - chi.y) * (bx2 - by2) / props.inertia.x;
    let wb2 = rot * (chi.z - chi.x) * bx2 / props.inertia.y;
    let wg2 = rot * (chi.y - chi.x) * by2 / props.inertia.z;

    let trans_ref = base * 2.0 * chi.z / (a1 * w0sq);
    let rot_ref = rot * chi.z / props.inertia.z;
    TrapFrequencies {
        modes: [
            ModeFrequency::from_squared(wx2, trans_ref),
            ModeFrequency::from_squared(wy2, trans_ref),
            ModeFrequency::from_squared(wz2, trans_ref),
            ModeFrequency::from_squared(wa2, rot_ref),
            ModeFrequency::from_squared(wb2, rot_ref),
            ModeFrequency::from_squared(wg2, rot_ref),
        ],
        z_shift: zs,
        axially_stable: true,
    }
}

/// Terminal spin prediction for a particle driven past the libration
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinPrediction {
    /// Steady rotation rate tau / (gamma_c I), rad/s.
    pub omega_rot: f64,
    /// Thermal spread of the rotation rate, sqrt(k_B T / I), rad/s.
    pub sigma_omega: f64,
    /// Driving torque about alpha, N m.
    pub torque: f64,
    /// Effective moment of inertia about the spin axis, kg m^2.
    pub inertia: f64,
    /// False when the deterministic torque vanishes (linear polarization or
    /// isotropic particle).
    pub driven: bool,
}

/// Steady-state spin rate where the deterministic scattering torque balances
/// gas friction. The torque is evaluated at the displaced equilibrium
/// `(0, 0, z_s)` with the spin plane at the given `beta`; for asymmetric
/// tops, `orientation_averaged` replaces the gamma-dependent torque terms by
/// their rotational average.
pub fn steady_spin(
    field: &TweezerField,
    props: &ParticleProperties,
    gas: &GasEnvironment,
    gamma_c: f64,
    beta: f64,
    orientation_averaged: bool,
) -> SpinPrediction {
    let zs = steady_axial_shift(field, props).unwrap_or(0.0);
    let r = Vector3::new(0.0, 0.0, zs);
    let torque = if orientation_averaged {
        // The cos/sin(2 gamma) terms average out over a spin revolution.
        let n = 16;
        (0..n)
            .map(|i| {
                let gamma = std::f64::consts::PI * i as f64 / n as f64;
                scattering_force_torques(field, props, &r, &EulerAngles::new(0.0, beta, gamma))
                    .torque
                    .x
            })
            .sum::<f64>()
            / n as f64
    } else {
        scattering_force_torques(field, props, &r, &EulerAngles::new(0.0, beta, 0.0))
            .torque
            .x
    };
    let (sb, cb) = beta.sin_cos();
    let inertia = sb * sb * 0.5 * (props.inertia.x + props.inertia.y) + cb * cb * props.inertia.z;
    let sigma_omega = (BOLTZMANN * gas.temperature / inertia).sqrt();
    let torque_floor = crate::constants::HBAR
        * crate::optics::scattering_rate(field, props)
        * props.susceptibility.z.powi(2)
        * 1e-12;
    if torque.abs() <= torque_floor {
        return SpinPrediction {
            omega_rot: 0.0,
            sigma_omega,
            torque: 0.0,
            inertia,
            driven: false,
        };
    }
    SpinPrediction {
        omega_rot: torque / (gamma_c * inertia),
        sigma_omega,
        torque,
        inertia,
        driven: true,
    }
}

/// Lorentzian peak fit result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFit {
    /// Peak center, Hz.
    pub frequency: f64,
    /// Full width at half maximum, Hz.
    pub fwhm: f64,
    /// Integrated area of the Lorentzian component (signal-units^2), i.e.
    /// the variance carried by the mode, excluding the flat floor.
    pub area: f64,
    /// Flat background level, signal-units^2/Hz.
    pub floor: f64,
    /// Root-mean-square residual relative to the mean level in the window.
    pub residual: f64,
}

impl PeakFit {
    /// Effective mode temperature via equipartition,
    /// `T = m_mode omega0^2 <q^2> / k_B`, with `<q^2>` the fitted area.
    pub fn effective_temperature(&self, mode_mass: f64, omega0: f64) -> f64 {
        mode_mass * omega0 * omega0 * self.area / BOLTZMANN
    }
}

/// Nonlinear least-squares fit of `a / ((f-f0)^2 + (w/2)^2) + c` over the
/// given frequency window. Refuses windows without a dominant peak.
pub fn fit_peak(spectrum: &PowerSpectrum, f_lo: f64, f_hi: f64) -> Result<PeakFit> {
    let points: Vec<(f64, f64)> = spectrum
        .frequencies
        .iter()
        .zip(&spectrum.values)
        .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
        .map(|(f, v)| (*f, *v))
        .collect();
    if points.len() < 8 {
        return Err(Error::FitFailure(format!(
            "window [{f_lo:.3e}, {f_hi:.3e}] Hz holds only {} bins",
            points.len()
        )));
    }
    let (f_peak, y_peak) = points
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    let mut sorted: Vec<f64> = points.iter().map(|p| p.1).collect();
    sorted.sort_by(f64::total_cmp);
    let floor0 = sorted[sorted.len() / 2].max(f64::MIN_POSITIVE);
    if y_peak < 4.0 * floor0 {
        return Err(Error::FitFailure(format!(
            "no dominant peak: max/median = {:.2} in [{f_lo:.3e}, {f_hi:.3e}] Hz",
            y_peak / floor0
        )));
    }
    // Half-maximum crossing estimate for the initial width.
    let half = 0.5 * (y_peak + floor0);
    let mut w0 = 0.0;
    for win in points.windows(2) {
        if win[0].0 >= f_peak && (win[0].1 - half) * (win[1].1 - half) < 0.0 {
            w0 = 2.0 * (win[1].0 - f_peak).max(win[1].0 - win[0].0);
            break;
        }
    }
    if w0 == 0.0 {
        w0 = (f_hi - f_lo) / 10.0;
    }
    let mut p = [f_peak, w0, (y_peak - floor0) * 0.25 * w0 * w0, floor0];

    let model = |p: &[f64; 4], f: f64| {
        let d = f - p[0];
        p[2] / (d * d + 0.25 * p[1] * p[1]) + p[3]
    };
    // Levenberg-Marquardt with analytic Jacobian.
    let mut lambda = 1e-3;
    let mut cost = cost_of(&points, &p, &model);
    for _ in 0..300 {
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for &(f, y) in &points {
            let d = f - p[0];
            let denom = d * d + 0.25 * p[1] * p[1];
            let grad = [
                p[2] * 2.0 * d / (denom * denom),
                -p[2] * 0.25 * p[1] / (denom * denom),
                1.0 / denom,
                1.0,
            ];
            let r = model(&p, f) - y;
            for i in 0..4 {
                jtr[i] += grad[i] * r;
                for j in 0..4 {
                    jtj[i][j] += grad[i] * grad[j];
                }
            }
        }
        let mut a = jtj;
        for (i, row) in a.iter_mut().enumerate() {
            row[i] *= 1.0 + lambda;
        }
        let Some(step) = solve4(&a, &jtr) else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = p;
        for i in 0..4 {
            trial[i] -= step[i];
        }
        trial[1] = trial[1].abs().max(spectrum.frequency_resolution() * 0.1);
        trial[2] = trial[2].abs();
        let trial_cost = cost_of(&points, &trial, &model);
        if trial_cost < cost {
            let rel = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
            p = trial;
            cost = trial_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if rel < 1e-12 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if !p.iter().all(|v| v.is_finite()) || p[1] <= 0.0 {
        return Err(Error::FitFailure(format!(
            "fit diverged from initial guess (f0 {f_peak:.4e} Hz, fwhm {w0:.4e} Hz)"
        )));
    }
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let residual = (cost / points.len() as f64).sqrt() / mean_y;
    // Integrated Lorentzian: a * 2 pi / w.
    let area = p[2] * 2.0 * std::f64::consts::PI / p[1];
    Ok(PeakFit {
        frequency: p[0],
        fwhm: p[1],
        area,
        floor: p[3],
        residual,
    })
}

fn cost_of(points: &[(f64, f64)], p: &[f64; 4], model: &impl Fn(&[f64; 4], f64) -> f64) -> f64 {
    points
        .iter()
        .map(|&(f, y)| {
            let r = model(p, f) - y;
            r * r
        })
        .sum()
}

fn solve4(a: &[[f64; 4]; 4], b: &[f64; 4]) -> Option<[f64; 4]> {
    let mut m = *a;
    let mut v = *b;
    for col in 0..4 {
        let mut piv = col;
        for row in (col + 1)..4 {
            if m[row][col].abs() > m[piv][col].abs() {
                piv = row;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        v.swap(col, piv);
        let d = m[col][col];
        for row in 0..4 {
            if row != col {
                let f = m[row][col] / d;
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
                v[row] -= f * v[col];
            }
        }
    }
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = v[i] / m[i][i];
    }
    Some(out)
}
