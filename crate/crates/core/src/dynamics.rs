//! The 12-dimensional stochastic equations of motion: deterministic drift
//! assembly, classical RK4 with Euler-Maruyama noise increments, feedback
//! controllers, and seeded parallel ensembles.
//!
//! Noise enters once per step with the diffusion factor evaluated at the
//! pre-step state, so the integrator is RK4 in the drift and weak order one
//! in the diffusion.

use crate::analysis::{steady_axial_shift, trap_frequencies_corrected, trap_frequencies_zero_order};
use crate::constants::BOLTZMANN;
use crate::geometry::{particle_properties, Material, ParticleProperties, ParticleShape};
use crate::kinematics::{
    free_hamiltonian_gradients, kinetic_energy, EulerAngles, PhaseState, BETA_GUARD,
};
use crate::noise::{
    cholesky_factor, gas_damping_rate, gas_noise_correlation, recoil_correlation,
    rotational_gas_block, GasEnvironment, NoiseGenerator,
};
use crate::optics::{
    gradient_forces_torques, gradient_potential, scattering_force_torques, TweezerField,
};
use crate::trajectory::Trajectory;
use crate::{Error, Result};
use nalgebra::{Matrix6, Vector3};
use rayon::prelude::*;

/// Target degree of freedom for a feedback controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    X,
    Y,
    Z,
    Alpha,
    Beta,
    Gamma,
}

impl Dof {
    /// Index into the (r, phi) block: 0..2 translations, 3..5 angles.
    pub fn index(&self) -> usize {
        match self {
            Dof::X => 0,
            Dof::Y => 1,
            Dof::Z => 2,
            Dof::Alpha => 3,
            Dof::Beta => 4,
            Dof::Gamma => 5,
        }
    }

    pub fn is_translation(&self) -> bool {
        self.index() < 3
    }

    pub fn label(&self) -> &'static str {
        match self {
            Dof::X => "x",
            Dof::Y => "y",
            Dof::Z => "z",
            Dof::Alpha => "alpha",
            Dof::Beta => "beta",
            Dof::Gamma => "gamma",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [Dof::X, Dof::Y, Dof::Z, Dof::Alpha, Dof::Beta, Dof::Gamma]
            .into_iter()
            .find(|d| d.label() == s)
    }
}

/// Measurement-based feedback acting on a single degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackController {
    /// Velocity-opposing force `-gamma_fb * v_est`, with detection-noise
    /// feed-through of one-sided position-imprecision PSD `S_nn`.
    ColdDamping {
        target: Dof,
        /// Feedback damping rate gamma_fb, 1/s.
        gain: f64,
        /// One-sided imprecision PSD of the position measurement,
        /// units^2/Hz; converted to a white velocity-estimate noise at the
        /// mode frequency.
        imprecision_psd: f64,
    },
    /// Self-synchronized stiffness modulation
    /// `omega0^2 (1 + eta q qdot / omega0) q` (Van der Pol type).
    Parametric {
        target: Dof,
        /// Loop gain eta, 1/(units^2 s) * omega0 normalization as printed.
        gain: f64,
    },
    /// Fixed-depth stiffness modulation `1 - G sin(2(omega0 t + theta))`
    /// with the instantaneous phase tracked by a software PLL. The lock
    /// phase is pinned so the modulation extracts energy.
    ParametricPll {
        target: Dof,
        /// Modulation depth G.
        depth: f64,
        /// Reference mode frequency, rad/s; the corrected trap-frequency
        /// prediction when omitted.
        reference_omega: Option<f64>,
        /// PLL tracking bandwidth, Hz.
        bandwidth: f64,
    },
}

impl FeedbackController {
    pub fn target(&self) -> Dof {
        match self {
            FeedbackController::ColdDamping { target, .. }
            | FeedbackController::Parametric { target, .. }
            | FeedbackController::ParametricPll { target, .. } => *target,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            FeedbackController::ColdDamping {
                gain,
                imprecision_psd,
                ..
            } => *gain >= 0.0 && *imprecision_psd >= 0.0,

            FeedbackController::Parametric { gain, .. } => *gain >= 0.0,
            FeedbackController::ParametricPll {
                depth,
                bandwidth,
                reference_omega,
                ..
            } => *depth >= 0.0 && *bandwidth > 0.0 && reference_omega.is_none_or(|w| w > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("negative feedback gain".into()))
        }
    }
}

/// Individually switchable dynamical terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    /// Conservative gradient forces/torques.
    pub gradient: bool,
    /// Deterministic radiation-pressure force and torques.
    pub scattering: bool,
    /// Gas damping drift.
    pub gas_damping: bool,
    /// Gas collision noise.
    pub gas_noise: bool,
    /// Photon-recoil noise (off by default: gas noise dominates at the
    /// simulated pressures).
    pub recoil_noise: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            gradient: true,
            scattering: true,
            gas_damping: true,
            gas_noise: true,
            recoil_noise: false,
        }
    }
}

impl Toggles {
    pub fn conservative_only() -> Self {
        Self {
            gradient: true,
            scattering: false,
            gas_damping: false,
            gas_noise: false,
            recoil_noise: false,
        }
    }
}

/// Initial-state policy for ensemble members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    /// Deterministic steady state (displaced focus, beta = pi/2 alignment)
    /// with thermal Maxwell momenta.
    Thermal,
    /// Steady state at rest.
    Rest,
    /// Fully specified state.
    Explicit(PhaseState),
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub shape: ParticleShape,
    pub material: Material,
    pub field: TweezerField,
    pub gas: GasEnvironment,
    /// Integrator step, s; `None` selects `1 / (40 f_max)` from the largest
    /// zero-order trap frequency.
    pub dt: Option<f64>,
    /// Simulated span per trajectory, s.
    pub duration: f64,
    /// Output decimation: one stored sample every `decimation` base steps.
    pub decimation: usize,
    /// Number of trajectories.
    pub ensemble: usize,
    /// Master seed; trajectory streams derive from `(seed, index)`.
    pub seed: u64,
    pub toggles: Toggles,
    pub feedback: Option<FeedbackController>,
    pub initial: InitialState,
    /// (polar, azimuthal) quadrature order for recoil noise, when enabled.
    pub recoil_quadrature: (usize, usize),
}

impl SimulationConfig {
    pub fn new(
        shape: ParticleShape,
        material: Material,
        field: TweezerField,
        gas: GasEnvironment,
    ) -> Self {
        Self {
            shape,
            material,
            field,
            gas,
            dt: None,
            duration: 1e-3,
            decimation: 8,
            ensemble: 1,
            seed: 0,
            toggles: Toggles::default(),
            feedback: None,
            initial: InitialState::Thermal,
            recoil_quadrature: (32, 64),
        }
    }

    /// FNV-1a hash over the physical parameters, embedded in every output.
    pub fn hash64(&self) -> u64 {
        fn fnv(h: &mut u64, v: u64) {
            for b in v.to_le_bytes() {
                *h ^= b as u64;
                *h = h.wrapping_mul(0x100000001b3);
            }
        }
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: u64| fnv(&mut h, v);
        let [a, b, c] = self.shape.semi_axes();
        eat(a.to_bits());
        eat(b.to_bits());
        eat(c.to_bits());
        eat(self.shape.volume().to_bits());
        eat(self.material.density.to_bits());
        eat(self.material.permittivity.to_bits());
        eat(self.field.power.to_bits());
        eat(self.field.wavelength.to_bits());
        eat(self.field.waist.to_bits());
        eat(self.field.rayleigh_range.to_bits());
        eat(self.field.asymmetry.to_bits());
        eat(self.field.ellipticity.to_bits());
        eat(matches!(self.field.model, crate::optics::FieldModel::TwoModeGouy) as u64);
        eat(self.gas.pressure.to_bits());
        eat(self.gas.temperature.to_bits());
        eat(self.gas.molecule_mass.to_bits());
        eat(self.dt.unwrap_or(0.0).to_bits());
        eat(self.duration.to_bits());
        eat(self.decimation as u64);
        eat(self.ensemble as u64);
        eat(self.seed);
        eat(self.toggles.gradient as u64);
        eat(self.toggles.scattering as u64);
        eat(self.toggles.gas_damping as u64);
        eat(self.toggles.gas_noise as u64);
        eat(self.toggles.recoil_noise as u64);
        if let Some(fb) = &self.feedback {
            match fb {
                FeedbackController::ColdDamping {
                    target,
                    gain,
                    imprecision_psd,
                } => {
                    eat(1);
                    eat(target.index() as u64);
                    eat(gain.to_bits());
                    eat(imprecision_psd.to_bits());
                }
                FeedbackController::Parametric { target, gain } => {
                    eat(2);
                    eat(target.index() as u64);
                    eat(gain.to_bits());
                }
                FeedbackController::ParametricPll {
                    target,
                    depth,
                    reference_omega,
                    bandwidth,
                } => {
                    eat(3);
                    eat(target.index() as u64);
                    eat(depth.to_bits());
                    eat(reference_omega.unwrap_or(0.0).to_bits());
                    eat(bandwidth.to_bits());
                }
            }
        }
        h
    }
}

/// Precomputed per-run quantities shared by all trajectories.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub props: ParticleProperties,
    pub field: TweezerField,
    pub gas: GasEnvironment,
    pub gamma_c: f64,
    pub toggles: Toggles,
    pub recoil_quadrature: (usize, usize),
    pub feedback: Option<FeedbackSetup>,
    /// Base integrator step, s.
    pub dt: f64,
    /// Initial-state template (position/orientation part).
    pub rest_state: PhaseState,
    /// Isotropic particle: the orientation block is silent (no optical
    /// coupling) and beta is not confined, so free rotation would cross the
    /// Euler-chart singularity. The angles are held and the angle momenta
    /// follow their exact Ornstein-Uhlenbeck law in the frozen metric.
    pub silent_rotations: bool,
}

/// Controller plus the mode constants it needs.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackSetup {
    pub controller: FeedbackController,
    /// Reference mode angular frequency, rad/s.
    pub omega0: f64,
    /// Mode inertia: mass for translations, moment of inertia for angles.
    pub mode_mass: f64,
    /// Predicted equilibrium value of the target coordinate; the runtime
    /// AC-couples around a tracked mean seeded with this.
    pub offset: f64,
}

impl SimContext {
    pub fn new(config: &SimulationConfig) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        if config.duration <= 0.0 {
            return Err(Error::InvalidConfig("duration must be > 0".into()));
        }
        if config.ensemble == 0 {
            return Err(Error::InvalidConfig("ensemble must be >= 1".into()));
        }
        if config.decimation == 0 {
            return Err(Error::InvalidConfig("decimation must be >= 1".into()));
        }
        let props = particle_properties(&config.shape, &config.material)?;
        let gamma_c = gas_damping_rate(&props, &config.gas);
        let zero_order = trap_frequencies_zero_order(&config.field, &props);
        let f_max = zero_order
            .max_angular()
            .map(|w| w / (2.0 * std::f64::consts::PI));
        let dt = match config.dt {
            Some(dt) => {
                if !dt.is_finite() || dt <= 0.0 {
                    return Err(Error::InvalidConfig("dt must be > 0".into()));
                }
                dt
            }
            None => match f_max {
                Some(f) => 1.0 / (40.0 * f),
                // Untrapped particle: resolve the damping time instead.
                None => 0.01 / gamma_c.max(1.0),
            },
        };
        if let Some(f) = f_max {
            let product = dt * f;
            if product >= 0.5 {
                return Err(Error::InvalidConfig(format!(
                    "dt * max trap frequency = {product:.2} leaves the trap unresolved"
                )));
            }
            if product >= 0.1 {
                warnings.push(format!(
                    "dt * max trap frequency = {product:.2} above the 0.1 accuracy threshold"
                ));
            }
        }
        let feedback = match &config.feedback {
            None => None,
            Some(fb) => {
                fb.validate()?;
                let target = fb.target();
                let corrected = trap_frequencies_corrected(&config.field, &props);
                let mode = match target {
                    Dof::X => corrected.modes[0],
                    Dof::Y => corrected.modes[1],
                    Dof::Z => corrected.modes[2],
                    Dof::Alpha => corrected.modes[3],
                    Dof::Beta => corrected.modes[4],
                    Dof::Gamma => corrected.modes[5],
                };
                let reference = match fb {
                    FeedbackController::ParametricPll {
                        reference_omega, ..
                    } => *reference_omega,
                    _ => None,
                };
                let omega0 = match reference {
                    Some(w) => w,
                    None => mode.angular().ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "feedback target {} is not harmonically trapped",
                            target.label()
                        ))
                    })?,
                };
                let mode_mass = match target {
                    Dof::X | Dof::Y | Dof::Z => props.mass,
                    Dof::Alpha => props.inertia.x,
                    Dof::Beta => props.inertia.y,
                    Dof::Gamma => props.inertia.z,
                };
                let offset = match target {
                    Dof::Z => steady_axial_shift(&config.field, &props).unwrap_or(0.0),
                    _ => 0.0,
                };
                Some(FeedbackSetup {
                    controller: *fb,
                    omega0,
                    mode_mass,
                    offset,
                })
            }
        };
        let z_shift = steady_axial_shift(&config.field, &props).unwrap_or(0.0);
        let rest_state = PhaseState {
            position: Vector3::new(0.0, 0.0, z_shift),
            orientation: EulerAngles::new(0.0, std::f64::consts::FRAC_PI_2, 0.0),
            ..Default::default()
        };
        let silent_rotations = props.is_isotropic(1e-9);
        Ok((
            Self {
                props,
                field: config.field,
                gas: config.gas,
                gamma_c,
                toggles: config.toggles,
                recoil_quadrature: config.recoil_quadrature,
                feedback,
                dt,
                rest_state,
                silent_rotations,
            },
            warnings,
        ))
    }

    /// Total mechanical energy `H_free + H_gradient` (gradient term honored
    /// only when toggled on, so it is a constant of motion when every
    /// non-conservative term is disabled).
    pub fn total_energy(&self, state: &PhaseState) -> Result<f64> {
        let mut e = kinetic_energy(state, &self.props)?;
        if self.toggles.gradient {
            e += gradient_potential(&self.field, &self.props, &state.position, &state.orientation);
        }
        Ok(e)
    }
}

/// Live controller state carried along one trajectory.
#[derive(Debug, Clone)]
pub struct FeedbackRuntime {
    setup: FeedbackSetup,
    pll: Option<PllState>,
    /// Slow running mean of the measured coordinate (AC coupling), so the
    /// displacement-driven controllers see the oscillation, not the static
    /// equilibrium offset.
    q_mean: f64,
}

impl FeedbackRuntime {
    pub fn new(setup: FeedbackSetup) -> Self {
        let pll = match setup.controller {
            FeedbackController::ParametricPll { bandwidth, .. } => {
                Some(PllState::new(setup.omega0, bandwidth))
            }
            _ => None,
        };
        Self {
            setup,
            pll,
            q_mean: setup.offset,
        }
    }

    /// Generalized force applied to the target momentum, N or N m.
    fn force(&self, state: &PhaseState, velocities: &[f64; 6]) -> f64 {
        let target = self.setup.controller.target();
        let idx = target.index();
        let q = generalized_position(state, target) - self.q_mean;
        match self.setup.controller {
            FeedbackController::ColdDamping { gain, .. } => {
                -gain * self.setup.mode_mass * velocities[idx]
            }
            FeedbackController::Parametric { gain, .. } => {
                // omega0^2 eta q qdot / omega0 times q, as a force.
                -self.setup.mode_mass * self.setup.omega0 * gain * q * q * velocities[idx]
            }
            FeedbackController::ParametricPll { depth, .. } => {
                // Lock phase pinned for energy extraction: with q = A sin(theta),
                // <F qdot> = -m w0^3 G A^2 / 4. The depth is gated on the
                // lock quality, since an unlocked modulation is a stochastic
                // stiffness drive that only heats.
                let (theta, gate) = self
                    .pll
                    .as_ref()
                    .map_or((0.0, 0.0), |p| (p.theta, p.lock_quality.clamp(0.0, 1.0)));
                -self.setup.mode_mass * self.setup.omega0.powi(2) * depth * gate * gate
                    * (2.0 * theta).sin()
                    * q
            }
        }
    }

    /// Advance the measurement-driven internals once per base step.
    fn update(&mut self, state: &PhaseState, dt: f64) {
        let q = generalized_position(state, self.setup.controller.target());
        // Mean tracker over ~30 oscillation periods.
        let rate = (self.setup.omega0 * dt / 200.0).min(1.0);
        self.q_mean += (q - self.q_mean) * rate;
        if let Some(pll) = &mut self.pll {
            pll.update(q - self.q_mean, dt);
        }
    }

    /// Judged at the end of a run: a tracking loop keeps the time-averaged
    /// in-phase correlation well above zero even through the Rayleigh fades
    /// of a cooled thermal mode, while a wandering or never-acquired loop
    /// averages to zero.
    pub fn is_unlocked(&self) -> bool {
        self.pll.as_ref().is_some_and(|p| p.mean_lock_quality() < 0.25)
    }
}

fn generalized_position(state: &PhaseState, dof: Dof) -> f64 {
    match dof {
        Dof::X => state.position.x,
        Dof::Y => state.position.y,
        Dof::Z => state.position.z,
        Dof::Alpha => state.orientation.alpha,
        Dof::Beta => state.orientation.beta - std::f64::consts::FRAC_PI_2,
        Dof::Gamma => state.orientation.gamma,
    }
}

/// Second-order software PLL tracking `q ~ A sin(theta)`.
#[derive(Debug, Clone)]
struct PllState {
    theta: f64,
    omega: f64,
    err_lp: f64,
    amp: f64,
    /// Low-passed in-phase correlation, ~cos(phase error): near 1 when
    /// locked, near 0 when the phase wanders or was never acquired.
    lock_quality: f64,
    /// Settling time before lock statistics accumulate, s.
    warmup: f64,
    lock_sum: f64,
    lock_time: f64,
    kp: f64,
    ki: f64,
    lp_rate: f64,
}

impl PllState {
    fn new(omega0: f64, bandwidth_hz: f64) -> Self {
        let wl = 2.0 * std::f64::consts::PI * bandwidth_hz;
        Self {
            theta: 0.0,
            omega: omega0,
            err_lp: 0.0,
            amp: 0.0,
            lock_quality: 0.0,
            warmup: 5.0 / wl,
            lock_sum: 0.0,
            lock_time: 0.0,
            kp: 2.0 * 0.707 * wl,
            ki: wl * wl,
            lp_rate: wl,
        }
    }

    fn update(&mut self, q: f64, dt: f64) {
        // Envelope tracker; mean(|sin|) = 2/pi.
        let target_amp = q.abs() * std::f64::consts::FRAC_PI_2;
        if self.amp == 0.0 {
            self.amp = target_amp;
        }
        let a_rate = (0.2 * self.lp_rate * dt).min(1.0);
        self.amp += (target_amp - self.amp) * a_rate;
        let norm = self.amp.max(f64::MIN_POSITIVE);
        // Phase detector: q cos(theta) ~ (A/2) sin(theta_true - theta);
        // clamped against envelope fades of the thermal oscillator.
        let err = (2.0 * q * self.theta.cos() / norm).clamp(-2.0, 2.0);
        let e_rate = (self.lp_rate * dt).min(1.0);
        self.err_lp += (err - self.err_lp) * e_rate;
        self.omega += self.ki * self.err_lp * dt;
        self.theta += (self.omega + self.kp * self.err_lp) * dt;
        // In-phase quadrature: 2 q sin(theta)/A ~ cos(phase error) + 2w ripple.
        let inphase = (2.0 * q * self.theta.sin() / norm).clamp(-2.0, 2.0);
        self.lock_quality += (inphase - self.lock_quality) * e_rate;
        if self.warmup > 0.0 {
            self.warmup -= dt;
        } else {
            self.lock_sum += self.lock_quality * dt;
            self.lock_time += dt;
        }
    }

    /// Average in-phase correlation after loop settling; zero when the run
    /// never outlasted the settling time.
    fn mean_lock_quality(&self) -> f64 {
        if self.lock_time > 0.0 {
            self.lock_sum / self.lock_time
        } else {
            0.0
        }
    }
}

/// Deterministic drift of the 12-vector, including feedback when active.
///
/// `d r = dH/dp`, `d phi = dH/dpi`, `d p = -dH_grad/dr + F_scatt - gamma p`,
/// `d pi = -d(H_free + H_grad)/dphi + tau_scatt - gamma pi`.
pub fn drift(
    ctx: &SimContext,
    state: &PhaseState,
    feedback: Option<&FeedbackRuntime>,
) -> Result<[f64; 12]> {
    // Silent orientation block of an isotropic particle: no kinetic angle
    // advance, only momentum damping (gauge-fixed Ornstein-Uhlenbeck).
    let (dh_dphi, dh_dpi) = if ctx.silent_rotations {
        (Vector3::zeros(), Vector3::zeros())
    } else {
        free_hamiltonian_gradients(state, &ctx.props)?
    };
    let mut dp = Vector3::zeros();
    let mut dpi = -dh_dphi;
    if ctx.toggles.gradient {
        let grad = gradient_forces_torques(&ctx.field, &ctx.props, &state.position, &state.orientation);
        dp += grad.force;
        dpi += grad.torque;
    }
    if ctx.toggles.scattering {
        let scatt =
            scattering_force_torques(&ctx.field, &ctx.props, &state.position, &state.orientation);
        dp += scatt.force;
        dpi += scatt.torque;
    }
    if ctx.toggles.gas_damping {
        dp -= ctx.gamma_c * state.momentum;
        dpi -= ctx.gamma_c * state.angle_momentum;
    }
    if let Some(fb) = feedback {
        let velocities = [
            state.momentum.x / ctx.props.mass,
            state.momentum.y / ctx.props.mass,
            state.momentum.z / ctx.props.mass,
            dh_dpi.x,
            dh_dpi.y,
            dh_dpi.z,
        ];
        let f = fb.force(state, &velocities);
        let idx = fb.setup.controller.target().index();
        if idx < 3 {
            dp[idx] += f;
        } else {
            dpi[idx - 3] += f;
        }
    }
    let dr = state.momentum / ctx.props.mass;
    Ok([
        dr.x, dr.y, dr.z, dp.x, dp.y, dp.z, dh_dpi.x, dh_dpi.y, dh_dpi.z, dpi.x, dpi.y, dpi.z,
    ])
}

fn add_scaled(a: &[f64; 12], k: &[f64; 12], s: f64) -> [f64; 12] {
    let mut out = *a;
    for i in 0..12 {
        out[i] += s * k[i];
    }
    out
}

/// One classical RK4 step of the deterministic drift plus a single
/// Euler-Maruyama noise increment with pre-step coefficients.
pub fn step(
    ctx: &SimContext,
    state: &PhaseState,
    dt: f64,
    feedback: Option<&FeedbackRuntime>,
    rng: &mut NoiseGenerator,
) -> Result<PhaseState> {
    let x0 = state.to_array();
    let k1 = drift(ctx, state, feedback)?;
    let k2 = drift(ctx, &PhaseState::from_array(&add_scaled(&x0, &k1, 0.5 * dt)), feedback)?;
    let k3 = drift(ctx, &PhaseState::from_array(&add_scaled(&x0, &k2, 0.5 * dt)), feedback)?;
    let k4 = drift(ctx, &PhaseState::from_array(&add_scaled(&x0, &k3, dt)), feedback)?;
    let mut out = x0;
    for i in 0..12 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    // Stochastic increments: correlation factors at the pre-step state.
    if ctx.toggles.gas_noise || ctx.toggles.recoil_noise {
        let mut sigma = Matrix6::zeros();
        if ctx.toggles.gas_noise {
            sigma += gas_noise_correlation(&state.orientation, &ctx.props, &ctx.gas, ctx.gamma_c)
                .matrix();
        }
        if ctx.toggles.recoil_noise {
            let (polar, azim) = ctx.recoil_quadrature;
            sigma += recoil_correlation(
                &ctx.field,
                &ctx.props,
                &state.position,
                &state.orientation,
                polar,
                azim,
            )?
            .matrix();
        }
        let corr = crate::noise::NoiseCorrelation::new(sigma)?;
        let factor = cholesky_factor(&corr)?;
        let dw = crate::noise::sample_noise(&factor, dt, rng);
        for i in 0..3 {
            out[3 + i] += dw[i];
            out[9 + i] += dw[3 + i];
        }
    }
    // Detection-noise feed-through of cold damping: a white force
    // -gamma_fb m delta(qdot) with PSD set by S_nn at the mode frequency.
    if let Some(fb) = feedback {
        if let FeedbackController::ColdDamping {
            gain,
            imprecision_psd,
            ..
        } = fb.setup.controller
        {
            if gain > 0.0 && imprecision_psd > 0.0 {
                let s_vv = fb.setup.omega0.powi(2) * imprecision_psd;
                let amp = gain * fb.setup.mode_mass * (0.5 * s_vv).sqrt();
                let idx = fb.setup.controller.target().index();
                let kick = amp * dt.sqrt() * rng.standard_normal();
                if idx < 3 {
                    out[3 + idx] += kick;
                } else {
                    out[9 + idx - 3] += kick;
                }
            }
        }
    }
    let next = PhaseState::from_array(&out);
    if !next.is_finite() {
        return Err(Error::NonFiniteState {
            time: 0.0,
            detail: "integration step produced a non-finite component".into(),
        });
    }
    Ok(next)
}

/// A failed ensemble member.
#[derive(Debug, Clone)]
pub struct TrajectoryFailure {
    pub index: u64,
    pub seed: u64,
    pub time: f64,
    pub message: String,
}

/// Ensemble output; failures are reported alongside the surviving
/// trajectories.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub trajectories: Vec<Trajectory>,
    pub failures: Vec<TrajectoryFailure>,
    pub dt: f64,
    pub config_hash: u64,
}

/// Integrate a seeded ensemble in parallel.
///
/// Trajectories are independent work units with noise streams derived from
/// `(seed, index)`, so results are bit-identical for a fixed config and seed
/// regardless of the worker count.
pub fn simulate(config: &SimulationConfig) -> Result<EnsembleResult> {
    let (ctx, _warnings) = SimContext::new(config)?;
    simulate_with_context(config, &ctx)
}

/// [`simulate`] with an externally built context (lets callers report the
/// validation warnings).
pub fn simulate_with_context(config: &SimulationConfig, ctx: &SimContext) -> Result<EnsembleResult> {
    let config_hash = config.hash64();
    let results: Vec<std::result::Result<Trajectory, TrajectoryFailure>> = (0..config.ensemble
        as u64)
        .into_par_iter()
        .map(|index| run_trajectory(config, ctx, index, config_hash))
        .collect();
    let mut trajectories = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(t) => trajectories.push(t),
            Err(f) => failures.push(f),
        }
    }
    Ok(EnsembleResult {
        trajectories,
        failures,
        dt: ctx.dt,
        config_hash,
    })
}

fn run_trajectory(
    config: &SimulationConfig,
    ctx: &SimContext,
    index: u64,
    config_hash: u64,
) -> std::result::Result<Trajectory, TrajectoryFailure> {
    let started = std::time::Instant::now();
    let mut rng = NoiseGenerator::for_trajectory(config.seed, index);
    let fail = |time: f64, e: Error| TrajectoryFailure {
        index,
        seed: config.seed,
        time,
        message: e.to_string(),
    };

    let mut state = match config.initial {
        InitialState::Explicit(s) => s,
        InitialState::Rest => ctx.rest_state,
        InitialState::Thermal => {
            let mut s = ctx.rest_state;
            let kt = BOLTZMANN * ctx.gas.temperature;
            let p_sd = (ctx.props.mass * kt).sqrt();
            s.momentum = p_sd * rng.normal_vector3();
            // pi covariance is kT * (M^T I_lab M) at the initial orientation.
            let metric = rotational_gas_block(&s.orientation, &ctx.props.inertia) * kt;
            match nalgebra::Cholesky::new(metric) {
                Some(ch) => s.angle_momentum = ch.l() * rng.normal_vector3(),
                None => {
                    return Err(fail(
                        0.0,
                        Error::InvalidConfig("initial orientation metric not positive".into()),
                    ))
                }
            }
            s
        }
    };
    if state.orientation.beta.sin().abs() < BETA_GUARD {
        return Err(fail(0.0, Error::SingularOrientation {
            beta: state.orientation.beta,
        }));
    }

    let n_steps = (config.duration / ctx.dt).ceil() as usize;
    let mut feedback = ctx.feedback.map(FeedbackRuntime::new);
    let capacity = n_steps / config.decimation + 2;
    let mut times = Vec::with_capacity(capacity);
    let mut states = Vec::with_capacity(capacity);
    times.push(0.0);
    states.push(state.to_array());

    for n in 0..n_steps {
        let t = n as f64 * ctx.dt;
        // Tighten the step against fast spinning: keep each substep's
        // angular advance below 0.1 rad.
        let k1 = drift(ctx, &state, feedback.as_ref()).map_err(|e| fail(t, e))?;
        let ang_rate = k1[6].abs().max(k1[7].abs()).max(k1[8].abs());
        let substeps = ((ang_rate * ctx.dt / 0.1).ceil() as usize).clamp(1, 4096);
        let dt_sub = ctx.dt / substeps as f64;
        for _ in 0..substeps {
            state = step(ctx, &state, dt_sub, feedback.as_ref(), &mut rng)
                .map_err(|e| fail(t, e))?;
            if state.orientation.beta.sin().abs() < BETA_GUARD {
                return Err(fail(t, Error::SingularOrientation {
                    beta: state.orientation.beta,
                }));
            }
        }
        if let Some(fb) = &mut feedback {
            fb.update(&state, ctx.dt);
        }
        if (n + 1) % config.decimation == 0 {
            times.push((n + 1) as f64 * ctx.dt);
            states.push(state.to_array());
        }
    }
    Ok(Trajectory {
        times,
        states,
        seed: config.seed,
        index,
        config_hash,
        wall_time: started.elapsed().as_secs_f64(),
        pll_unlocked: feedback.map(|f| f.is_unlocked()).unwrap_or(false),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ModeFrequency;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    fn sphere_config() -> SimulationConfig {
        SimulationConfig::new(
            ParticleShape::sphere(80e-9).unwrap(),
            Material::silicon(),
            TweezerField::table_defaults(),
            GasEnvironment::nitrogen(50.0, 300.0),
        )
    }

    fn triaxial_config() -> SimulationConfig {
        SimulationConfig::new(
            ParticleShape::triaxial(42e-9, 57e-9, 91e-9).unwrap(),
            Material::silicon(),
            TweezerField::table_defaults(),
            GasEnvironment::nitrogen(50.0, 300.0),
        )
    }

    #[test]
    fn drift_vanishes_at_conservative_equilibrium() {
        let mut config = triaxial_config();
        config.toggles = Toggles::conservative_only();
        let (ctx, _) = SimContext::new(&config).unwrap();
        let state = PhaseState {
            orientation: EulerAngles::new(0.0, FRAC_PI_2, 0.0),
            ..Default::default()
        };
        let d = drift(&ctx, &state, None).unwrap();
        for (i, v) in d.iter().enumerate() {
            assert!(v.abs() < 1e-20, "component {i} = {v:.3e}");
        }
    }

    #[test]
    fn drift_matches_finite_differences_of_the_hamiltonians() {
        let mut config = triaxial_config();
        config.field.ellipticity = 0.4;
        let (ctx, _) = SimContext::new(&config).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        use rand::SeedableRng as _;
        for _ in 0..200 {
            let state = PhaseState {
                position: Vector3::new(
                    rng.random_range(-0.3e-6..0.3e-6),
                    rng.random_range(-0.3e-6..0.3e-6),
                    rng.random_range(-0.5e-6..0.5e-6),
                ),
                momentum: Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ) * 1e-22,
                orientation: EulerAngles::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.4..std::f64::consts::PI - 0.4),
                    rng.random_range(-3.0..3.0),
                ),
                angle_momentum: Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ) * 1e-26,
            };
            let d = drift(&ctx, &state, None).unwrap();
            let h = |s: &PhaseState| -> f64 {
                kinetic_energy(s, &ctx.props).unwrap()
                    + gradient_potential(&ctx.field, &ctx.props, &s.position, &s.orientation)
            };
            let scatt = scattering_force_torques(
                &ctx.field,
                &ctx.props,
                &state.position,
                &state.orientation,
            );
            let mut arr = state.to_array();
            // dr/dt = +dH/dp, dphi/dt = +dH/dpi; H is exactly quadratic in
            // the momenta, so oversized FD steps are truncation-free and
            // beat the cancellation against the potential energy scale.
            for (slot, hstep, expect, sign, extra) in [
                (3usize, 1e-20, d[0], 1.0, 0.0),
                (4, 1e-20, d[1], 1.0, 0.0),
                (5, 1e-20, d[2], 1.0, 0.0),
                (9, 1e-24, d[6], 1.0, 0.0),
                (10, 1e-24, d[7], 1.0, 0.0),
                (11, 1e-24, d[8], 1.0, 0.0),
                // dp/dt = -dH/dr + F_scatt - gamma p.
                (
                    0,
                    1e-12,
                    d[3],
                    -1.0,
                    scatt.force.x - ctx.gamma_c * state.momentum.x,
                ),
                (
                    1,
                    1e-12,
                    d[4],
                    -1.0,
                    scatt.force.y - ctx.gamma_c * state.momentum.y,
                ),
                (
                    2,
                    1e-12,
                    d[5],
                    -1.0,
                    scatt.force.z - ctx.gamma_c * state.momentum.z,
                ),
                (
                    6,
                    1e-5,
                    d[9],
                    -1.0,
                    scatt.torque.x - ctx.gamma_c * state.angle_momentum.x,
                ),
                (
                    7,
                    1e-5,
                    d[10],
                    -1.0,
                    scatt.torque.y - ctx.gamma_c * state.angle_momentum.y,
                ),
                (
                    8,
                    1e-5,
                    d[11],
                    -1.0,
                    scatt.torque.z - ctx.gamma_c * state.angle_momentum.z,
                ),
            ] {
                let orig = arr[slot];
                arr[slot] = orig + hstep;
                let hp = h(&PhaseState::from_array(&arr));
                arr[slot] = orig - hstep;
                let hm = h(&PhaseState::from_array(&arr));
                arr[slot] = orig;
                let fd = sign * (hp - hm) / (2.0 * hstep) + extra;
                let scale = expect.abs().max(fd.abs()).max(1e-300);
                assert!(
                    (fd - expect).abs() <= 1e-6 * scale,
                    "slot {slot}: fd {fd:.8e} vs drift {expect:.8e}"
                );
            }
        }
    }

    #[test]
    fn sphere_angular_block_ignores_optical_terms() {
        let mut config = sphere_config();
        config.field.ellipticity = 0.5;
        let (ctx_on, _) = SimContext::new(&config).unwrap();
        let mut off = config;
        off.toggles.gradient = false;
        off.toggles.scattering = false;
        let (ctx_off, _) = SimContext::new(&off).unwrap();
        let state = PhaseState {
            position: Vector3::new(0.1e-6, -0.2e-6, 0.3e-6),
            momentum: Vector3::new(1e-22, 2e-22, -1e-22),
            orientation: EulerAngles::new(0.7, 1.2, -0.4),
            angle_momentum: Vector3::new(3e-27, -2e-27, 1e-27),
        };
        let a = drift(&ctx_on, &state, None).unwrap();
        let b = drift(&ctx_off, &state, None).unwrap();
        for i in [6, 7, 8, 9, 10, 11] {
            // Tolerance floor covers the rounding residue of the exactly
            // cancelling optical torque sums.
            assert!(
                (a[i] - b[i]).abs() <= 1e-12 * a[i].abs() + 1e-30,
                "angular slot {i} differs: {:.3e} vs {:.3e}",
                a[i],
                b[i]
            );
        }
        assert!((a[5] - b[5]).abs() > 0.0, "optical force must act on z");
    }

    #[test]
    fn harmonic_energy_drift_per_period() {
        // Small-amplitude x oscillation of the table sphere: measured RK4
        // secular drift at dt = T/200 stays under 1e-8 per period (theory:
        // (w dt)^6/72 per step, about 2.7e-9 per period).
        let mut config = sphere_config();
        config.toggles = Toggles::conservative_only();
        let (ctx, _) = SimContext::new(&config).unwrap();
        let omega = trap_frequencies_zero_order(&ctx.field, &ctx.props).modes[0]
            .angular()
            .unwrap();
        let period = 2.0 * std::f64::consts::PI / omega;
        let dt = period / 200.0;
        let mut state = PhaseState {
            position: Vector3::new(2e-9, 0.0, 0.0),
            orientation: EulerAngles::new(0.0, FRAC_PI_2, 0.0),
            ..Default::default()
        };
        let mut rng = NoiseGenerator::new(0);
        let e0 = ctx.total_energy(&state).unwrap();
        let periods = 50;
        for _ in 0..200 * periods {
            state = step(&ctx, &state, dt, None, &mut rng).unwrap();
        }
        let e1 = ctx.total_energy(&state).unwrap();
        // Relative to the oscillation energy, not the trap depth.
        let mode_energy = 0.5 * ctx.props.mass * omega * omega * (2e-9f64).powi(2);
        let drift_per_period = ((e1 - e0) / mode_energy).abs() / periods as f64;
        assert!(
            drift_per_period < 1e-8,
            "energy drift {drift_per_period:.3e} per period"
        );
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let mut config = triaxial_config();
        config.toggles = Toggles::conservative_only();
        let (ctx, _) = SimContext::new(&config).unwrap();
        let start = PhaseState {
            position: Vector3::new(50e-9, -40e-9, 100e-9),
            orientation: EulerAngles::new(0.3, FRAC_PI_2 - 0.2, 0.1),
            ..Default::default()
        };
        let total = 4e-6;
        let run = |n: usize| -> [f64; 12] {
            let mut rng = NoiseGenerator::new(0);
            let dt = total / n as f64;
            let mut s = start;
            for _ in 0..n {
                s = step(&ctx, &s, dt, None, &mut rng).unwrap();
            }
            s.to_array()
        };
        let coarse = run(200);
        let mid = run(400);
        let fine = run(800);
        let reference = run(6400);
        let err = |s: &[f64; 12]| -> f64 {
            s.iter()
                .zip(&reference)
                .map(|(a, b)| ((a - b) / b.abs().max(1e-30)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let r1 = err(&coarse) / err(&mid);
        let r2 = err(&mid) / err(&fine);
        assert!(r1 > 10.0 && r1 < 26.0, "halving ratio {r1:.1}");
        assert!(r2 > 10.0 && r2 < 26.0, "halving ratio {r2:.1}");
    }

    #[test]
    fn ensemble_determinism_across_worker_counts() {
        let mut config = sphere_config();
        config.duration = 2e-4;
        config.ensemble = 4;
        config.seed = 77;
        config.decimation = 16;
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| simulate(&config).unwrap());
        let two = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap()
            .install(|| simulate(&config).unwrap());
        assert_eq!(one.trajectories.len(), 4);
        for (a, b) in one.trajectories.iter().zip(&two.trajectories) {
            assert_eq!(a.states, b.states, "trajectory {} differs", a.index);
        }
        // And a fresh run with the same seed is bit-identical too.
        let again = simulate(&config).unwrap();
        for (a, b) in one.trajectories.iter().zip(&again.trajectories) {
            assert_eq!(a.states, b.states);
        }
    }

    #[test]
    fn disjoint_seeds_are_uncorrelated() {
        let mut config = sphere_config();
        config.duration = 2e-3;
        config.ensemble = 2;
        config.seed = 5;
        config.decimation = 8;
        let out = simulate(&config).unwrap();
        let a = out.trajectories[0].signal(crate::trajectory::Observable::X);
        let b = out.trajectories[1].signal(crate::trajectory::Observable::X);
        let n = a.len();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..n {
            cov += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma).powi(2);
            vb += (b[i] - mb).powi(2);
        }
        let rho = cov / (va * vb).sqrt();
        // Correlated samples: effective N reduced by the correlation time
        // of the oscillator envelope (about 1/gamma_c).
        let dt_out = out.trajectories[0].sample_dt();
        let n_eff = (n as f64 * dt_out * 2.0e3).max(4.0);
        assert!(
            rho.abs() < 3.0 / n_eff.sqrt(),
            "cross-correlation {rho:.3} with n_eff {n_eff:.0}"
        );
    }

    #[test]
    fn zero_gain_feedback_is_inert() {
        let mut config = sphere_config();
        config.duration = 1e-4;
        config.seed = 9;
        let base = simulate(&config).unwrap();
        config.feedback = Some(FeedbackController::ColdDamping {
            target: Dof::Z,
            gain: 0.0,
            imprecision_psd: 0.0,
        });
        let with_fb = simulate(&config).unwrap();
        assert_eq!(base.trajectories[0].states, with_fb.trajectories[0].states);
    }

    #[test]
    fn cold_damping_cools_the_target_mode() {
        let mut config = sphere_config();
        config.duration = 4e-3;
        config.ensemble = 6;
        config.seed = 31;
        config.decimation = 4;
        let hot = simulate(&config).unwrap();
        config.feedback = Some(FeedbackController::ColdDamping {
            target: Dof::Z,
            gain: 10.0 * 1997.0,
            imprecision_psd: 0.0,
        });
        let cold = simulate(&config).unwrap();
        let var = |r: &EnsembleResult| {
            let samples: Vec<f64> = r
                .trajectories
                .iter()
                .flat_map(|t| t.states.iter().skip(t.states.len() / 4).map(|s| s[2]))
                .collect();
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            samples.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / samples.len() as f64
        };
        let ratio = var(&cold) / var(&hot);
        assert!(
            ratio < 0.2,
            "cold damping should strongly reduce the z variance, got {ratio:.3}"
        );
    }

    fn tail_variance(result: &EnsembleResult, column: usize) -> f64 {
        let samples: Vec<f64> = result
            .trajectories
            .iter()
            .flat_map(|t| t.states.iter().skip(t.states.len() / 3).map(|s| s[column]))
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / samples.len() as f64
    }

    #[test]
    fn parametric_feedback_cools_and_zero_gain_is_inert() {
        let mut config = sphere_config();
        config.duration = 6e-3;
        config.ensemble = 4;
        config.seed = 41;
        config.decimation = 8;
        let hot = simulate(&config).unwrap();
        config.feedback = Some(FeedbackController::Parametric {
            target: Dof::Z,
            gain: 0.0,
        });
        let inert = simulate(&config).unwrap();
        assert_eq!(hot.trajectories[0].states, inert.trajectories[0].states);
        // Gain sized so the nonlinear damping beats gamma_c at thermal
        // amplitude: eta ~ 20 gamma_c m w0 / kT.
        let (ctx, _) = SimContext::new(&config).unwrap();
        let w0 = trap_frequencies_zero_order(&ctx.field, &ctx.props).modes[2]
            .angular()
            .unwrap();
        let eta = 20.0 * ctx.gamma_c * ctx.props.mass * w0 / (BOLTZMANN * 300.0);
        config.feedback = Some(FeedbackController::Parametric {
            target: Dof::Z,
            gain: eta,
        });
        let cold = simulate(&config).unwrap();
        let ratio = tail_variance(&cold, 2) / tail_variance(&hot, 2);
        assert!(ratio < 0.6, "parametric feedback ratio {ratio:.3}");
    }

    #[test]
    fn pll_feedback_locks_and_cools() {
        let mut config = sphere_config();
        config.duration = 10e-3;
        config.ensemble = 4;
        config.seed = 43;
        config.decimation = 8;
        let hot = simulate(&config).unwrap();
        config.feedback = Some(FeedbackController::ParametricPll {
            target: Dof::Z,
            depth: 0.0,
            reference_omega: None,
            bandwidth: 8e3,
        });
        let inert = simulate(&config).unwrap();
        assert_eq!(hot.trajectories[0].states, inert.trajectories[0].states);

        config.feedback = Some(FeedbackController::ParametricPll {
            target: Dof::Z,
            depth: 0.12,
            reference_omega: None,
            bandwidth: 8e3,
        });
        let cold = simulate(&config).unwrap();
        for t in &cold.trajectories {
            assert!(!t.pll_unlocked, "trajectory {} lost lock", t.index);
        }
        let ratio = tail_variance(&cold, 2) / tail_variance(&hot, 2);
        assert!(ratio < 0.6, "pll feedback ratio {ratio:.3}");
    }

    #[test]
    fn pll_unlock_is_flagged() {
        // A loop bandwidth far below the thermal phase-diffusion rate
        // cannot track the oscillator; the unlock diagnostic must fire.
        let mut config = sphere_config();
        config.duration = 6e-3;
        config.ensemble = 2;
        config.seed = 47;
        config.decimation = 16;
        config.feedback = Some(FeedbackController::ParametricPll {
            target: Dof::Z,
            depth: 1e-4,
            reference_omega: None,
            bandwidth: 2.0,
        });
        let out = simulate(&config).unwrap();
        assert!(out.trajectories.iter().any(|t| t.pll_unlocked));
    }

    #[test]
    fn sphere_angular_momenta_are_ou_and_decoupled() {
        // Silent-rotation spheres: pi follows the gas Ornstein-Uhlenbeck law
        // in the frozen metric and stays uncorrelated from translations.
        let mut config = sphere_config();
        config.gas = GasEnvironment::nitrogen(500.0, 300.0);
        config.duration = 6e-3;
        config.ensemble = 8;
        config.seed = 53;
        config.decimation = 8;
        let out = simulate(&config).unwrap();
        let (ctx, _) = SimContext::new(&config).unwrap();
        let kt = BOLTZMANN * 300.0;
        // Stationary variance of pi_beta: kT * g_22 = kT * I at beta = pi/2.
        let expect = kt * ctx.props.inertia.x;
        let var = tail_variance(&out, 10);
        assert!(
            ((var - expect) / expect).abs() < 0.1,
            "pi_beta variance {var:.4e} vs kT I {expect:.4e}"
        );
        // Autocorrelation decay at lag tau: exp(-gamma_c tau).
        let dt_out = out.trajectories[0].sample_dt();
        let lag = (0.5 / (ctx.gamma_c * dt_out)).round() as usize;
        let mut num = 0.0;
        let mut den = 0.0;
        for t in &out.trajectories {
            let s = t.signal(crate::trajectory::Observable::PiBeta);
            for i in 0..s.len() - lag {
                num += s[i] * s[i + lag];
                den += s[i] * s[i];
            }
        }
        let rho = num / den;
        let expect_rho = (-ctx.gamma_c * lag as f64 * dt_out).exp();
        assert!(
            (rho - expect_rho).abs() < 0.1,
            "autocorrelation {rho:.3} vs OU {expect_rho:.3}"
        );
        // Cross-correlation with the translational momenta under 3 sigma.
        let mut worst: f64 = 0.0;
        let mut n_samples = 0usize;
        for t in &out.trajectories {
            let p = t.signal(crate::trajectory::Observable::Pz);
            let q = t.signal(crate::trajectory::Observable::PiBeta);
            let mp = p.iter().sum::<f64>() / p.len() as f64;
            let mq = q.iter().sum::<f64>() / q.len() as f64;
            let mut cov = 0.0;
            let mut vp = 0.0;
            let mut vq = 0.0;
            for i in 0..p.len() {
                cov += (p[i] - mp) * (q[i] - mq);
                vp += (p[i] - mp).powi(2);
                vq += (q[i] - mq).powi(2);
            }
            worst = worst.max((cov / (vp * vq).sqrt()).abs());
            n_samples = p.len();
        }
        // Effective sample count limited by the momentum correlation time.
        let n_eff = (n_samples as f64 * dt_out * ctx.gamma_c).max(4.0);
        assert!(
            worst < 3.0 / n_eff.sqrt(),
            "cross-correlation {worst:.3} with n_eff {n_eff:.0}"
        );
    }

    #[test]
    fn pll_acquires_detuned_sinusoid() {
        let omega0 = 3.17e5;
        let mut pll = PllState::new(omega0, 2e3);
        let dt = 1.465e-7;
        let a = 2e-9;
        let true_omega = omega0 * 1.01;
        for n in 0..70000 {
            let t = n as f64 * dt;
            let q = a * (true_omega * t + 1.9).sin();
            pll.update(q, dt);
        }
        assert!(pll.mean_lock_quality() > 0.9, "lock {:.3}", pll.mean_lock_quality());
        assert!(
            ((pll.omega - true_omega) / true_omega).abs() < 0.01,
            "tracked omega {:.4e} vs {true_omega:.4e}",
            pll.omega
        );
        assert!((pll.amp - a).abs() < 0.05 * a);
    }

    #[test]
    fn singular_start_is_reported_not_panicked() {
        let mut config = triaxial_config();
        config.initial = InitialState::Explicit(PhaseState {
            orientation: EulerAngles::new(0.0, 1e-7, 0.0),
            angle_momentum: Vector3::new(1e-26, 0.0, 0.0),
            ..Default::default()
        });
        let out = simulate(&config).unwrap();
        assert!(out.trajectories.is_empty());
        assert_eq!(out.failures.len(), 1);
        assert!(out.failures[0].message.contains("singularity"));
    }

    #[test]
    fn auto_timestep_resolves_fastest_mode() {
        let config = sphere_config();
        let (ctx, warnings) = SimContext::new(&config).unwrap();
        let f = trap_frequencies_zero_order(&ctx.field, &ctx.props);
        let fmax = match f.modes[1] {
            ModeFrequency::Trapped(w) => w / (2.0 * std::f64::consts::PI),
            _ => unreachable!(),
        };
        assert!((ctx.dt - 1.0 / (40.0 * fmax)).abs() < 1e-12 * ctx.dt);
        assert!(warnings.is_empty());
        // An oversized explicit dt errors out.
        let mut bad = config;
        bad.dt = Some(1e-3);
        assert!(SimContext::new(&bad).is_err());
    }
}
