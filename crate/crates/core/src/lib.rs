//! Simulation library for the roto-translational stochastic dynamics of an
//! anisotropic nanoparticle levitated in an elliptically polarized optical
//! tweezer.
//!
//! The crate is organized along the physical pipeline:
//!
//! * [`geometry`] — particle shapes, materials, and the derived mass, inertia
//!   and susceptibility tensors (ellipsoid depolarization factors).
//! * [`kinematics`] — Euler-angle (z-y'-z'') rigid-body kinematics and the
//!   kinetic Hamiltonian in conjugate angle momenta.
//! * [`optics`] — tweezer field models, gradient potential with analytic
//!   forces/torques, and deterministic radiation-pressure terms.
//! * [`noise`] — gas damping and collision noise, photon-recoil correlation
//!   matrices, and Cholesky-based correlated noise generation.
//! * [`dynamics`] — the 12-dimensional SDE, RK4 integration with stochastic
//!   increments, seeded parallel ensembles, and feedback controllers.
//! * [`analysis`] — Welch power spectral densities, analytic trap-frequency
//!   predictions, steady-spin estimates, and Lorentzian peak fitting.
//! * [`trace`] — binary/CSV trajectory storage.

pub mod analysis;
pub mod constants;
pub mod dynamics;
mod error;
pub mod geometry;
pub mod kinematics;
pub mod noise;
pub mod optics;
pub mod quadrature;
pub mod trace;
pub mod trajectory;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;

// nalgebra types appear throughout the public API.
pub use nalgebra;

pub use dynamics::{EnsembleResult, FeedbackController, SimulationConfig, Toggles};
pub use geometry::{Material, ParticleProperties, ParticleShape};
pub use kinematics::{EulerAngles, PhaseState};
pub use noise::{GasEnvironment, NoiseCorrelation, NoiseGenerator};
pub use optics::{FieldModel, OpticalForcesTorques, TweezerField};
pub use trajectory::{Observable, Trajectory};
