//! Physical constants (SI, CODATA 2018 exact values where defined).

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Reduced Planck constant, J*s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// Atomic mass unit, kg.
pub const ATOMIC_MASS: f64 = 1.660_539_066_60e-27;

/// Molecular mass of N2, the default residual gas, in kg.
pub const N2_MASS: f64 = 28.0 * ATOMIC_MASS;
