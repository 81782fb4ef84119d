//! Stochastic and dissipative couplings: gas damping with its correlated
//! collision noise, photon-recoil correlation matrices from angular
//! quadrature, semidefinite Cholesky factorization, and the deterministic
//! per-trajectory noise generator.

use crate::constants::{BOLTZMANN, HBAR, N2_MASS};
use crate::geometry::ParticleProperties;
use crate::kinematics::{m_matrix, to_lab_frame, EulerAngles, PhaseState};
use crate::optics::{
    bilinear, chi_lab_derivatives, complex_mat_mul, scattering_rate, transverse_projection,
    TweezerField,
};
use crate::quadrature::sphere_grid;
use crate::{Error, Result};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Residual gas parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasEnvironment {
    /// Pressure, Pa.
    pub pressure: f64,
    /// Temperature, K.
    pub temperature: f64,
    /// Mass of a gas molecule, kg.
    pub molecule_mass: f64,
}

impl GasEnvironment {
    /// N2 gas at the given pressure (Pa) and temperature (K).
    pub fn nitrogen(pressure: f64, temperature: f64) -> Self {
        Self {
            pressure,
            temperature,
            molecule_mass: N2_MASS,
        }
    }

    /// Mean thermal speed `sqrt(8 k_B T / (pi m_g))`, m/s.
    pub fn mean_thermal_speed(&self) -> f64 {
        (8.0 * BOLTZMANN * self.temperature / (std::f64::consts::PI * self.molecule_mass)).sqrt()
    }
}

/// Collisional damping rate, `sqrt(2 pi m_g) (8 + pi) P_g R^2 / (3 M sqrt(k_B T))`.
///
/// Uses the equivalent radius for non-spherical particles.
pub fn gas_damping_rate(props: &ParticleProperties, gas: &GasEnvironment) -> f64 {
    let r = props.equivalent_radius;
    (2.0 * std::f64::consts::PI * gas.molecule_mass).sqrt()
        * (8.0 + std::f64::consts::PI)
        * gas.pressure
        * r
        * r
        / (3.0 * props.mass * (BOLTZMANN * gas.temperature).sqrt())
}

/// The same damping rate written through the mean thermal speed,
/// `(4 pi m_g R^2 v_t P_g / 3 k_B T M)(1 + pi/8)`; agrees identically with
/// [`gas_damping_rate`] since `8 (1 + pi/8) = 8 + pi`.
pub fn gas_damping_rate_thermal_speed(props: &ParticleProperties, gas: &GasEnvironment) -> f64 {
    let r = props.equivalent_radius;
    4.0 * std::f64::consts::PI
        * gas.molecule_mass
        * r
        * r
        * gas.mean_thermal_speed()
        * gas.pressure
        / (3.0 * BOLTZMANN * gas.temperature * props.mass)
        * (1.0 + std::f64::consts::PI / 8.0)
}

/// Isotropic-model damping drift `(-gamma_c p, -gamma_c pi)`.
pub fn gas_drift(state: &PhaseState, gamma_c: f64) -> (Vector3<f64>, Vector3<f64>) {
    (-gamma_c * state.momentum, -gamma_c * state.angle_momentum)
}

/// General friction-tensor damping drift, for diagonal body-frame tensors
/// `f_trans` and `f_rot`:
/// `dp = -F^t_lab p`, `dpi = -M^T F^r_lab I_lab^{-1} (M^T)^{-1} pi`.
pub fn gas_drift_general(
    state: &PhaseState,
    props: &ParticleProperties,
    f_trans: &Vector3<f64>,
    f_rot: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let angles = &state.orientation;
    if angles.beta.sin().abs() < crate::kinematics::BETA_GUARD {
        return Err(Error::SingularOrientation { beta: angles.beta });
    }
    let ft_lab = to_lab_frame(f_trans, angles);
    let fr_lab = to_lab_frame(f_rot, angles);
    let i_lab = to_lab_frame(&props.inertia, angles);
    let mt = m_matrix(angles).transpose();
    let mt_inv = mt
        .try_inverse()
        .ok_or(Error::SingularOrientation { beta: angles.beta })?;
    let i_lab_inv = i_lab
        .try_inverse()
        .ok_or_else(|| Error::InvalidConfig("singular inertia tensor".into()))?;
    Ok((
        -(ft_lab * state.momentum),
        -(mt * fr_lab * i_lab_inv * mt_inv * state.angle_momentum),
    ))
}

/// Symmetric positive-semidefinite 6x6 diffusion matrix over the momentum
/// increments `(dp_x, dp_y, dp_z, dpi_alpha, dpi_beta, dpi_gamma)`, in
/// per-second units (covariance accrued per unit time).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCorrelation(Matrix6<f64>);

impl NoiseCorrelation {
    /// Validates symmetry and positive semidefiniteness (small negative
    /// eigenvalues above `-1e-12 * scale` are tolerated, to be clipped at
    /// factorization time).
    pub fn new(matrix: Matrix6<f64>) -> Result<Self> {
        let scale = matrix.norm();
        if scale == 0.0 {
            return Ok(Self(matrix));
        }
        let asym = (matrix - matrix.transpose()).norm();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidConfig(format!(
                "correlation matrix asymmetry {asym:.3e} above tolerance"
            )));
        }
        let sym = (matrix + matrix.transpose()) * 0.5;
        let min_eig = sym
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * scale;
        if min_eig < -tol {
            return Err(Error::IndefiniteCorrelation {
                eigenvalue: min_eig,
                tolerance: tol,
            });
        }
        Ok(Self(sym))
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn zeros() -> Self {
        Self(Matrix6::zeros())
    }
}

/// Gas-collision noise correlation at the isotropic friction model:
/// translations `2 M k_B T gamma_c * 1`, rotations
/// `2 k_B T gamma_c * M^T I_lab M`, no cross terms.
pub fn gas_noise_correlation(
    angles: &EulerAngles,
    props: &ParticleProperties,
    gas: &GasEnvironment,
    gamma_c: f64,
) -> NoiseCorrelation {
    let mut out = Matrix6::zeros();
    let kt = BOLTZMANN * gas.temperature;
    let trans = 2.0 * props.mass * kt * gamma_c;
    for i in 0..3 {
        out[(i, i)] = trans;
    }
    let rr = rotational_gas_block(angles, &props.inertia) * (2.0 * kt * gamma_c);
    for i in 0..3 {
        for j in 0..3 {
            out[(3 + i, 3 + j)] = rr[(i, j)];
        }
    }
    NoiseCorrelation(out)
}

/// `M^T I_lab M`, the angle-momentum metric that shapes the rotational
/// collision noise (also the rotational kinetic-energy metric).
pub fn rotational_gas_block(angles: &EulerAngles, inertia: &Vector3<f64>) -> Matrix3<f64> {
    let m = m_matrix(angles);
    let i_lab = to_lab_frame(inertia, angles);
    m.transpose() * i_lab * m
}

/// Photon-recoil noise correlation by angular quadrature over outgoing
/// scattering directions, with the polarization sum removed through the
/// completeness relation. Returns the full 6x6 including
/// translation-rotation cross terms.
///
/// The mode amplitude and its spatial gradient are evaluated at the
/// instantaneous state without further expansion, so the closed-form
/// trap-center results become limiting checks rather than the
/// implementation itself.
pub fn recoil_correlation(
    field: &TweezerField,
    props: &ParticleProperties,
    r: &Vector3<f64>,
    angles: &EulerAngles,
    polar_order: usize,
    azimuthal_order: usize,
) -> Result<NoiseCorrelation> {
    let gs = scattering_rate(field, props);
    let k = field.wavenumber();
    let chi_lab = to_lab_frame(&props.susceptibility, angles);
    let dchi = chi_lab_derivatives(&props.susceptibility, angles);
    let (psi, dpsi) = mode_amplitude_vector(field, r);

    // chi_lab psi and its translational/orientational derivatives.
    let v0 = complex_mat_mul(&chi_lab, &psi);
    let dv: [Vector3<Complex64>; 3] = [
        complex_mat_mul(&chi_lab, &dpsi[0]),
        complex_mat_mul(&chi_lab, &dpsi[1]),
        complex_mat_mul(&chi_lab, &dpsi[2]),
    ];
    let gv: [Vector3<Complex64>; 3] = [
        complex_mat_mul(&dchi[0], &psi),
        complex_mat_mul(&dchi[1], &psi),
        complex_mat_mul(&dchi[2], &psi),
    ];

    let zero = Complex64::new(0.0, 0.0);
    let mut sigma = Matrix6::zeros();
    for node in sphere_grid(polar_order, azimuthal_order) {
        let n = Vector3::new(node.direction[0], node.direction[1], node.direction[2]);
        let proj = transverse_projection(&n);
        // a_j for translations: chi_lab (d_j psi + i k n_j psi).
        let mut a = [Vector3::new(zero, zero, zero); 6];
        for j in 0..3 {
            let ikn = Complex64::new(0.0, k * n[j]);
            a[j] = Vector3::new(
                dv[j][0] + ikn * v0[0],
                dv[j][1] + ikn * v0[1],
                dv[j][2] + ikn * v0[2],
            );
            a[3 + j] = gv[j];
        }
        for j in 0..6 {
            for kk in j..6 {
                // Re(a_j^T P a_k_bar); `bilinear` conjugates its first slot.
                let val = bilinear(&a[kk], &proj, &a[j]).re;
                sigma[(j, kk)] += node.weight * val;
            }
        }
    }
    let scale = 0.5 * HBAR * HBAR * gs;
    for j in 0..6 {
        for kk in j..6 {
            let v = sigma[(j, kk)] * scale;
            sigma[(j, kk)] = v;
            sigma[(kk, j)] = v;
        }
    }
    NoiseCorrelation::new(sigma).map_err(|e| match e {
        Error::IndefiniteCorrelation {
            eigenvalue,
            tolerance,
        } => Error::QuadratureFailure(format!(
            "recoil correlation indefinite (eigenvalue {eigenvalue:.3e}, tol {tolerance:.3e}); increase quadrature order"
        )),
        other => other,
    })
}

/// Complex mode-amplitude vector `(b_x u_x, i b_y u_y, 0)` and its spatial
/// gradient, evaluated exactly for the active field model.
fn mode_amplitude_vector(
    field: &TweezerField,
    r: &Vector3<f64>,
) -> (Vector3<Complex64>, [Vector3<Complex64>; 3]) {
    let (ux, uy) = field.mode_function(r);
    let (gx, gy) = mode_log_gradients(field, r);
    let cx = Complex64::new(field.b_x(), 0.0) * ux;
    let cy = Complex64::new(0.0, field.b_y()) * uy;
    let zero = Complex64::new(0.0, 0.0);
    let psi = Vector3::new(cx, cy, zero);
    let dpsi = [
        Vector3::new(cx * gx[0], cy * gy[0], zero),
        Vector3::new(cx * gx[1], cy * gy[1], zero),
        Vector3::new(cx * gx[2], cy * gy[2], zero),
    ];
    (psi, dpsi)
}

/// Logarithmic gradients `d ln u / d r` of the two mode functions.
fn mode_log_gradients(field: &TweezerField, r: &Vector3<f64>) -> ([Complex64; 3], [Complex64; 3]) {
    let zr = field.rayleigh_range;
    let k = field.wavenumber();
    let a1 = field.asymmetry;
    let w2 = field.waist * field.waist * (1.0 + r.z * r.z / (zr * zr));
    let dlnw = r.z / (r.z * r.z + zr * zr);
    let envelope = |ax: f64| {
        [
            -2.0 * r.x / (ax * w2),
            -2.0 * r.y * ax / w2,
            dlnw * (2.0 * (r.x * r.x / ax + r.y * r.y * ax) / w2 - 1.0),
        ]
    };
    match field.model {
        crate::optics::FieldModel::FirstOrder => {
            let e = envelope(a1);
            let g = [
                Complex64::new(e[0], 0.0),
                Complex64::new(e[1], 0.0),
                Complex64::new(e[2], -k),
            ];
            (g, g)
        }
        crate::optics::FieldModel::TwoModeGouy => {
            let denom = r.z * r.z + zr * zr;
            let dphi = [
                -k * r.z * r.x / denom,
                -k * r.z * r.y / denom,
                zr / denom
                    - 0.5 * k * (r.x * r.x + r.y * r.y) * (zr * zr - r.z * r.z) / (denom * denom),
            ];
            let ex = envelope(a1);
            let ey = envelope(a1.recip());
            let build = |e: [f64; 3]| {
                [
                    Complex64::new(e[0], -dphi[0]),
                    Complex64::new(e[1], -dphi[1]),
                    Complex64::new(e[2], -(k + dphi[2])),
                ]
            };
            (build(ex), build(ey))
        }
    }
}

/// Lower-triangular semidefinite Cholesky factor with `C C^T = sigma`.
///
/// The six increments carry different units (kg m/s vs J s), so pivot
/// decisions are made per column against that column's own diagonal, never
/// against a global scale. Depleted pivots (the rotational recoil matrix is
/// rank-deficient by symmetry) yield exact zero columns; a genuinely
/// indefinite matrix is refused with the offending eigenvalue.
pub fn cholesky_factor(correlation: &NoiseCorrelation) -> Result<Matrix6<f64>> {
    let sigma = correlation.matrix();
    if sigma.norm() == 0.0 {
        return Ok(Matrix6::zeros());
    }
    let mut l = Matrix6::zeros();
    for j in 0..6 {
        let mut d = sigma[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > 1e-12 * sigma[(j, j)] {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..6 {
                let mut v = sigma[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        // Pivot inside the tolerance band: zero column, continue.
    }
    // Unit-aware verification: each entry against its own row/column scale.
    let recon = l * l.transpose();
    for i in 0..6 {
        for j in 0..6 {
            let scale = (sigma[(i, i)] * sigma[(j, j)]).abs().sqrt();
            if (recon[(i, j)] - sigma[(i, j)]).abs() > 1e-10 * scale + f64::MIN_POSITIVE {
                let min_eig = sigma
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                return Err(Error::IndefiniteCorrelation {
                    eigenvalue: min_eig,
                    tolerance: 1e-12 * sigma.norm(),
                });
            }
        }
    }
    Ok(l)
}

/// Deterministic per-trajectory Gaussian noise source.
///
/// Streams derived from `(master_seed, trajectory_index)` are statistically
/// independent and replay identically, so parallel ensembles are race-free
/// and reproducible.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    rng: ChaCha12Rng,
}

impl NoiseGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn for_trajectory(master_seed: u64, trajectory_index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(trajectory_index.wrapping_add(1));
        Self { rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_vector3(&mut self) -> Vector3<f64> {
        Vector3::new(
            self.standard_normal(),
            self.standard_normal(),
            self.standard_normal(),
        )
    }

    pub fn normal_vector6(&mut self) -> Vector6<f64> {
        Vector6::from_fn(|_, _| self.standard_normal())
    }

    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}

/// One Wiener increment `C * sqrt(dt) * xi` with `xi ~ N(0, 1)^6`.
pub fn sample_noise(factor: &Matrix6<f64>, dt: f64, gen: &mut NoiseGenerator) -> Vector6<f64> {
    factor * (gen.normal_vector6() * dt.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{particle_properties, Material, ParticleShape};
    use crate::kinematics::rotation_matrix;
    use crate::optics::FieldModel;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn sphere_props() -> ParticleProperties {
        particle_properties(&ParticleShape::sphere(80e-9).unwrap(), &Material::silicon()).unwrap()
    }

    fn prolate_props() -> ParticleProperties {
        particle_properties(
            &ParticleShape::prolate(75e-9, 150e-9).unwrap(),
            &Material::silicon(),
        )
        .unwrap()
    }

    #[test]
    fn damping_forms_agree_identically() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let props = particle_properties(
                &ParticleShape::sphere(rng.random_range(20e-9..200e-9)).unwrap(),
                &Material::new(
                    rng.random_range(500.0..5000.0),
                    rng.random_range(1.5..15.0),
                )
                .unwrap(),
            )
            .unwrap();
            let gas = GasEnvironment {
                pressure: rng.random_range(1e-3..1e4),
                temperature: rng.random_range(4.0..600.0),
                molecule_mass: rng.random_range(1.0..100.0) * crate::constants::ATOMIC_MASS,
            };
            let a = gas_damping_rate(&props, &gas);
            let b = gas_damping_rate_thermal_speed(&props, &gas);
            assert!((a - b).abs() <= 1e-12 * a.abs(), "{a:.15e} vs {b:.15e}");
        }
    }

    #[test]
    fn damping_linear_in_pressure_with_reference_value() {
        let props = sphere_props();
        let gas = GasEnvironment::nitrogen(50.0, 300.0);
        let g1 = gas_damping_rate(&props, &gas);
        let gas2 = GasEnvironment::nitrogen(100.0, 300.0);
        assert!((gas_damping_rate(&props, &gas2) - 2.0 * g1).abs() < 1e-12 * g1);
        // Table-top sphere at 0.5 mbar of N2: about 2.0e3 1/s.
        assert!((g1 - 1997.0).abs() < 2.0, "gamma_c = {g1:.4}");
    }

    #[test]
    fn isotropic_drift_and_general_reduction() {
        let props = prolate_props();
        let state = PhaseState {
            momentum: Vector3::new(1e-22, -2e-22, 3e-23),
            orientation: EulerAngles::new(0.4, 1.2, -0.8),
            angle_momentum: Vector3::new(2e-26, -1e-26, 5e-27),
            ..Default::default()
        };
        let gamma = 1.7e3;
        let (dp, dpi) = gas_drift(&state, gamma);
        assert_eq!(dp, -gamma * state.momentum);
        assert_eq!(dpi, -gamma * state.angle_momentum);
        assert_eq!(gas_drift(&state, 0.0).0, Vector3::zeros());

        let f_t = Vector3::new(gamma, gamma, gamma);
        let f_r = gamma * props.inertia;
        let (gp, gpi) = gas_drift_general(&state, &props, &f_t, &f_r).unwrap();
        assert!((gp - dp).norm() <= 1e-12 * dp.norm());
        assert!((gpi - dpi).norm() <= 1e-10 * dpi.norm());

        let singular = PhaseState {
            orientation: EulerAngles::new(0.0, 1e-8, 0.0),
            ..state
        };
        assert!(gas_drift_general(&singular, &props, &f_t, &f_r).is_err());
    }

    #[test]
    fn gas_correlation_translational_block_and_printed_rotational_entries() {
        let props = prolate_props();
        let gas = GasEnvironment::nitrogen(500.0, 300.0);
        let gamma = gas_damping_rate(&props, &gas);
        let angles = EulerAngles::new(0.9, 1.1, -0.5);
        let sigma = gas_noise_correlation(&angles, &props, &gas, gamma);
        let m = sigma.matrix();
        let kt = BOLTZMANN * gas.temperature;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j {
                    2.0 * props.mass * kt * gamma
                } else {
                    0.0
                };
                assert!((m[(i, j)] - expect).abs() <= 1e-12 * expect.abs().max(1e-30));
                assert_eq!(m[(i, 3 + j)], 0.0);
                assert_eq!(m[(3 + i, j)], 0.0);
            }
        }
        // Printed entries of the rotational block.
        let (i1, i2, i3) = (props.inertia.x, props.inertia.y, props.inertia.z);
        let (sb, cb) = angles.beta.sin_cos();
        let (sg, cg) = angles.gamma.sin_cos();
        let scale = 2.0 * kt * gamma;
        let g11 = sb * sb * (i1 * cg * cg + i2 * sg * sg) + i3 * cb * cb;
        let g21 = sb * sg * cg * (i2 - i1);
        let g22 = 0.5 * ((2.0 * angles.gamma).cos() * (i2 - i1) + i1 + i2);
        let g31 = i3 * cb;
        for (rr, cc, expect) in [
            (0, 0, g11),
            (1, 0, g21),
            (0, 1, g21),
            (1, 1, g22),
            (2, 0, g31),
            (0, 2, g31),
            (2, 2, i3),
            (2, 1, 0.0),
            (1, 2, 0.0),
        ] {
            let got = m[(3 + rr, 3 + cc)];
            assert!(
                (got - scale * expect).abs() <= 1e-12 * (scale * expect).abs().max(1e-40),
                "entry ({rr},{cc}): {got:.6e} vs {:.6e}",
                scale * expect
            );
        }
    }

    #[test]
    fn symmetric_top_in_plane_noise_amplitudes() {
        let props = prolate_props();
        let gas = GasEnvironment::nitrogen(500.0, 300.0);
        let gamma = gas_damping_rate(&props, &gas);
        let angles = EulerAngles::new(0.7, FRAC_PI_2, 1.3);
        let sigma = gas_noise_correlation(&angles, &props, &gas, gamma);
        let c = cholesky_factor(&sigma).unwrap();
        let scale = (2.0 * BOLTZMANN * gas.temperature * gamma).sqrt();
        let expect = [
            scale * props.inertia.x.sqrt(),
            scale * props.inertia.x.sqrt(),
            scale * props.inertia.z.sqrt(),
        ];
        for i in 0..3 {
            assert!(
                (c[(3 + i, 3 + i)] - expect[i]).abs() <= 1e-10 * expect[i],
                "axis {i}"
            );
            for j in 0..i {
                assert!(c[(3 + i, 3 + j)].abs() <= 1e-10 * expect[i]);
            }
        }
    }

    #[test]
    fn sphere_rotational_noise_covariance_from_sampling() {
        // Reconstruct the correlation of M^T R sqrt(2 kB T gamma I) dV
        // empirically and compare with the analytic block.
        let props = sphere_props();
        let gas = GasEnvironment::nitrogen(100.0, 300.0);
        let gamma = gas_damping_rate(&props, &gas);
        let angles = EulerAngles::new(-0.4, 1.0, 2.2);
        let amp = (2.0 * BOLTZMANN * gas.temperature * gamma * props.inertia.x).sqrt();
        let mt_r = m_matrix(&angles).transpose() * rotation_matrix(&angles);
        let mut gen = NoiseGenerator::new(99);
        let samples = 1_000_000usize;
        let mut acc = Matrix3::<f64>::zeros();
        for _ in 0..samples {
            let dpi = mt_r * (amp * gen.normal_vector3());
            acc += dpi * dpi.transpose();
        }
        acc /= samples as f64;
        let expect = rotational_gas_block(&angles, &props.inertia)
            * (2.0 * BOLTZMANN * gas.temperature * gamma);
        for i in 0..3 {
            for j in 0..3 {
                // 3 sigma Monte-Carlo band for a covariance entry.
                let band = 3.0
                    * ((expect[(i, i)] * expect[(j, j)] + expect[(i, j)] * expect[(i, j)])
                        / samples as f64)
                        .sqrt();
                assert!(
                    (acc[(i, j)] - expect[(i, j)]).abs() <= band,
                    "entry ({i},{j}): {:.5e} vs {:.5e} +- {band:.2e}",
                    acc[(i, j)],
                    expect[(i, j)]
                );
            }
        }
    }

    fn recoil_translation_scale(field: &TweezerField, props: &ParticleProperties) -> f64 {
        let sr = crate::optics::rayleigh_cross_section(props, field.wavelength).unwrap();
        0.1 * sr / field.sigma_l() * field.power / (HBAR * field.angular_frequency())
            * HBAR
            * HBAR
            * field.wavenumber()
            * field.wavenumber()
    }

    #[test]
    fn recoil_sphere_linear_polarization_closed_form() {
        let props = sphere_props();
        let mut field = TweezerField::table_defaults();
        field.model = FieldModel::FirstOrder;
        field.ellipticity = 0.0;
        let sigma = recoil_correlation(
            &field,
            &props,
            &Vector3::zeros(),
            &EulerAngles::new(0.3, 1.2, -0.7),
            64,
            128,
        )
        .unwrap();
        let m = sigma.matrix();
        let unit = recoil_translation_scale(&field, &props);
        for (i, expect) in [1.0, 2.0, 7.0].iter().enumerate() {
            assert!(
                (m[(i, i)] - unit * expect).abs() <= 1e-3 * unit * expect,
                "diag {i}: {:.6e} vs {:.6e}",
                m[(i, i)],
                unit * expect
            );
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(m[(i, j)].abs() <= 1e-9 * unit);
                }
            }
        }
        // Spheres have no rotational recoil at all.
        for i in 3..6 {
            for j in 0..6 {
                assert!(m[(i, j)].abs() <= 1e-20 * unit);
            }
        }
    }

    #[test]
    fn recoil_sphere_elliptical_polarization_closed_form() {
        let props = sphere_props();
        let mut field = TweezerField::table_defaults();
        field.model = FieldModel::FirstOrder;
        for psi in [0.2, FRAC_PI_4] {
            field.ellipticity = psi;
            let sigma = recoil_correlation(
                &field,
                &props,
                &Vector3::zeros(),
                &EulerAngles::new(0.0, FRAC_PI_2, 0.0),
                64,
                128,
            )
            .unwrap();
            let by2 = field.b_y().powi(2);
            let unit = recoil_translation_scale(&field, &props);
            let expect = [1.0 + by2, 2.0 - by2, 7.0];
            for i in 0..3 {
                assert!(
                    (sigma.matrix()[(i, i)] - unit * expect[i]).abs() <= 1e-3 * unit * expect[i],
                    "psi {psi}, diag {i}"
                );
            }
        }
        // Circular polarization: x and y noise amplitudes both sqrt(3/2) units.
        field.ellipticity = FRAC_PI_4;
        let sigma = recoil_correlation(
            &field,
            &props,
            &Vector3::zeros(),
            &EulerAngles::new(0.0, FRAC_PI_2, 0.0),
            64,
            128,
        )
        .unwrap();
        let unit = recoil_translation_scale(&field, &props);
        assert!((sigma.matrix()[(0, 0)] - 1.5 * unit).abs() <= 1e-3 * unit);
        assert!((sigma.matrix()[(1, 1)] - 1.5 * unit).abs() <= 1e-3 * unit);
    }

    #[test]
    fn recoil_symmetric_top_rotational_closed_form() {
        let props = prolate_props();
        let mut field = TweezerField::table_defaults();
        field.model = FieldModel::FirstOrder;
        field.ellipticity = FRAC_PI_4;
        let gs = scattering_rate(&field, &props);
        let dchi2 = (props.susceptibility.z - props.susceptibility.x).powi(2);
        let unit = PI * gs * HBAR * HBAR / 3.0 * dchi2;
        // General-beta closed form: diag(sin^2 b (3 - cos 2b), 2, 0).
        for beta in [FRAC_PI_2, 1.1, 2.0] {
            let sigma = recoil_correlation(
                &field,
                &props,
                &Vector3::zeros(),
                &EulerAngles::new(0.9, beta, -1.4),
                64,
                128,
            )
            .unwrap();
            let m = sigma.matrix();
            let expect = [
                beta.sin().powi(2) * (3.0 - (2.0 * beta).cos()),
                2.0,
                0.0,
            ];
            for i in 0..3 {
                let e = unit * expect[i];
                let tol = 1e-3 * unit * expect[i].max(1e-9);
                assert!(
                    (m[(3 + i, 3 + i)] - e).abs() <= tol,
                    "beta {beta}, rot diag {i}: {:.6e} vs {e:.6e}",
                    m[(3 + i, 3 + i)]
                );
            }
            assert!(m[(3, 4)].abs() <= 1e-6 * unit);
        }
    }

    #[test]
    fn recoil_quadrature_order_convergence() {
        let props = prolate_props();
        let mut field = TweezerField::table_defaults();
        field.model = FieldModel::FirstOrder;
        field.ellipticity = 0.6;
        let r = Vector3::new(0.1e-6, -0.2e-6, 0.3e-6);
        let angles = EulerAngles::new(0.4, 1.0, 0.8);
        let a = recoil_correlation(&field, &props, &r, &angles, 16, 32).unwrap();
        let b = recoil_correlation(&field, &props, &r, &angles, 32, 64).unwrap();
        let rel = (a.matrix() - b.matrix()).norm() / b.matrix().norm();
        assert!(rel < 1e-4, "doubling the order moved the result by {rel:.2e}");
    }

    #[test]
    fn cholesky_diagonal_and_random_psd() {
        let mut diag = Matrix6::zeros();
        for i in 0..6 {
            diag[(i, i)] = (i + 1) as f64;
        }
        let c = cholesky_factor(&NoiseCorrelation::new(diag).unwrap()).unwrap();
        for i in 0..6 {
            assert!((c[(i, i)] - ((i + 1) as f64).sqrt()).abs() < 1e-14);
        }
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(12);
        for _ in 0..100 {
            let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let sigma = a * a.transpose();
            let corr = NoiseCorrelation::new(sigma).unwrap();
            let c = cholesky_factor(&corr).unwrap();
            let rel = (c * c.transpose() - sigma).norm() / sigma.norm();
            assert!(rel < 1e-12, "reconstruction off by {rel:.2e}");
            // Lower-triangular by construction.
            for i in 0..6 {
                for j in (i + 1)..6 {
                    assert_eq!(c[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn cholesky_rank_deficient_recoil_block() {
        let props = prolate_props();
        let mut field = TweezerField::table_defaults();
        field.model = FieldModel::FirstOrder;
        field.ellipticity = FRAC_PI_4;
        let sigma = recoil_correlation(
            &field,
            &props,
            &Vector3::zeros(),
            &EulerAngles::new(0.0, FRAC_PI_2, 0.0),
            64,
            128,
        )
        .unwrap();
        let c = cholesky_factor(&sigma).unwrap();
        let rel = (c * c.transpose() - sigma.matrix()).norm() / sigma.matrix().norm();
        assert!(rel < 1e-12);
        // The pi_gamma column is exactly zero.
        for i in 0..6 {
            assert_eq!(c[(i, 5)], 0.0);
        }
    }

    #[test]
    fn indefinite_matrix_is_refused() {
        let mut m = Matrix6::identity();
        m[(0, 0)] = -1.0;
        match NoiseCorrelation::new(m) {
            Err(Error::IndefiniteCorrelation { eigenvalue, .. }) => {
                assert!((eigenvalue + 1.0).abs() < 1e-12);
            }
            other => panic!("expected indefinite error, got {other:?}"),
        }
    }

    #[test]
    fn sampled_noise_statistics_and_determinism() {
        let zero = sample_noise(&Matrix6::zeros(), 1e-6, &mut NoiseGenerator::new(1));
        assert_eq!(zero, Vector6::zeros());

        let mut a = NoiseGenerator::for_trajectory(42, 3);
        let mut b = NoiseGenerator::for_trajectory(42, 3);
        for _ in 0..100 {
            assert_eq!(a.standard_normal(), b.standard_normal());
        }
        let mut c = NoiseGenerator::for_trajectory(42, 4);
        let x: Vec<f64> = (0..8).map(|_| a.standard_normal()).collect();
        let y: Vec<f64> = (0..8).map(|_| c.standard_normal()).collect();
        assert_ne!(x, y);

        // Empirical covariance of C sqrt(dt) xi converges to sigma dt.
        let mut fac = Matrix6::zeros();
        for i in 0..6 {
            fac[(i, i)] = 1.0 + i as f64 * 0.5;
            if i > 0 {
                fac[(i, 0)] = 0.3;
            }
        }
        let sigma = fac * fac.transpose();
        let dt = 2.0;
        let mut gen = NoiseGenerator::new(7);
        let samples = 1_000_000usize;
        let mut acc = Matrix6::<f64>::zeros();
        for _ in 0..samples {
            let v = sample_noise(&fac, dt, &mut gen);
            acc += v * v.transpose();
        }
        acc /= samples as f64;
        for i in 0..6 {
            for j in 0..6 {
                let expect = sigma[(i, j)] * dt;
                let band = 3.0
                    * ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)] * sigma[(i, j)]) * dt * dt
                        / samples as f64)
                        .sqrt();
                assert!(
                    (acc[(i, j)] - expect).abs() <= band,
                    "({i},{j}): {:.4e} vs {expect:.4e}",
                    acc[(i, j)]
                );
            }
        }
    }
}
