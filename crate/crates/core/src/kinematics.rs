//! Euler-angle (z-y'-z'') kinematics: rotation matrices, the Jacobian between
//! angle rates and body angular velocity, conjugate-momentum transformations,
//! and the kinetic Hamiltonian.

use crate::geometry::ParticleProperties;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// Guard band around the sin(beta) = 0 coordinate singularity, rad.
///
/// Nominal steady states sit near beta = pi/2, so trajectories never hit the
/// guard; it converts silent blow-ups into diagnostics.
pub const BETA_GUARD: f64 = 1e-4;

/// Orientation in the z-y'-z'' convention, radians.
///
/// Angles are not wrapped: free diffusion of gamma and steady spinning of
/// alpha accumulate without bound. Wrap only for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    fn check_regular(&self) -> Result<()> {
        if self.beta.sin().abs() < BETA_GUARD {
            Err(Error::SingularOrientation { beta: self.beta })
        } else {
            Ok(())
        }
    }
}

/// Full 12-number phase-space state: position r, momentum p, Euler angles phi,
/// and conjugate angle momenta pi.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseState {
    /// Center-of-mass position, m.
    pub position: Vector3<f64>,
    /// Center-of-mass momentum, kg m/s.
    pub momentum: Vector3<f64>,
    /// Orientation, rad.
    pub orientation: EulerAngles,
    /// Conjugate angle momenta (pi_alpha, pi_beta, pi_gamma), J s.
    pub angle_momentum: Vector3<f64>,
}

impl PhaseState {
    pub fn to_array(&self) -> [f64; 12] {
        let o = &self.orientation;
        [
            self.position.x,
            self.position.y,
            self.position.z,
            self.momentum.x,
            self.momentum.y,
            self.momentum.z,
            o.alpha,
            o.beta,
            o.gamma,
            self.angle_momentum.x,
            self.angle_momentum.y,
            self.angle_momentum.z,
        ]
    }

    pub fn from_array(v: &[f64; 12]) -> Self {
        Self {
            position: Vector3::new(v[0], v[1], v[2]),
            momentum: Vector3::new(v[3], v[4], v[5]),
            orientation: EulerAngles::new(v[6], v[7], v[8]),
            angle_momentum: Vector3::new(v[9], v[10], v[11]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Body-to-lab rotation matrix: Rz(alpha) Ry(beta) Rz(gamma).
pub fn rotation_matrix(angles: &EulerAngles) -> Matrix3<f64> {
    let (sa, ca) = angles.alpha.sin_cos();
    let (sb, cb) = angles.beta.sin_cos();
    let (sg, cg) = angles.gamma.sin_cos();
    Matrix3::new(
        ca * cb * cg - sa * sg,
        -ca * cb * sg - sa * cg,
        ca * sb,
        sa * cb * cg + ca * sg,
        -sa * cb * sg + ca * cg,
        sa * sb,
        -sb * cg,
        sb * sg,
        cb,
    )
}

/// Partial derivatives of the rotation matrix with respect to
/// (alpha, beta, gamma).
pub fn rotation_matrix_derivatives(angles: &EulerAngles) -> [Matrix3<f64>; 3] {
    let (sa, ca) = angles.alpha.sin_cos();
    let (sb, cb) = angles.beta.sin_cos();
    let (sg, cg) = angles.gamma.sin_cos();
    let rz_a = Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
    let ry_b = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz_g = Matrix3::new(cg, -sg, 0.0, sg, cg, 0.0, 0.0, 0.0, 1.0);
    let dz_a = Matrix3::new(-sa, -ca, 0.0, ca, -sa, 0.0, 0.0, 0.0, 0.0);
    let dy_b = Matrix3::new(-sb, 0.0, cb, 0.0, 0.0, 0.0, -cb, 0.0, -sb);
    let dz_g = Matrix3::new(-sg, -cg, 0.0, cg, -sg, 0.0, 0.0, 0.0, 0.0);
    [dz_a * ry_b * rz_g, rz_a * dy_b * rz_g, rz_a * ry_b * dz_g]
}

/// Jacobian relating Euler-angle rates to the lab-frame angular velocity,
/// `omega_lab = M phidot`. Singular when sin(beta) = 0.
pub fn m_matrix(angles: &EulerAngles) -> Matrix3<f64> {
    let (sa, ca) = angles.alpha.sin_cos();
    let (sb, cb) = angles.beta.sin_cos();
    Matrix3::new(
        0.0,
        -sa,
        ca * sb,
        0.0,
        ca,
        sa * sb,
        1.0,
        0.0,
        cb,
    )
}

/// Inverse of `m_matrix` transposed, used in the momentum transformations.
fn m_transpose_inverse(angles: &EulerAngles) -> Result<Matrix3<f64>> {
    angles.check_regular()?;
    m_matrix(angles)
        .transpose()
        .try_inverse()
        .ok_or(Error::SingularOrientation { beta: angles.beta })
}

/// Rotate a diagonal body-frame tensor into the laboratory frame:
/// `T_lab = R diag(t) R^T`.
pub fn to_lab_frame(body_diagonal: &Vector3<f64>, angles: &EulerAngles) -> Matrix3<f64> {
    let r = rotation_matrix(angles);
    r * Matrix3::from_diagonal(body_diagonal) * r.transpose()
}

/// Body-frame angular momentum and angular velocity from the conjugate angle
/// momenta: `L = R^T (M^T)^{-1} pi`, `omega = I^{-1} L`.
pub fn angular_momentum_and_velocity(
    state: &PhaseState,
    props: &ParticleProperties,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let mt_inv = m_transpose_inverse(&state.orientation)?;
    let r = rotation_matrix(&state.orientation);
    let l = r.transpose() * (mt_inv * state.angle_momentum);
    let omega = l.component_div(&props.inertia);
    Ok((l, omega))
}

/// Conjugate angle momenta from a body-frame angular momentum:
/// `pi = M^T R L`.
pub fn angle_momenta_from_body_l(
    l_body: &Vector3<f64>,
    angles: &EulerAngles,
) -> Vector3<f64> {
    m_matrix(angles).transpose() * (rotation_matrix(angles) * l_body)
}

/// The two squared-bracket combinations entering the rotational kinetic
/// energy, divided through by I1 and I2 respectively, plus intermediates.
struct RotKinetic {
    u1: f64,
    u2: f64,
    s: f64,
}

fn rot_kinetic(state: &PhaseState) -> RotKinetic {
    let o = &state.orientation;
    let (s, cb) = (o.beta.sin(), o.beta.cos());
    let (sg, cg) = o.gamma.sin_cos();
    let pi = &state.angle_momentum;
    let a = pi.x - pi.z * cb;
    RotKinetic {
        u1: cg * a - pi.y * s * sg,
        u2: sg * a + pi.y * s * cg,
        s,
    }
}

/// Total kinetic energy `p.p/2M + P1/2I1 + P2/2I2 + pi_gamma^2/2I3`.
pub fn kinetic_energy(state: &PhaseState, props: &ParticleProperties) -> Result<f64> {
    state.orientation.check_regular()?;
    let k = rot_kinetic(state);
    let i = &props.inertia;
    let trans = state.momentum.norm_squared() / (2.0 * props.mass);
    let rot = (k.u1 * k.u1 / i.x + k.u2 * k.u2 / i.y) / (2.0 * k.s * k.s)
        + state.angle_momentum.z * state.angle_momentum.z / (2.0 * i.z);
    Ok(trans + rot)
}

/// Rotational kinetic energy through the independent `L` route:
/// `omega . I omega / 2`.
pub fn rotational_energy_from_l(
    state: &PhaseState,
    props: &ParticleProperties,
) -> Result<f64> {
    let (l, omega) = angular_momentum_and_velocity(state, props)?;
    Ok(0.5 * l.dot(&omega))
}

/// Analytic gradients of the free Hamiltonian: `(dH/dphi, dH/dpi)`.
pub fn free_hamiltonian_gradients(
    state: &PhaseState,
    props: &ParticleProperties,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    state.orientation.check_regular()?;
    let o = &state.orientation;
    let (s, cb) = (o.beta.sin(), o.beta.cos());
    let (sg, cg) = o.gamma.sin_cos();
    let pi = &state.angle_momentum;
    let (i1, i2, i3) = (props.inertia.x, props.inertia.y, props.inertia.z);
    let k = rot_kinetic(state);
    let (u1, u2) = (k.u1, k.u2);
    let s2 = s * s;

    let dh_dpia = (u1 * cg / i1 + u2 * sg / i2) / s2;
    let dh_dpib = (-u1 * sg / i1 + u2 * cg / i2) / s;
    let dh_dpig = -cb * dh_dpia + pi.z / i3;

    let du1_db = cg * pi.z * s - pi.y * cb * sg;
    let du2_db = sg * pi.z * s + pi.y * cb * cg;
    let dh_db = (u1 * du1_db / i1 + u2 * du2_db / i2) / s2
        - cb / (s2 * s) * (u1 * u1 / i1 + u2 * u2 / i2);
    let dh_dg = u1 * u2 * (1.0 / i2 - 1.0 / i1) / s2;

    Ok((
        Vector3::new(0.0, dh_db, dh_dg),
        Vector3::new(dh_dpia, dh_dpib, dh_dpig),
    ))
}
