//! Tweezer field models and the optical couplings: gradient potential with
//! analytic forces/torques, scattering rate, Rayleigh cross-section, and the
//! deterministic radiation-pressure force/torques with an independent
//! angular-quadrature reference path.

use crate::constants::{HBAR, SPEED_OF_LIGHT};
use crate::geometry::ParticleProperties;
use crate::kinematics::{rotation_matrix, rotation_matrix_derivatives, EulerAngles};
use crate::quadrature::sphere_grid;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

/// Focal field approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldModel {
    /// Single scalar Gaussian mode, common amplitude for both polarization
    /// components.
    FirstOrder,
    /// Two mode functions with orthogonally oriented waist ellipses and the
    /// Gouy phase; restores the x-y degeneracy at circular polarization.
    TwoModeGouy,
}

/// Elliptically polarized Gaussian tweezer.
///
/// The polarization vector is `(b_x, i b_y, 0)` with `b_x = cos(psi)`,
/// `b_y = sin(psi)`, so `psi` alone sets the polarization state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TweezerField {
    /// Beam power, W.
    pub power: f64,
    /// Wavelength, m.
    pub wavelength: f64,
    /// Effective waist w0, m.
    pub waist: f64,
    /// Rayleigh range, m.
    pub rayleigh_range: f64,
    /// Transverse asymmetry a1 of the focal spot.
    pub asymmetry: f64,
    /// Polarization ellipticity psi, rad.
    pub ellipticity: f64,
    pub model: FieldModel,
}

impl TweezerField {
    /// Table-top defaults: 1550 nm, 300 mW, w0 = 1.06 um, a1 = 1.126,
    /// diffraction-limited Rayleigh range, linear polarization.
    pub fn table_defaults() -> Self {
        let waist: f64 = 1.06e-6;
        let wavelength = 1.55e-6;
        Self {
            power: 0.3,
            wavelength,
            waist,
            rayleigh_range: std::f64::consts::PI * waist * waist / wavelength,
            asymmetry: 1.126,
            ellipticity: 0.0,
            model: FieldModel::TwoModeGouy,
        }
    }

    pub fn b_x(&self) -> f64 {
        self.ellipticity.cos()
    }

    pub fn b_y(&self) -> f64 {
        self.ellipticity.sin()
    }

    /// Effective beam cross-section `sigma_L = pi w0^2 / 2`.
    pub fn sigma_l(&self) -> f64 {
        0.5 * std::f64::consts::PI * self.waist * self.waist
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    pub fn angular_frequency(&self) -> f64 {
        self.wavenumber() * SPEED_OF_LIGHT
    }

    /// Time-averaged focal intensity `I0 = P / sigma_L`, W/m^2.
    pub fn focal_intensity(&self) -> f64 {
        self.power / self.sigma_l()
    }

    fn width_sq(&self, z: f64) -> f64 {
        let zr = self.rayleigh_range;
        self.waist * self.waist * (1.0 + z * z / (zr * zr))
    }

    /// Complex mode amplitudes `(u_x, u_y)` at `r`. The first-order model
    /// returns the same scalar mode for both components.
    pub fn mode_function(&self, r: &Vector3<f64>) -> (Complex64, Complex64) {
        let w2 = self.width_sq(r.z);
        let g = (self.waist * self.waist / w2).sqrt();
        let a1 = self.asymmetry;
        let k = self.wavenumber();
        match self.model {
            FieldModel::FirstOrder => {
                let env = g * (-(r.x * r.x / a1 + r.y * r.y * a1) / w2).exp();
                let u = Complex64::from_polar(env, -k * r.z);
                (u, u)
            }
            FieldModel::TwoModeGouy => {
                let zr = self.rayleigh_range;
                let gouy = (r.z / zr).atan()
                    - 0.5 * k * r.z * (r.x * r.x + r.y * r.y) / (r.z * r.z + zr * zr);
                let phase = -(k * r.z + gouy);
                let ux = g * (-(r.x * r.x / a1 + r.y * r.y * a1) / w2).exp();
                let uy = g * (-(r.x * r.x * a1 + r.y * r.y / a1) / w2).exp();
                (
                    Complex64::from_polar(ux, phase),
                    Complex64::from_polar(uy, phase),
                )
            }
        }
    }

    /// Squared mode amplitudes `(|u_x|^2, |u_y|^2)`.
    pub fn intensity_weights(&self, r: &Vector3<f64>) -> (f64, f64) {
        let w2 = self.width_sq(r.z);
        let g2 = self.waist * self.waist / w2;
        let a1 = self.asymmetry;
        let wx = g2 * (-2.0 * (r.x * r.x / a1 + r.y * r.y * a1) / w2).exp();
        match self.model {
            FieldModel::FirstOrder => (wx, wx),
            FieldModel::TwoModeGouy => {
                let wy = g2 * (-2.0 * (r.x * r.x * a1 + r.y * r.y / a1) / w2).exp();
                (wx, wy)
            }
        }
    }

    /// Spatial gradients of the squared mode amplitudes.
    pub fn intensity_weight_gradients(&self, r: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let w2 = self.width_sq(r.z);
        let a1 = self.asymmetry;
        let zr = self.rayleigh_range;
        let dlnw = r.z / (r.z * r.z + zr * zr); // w'/w
        let (wx, wy) = self.intensity_weights(r);
        let grad = |amp: f64, ax: f64| {
            Vector3::new(
                amp * (-4.0 * r.x / (ax * w2)),
                amp * (-4.0 * r.y * ax / w2),
                amp * 2.0 * dlnw * (2.0 * (r.x * r.x / ax + r.y * r.y * ax) / w2 - 1.0),
            )
        };
        match self.model {
            FieldModel::FirstOrder => {
                let g = grad(wx, a1);
                (g, g)
            }
            FieldModel::TwoModeGouy => (grad(wx, a1), grad(wy, a1.recip())),
        }
    }

    /// Polarization-weighted envelope used by the radiation-pressure terms:
    /// `b_x^2 |u_x|^2 + b_y^2 |u_y|^2` (reduces to `|u|^2` for the
    /// first-order model).
    pub fn scattering_weight(&self, r: &Vector3<f64>) -> f64 {
        let (wx, wy) = self.intensity_weights(r);
        let (bx, by) = (self.b_x(), self.b_y());
        bx * bx * wx + by * by * wy
    }
}

/// Generalized optical force and torque on `(r, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpticalForcesTorques {
    /// Force on the center of mass, N.
    pub force: Vector3<f64>,
    /// Generalized torques conjugate to (alpha, beta, gamma), N m.
    pub torque: Vector3<f64>,
}

/// The lab-frame quadratic forms `chi_xx`, `chi_yy` and their Euler-angle
/// gradients; these carry the whole orientation dependence of the gradient
/// potential.
fn polarization_projections(
    chi: &Vector3<f64>,
    angles: &EulerAngles,
) -> (f64, f64, Vector3<f64>, Vector3<f64>) {
    let r = rotation_matrix(angles);
    let dr = rotation_matrix_derivatives(angles);
    let mut xx = 0.0;
    let mut yy = 0.0;
    let mut dxx = Vector3::zeros();
    let mut dyy = Vector3::zeros();
    for i in 0..3 {
        xx += chi[i] * r[(0, i)] * r[(0, i)];
        yy += chi[i] * r[(1, i)] * r[(1, i)];
        for k in 0..3 {
            dxx[k] += 2.0 * chi[i] * r[(0, i)] * dr[k][(0, i)];
            dyy[k] += 2.0 * chi[i] * r[(1, i)] * dr[k][(1, i)];
        }
    }
    (xx, yy, dxx, dyy)
}

/// Time-averaged gradient potential, J:
/// `H = -(V P / 2 c sigma_L) [b_x^2 |u_x|^2 chi_xx(phi) + b_y^2 |u_y|^2 chi_yy(phi)]`.
pub fn gradient_potential(
    field: &TweezerField,
    props: &ParticleProperties,
    r: &Vector3<f64>,
    angles: &EulerAngles,
) -> f64 {
    let coupling = props.volume * field.power / (2.0 * SPEED_OF_LIGHT * field.sigma_l());
    let (wx, wy) = field.intensity_weights(r);
    let (xx, yy, _, _) = polarization_projections(&props.susceptibility, angles);
    let (bx, by) = (field.b_x(), field.b_y());
    -coupling * (bx * bx * wx * xx + by * by * wy * yy)
}

/// Analytic `-(dH/dr, dH/dphi)` of the gradient potential.
pub fn gradient_forces_torques(
    field: &TweezerField,
    props: &ParticleProperties,
    r: &Vector3<f64>,
    angles: &EulerAngles,
) -> OpticalForcesTorques {
    let coupling = props.volume * field.power / (2.0 * SPEED_OF_LIGHT * field.sigma_l());
    let (wx, wy) = field.intensity_weights(r);
    let (gx, gy) = field.intensity_weight_gradients(r);
    let (xx, yy, dxx, dyy) = polarization_projections(&props.susceptibility, angles);
    let (bx2, by2) = (field.b_x().powi(2), field.b_y().powi(2));
    OpticalForcesTorques {
        force: coupling * (bx2 * xx * gx + by2 * yy * gy),
        torque: coupling * (bx2 * wx * dxx + by2 * wy * dyy),
    }
}

/// Photon scattering rate `gamma_s = (sigma~_R / sigma_L) P / (hbar omega_L)`,
/// with `sigma~_R = pi^2 V^2 / lambda^4`.
pub fn scattering_rate(field: &TweezerField, props: &ParticleProperties) -> f64 {
    let sigma_r_eff = effective_cross_section(props.volume, field.wavelength);
    sigma_r_eff / field.sigma_l() * field.power / (HBAR * field.angular_frequency())
}

/// `sigma~_R = pi^2 V^2 / lambda^4`.
pub fn effective_cross_section(volume: f64, wavelength: f64) -> f64 {
    let pi = std::f64::consts::PI;
    pi * pi * volume * volume / wavelength.powi(4)
}

/// Rayleigh scattering cross-section of an isotropic particle,
/// `sigma_R = (8 pi / 3) sigma~_R chi_0^2`. Anisotropic particles are
/// refused: the closed form only holds for a scalar susceptibility.
pub fn rayleigh_cross_section(props: &ParticleProperties, wavelength: f64) -> Result<f64> {
    if !props.is_isotropic(1e-9) {
        return Err(Error::AnisotropicParticle(format!(
            "Rayleigh cross-section needs chi1 = chi2 = chi3, got {:?}",
            props.susceptibility
        )));
    }
    let chi0 = props.susceptibility.x;
    Ok(8.0 * std::f64::consts::PI / 3.0
        * effective_cross_section(props.volume, wavelength)
        * chi0
        * chi0)
}

/// Deterministic radiation-pressure force and torques (closed forms).
///
/// Axial force plus the three generalized torques; transverse scattering
/// forces vanish at this order. The spatial profile enters through the
/// polarization-weighted envelope of [`TweezerField::scattering_weight`].
pub fn scattering_force_torques(
    field: &TweezerField,
    props: &ParticleProperties,
    r: &Vector3<f64>,
    angles: &EulerAngles,
) -> OpticalForcesTorques {
    let pi = std::f64::consts::PI;
    let gs = scattering_rate(field, props);
    let weight = field.scattering_weight(r);
    let (bx, by) = (field.b_x(), field.b_y());
    let (bx2, by2) = (bx * bx, by * by);
    let (c1, c2, c3) = (
        props.susceptibility.x,
        props.susceptibility.y,
        props.susceptibility.z,
    );
    let (s2a, c2a) = (2.0 * angles.alpha).sin_cos();
    let (sb, cb) = angles.beta.sin_cos();
    let c2b = (2.0 * angles.beta).cos();
    let (sg, cg) = angles.gamma.sin_cos();
    let (s2g, c2g) = (2.0 * angles.gamma).sin_cos();

    let fz = 8.0 * pi * HBAR * gs / 3.0
        * field.wavenumber()
        * weight
        * (0.5 * (by2 - bx2) * s2a * cb * s2g * (c1 - c2) * (c1 + c2)
            - (c2g * (c1 - c2) * (c1 + c2) / 16.0)
                * (2.0 * (by2 - bx2) * c2a * (c2b + 3.0) + 4.0 * sb * sb)
            - ((c1 * c1 + c2 * c2 - 2.0 * c3 * c3) / 8.0)
                * (2.0 * (bx2 - by2) * c2a * sb * sb - c2b)
            + 0.375 * (c1 * c1 + c2 * c2)
            + 0.25 * c3 * c3);

    let quarter_scale = 2.0 * pi * bx * by * HBAR * gs / 3.0 * weight;
    let full_scale = 8.0 * pi * bx * by * HBAR * gs / 3.0 * weight;
    let t_alpha = quarter_scale
        * (-2.0 * sb * sb * c2g * (c1 - c2) * (c1 + c2 - 2.0 * c3)
            + c2b * (c1 * c1 + 2.0 * c3 * (c1 + c2) - 4.0 * c1 * c2 + c2 * c2 - 2.0 * c3 * c3)
            + 3.0 * c1 * c1 - 2.0 * c3 * (c1 + c2) - 4.0 * c1 * c2
            + 3.0 * c2 * c2
            + 2.0 * c3 * c3);
    let t_beta = full_scale * sb * sg * cg * (c1 - c2) * (c1 + c2 - 2.0 * c3);
    let t_gamma = full_scale * cb * (c1 - c2) * (c1 - c2);

    OpticalForcesTorques {
        force: Vector3::new(0.0, 0.0, fz),
        torque: Vector3::new(t_alpha, t_beta, t_gamma),
    }
}

/// Lab-frame susceptibility derivatives `d chi_lab / d phi_k`.
pub fn chi_lab_derivatives(chi: &Vector3<f64>, angles: &EulerAngles) -> [Matrix3<f64>; 3] {
    let rot = rotation_matrix(angles);
    let dr = rotation_matrix_derivatives(angles);
    let chi_body = Matrix3::from_diagonal(chi);
    let build = |k: usize| {
        let d = dr[k] * chi_body * rot.transpose();
        d + d.transpose()
    };
    [build(0), build(1), build(2)]
}

/// Reference path for the radiation-pressure terms: direct quadrature of the
/// scattered-mode momentum flux over the unit sphere of outgoing directions,
/// with the polarization sum eliminated through the completeness relation.
///
/// Translations use the photon-recoil kernel `k (z_hat - n)` against the
/// angular scattering pattern; torques integrate `Im` of the scattered-mode
/// bilinear with the orientation derivative of the lab susceptibility.
/// Independent of the closed forms above; used to arbitrate their prefactors.
pub fn scattering_force_torques_quadrature(
    field: &TweezerField,
    props: &ParticleProperties,
    r: &Vector3<f64>,
    angles: &EulerAngles,
    polar_order: usize,
    azimuthal_order: usize,
) -> OpticalForcesTorques {
    let gs = scattering_rate(field, props);
    let k = field.wavenumber();
    let weight = field.scattering_weight(r);
    let eps_d = Vector3::new(
        Complex64::new(field.b_x(), 0.0),
        Complex64::new(0.0, field.b_y()),
        Complex64::new(0.0, 0.0),
    );
    let chi_lab = crate::kinematics::to_lab_frame(&props.susceptibility, angles);
    let dchi = chi_lab_derivatives(&props.susceptibility, angles);

    let v = complex_mat_mul(&chi_lab, &eps_d);
    let g: Vec<Vector3<Complex64>> = dchi.iter().map(|m| complex_mat_mul(m, &eps_d)).collect();

    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for node in sphere_grid(polar_order, azimuthal_order) {
        let n = Vector3::new(node.direction[0], node.direction[1], node.direction[2]);
        let proj = transverse_projection(&n);
        let vv = bilinear(&v, &proj, &v).re;
        // Per-photon momentum transfer k (z_hat - n) weighted by the pattern.
        force += node.weight * k * Vector3::new(-n.x * vv, -n.y * vv, (1.0 - n.z) * vv);
        for kk in 0..3 {
            torque[kk] += node.weight * bilinear(&v, &proj, &g[kk]).im;
        }
    }
    OpticalForcesTorques {
        force: HBAR * gs * weight * force,
        torque: HBAR * gs * weight * torque,
    }
}

pub(crate) fn transverse_projection(n: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() - n * n.transpose()
}

/// `a_bar^T P b` for complex 3-vectors and a real projection matrix.
pub(crate) fn bilinear(
    a: &Vector3<Complex64>,
    p: &Matrix3<f64>,
    b: &Vector3<Complex64>,
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            acc += a[i].conj() * b[j] * p[(i, j)];
        }
    }
    acc
}

pub(crate) fn complex_mat_mul(m: &Matrix3<f64>, v: &Vector3<Complex64>) -> Vector3<Complex64> {
    let mut out = Vector3::new(
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
    );
    for i in 0..3 {
        for j in 0..3 {
            out[i] += v[j] * m[(i, j)];
        }
    }
    out
}
