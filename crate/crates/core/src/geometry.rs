//! Particle shape, material, and the derived rigid-body/optical tensors.
//!
//! Semi-axes are kept in the canonical order `R1 <= R2 <= R3`, so the
//! susceptibility diagonal satisfies `chi1 <= chi2 <= chi3` and the inertia
//! diagonal the reverse hierarchy `I1 >= I2 >= I3`.

use crate::quadrature::integrate_adaptive;
use crate::{Error, Result};
use nalgebra::Vector3;

/// Quadrature tolerance for the depolarization integrals.
const DEPOL_TOL: f64 = 1e-12;

/// Ellipsoidal particle geometry, lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParticleShape {
    Sphere { radius: f64 },
    /// Elongated, cylindrically symmetric: semi-axes `(r1, r1, r3)`, `r1 < r3`.
    ProlateEllipsoid { r1: f64, r3: f64 },
    /// Flattened, cylindrically symmetric: semi-axes `(r1, r3, r3)`, `r1 < r3`.
    OblateEllipsoid { r1: f64, r3: f64 },
    TriaxialEllipsoid { r1: f64, r2: f64, r3: f64 },
    /// Hollow ellipsoid with uniform wall thickness `h`; `r1..r3` are the
    /// outer semi-axes and the inner surface has semi-axes `r_i - h`.
    EllipsoidalShell { r1: f64, r2: f64, r3: f64, h: f64 },
}

impl ParticleShape {
    pub fn sphere(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidShape(format!("radius {radius} must be > 0")));
        }
        Ok(Self::Sphere { radius })
    }

    pub fn prolate(r1: f64, r3: f64) -> Result<Self> {
        check_axes(&[r1, r3])?;
        if r1 >= r3 {
            return Err(Error::InvalidShape(format!(
                "prolate requires r1 < r3, got ({r1}, {r3})"
            )));
        }
        Ok(Self::ProlateEllipsoid { r1, r3 })
    }

    pub fn oblate(r1: f64, r3: f64) -> Result<Self> {
        check_axes(&[r1, r3])?;
        if r1 >= r3 {
            return Err(Error::InvalidShape(format!(
                "oblate requires r1 < r3, got ({r1}, {r3})"
            )));
        }
        Ok(Self::OblateEllipsoid { r1, r3 })
    }

    /// Semi-axes are sorted into the canonical order on construction.
    pub fn triaxial(a: f64, b: f64, c: f64) -> Result<Self> {
        check_axes(&[a, b, c])?;
        let mut ax = [a, b, c];
        ax.sort_by(f64::total_cmp);
        Ok(Self::TriaxialEllipsoid {
            r1: ax[0],
            r2: ax[1],
            r3: ax[2],
        })
    }

    pub fn shell(a: f64, b: f64, c: f64, h: f64) -> Result<Self> {
        check_axes(&[a, b, c])?;
        let mut ax = [a, b, c];
        ax.sort_by(f64::total_cmp);
        if !(h > 0.0 && h < ax[0]) {
            return Err(Error::InvalidShape(format!(
                "shell thickness {h} must satisfy 0 < h < min semi-axis {}",
                ax[0]
            )));
        }
        Ok(Self::EllipsoidalShell {
            r1: ax[0],
            r2: ax[1],
            r3: ax[2],
            h,
        })
    }

    /// Outer semi-axes in canonical order `R1 <= R2 <= R3`.
    pub fn semi_axes(&self) -> [f64; 3] {
        match *self {
            Self::Sphere { radius } => [radius; 3],
            Self::ProlateEllipsoid { r1, r3 } => [r1, r1, r3],
            Self::OblateEllipsoid { r1, r3 } => [r1, r3, r3],
            Self::TriaxialEllipsoid { r1, r2, r3 } => [r1, r2, r3],
            Self::EllipsoidalShell { r1, r2, r3, .. } => [r1, r2, r3],
        }
    }

    /// Material volume (shells subtract the cavity).
    pub fn volume(&self) -> f64 {
        let [a, b, c] = self.semi_axes();
        let outer = ellipsoid_volume(a, b, c);
        match *self {
            Self::EllipsoidalShell { h, .. } => outer - ellipsoid_volume(a - h, b - h, c - h),
            _ => outer,
        }
    }
}

fn check_axes(axes: &[f64]) -> Result<()> {
    for &a in axes {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidShape(format!("semi-axis {a} must be > 0")));
        }
    }
    Ok(())
}

fn ellipsoid_volume(a: f64, b: f64, c: f64) -> f64 {
    4.0 * std::f64::consts::PI / 3.0 * a * b * c
}

/// Homogeneous particle material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    /// Density, kg/m^3.
    pub density: f64,
    /// Relative permittivity (dielectric constant).
    pub permittivity: f64,
}

impl Material {
    pub fn new(density: f64, permittivity: f64) -> Result<Self> {
        if !(density > 0.0 && density.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "density {density} must be > 0"
            )));
        }
        if !(permittivity > 1.0 && permittivity.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "relative permittivity {permittivity} must be > 1"
            )));
        }
        Ok(Self {
            density,
            permittivity,
        })
    }

    /// Silicon, the reference material of the simulations.
    pub fn silicon() -> Self {
        Self {
            density: 2330.0,
            permittivity: 12.0,
        }
    }
}

/// Mass, volume and the diagonal body-frame tensors of a particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleProperties {
    /// Total mass, kg.
    pub mass: f64,
    /// Material volume, m^3.
    pub volume: f64,
    /// Body-frame inertia diagonal `(I1, I2, I3)`, kg m^2.
    pub inertia: Vector3<f64>,
    /// Body-frame susceptibility diagonal `(chi1, chi2, chi3)`.
    pub susceptibility: Vector3<f64>,
    /// Radius of the equal-volume sphere, m.
    pub equivalent_radius: f64,
}

impl ParticleProperties {
    /// True when the susceptibility diagonal is degenerate to relative `tol`.
    pub fn is_isotropic(&self, tol: f64) -> bool {
        let c = &self.susceptibility;
        let max = c.amax();
        (c.x - c.z).abs() <= tol * max && (c.x - c.y).abs() <= tol * max
    }
}

/// Depolarization factors `(N1, N2, N3)` of the (outer) ellipsoid.
///
/// Each `N_i` is the improper integral
/// `(R1 R2 R3 / 2) * int_0^inf ds / ((s + R_i^2) sqrt((s+R1^2)(s+R2^2)(s+R3^2)))`,
/// compactified with `s = R3^2 t / (1 - t)` and integrated adaptively. They
/// satisfy `N1 + N2 + N3 = 1` and are inversely ordered to the semi-axes.
pub fn depolarization_factors(shape: &ParticleShape) -> Result<[f64; 3]> {
    let [r1, r2, r3] = shape.semi_axes();
    if r3 / r1 > 1e3 {
        return Err(Error::QuadratureFailure(format!(
            "aspect ratio {:.3e} beyond supported range",
            r3 / r1
        )));
    }
    if r1 == r3 {
        return Ok([1.0 / 3.0; 3]);
    }
    // Work in units of r3 so the substitution scale is O(1).
    let (a, b, c) = (r1 / r3, r2 / r3, 1.0);
    let axes = [a, b, c];
    let mut n = [0.0; 3];
    for (i, ri) in axes.iter().enumerate() {
        let integrand = move |t: f64| {
            let om = 1.0 - t;
            let s = t / om;
            let root =
                ((s + a * a) * (s + b * b) * (s + c * c)).sqrt();
            1.0 / ((s + ri * ri) * root * om * om)
        };
        let value = integrate_adaptive(integrand, 0.0, 1.0, DEPOL_TOL)?;
        n[i] = 0.5 * a * b * c * value;
    }
    Ok(n)
}

/// Susceptibility diagonal `chi_i = (eps_r - 1) / (1 + (eps_r - 1) N_i)`.
///
/// Shells use the depolarization factors of the outer solid ellipsoid.
pub fn susceptibility(shape: &ParticleShape, material: &Material) -> Result<Vector3<f64>> {
    let n = depolarization_factors(shape)?;
    let de = material.permittivity - 1.0;
    Ok(Vector3::new(
        de / (1.0 + de * n[0]),
        de / (1.0 + de * n[1]),
        de / (1.0 + de * n[2]),
    ))
}

/// Mass, volume and body-frame inertia diagonal.
///
/// Solid ellipsoids use `I1 = (M/5)(R2^2 + R3^2)` and cyclic permutations;
/// shells subtract the inner solid ellipsoid (semi-axes `R_i - h`).
pub fn inertia_and_mass(shape: &ParticleShape, material: &Material) -> (f64, f64, Vector3<f64>) {
    let [a, b, c] = shape.semi_axes();
    let solid = |a: f64, b: f64, c: f64| -> (f64, Vector3<f64>) {
        let m = material.density * ellipsoid_volume(a, b, c);
        (
            m,
            Vector3::new(
                m / 5.0 * (b * b + c * c),
                m / 5.0 * (a * a + c * c),
                m / 5.0 * (a * a + b * b),
            ),
        )
    };
    match *shape {
        ParticleShape::EllipsoidalShell { h, .. } => {
            let (m_out, i_out) = solid(a, b, c);
            let (m_in, i_in) = solid(a - h, b - h, c - h);
            let volume = shape.volume();
            (m_out - m_in, volume, i_out - i_in)
        }
        _ => {
            let (m, i) = solid(a, b, c);
            (m, shape.volume(), i)
        }
    }
}

/// Assemble the full derived properties of a particle.
pub fn particle_properties(
    shape: &ParticleShape,
    material: &Material,
) -> Result<ParticleProperties> {
    let chi = susceptibility(shape, material)?;
    let (mass, volume, inertia) = inertia_and_mass(shape, material);
    let equivalent_radius = (3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt();
    Ok(ParticleProperties {
        mass,
        volume,
        inertia,
        susceptibility: chi,
        equivalent_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Closed-form depolarization factor along the symmetry axis of a prolate
    /// spheroid with eccentricity `e`; the transverse factors split the rest.
    fn prolate_axial_factor(r1: f64, r3: f64) -> f64 {
        let e = (1.0 - (r1 / r3).powi(2)).sqrt();
        (1.0 - e * e) / (e * e * e) * (0.5 * ((1.0 + e) / (1.0 - e)).ln() - e)
    }

    #[test]
    fn sphere_factors_are_thirds() {
        let shape = ParticleShape::sphere(80e-9).unwrap();
        let n = depolarization_factors(&shape).unwrap();
        for v in n {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prolate_two_to_one_matches_closed_form() {
        let shape = ParticleShape::prolate(75e-9, 150e-9).unwrap();
        let n = depolarization_factors(&shape).unwrap();
        let n_long = prolate_axial_factor(75e-9, 150e-9);
        let n_short = 0.5 * (1.0 - n_long);
        assert!((n[2] - n_long).abs() < 1e-10, "axial: {} vs {}", n[2], n_long);
        assert!((n[0] - n_short).abs() < 1e-10);
        assert!((n[1] - n_short).abs() < 1e-10);
        // Frozen reference values for the 2:1 aspect ratio.
        assert!((n[2] - 0.1736).abs() < 5e-5);
        assert!((n[0] - 0.4132).abs() < 5e-5);
    }

    #[test]
    fn prolate_degenerate_limit_recovers_sphere() {
        let shape = ParticleShape::prolate(100e-9, 100e-9 * (1.0 + 1e-7)).unwrap();
        let n = depolarization_factors(&shape).unwrap();
        for v in n {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sphere_susceptibility_closed_form() {
        let shape = ParticleShape::sphere(80e-9).unwrap();
        let mat = Material::silicon();
        let chi = susceptibility(&shape, &mat).unwrap();
        let chi0 = 3.0 * (12.0 - 1.0) / (12.0 + 2.0);
        for v in [chi.x, chi.y, chi.z] {
            assert!((v - chi0).abs() < 1e-12);
        }
    }

    #[test]
    fn vacuum_particle_has_no_susceptibility() {
        let shape = ParticleShape::sphere(80e-9).unwrap();
        let mat = Material::new(2330.0, 1.0 + 1e-12).unwrap();
        let chi = susceptibility(&shape, &mat).unwrap();
        assert!(chi.amax() < 1e-11);
    }

    #[test]
    fn prolate_long_axis_susceptibility_composes_with_factors() {
        let shape = ParticleShape::prolate(75e-9, 150e-9).unwrap();
        let mat = Material::silicon();
        let n = depolarization_factors(&shape).unwrap();
        let chi = susceptibility(&shape, &mat).unwrap();
        let expect = 11.0 / (1.0 + 11.0 * n[2]);
        assert!((chi.z - expect).abs() < 1e-12);
        assert!(chi.z > chi.x, "longer axis must be more polarizable");
    }

    #[test]
    fn sphere_inertia_standard_result() {
        let shape = ParticleShape::sphere(80e-9).unwrap();
        let mat = Material::silicon();
        let (m, _v, i) = inertia_and_mass(&shape, &mat);
        let expect = 0.4 * m * 80e-9 * 80e-9;
        for v in [i.x, i.y, i.z] {
            assert!((v - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn shell_mass_is_volume_difference() {
        let shape = ParticleShape::shell(42e-9, 57e-9, 91e-9, 15e-9).unwrap();
        let mat = Material::silicon();
        let (m, v, _) = inertia_and_mass(&shape, &mat);
        let v_out = ellipsoid_volume(42e-9, 57e-9, 91e-9);
        let v_in = ellipsoid_volume(27e-9, 42e-9, 76e-9);
        assert!((v - (v_out - v_in)).abs() < 1e-12 * v);
        assert!((m - mat.density * (v_out - v_in)).abs() < 1e-12 * m);
    }

    #[test]
    fn triaxial_inertia_matches_monte_carlo() {
        // Independent oracle: rejection-sample the ellipsoid volume and
        // accumulate the inertia integrals directly.
        use rand::Rng;
        use rand::SeedableRng;
        let (a, b, c) = (42e-9, 57e-9, 91e-9);
        let shape = ParticleShape::triaxial(a, b, c).unwrap();
        let mat = Material::silicon();
        let (m, _v, i) = inertia_and_mass(&shape, &mat);

        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let samples = 10_000_000usize;
        let mut hits = 0u64;
        let mut sums = [0.0f64; 3];
        for _ in 0..samples {
            let x = rng.random_range(-a..a);
            let y = rng.random_range(-b..b);
            let z = rng.random_range(-c..c);
            if (x / a).powi(2) + (y / b).powi(2) + (z / c).powi(2) <= 1.0 {
                hits += 1;
                sums[0] += y * y + z * z;
                sums[1] += x * x + z * z;
                sums[2] += x * x + y * y;
            }
        }
        // Mean of r_perp^2 over the body times the mass.
        for (axis, sum) in sums.iter().enumerate() {
            let mc = m * sum / hits as f64;
            let rel = (mc - i[axis]).abs() / i[axis];
            assert!(rel < 5e-3, "axis {axis}: MC {mc:.6e} vs analytic {:.6e}", i[axis]);
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(ParticleShape::sphere(-1.0).is_err());
        assert!(ParticleShape::prolate(2.0, 1.0).is_err());
        assert!(ParticleShape::shell(10e-9, 20e-9, 30e-9, 10e-9).is_err());
        assert!(Material::new(1000.0, 0.9).is_err());
        assert!(Material::new(-1.0, 2.0).is_err());
    }

    #[test]
    fn pathological_aspect_ratio_reports_failure() {
        let shape = ParticleShape::prolate(1e-9, 2e-6).unwrap();
        assert!(depolarization_factors(&shape).is_err());
    }

    proptest! {
        #[test]
        fn sum_rule_and_ordering(ratio2 in 1.0f64..50.0, ratio3 in 1.0f64..50.0) {
            let r1 = 50e-9;
            let mut axes = [r1, r1 * ratio2, r1 * ratio3];
            axes.sort_by(f64::total_cmp);
            let shape = ParticleShape::triaxial(axes[0], axes[1], axes[2]).unwrap();
            let n = depolarization_factors(&shape).unwrap();
            let sum: f64 = n.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-10, "sum rule violated: {sum}");
            // Larger semi-axis -> smaller depolarization factor.
            prop_assert!(n[0] >= n[1] - 1e-12 && n[1] >= n[2] - 1e-12);
            for v in n {
                prop_assert!(v > 0.0 && v < 1.0);
            }
            // ... and hence larger susceptibility along that axis.
            let chi = susceptibility(&shape, &Material::silicon()).unwrap();
            prop_assert!(chi.x <= chi.y + 1e-12 && chi.y <= chi.z + 1e-12);
            // Inertia hierarchy is inverted.
            let (_, _, i) = inertia_and_mass(&shape, &Material::silicon());
            prop_assert!(i.x >= i.y - 1e-30 && i.y >= i.z - 1e-30);
        }
    }
}
