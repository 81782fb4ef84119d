//! Numerical quadrature building blocks: adaptive Gauss-Kronrod on an
//! interval and product rules over the unit sphere of scattering directions.

use crate::{Error, Result};

// 15-point Kronrod rule with embedded 7-point Gauss rule on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for i in 0..8 {
        let (fsum, count) = if XGK[i] == 0.0 {
            (f(mid), 1)
        } else {
            (f(mid - half * XGK[i]) + f(mid + half * XGK[i]), 2)
        };
        let _ = count;
        kronrod += WGK[i] * fsum;
        // Odd Kronrod indices coincide with the embedded Gauss nodes.
        if i % 2 == 1 {
            gauss += WG[i / 2] * fsum;
        } else if i == 7 {
            gauss += WG[3] * fsum;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
///
/// Bisects the sub-interval with the largest error estimate until the summed
/// estimate drops below `tol` (absolute, or relative to the running value).
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 2000;
    let mut segments: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(64);
    let (v, e) = gauss_kronrod_15(&f, a, b);
    segments.push((a, b, v, e));
    loop {
        let total: f64 = segments.iter().map(|s| s.2).sum();
        let err: f64 = segments.iter().map(|s| s.3).sum();
        if err <= tol.max(tol * total.abs()) {
            return Ok(total);
        }
        if segments.len() >= MAX_INTERVALS {
            return Err(Error::QuadratureFailure(format!(
                "error {err:.3e} above tolerance {tol:.3e} after {MAX_INTERVALS} subdivisions"
            )));
        }
        let (idx, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (sa, sb, _, _) = segments.swap_remove(idx);
        let sm = 0.5 * (sa + sb);
        if sm == sa || sm == sb {
            return Err(Error::QuadratureFailure(
                "interval no longer representable; integrand too singular".into(),
            ));
        }
        let (v1, e1) = gauss_kronrod_15(&f, sa, sm);
        let (v2, e2) = gauss_kronrod_15(&f, sm, sb);
        segments.push((sa, sm, v1, e1));
        segments.push((sm, sb, v2, e2));
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 2);
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// A quadrature node on the unit sphere: direction and weight, with
/// `sum(w_i) = 4 pi`.
#[derive(Debug, Clone, Copy)]
pub struct SphereNode {
    pub direction: [f64; 3],
    pub weight: f64,
}

/// Product Gauss-Legendre (polar) x midpoint (azimuthal) grid over the unit
/// sphere. Exact for spherical polynomials well beyond the degree-6
/// integrands that appear in the scattering correlators.
pub fn sphere_grid(polar_order: usize, azimuthal_order: usize) -> Vec<SphereNode> {
    let (cos_nodes, cos_weights) = gauss_legendre(polar_order);
    let m = azimuthal_order as f64;
    let dtheta = 2.0 * std::f64::consts::PI / m;
    let mut nodes = Vec::with_capacity(polar_order * azimuthal_order);
    for (c, wc) in cos_nodes.iter().zip(&cos_weights) {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for j in 0..azimuthal_order {
            let theta = dtheta * (j as f64 + 0.5);
            nodes.push(SphereNode {
                direction: [s * theta.cos(), s * theta.sin(), *c],
                weight: wc * dtheta,
            });
        }
    }
    nodes
}
