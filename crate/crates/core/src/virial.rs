//! Variance `Γ = ∫|x|²|u|²`, its virial derivatives, the phase-modulated
//! energy identity and the minimal-mass momentum bound.
//!
//! Momentum-type integrals `∫ ∇θ · Im(ū∇u)` and `∫ |∇θ|² |u|²` are summed on
//! the same edges as the Hardy functional, so that
//! `E(u e^{isθ}) = E(u) + s ∫∇θ·Im(ū∇u) + (s²/2) ∫|∇θ|²|u|²` holds to
//! rounding when the modulated gradient is formed by the product rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexRadialField;
use crate::functionals::{self, momentum_against, weighted_density};
use crate::grid::RadialGrid;
use crate::ground_state::GroundState;
use crate::params::PhysicalParams;

/// Relative mass mismatch tolerated by [`banica_check`].
pub const MASS_TOL: f64 = 1e-6;
/// Negative energy tolerated at minimal mass, relative to `H(u)`.
pub const NEGATIVE_ENERGY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirialReport {
    pub gamma: f64,
    pub gamma_dot: f64,
    pub gamma_ddot: f64,
    pub gamma_ddot_critical: f64,
    pub fd_gamma_dot: Option<f64>,
    pub fd_gamma_ddot: Option<f64>,
}

impl VirialReport {
    /// Formula values at `u`; `energy0` is `E(u0)` of the trajectory.
    pub fn at(u: &ComplexRadialField, params: &PhysicalParams, energy0: f64) -> Self {
        Self {
            gamma: variance(u),
            gamma_dot: variance_rate(u),
            gamma_ddot: variance_accel(u, params),
            gamma_ddot_critical: 16.0 * energy0,
            fd_gamma_dot: None,
            fd_gamma_ddot: None,
        }
    }

    /// Fills the finite-difference estimates from a recorded `Γ` series
    /// around index `i` (centred, non-uniform spacing allowed).
    pub fn with_finite_differences(mut self, times: &[f64], gammas: &[f64], i: usize) -> Self {
        if i > 0 && i + 1 < times.len() && times.len() == gammas.len() {
            let (d1, d2) = centred_differences(&times[i - 1..=i + 1], &gammas[i - 1..=i + 1]);
            self.fd_gamma_dot = Some(d1);
            self.fd_gamma_ddot = Some(d2);
        }
        self
    }
}

/// First and second derivative at the middle of three samples.
pub fn centred_differences(t: &[f64], y: &[f64]) -> (f64, f64) {
    let (h0, h1) = (t[1] - t[0], t[2] - t[1]);
    let d1 = (-h1 / (h0 * (h0 + h1))) * y[0] + ((h1 - h0) / (h0 * h1)) * y[1] + (h0 / (h1 * (h0 + h1))) * y[2];
    let d2 = 2.0 * (y[0] / (h0 * (h0 + h1)) - y[1] / (h0 * h1) + y[2] / (h1 * (h0 + h1)));
    (d1, d2)
}

/// `Γ = ∫ |x|² |u|²`.
pub fn variance(u: &ComplexRadialField) -> f64 {
    let g = u.grid();
    u.values().iter().zip(&g.nodes).zip(&g.quad_weights).map(|((z, r), w)| r * r * z.norm_sqr() * w).sum()
}

/// `Γ' = 4 Im ∫ ū x·∇u`.
pub fn variance_rate(u: &ComplexRadialField) -> f64 {
    4.0 * momentum_against(u, &quadratic_theta(u.grid())).expect("theta built on the field's grid")
}

/// `Γ'' = 16E(u) + 4(N - Np + 4)/(p+1) ∫|u|^{p+1}`; the second term vanishes
/// at the critical power.
pub fn variance_accel(u: &ComplexRadialField, params: &PhysicalParams) -> f64 {
    let n = params.n();
    let p = params.exponent_p;
    let e = functionals::energy(u, params);
    let coef = n - n * p + 4.0;
    if params.is_critical() {
        16.0 * e
    } else {
        16.0 * e + 4.0 * coef / (p + 1.0) * functionals::lp1_norm(u, p)
    }
}

/// `θ = |x|²/2` on the grid.
pub fn quadratic_theta(g: &RadialGrid) -> Vec<f64> {
    g.nodes.iter().map(|r| 0.5 * r * r).collect()
}

/// Smooth compactly supported radial bump `exp(1 - 1/(1 - ((r-c)/w)²))`.
pub fn bump_theta(g: &RadialGrid, center: f64, width: f64) -> Vec<f64> {
    g.nodes
        .iter()
        .map(|&r| {
            let x = (r - center) / width;
            if x.abs() < 1.0 {
                (1.0 - 1.0 / (1.0 - x * x)).exp()
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatedEnergy {
    /// `E(u e^{isθ})` evaluated on the modulated field.
    pub direct: f64,
    /// `E(u) + s ∫∇θ·Im(ū∇u) + (s²/2) ∫|∇θ|²|u|²`.
    pub expanded: f64,
    pub residual: f64,
}

/// Both sides of the phase-modulation identity for `E(u e^{isθ})`.
pub fn phase_modulated_energy(
    u: &ComplexRadialField,
    params: &PhysicalParams,
    s: f64,
    theta: &[f64],
) -> Result<ModulatedEnergy> {
    let g = u.grid();
    g.check_len(theta.len())?;
    let e = functionals::energy(u, params);
    let expanded = e + s * momentum_against(u, theta)? + 0.5 * s * s * weighted_density(u, theta)?;

    // Edge gradient of v e^{isθ}: e^{isθ_m}(Δv + i s Δθ v_m).
    let v = u.regular_factor();
    let h_mod: f64 = g
        .stiffness
        .iter()
        .enumerate()
        .map(|(e, k)| {
            let dv = v[e + 1] - v[e];
            let vm = 0.5 * (v[e + 1] + v[e]);
            let dth = theta[e + 1] - theta[e];
            k * (dv + num_complex::Complex64::new(0.0, s * dth) * vm).norm_sqr()
        })
        .sum();
    let lp1 = functionals::lp1_norm(u, params.exponent_p);
    let direct = 0.5 * h_mod - lp1 / (params.exponent_p + 1.0);
    Ok(ModulatedEnergy { direct, expanded, residual: direct - expanded })
}

/// Both sides of `|∫∇θ·Im(ū∇u)| ≤ √(2E(u)) (∫|∇θ|²|u|²)^{1/2}`, valid at the
/// minimal mass `‖u‖ = M_gs`.
pub fn banica_check(
    u: &ComplexRadialField,
    params: &PhysicalParams,
    theta: &[f64],
    gs: &GroundState,
) -> Result<(f64, f64)> {
    let m2 = functionals::mass(u);
    let target = gs.mass_gs * gs.mass_gs;
    if (m2 - target).abs() > MASS_TOL * target {
        return Err(Error::MassMismatch { mass: m2, expected: target });
    }
    let e = functionals::energy(u, params);
    let h = functionals::hardy_functional(u, params);
    if e < -NEGATIVE_ENERGY_TOL * h {
        return Err(Error::NegativeEnergy(e));
    }
    let lhs = momentum_against(u, theta)?.abs();
    let rhs = (2.0 * e.max(0.0)).sqrt() * weighted_density(u, theta)?.sqrt();
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MeshKind};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn setup(n: usize) -> (PhysicalParams, Arc<RadialGrid>) {
        let p = PhysicalParams::critical(3, 0.1).unwrap();
        let g = Arc::new(build_grid(&p, n, 20.0, MeshKind::default()).unwrap());
        (p, g)
    }

    #[test]
    fn gaussian_variance() {
        let (_, g) = setup(8192);
        assert_eq!(variance(&ComplexRadialField::zeros(g.clone())), 0.0);
        let u = ComplexRadialField::from_fn(g, 0.0, |r| Complex64::new((-0.5 * r * r).exp(), 0.0)).unwrap();
        let exact = 1.5 * PI.powf(1.5);
        assert!((variance(&u) - exact).abs() < 1e-5 * exact);
        assert_eq!(variance_rate(&u), 0.0);
    }

    #[test]
    fn variance_scaling() {
        let (_, g) = setup(8192);
        let f = |lam: f64| {
            ComplexRadialField::from_fn(g.clone(), 0.0, move |r| {
                Complex64::new(lam.powf(1.5) * (-0.5 * lam * lam * r * r).exp(), 0.0)
            })
            .unwrap()
        };
        let (a, b) = (variance(&f(1.0)), variance(&f(1.6)));
        assert!((b - a / 1.6f64.powi(2)).abs() < 1e-5 * a);
    }

    #[test]
    fn chirped_gaussian_rate() {
        // u = e^{-ir²/4} e^{-r²/2}: Im(ū ∂_r u) = -r/2 |u|², so Γ' = -2∫r²e^{-r²}.
        let (_, g) = setup(8192);
        let u = ComplexRadialField::from_fn(g, 0.0, |r| Complex64::from_polar((-0.5 * r * r).exp(), -0.25 * r * r))
            .unwrap();
        // ∫_{ℝ³} r² e^{-r²} = (3/2)π^{3/2}, so Γ' = -3π^{3/2}.
        let exact = -3.0 * PI.powf(1.5);
        assert!((variance_rate(&u) - exact).abs() < 1e-5 * exact.abs(), "{}", variance_rate(&u));
    }

    #[test]
    fn critical_accel_is_sixteen_energy() {
        let (p, g) = setup(1024);
        let u =
            ComplexRadialField::from_fn(g, 0.0, |r| Complex64::new(2.0 * (-r * r).exp(), 0.3 * (-r).exp())).unwrap();
        assert_eq!(variance_accel(&u, &p), 16.0 * functionals::energy(&u, &p));
        let sub = PhysicalParams::new(3, 0.1, 2.0).unwrap();
        let coef = 3.0 - 6.0 + 4.0;
        let expect = 16.0 * functionals::energy(&u, &sub) + 4.0 * coef / 3.0 * functionals::lp1_norm(&u, 2.0);
        assert!((variance_accel(&u, &sub) - expect).abs() < 1e-12 * expect.abs());
    }

    #[test]
    fn centred_differences_exact_on_quadratics() {
        let t = [0.1, 0.35, 0.5];
        let y: Vec<f64> = t.iter().map(|t| 3.0 * t * t - t + 2.0).collect();
        let (d1, d2) = centred_differences(&t, &y);
        assert!((d1 - (6.0 * 0.35 - 1.0)).abs() < 1e-12);
        assert!((d2 - 6.0).abs() < 1e-10);
    }

    #[test]
    fn modulated_energy_identity() {
        let (p, g) = setup(2048);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (a, b, w) = (rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0));
            let u = ComplexRadialField::from_fn(g.clone(), 0.0, |r| {
                Complex64::from_polar(a * (-r * r / (w * w)).exp(), b * r)
            })
            .unwrap();
            let theta = bump_theta(&g, rng.gen_range(0.0..3.0), rng.gen_range(0.5..3.0));
            let s = rng.gen_range(-1.0..1.0);
            let m = phase_modulated_energy(&u, &p, s, &theta).unwrap();
            let scale = functionals::hardy_functional(&u, &p).abs().max(m.direct.abs());
            assert!(m.residual.abs() <= 1e-12 * scale, "{m:?}");
        }
        let u = ComplexRadialField::from_fn(g.clone(), 0.0, |r| Complex64::new((-r).exp(), 0.0)).unwrap();
        let m = phase_modulated_energy(&u, &p, 0.0, &quadratic_theta(&g)).unwrap();
        assert_eq!(m.residual, 0.0);
    }

    #[test]
    fn bump_is_compact_and_smooth() {
        let (_, g) = setup(512);
        let b = bump_theta(&g, 2.0, 1.0);
        for (r, v) in g.nodes.iter().zip(&b) {
            if (r - 2.0).abs() >= 1.0 {
                assert_eq!(*v, 0.0);
            } else {
                assert!(*v > 0.0 && *v <= 1.0);
            }
        }
    }
}
