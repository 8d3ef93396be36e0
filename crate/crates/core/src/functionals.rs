//! Mass, Hardy functional, energy, Weinstein quotient and the operator
//! `-Δ - c/|x|²` on radial fields.
//!
//! The Hardy functional is evaluated in ground-state form: with `u = r^σ v`,
//! `H(u) = |S^{N-1}| ∫ |v'|² r^{N+2σ-1} dr`, summed edge by edge with the
//! grid's stiffness weights. The operator is assembled from the same
//! edges so that `⟨Lu, u⟩ = H(u)` holds exactly at the discrete level.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexRadialField;
use crate::grid::RadialGrid;
use crate::params::PhysicalParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub mass_sq: f64,
    pub grad_sq: f64,
    pub hardy_term: f64,
    pub hardy_h: f64,
    pub lp1: f64,
    pub energy: f64,
    /// `None` for the zero field.
    pub weinstein_j: Option<f64>,
}

impl FunctionalReport {
    pub fn evaluate(u: &ComplexRadialField, params: &PhysicalParams) -> Self {
        let mass_sq = mass(u);
        let hardy_h = hardy_functional(u, params);
        let hardy_term = hardy_term(u);
        let lp1 = lp1_norm(u, params.exponent_p);
        Self {
            mass_sq,
            grad_sq: hardy_h + params.coupling_c * hardy_term,
            hardy_term,
            hardy_h,
            lp1,
            energy: 0.5 * hardy_h - lp1 / (params.exponent_p + 1.0),
            weinstein_j: weinstein_from_parts(hardy_h, mass_sq, lp1, params).ok(),
        }
    }

    /// `(1 - c/c*) ‖∇u‖² ≤ H(u) ≤ ‖∇u‖²` up to `tol` (relative to `‖∇u‖²`).
    pub fn hardy_sandwich_holds(&self, params: &PhysicalParams, tol: f64) -> bool {
        let slack = tol * self.grad_sq.abs().max(f64::MIN_POSITIVE);
        (1.0 - params.coupling_c / params.c_star) * self.grad_sq <= self.hardy_h + slack
            && self.hardy_h <= self.grad_sq + slack
    }
}

/// `‖u‖²_{L²}`.
pub fn mass(u: &ComplexRadialField) -> f64 {
    let g = u.grid();
    u.values().iter().zip(&g.quad_weights).map(|(z, w)| z.norm_sqr() * w).sum()
}

/// `∫ |u|²/|x|²`.
pub fn hardy_term(u: &ComplexRadialField) -> f64 {
    let g = u.grid();
    u.values().iter().zip(&g.hardy_weights).map(|(z, w)| z.norm_sqr() * w).sum()
}

/// `H(u) = ∫|∇u|² - c ∫|u|²/|x|²`.
pub fn hardy_functional(u: &ComplexRadialField, params: &PhysicalParams) -> f64 {
    debug_assert_eq!(u.grid().dim_n, params.dim_n);
    hardy_from_regular(u.grid(), &u.regular_factor())
}

/// `‖∇u‖²_{L²}`.
pub fn grad_sq(u: &ComplexRadialField, params: &PhysicalParams) -> f64 {
    hardy_functional(u, params) + params.coupling_c * hardy_term(u)
}

/// `‖u‖^{p+1}_{L^{p+1}}`.
pub fn lp1_norm(u: &ComplexRadialField, p: f64) -> f64 {
    let g = u.grid();
    u.values().iter().zip(&g.quad_weights).map(|(z, w)| z.norm().powf(p + 1.0) * w).sum()
}

/// `E(u) = H(u)/2 - ‖u‖^{p+1}_{L^{p+1}}/(p+1)`.
pub fn energy(u: &ComplexRadialField, params: &PhysicalParams) -> f64 {
    0.5 * hardy_functional(u, params) - lp1_norm(u, params.exponent_p) / (params.exponent_p + 1.0)
}

/// Weinstein quotient `J^{p,N}(u)`.
pub fn weinstein_j(u: &ComplexRadialField, params: &PhysicalParams) -> Result<f64> {
    weinstein_from_parts(hardy_functional(u, params), mass(u), lp1_norm(u, params.exponent_p), params)
}

pub(crate) fn weinstein_from_parts(h: f64, mass_sq: f64, lp1: f64, params: &PhysicalParams) -> Result<f64> {
    if !(lp1 > 0.0) {
        return Err(Error::ZeroField);
    }
    let (a, b) = params.weinstein_exponents();
    Ok(h.max(0.0).powf(a) * mass_sq.powf(0.5 * b) / lp1)
}

/// Slack `J(u) - α` of the sharp Gagliardo–Nirenberg inequality.
pub fn gn_inequality_check(u: &ComplexRadialField, params: &PhysicalParams, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParams(format!("sharp constant {alpha} must be positive")));
    }
    Ok(weinstein_j(u, params)? - alpha)
}

/// `(-Δ - c/r²) u` with a homogeneous Dirichlet condition at `r_max`
/// (the last row is zero).
pub fn apply_linear_operator(u: &ComplexRadialField, _params: &PhysicalParams) -> ComplexRadialField {
    let g = u.grid().clone();
    let v = u.regular_factor();
    let kv = stiffness_apply(&g, &v);
    let n = g.len();
    let mut out: Vec<Complex64> = (0..n).map(|i| kv[i] * (g.r_sigma[i] / g.v_weights[i])).collect();
    out[n - 1] = Complex64::new(0.0, 0.0);
    ComplexRadialField::new(out, g, u.time).expect("finite operator output")
}

/// Quadrature inner product `∫ ū w`.
pub fn inner(u: &ComplexRadialField, w: &ComplexRadialField) -> Complex64 {
    let g = u.grid();
    u.values().iter().zip(w.values()).zip(&g.quad_weights).map(|((a, b), q)| a.conj() * b * q).sum()
}

pub(crate) fn hardy_from_regular<T: RegularSample>(g: &RadialGrid, v: &[T]) -> f64 {
    v.windows(2).zip(&g.stiffness).map(|(w, k)| k * w[1].sub(w[0]).norm2()).sum()
}

/// `(K v)_i = Σ_e κ_e (v_i - v_neighbour)`.
pub(crate) fn stiffness_apply<T>(g: &RadialGrid, v: &[T]) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let n = v.len();
    let k = &g.stiffness;
    (0..n)
        .map(|i| {
            let left = if i > 0 { Some((v[i] - v[i - 1]) * k[i - 1]) } else { None };
            let right = if i + 1 < n { Some((v[i] - v[i + 1]) * k[i]) } else { None };
            match (left, right) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => v[i] * 0.0,
            }
        })
        .collect()
}

/// Edge quadrature of `∫ ∇θ · Im(ū ∇u)`.
pub fn momentum_against(u: &ComplexRadialField, theta: &[f64]) -> Result<f64> {
    let g = u.grid();
    g.check_len(theta.len())?;
    let v = u.regular_factor();
    Ok(edges(g)
        .map(|(e, k)| {
            let dv = v[e + 1] - v[e];
            let vm = 0.5 * (v[e + 1] + v[e]);
            k * (theta[e + 1] - theta[e]) * (vm.conj() * dv).im
        })
        .sum())
}

/// Edge quadrature of `∫ |∇θ|² |u|²`.
pub fn weighted_density(u: &ComplexRadialField, theta: &[f64]) -> Result<f64> {
    let g = u.grid();
    g.check_len(theta.len())?;
    let v = u.regular_factor();
    Ok(edges(g)
        .map(|(e, k)| {
            let dt = theta[e + 1] - theta[e];
            k * dt * dt * (0.5 * (v[e + 1] + v[e])).norm_sqr()
        })
        .sum())
}

fn edges(g: &RadialGrid) -> impl Iterator<Item = (usize, f64)> + '_ {
    g.stiffness.iter().copied().enumerate()
}

pub(crate) trait RegularSample: Copy {
    fn sub(self, o: Self) -> Self;
    fn norm2(self) -> f64;
}

impl RegularSample for f64 {
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn norm2(self) -> f64 {
        self * self
    }
}

impl RegularSample for Complex64 {
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn norm2(self) -> f64 {
        self.norm_sqr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MeshKind};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn setup(c: f64, n: usize, r_max: f64) -> (PhysicalParams, Arc<RadialGrid>) {
        let p = PhysicalParams::critical(3, c).unwrap();
        let g = Arc::new(build_grid(&p, n, r_max, MeshKind::default()).unwrap());
        (p, g)
    }

    fn gaussian(g: &Arc<RadialGrid>) -> ComplexRadialField {
        ComplexRadialField::from_fn(g.clone(), 0.0, |r| Complex64::new((-0.5 * r * r).exp(), 0.0)).unwrap()
    }

    #[test]
    fn zero_field() {
        let (p, g) = setup(0.1, 256, 10.0);
        let z = ComplexRadialField::zeros(g);
        assert_eq!(mass(&z), 0.0);
        assert_eq!(hardy_functional(&z, &p), 0.0);
        assert_eq!(energy(&z, &p), 0.0);
        assert!(matches!(weinstein_j(&z, &p), Err(Error::ZeroField)));
        assert!(apply_linear_operator(&z, &p).values().iter().all(|v| v.norm() == 0.0));
        assert!(FunctionalReport::evaluate(&z, &p).weinstein_j.is_none());
    }

    #[test]
    fn gaussian_moments() {
        // ∫e^{-r²} = π^{3/2}, ∫|∇e^{-r²/2}|² = (3/2)π^{3/2}, ∫e^{-r²}/r² = 2π^{3/2}.
        let (p, g) = setup(0.1, 4096, 12.0);
        let u = gaussian(&g);
        let pi32 = PI.powf(1.5);
        assert!((mass(&u) - pi32).abs() / pi32 < 1e-5);
        let rep = FunctionalReport::evaluate(&u, &p);
        assert!((rep.grad_sq - 1.5 * pi32).abs() / pi32 < 1e-4, "{}", rep.grad_sq);
        assert!((rep.hardy_term - 2.0 * pi32).abs() / pi32 < 1e-3, "{}", rep.hardy_term);
        assert!((rep.hardy_h - (1.5 - 0.2) * pi32).abs() / pi32 < 1e-3);
        assert!((rep.hardy_h - (rep.grad_sq - 0.1 * rep.hardy_term)).abs() < 1e-12);
        assert!(rep.hardy_sandwich_holds(&p, 1e-6));
    }

    #[test]
    fn hardy_term_richardson() {
        // Two resolutions, Richardson-extrapolated, against 2π^{3/2}.
        let ht = |n| {
            let (_, g) = setup(0.1, n, 12.0);
            hardy_term(&gaussian(&g))
        };
        let (a, b) = (ht(1024), ht(2048));
        let extrap = (4.0 * b - a) / 3.0;
        let exact = 2.0 * PI.powf(1.5);
        assert!((extrap - exact).abs() / exact < (b - exact).abs() / exact + 1e-12);
        assert!((extrap - exact).abs() / exact < 1e-5);
    }

    #[test]
    fn phase_invariance_and_homogeneity() {
        let (p, g) = setup(0.15, 1024, 12.0);
        let u = gaussian(&g);
        let ph = u.scale(Complex64::from_polar(1.0, 0.7));
        assert!((mass(&ph) - mass(&u)).abs() < 1e-12);
        assert!((weinstein_j(&ph, &p).unwrap() - weinstein_j(&u, &p).unwrap()).abs() < 1e-12);
        let two = u.scale(Complex64::new(2.0, 0.0));
        let h = hardy_functional(&u, &p);
        let l = lp1_norm(&u, p.exponent_p);
        assert!((hardy_functional(&two, &p) - 4.0 * h).abs() < 1e-11 * h);
        assert!((lp1_norm(&two, p.exponent_p) - 2f64.powf(p.exponent_p + 1.0) * l).abs() < 1e-11 * l);
    }

    fn random_smooth(g: &Arc<RadialGrid>, rng: &mut impl Rng) -> ComplexRadialField {
        let (a, b, w, k) =
            (rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0), rng.gen_range(-2.0..2.0));
        ComplexRadialField::from_fn(g.clone(), 0.0, |r| {
            Complex64::from_polar(a * (-(r / w).powi(2)).exp() * (1.0 + b * r), k * r)
        })
        .unwrap()
    }

    #[test]
    fn operator_quadratic_form_and_symmetry() {
        let (p, g) = setup(0.2, 1024, 15.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let u = random_smooth(&g, &mut rng);
            let w = random_smooth(&g, &mut rng);
            let lu = apply_linear_operator(&u, &p);
            let lw = apply_linear_operator(&w, &p);
            let h = hardy_functional(&u, &p);
            let q = inner(&u, &lu);
            assert!((q.re - h).abs() < 1e-10 * h && q.im.abs() < 1e-10 * h);
            let (a, b) = (inner(&lu, &w), inner(&u, &lw));
            assert!((a - b).norm() < 1e-10 * a.norm().max(1.0));
        }
    }

    #[test]
    fn weinstein_scale_invariance_exact_resampling() {
        // u^{λ,μ}(x) = μ u(λx) sampled exactly from the closed form.
        let (p, g) = setup(0.1, 4096, 30.0);
        let f = |r: f64| (-(r * r) / 2.0).exp() * (1.0 + 0.3 * r);
        let base = ComplexRadialField::from_fn(g.clone(), 0.0, |r| Complex64::new(f(r), 0.0)).unwrap();
        let j0 = weinstein_j(&base, &p).unwrap();
        for (lam, mu) in [(0.5, 2.0), (1.7, 0.6), (2.0, 1.3)] {
            let s = ComplexRadialField::from_fn(g.clone(), 0.0, |r| Complex64::new(mu * f(lam * r), 0.0)).unwrap();
            let j = weinstein_j(&s, &p).unwrap();
            assert!((j - j0).abs() / j0 < 1e-5, "λ = {lam}: {j} vs {j0}");
        }
    }
}
