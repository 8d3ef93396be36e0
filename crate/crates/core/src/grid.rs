//! Radial meshes graded towards the origin, with quadrature weights that
//! absorb the `r^σ` behaviour of fields near the inverse-square singularity.
//!
//! Every field `u` is paired with its regular factor `v = r^{-σ} u`. The
//! quadratic form of `-Δ - c/r²` then reduces to `|S^{N-1}| ∫ |v'|² r^{d-1} dr`
//! with `d = N + 2σ`, which is discretized edge by edge with exact cell
//! integrals of `r^{d-1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::PhysicalParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeshKind {
    /// `r_i = r_max ((i+1)/n)^γ`.
    GradedPower { gamma: f64 },
    /// `r_i = r_min (r_max/r_min)^{i/(n-1)}`.
    Logarithmic { r_min: f64 },
}

impl Default for MeshKind {
    fn default() -> Self {
        MeshKind::GradedPower { gamma: 2.0 }
    }
}

/// Everything needed to rebuild a grid bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridDescriptor {
    pub n_points: usize,
    pub r_max: f64,
    pub mesh_kind: MeshKind,
}

impl Default for GridDescriptor {
    fn default() -> Self {
        Self { n_points: 8192, r_max: 30.0, mesh_kind: MeshKind::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    pub nodes: Vec<f64>,
    /// `Σ w_i f(r_i) ≈ ∫_{ℝ^N} f(|x|) dx`, sphere area included.
    pub quad_weights: Vec<f64>,
    pub r_max: f64,
    pub sigma: f64,
    pub mesh_kind: MeshKind,
    pub dim_n: u32,
    pub sphere_area: f64,
    /// Weights for `∫ |u|²/|x|²`, exact when `v` is constant on each cell.
    pub(crate) hardy_weights: Vec<f64>,
    /// Cell masses of `v`: `w_i r_i^{2σ}`.
    pub(crate) v_weights: Vec<f64>,
    /// Edge stiffness `|S| ∫_{r_e}^{r_{e+1}} r^{d-1} dr / h_e²`.
    pub(crate) stiffness: Vec<f64>,
    /// `r_i^σ`.
    pub(crate) r_sigma: Vec<f64>,
}

/// Surface area of the unit sphere `S^{N-1}`.
pub fn sphere_area(dim_n: u32) -> f64 {
    use std::f64::consts::PI;
    match dim_n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        n => 2.0 * PI / (f64::from(n) - 2.0) * sphere_area(n - 2),
    }
}

/// `∫_a^b r^{q-1} dr` for `q > 0`, accurate for short intervals.
fn power_integral(a: f64, b: f64, q: f64) -> f64 {
    if a <= 0.0 {
        return b.powf(q) / q;
    }
    a.powf(q) * (q * ((b - a) / a).ln_1p()).exp_m1() / q
}

pub fn build_grid(params: &PhysicalParams, n_points: usize, r_max: f64, mesh_kind: MeshKind) -> Result<RadialGrid> {
    if n_points < 16 {
        return Err(Error::InvalidParams(format!("n_points = {n_points} must be at least 16")));
    }
    if !(r_max.is_finite() && r_max > 0.0) {
        return Err(Error::InvalidParams(format!("r_max = {r_max} must be positive")));
    }
    let n = n_points;
    let nodes: Vec<f64> = match mesh_kind {
        MeshKind::GradedPower { gamma } => {
            if !(gamma.is_finite() && gamma >= 1.0) {
                return Err(Error::InvalidParams(format!("grading exponent {gamma} must be >= 1")));
            }
            (0..n).map(|i| r_max * ((i + 1) as f64 / n as f64).powf(gamma)).collect()
        }
        MeshKind::Logarithmic { r_min } => {
            if !(r_min > 0.0 && r_min < r_max) {
                return Err(Error::InvalidParams(format!("r_min = {r_min} must lie in (0, r_max)")));
            }
            let ratio = (r_max / r_min).ln();
            (0..n).map(|i| if i == n - 1 { r_max } else { r_min * (ratio * i as f64 / (n - 1) as f64).exp() }).collect()
        }
    };
    if nodes.windows(2).any(|w| w[1] <= w[0]) || nodes[0] <= 0.0 {
        return Err(Error::InvalidParams("mesh nodes are not strictly increasing".into()));
    }
    Ok(assemble(params, nodes, r_max, mesh_kind))
}

pub fn build_grid_from(params: &PhysicalParams, desc: &GridDescriptor) -> Result<RadialGrid> {
    build_grid(params, desc.n_points, desc.r_max, desc.mesh_kind)
}

fn assemble(params: &PhysicalParams, nodes: Vec<f64>, r_max: f64, mesh_kind: MeshKind) -> RadialGrid {
    let n = nodes.len();
    let sigma = params.sigma();
    let d = params.n() + 2.0 * sigma;
    let area = sphere_area(params.dim_n);

    let mut bounds = Vec::with_capacity(n + 1);
    bounds.push(0.0);
    for w in nodes.windows(2) {
        bounds.push(0.5 * (w[0] + w[1]));
    }
    bounds.push(r_max);

    let r_sigma: Vec<f64> = nodes.iter().map(|r| r.powf(sigma)).collect();
    let v_weights: Vec<f64> = (0..n).map(|i| area * power_integral(bounds[i], bounds[i + 1], d)).collect();
    let quad_weights: Vec<f64> = (0..n).map(|i| v_weights[i] / (r_sigma[i] * r_sigma[i])).collect();
    let hardy_weights: Vec<f64> =
        (0..n).map(|i| area * power_integral(bounds[i], bounds[i + 1], d - 2.0) / (r_sigma[i] * r_sigma[i])).collect();
    let stiffness: Vec<f64> = nodes
        .windows(2)
        .map(|w| {
            let h = w[1] - w[0];
            area * power_integral(w[0], w[1], d) / (h * h)
        })
        .collect();

    RadialGrid {
        nodes,
        quad_weights,
        r_max,
        sigma,
        mesh_kind,
        dim_n: params.dim_n,
        sphere_area: area,
        hardy_weights,
        v_weights,
        stiffness,
        r_sigma,
    }
}

impl RadialGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor { n_points: self.len(), r_max: self.r_max, mesh_kind: self.mesh_kind }
    }

    /// Effective dimension `N + 2σ` of the regular factor.
    pub fn effective_dim(&self) -> f64 {
        f64::from(self.dim_n) + 2.0 * self.sigma
    }

    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f.len())?;
        Ok(f.iter().zip(&self.quad_weights).map(|(f, w)| f * w).sum())
    }

    pub fn integrate_complex(&self, f: &[num_complex::Complex64]) -> Result<num_complex::Complex64> {
        self.check_len(f.len())?;
        Ok(f.iter().zip(&self.quad_weights).map(|(f, w)| f * w).sum())
    }

    pub(crate) fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got });
        }
        Ok(())
    }

    /// First node index with `r_i >= r`.
    pub fn index_at_or_above(&self, r: f64) -> usize {
        self.nodes.partition_point(|&x| x < r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params(c: f64) -> PhysicalParams {
        PhysicalParams::critical(3, c).unwrap()
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn grid_invariants() {
        for kind in [MeshKind::GradedPower { gamma: 2.0 }, MeshKind::Logarithmic { r_min: 1e-5 }] {
            let g = build_grid(&params(0.1875), 512, 30.0, kind).unwrap();
            assert!(g.nodes[0] > 0.0);
            assert_eq!(*g.nodes.last().unwrap(), 30.0);
            assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
            assert!(g.quad_weights.iter().all(|&w| w > 0.0));
            assert!((g.sigma + 0.25).abs() < 1e-15);
            assert!(g.sigma < 0.0 && g.sigma > -0.5);
        }
        assert!(build_grid(&params(0.1), 8, 30.0, MeshKind::default()).is_err());
        assert!(build_grid(&params(0.1), 64, -1.0, MeshKind::default()).is_err());
    }

    #[test]
    fn sigma_limits() {
        let g = build_grid(&params(1e-12), 64, 10.0, MeshKind::default()).unwrap();
        assert!(g.sigma < 0.0 && g.sigma > -1e-5);
    }

    #[test]
    fn integrates_zero_and_gaussian() {
        let g = build_grid(&params(0.1875), 4096, 30.0, MeshKind::default()).unwrap();
        assert_eq!(g.integrate(&vec![0.0; g.len()]).unwrap(), 0.0);
        let f: Vec<f64> = g.nodes.iter().map(|r| (-r * r).exp()).collect();
        let exact = PI.powf(1.5);
        assert!((g.integrate(&f).unwrap() - exact).abs() / exact < 1e-5);
        assert!(matches!(g.integrate(&f[1..]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn ball_volume_converges() {
        let exact = 4.0 * PI / 3.0;
        // The jump at r = 1 limits the rule to first order.
        let err = |n| {
            let g = build_grid(&params(0.1), n, 3.0, MeshKind::default()).unwrap();
            let f: Vec<f64> = g.nodes.iter().map(|&r| if r < 1.0 { 1.0 } else { 0.0 }).collect();
            (g.integrate(&f).unwrap() - exact).abs()
        };
        let (coarse, fine) = (err(256), err(4096));
        assert!(fine < coarse / 4.0, "{coarse} -> {fine}");
        assert!(fine < 5e-3);
    }

    #[test]
    fn gaussian_quadrature_second_order() {
        // Smooth integrand: error should drop by ~4 per doubling.
        let exact = PI.powf(1.5);
        let err = |n| {
            let g = build_grid(&params(0.1), n, 12.0, MeshKind::default()).unwrap();
            let f: Vec<f64> = g.nodes.iter().map(|r| (-r * r).exp()).collect();
            (g.integrate(&f).unwrap() - exact).abs()
        };
        let (e1, e2) = (err(256), err(512));
        assert!(e1 / e2 > 3.0, "{e1} {e2}");
    }
}
