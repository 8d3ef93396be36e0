//! The pseudo-conformal transformation and the explicit minimal-mass
//! blow-up family
//!
//! ```text
//! S(t,x) = e^{iγ₀} e^{iλ₀²/(T-t)} e^{-i|x|²/(4(T-t))} (λ₀/(T-t))^{N/2} Q(λ₀x/(T-t)).
//! ```

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexRadialField;
use crate::functionals;
use crate::grid::RadialGrid;
use crate::ground_state::GroundState;
use crate::virial;

/// Nodes that must resolve the unit core of a transformed field.
const CORE_NODES: usize = 32;

#[derive(Debug, Clone)]
pub struct BlowupFamilyParams {
    pub blowup_time_t: f64,
    pub lambda0: f64,
    pub gamma0: f64,
    pub ground_state: Arc<GroundState>,
}

/// The scalar part of [`BlowupFamilyParams`], as stored in configs and
/// run summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySettings {
    pub blowup_time_t: f64,
    pub lambda0: f64,
    pub gamma0: f64,
}

impl Default for FamilySettings {
    fn default() -> Self {
        Self { blowup_time_t: 1.0, lambda0: 1.0, gamma0: 0.0 }
    }
}

impl BlowupFamilyParams {
    pub fn new(blowup_time_t: f64, lambda0: f64, gamma0: f64, ground_state: Arc<GroundState>) -> Result<Self> {
        if !(blowup_time_t > 0.0 && blowup_time_t.is_finite()) {
            return Err(Error::InvalidParams(format!("blow-up time T = {blowup_time_t} must be positive")));
        }
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return Err(Error::InvalidParams(format!("λ₀ = {lambda0} must be positive")));
        }
        if !gamma0.is_finite() {
            return Err(Error::InvalidParams("γ₀ must be finite".into()));
        }
        Ok(Self { blowup_time_t, lambda0, gamma0, ground_state })
    }

    pub fn from_settings(s: FamilySettings, ground_state: Arc<GroundState>) -> Result<Self> {
        Self::new(s.blowup_time_t, s.lambda0, s.gamma0, ground_state)
    }

    pub fn settings(&self) -> FamilySettings {
        FamilySettings { blowup_time_t: self.blowup_time_t, lambda0: self.lambda0, gamma0: self.gamma0 }
    }

    fn remaining(&self, t: f64) -> Result<f64> {
        let tau = self.blowup_time_t - t;
        if !(tau > 0.0) {
            return Err(Error::AtOrPastBlowup { t, blowup_time: self.blowup_time_t });
        }
        Ok(tau)
    }

    /// Concentration scale `λ(t) = λ₀/(T-t)`.
    pub fn lambda_at(&self, t: f64) -> Result<f64> {
        Ok(self.lambda0 / self.remaining(t)?)
    }

    /// Latest time the grid can represent, `λ(t) = λ_max`.
    pub fn last_resolved_time(&self) -> f64 {
        let (_, hi) = self.ground_state.lambda_range();
        self.blowup_time_t - self.lambda0 / hi
    }

    /// Asymptotic constant `C = λ₀ ‖∇Q‖` in `‖∇S(t)‖ ~ C/(T-t)`.
    pub fn blowup_constant(&self) -> f64 {
        let gs = &self.ground_state;
        self.lambda0 * functionals::grad_sq(&gs.field(), &gs.params).sqrt()
    }
}

/// Samples `S(t)` on the ground state's grid.
pub fn exact_solution(fam: &BlowupFamilyParams, t: f64) -> Result<ComplexRadialField> {
    let tau = fam.remaining(t)?;
    let gs = &fam.ground_state;
    let lambda = fam.lambda0 / tau;
    let (lo, hi) = gs.lambda_range();
    if lambda < lo || lambda > hi {
        return Err(Error::ResampleOutOfRange(format!("λ(t) = {lambda:.6e} at t = {t} outside [{lo:.4e}, {hi:.4e}]")));
    }
    let amp = lambda.powf(gs.params.n() / 2.0);
    let global = fam.gamma0 + fam.lambda0 * fam.lambda0 / tau;
    let n = gs.grid.len();
    let values = gs
        .grid
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i + 1 == n {
                return Complex64::new(0.0, 0.0);
            }
            Complex64::from_polar(amp * gs.sample(lambda * r), global - r * r / (4.0 * tau))
        })
        .collect();
    ComplexRadialField::new(values, gs.grid.clone(), t)
}

/// `e^{iγ₀} e^{iλ₀²t} λ₀^{N/2} Q(λ₀x)`.
pub fn standing_wave(gs: &GroundState, lambda0: f64, gamma0: f64, t: f64) -> Result<ComplexRadialField> {
    let q = crate::ground_state::scaled_ground_state(gs, lambda0)?;
    let phase = Complex64::from_polar(1.0, gamma0 + lambda0 * lambda0 * t);
    Ok(q.scale(phase).with_time(t))
}

/// `u_T(t,x) = e^{-i|x|²/(4(T-t))} (T-t)^{-N/2} u(1/(T-t), x/(T-t))`, where
/// `source(s)` returns the global solution at time `s`. The result lives on
/// `grid`.
pub fn pseudo_conformal_transform<F>(
    source: F,
    grid: &Arc<RadialGrid>,
    blowup_time_t: f64,
    t: f64,
) -> Result<ComplexRadialField>
where
    F: Fn(f64) -> Result<ComplexRadialField>,
{
    let tau = blowup_time_t - t;
    if !(tau > 0.0) {
        return Err(Error::AtOrPastBlowup { t, blowup_time: blowup_time_t });
    }
    let u = source(1.0 / tau)?;
    let src = u.grid();
    if u.values().iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Ok(ComplexRadialField::zeros(grid.clone()).with_time(t));
    }
    let reach = support_radius(&u) * tau;
    if reach > grid.r_max {
        return Err(Error::ResampleOutOfRange(format!(
            "transformed support {reach:.4e} exceeds r_max = {}",
            grid.r_max
        )));
    }
    if tau < grid.nodes[CORE_NODES.min(grid.len() - 1)] {
        return Err(Error::ResampleOutOfRange(format!("T - t = {tau:.4e} below grid resolution")));
    }
    let dim = src.dim_n as f64;
    let amp = tau.powf(-dim / 2.0);
    let sampler = u.sampler();
    let n = grid.len();
    let values = grid
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i + 1 == n {
                return Complex64::new(0.0, 0.0);
            }
            sampler.eval(r / tau) * Complex64::from_polar(amp, -r * r / (4.0 * tau))
        })
        .collect();
    ComplexRadialField::new(values, grid.clone(), t)
}

/// Radius beyond which `u` carries less than `1e-12` of its mass.
fn support_radius(u: &ComplexRadialField) -> f64 {
    let g = u.grid();
    let total = functionals::mass(u);
    let mut tail = 0.0;
    for i in (0..g.len()).rev() {
        tail += g.quad_weights[i] * u.values()[i].norm_sqr();
        if tail > 1e-12 * total {
            return g.nodes[i];
        }
    }
    g.nodes[0]
}

/// `‖∇S(t)‖` from the closed form
/// `‖∇S(t)‖² = λ(t)² ‖∇Q‖² + Γ(Q) / (4λ₀²)`, `λ(t) = λ₀/(T-t)`.
pub fn predicted_blowup_speed(fam: &BlowupFamilyParams, t: f64) -> Result<f64> {
    let lambda = fam.lambda_at(t)?;
    let gs = &fam.ground_state;
    let q = gs.field();
    let g2 = functionals::grad_sq(&q, &gs.params);
    let gamma = virial::variance(&q);
    Ok((lambda * lambda * g2 + gamma / (4.0 * fam.lambda0 * fam.lambda0)).sqrt())
}
