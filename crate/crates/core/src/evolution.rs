//! Time integration of `i u_t + Δu + c u/|x|² + |u|^{p-1}u = 0` for radial
//! data, blow-up detection and rate fitting.
//!
//! In the regular factor `v = r^{-σ}u` the linear part reads
//! `i M v_t = K v` with the lumped mass `M` and the Hardy stiffness `K`, so
//! the Crank–Nicolson step `(M + i dt/2 K) v⁺ = (M - i dt/2 K) v` is a
//! Cayley transform and conserves the discrete mass exactly.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fmt_f64, ComplexRadialField};
use crate::functionals;
use crate::grid::RadialGrid;
use crate::ground_state::GroundState;
use crate::params::PhysicalParams;
use crate::tridiag;
use crate::virial;

/// Mass fraction allowed beyond `0.8 r_max` for a run to count as certified.
pub const TAIL_TOL: f64 = 1e-8;
/// Default blow-up level relative to `H(u0)`.
pub const BLOWUP_FACTOR: f64 = 1e4;
/// Fixed-point tolerance of the energy-conserving scheme.
const RELAXATION_TOL: f64 = 1e-13;
const RELAXATION_FLOOR: f64 = 1e-11;
const RELAXATION_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact nonlinear phase half steps around a Crank–Nicolson linear step.
    StrangSplit,
    /// Energy-conserving Crank–Nicolson (Delfour–Fortin–Payre), solved by
    /// fixed-point iteration.
    Relaxation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt_initial: f64,
    pub dt_min: f64,
    /// `dt = dt_initial · H(u0)/H(u)`, capped at `dt_initial`.
    pub adapt: bool,
    pub scheme: Scheme,
    pub t_end: f64,
    pub snapshot_stride: usize,
    /// `None` means `1e4 · H(u0)`.
    pub h_blowup_threshold: Option<f64>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dt_initial: 1e-3,
            dt_min: 1e-7,
            adapt: true,
            scheme: Scheme::StrangSplit,
            t_end: 1.0,
            snapshot_stride: 10,
            h_blowup_threshold: None,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_initial > 0.0 && self.dt_min > 0.0 && self.dt_min <= self.dt_initial) {
            return Err(Error::InvalidParams(format!(
                "need 0 < dt_min <= dt_initial, got dt_min = {}, dt_initial = {}",
                self.dt_min, self.dt_initial
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParams(format!("t_end = {} must be positive", self.t_end)));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidParams("snapshot_stride must be at least 1".into()));
        }
        if let Some(h) = self.h_blowup_threshold {
            if !(h > 0.0) {
                return Err(Error::InvalidParams(format!("h_blowup_threshold = {h} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ReachedTEnd,
    BlowupDetected,
    DtUnderflow,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDiagnostics {
    pub times: Vec<f64>,
    pub mass_series: Vec<f64>,
    pub energy_series: Vec<f64>,
    pub hardy_series: Vec<f64>,
    pub gradnorm_series: Vec<f64>,
    pub variance_series: Vec<f64>,
    pub variance_rate_series: Vec<f64>,
    pub terminated: Option<Termination>,
    /// Largest mass fraction seen beyond `0.8 r_max`.
    pub max_tail_fraction: f64,
    /// Whether every recorded state satisfied the Hardy sandwich.
    pub hardy_sandwich_ok: bool,
}

impl TrajectoryDiagnostics {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn tail_certified(&self) -> bool {
        self.max_tail_fraction <= TAIL_TOL
    }

    fn record(&mut self, u: &ComplexRadialField, params: &PhysicalParams) {
        let rep = functionals::FunctionalReport::evaluate(u, params);
        self.times.push(u.time);
        self.mass_series.push(rep.mass_sq);
        self.energy_series.push(rep.energy);
        self.hardy_series.push(rep.hardy_h);
        self.gradnorm_series.push(rep.grad_sq.max(0.0).sqrt());
        self.variance_series.push(virial::variance(u));
        self.variance_rate_series.push(virial::variance_rate(u));
        self.max_tail_fraction = self.max_tail_fraction.max(tail_fraction(u));
        self.hardy_sandwich_ok &= rep.hardy_sandwich_holds(params, 1e-10);
    }

    /// Writes `t,mass,energy,H,gradnorm,variance,variance_rate`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "mass", "energy", "H", "gradnorm", "variance", "variance_rate"])?;
        for i in 0..self.len() {
            wr.write_record([
                fmt_f64(self.times[i]),
                fmt_f64(self.mass_series[i]),
                fmt_f64(self.energy_series[i]),
                fmt_f64(self.hardy_series[i]),
                fmt_f64(self.gradnorm_series[i]),
                fmt_f64(self.variance_series[i]),
                fmt_f64(self.variance_rate_series[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Largest relative mass change per unit time against the first sample.
    pub fn mass_drift_rate(&self) -> f64 {
        drift_rate(&self.times, &self.mass_series, self.mass_series.first().copied().unwrap_or(0.0).abs())
    }

    /// Largest energy change per unit time, relative to `max(|E(u0)|, H(u0))`
    /// (the energy of near-threshold data is a small difference).
    pub fn energy_drift_rate(&self) -> f64 {
        let scale = self
            .energy_series
            .first()
            .map(|e| e.abs())
            .unwrap_or(0.0)
            .max(self.hardy_series.first().copied().unwrap_or(0.0));
        drift_rate(&self.times, &self.energy_series, scale)
    }
}

fn drift_rate(times: &[f64], series: &[f64], scale: f64) -> f64 {
    if times.len() < 2 || scale == 0.0 {
        return 0.0;
    }
    let span = times[times.len() - 1] - times[0];
    let dev = series.iter().map(|x| (x - series[0]).abs()).fold(0.0, f64::max);
    dev / scale / span.max(1.0)
}

/// Mass fraction beyond `0.8 r_max`.
pub fn tail_fraction(u: &ComplexRadialField) -> f64 {
    let (inner, outer) = mass_split(u, 0.8 * u.grid().r_max);
    if outer == 0.0 {
        0.0
    } else {
        outer / (inner + outer)
    }
}

/// Fraction of the mass inside `|x| < radius`; the cumulative mass is
/// interpolated linearly between quadrature cell boundaries.
pub fn mass_concentration(u: &ComplexRadialField, radius: f64) -> f64 {
    let (inner, outer) = mass_split(u, radius);
    if inner == 0.0 {
        0.0
    } else {
        inner / (inner + outer)
    }
}

/// Mass inside and outside `radius`, each summed on its own side.
fn mass_split(u: &ComplexRadialField, radius: f64) -> (f64, f64) {
    let g = u.grid();
    let n = g.len();
    let (mut inner, mut outer) = (0.0, 0.0);
    let mut lo = 0.0;
    for i in 0..n {
        let hi = if i + 1 < n { 0.5 * (g.nodes[i] + g.nodes[i + 1]) } else { g.r_max };
        let cell = g.quad_weights[i] * u.values()[i].norm_sqr();
        if radius >= hi {
            inner += cell;
        } else if radius <= lo {
            outer += cell;
        } else {
            let f = (radius - lo) / (hi - lo);
            inner += cell * f;
            outer += cell * (1.0 - f);
        }
        lo = hi;
    }
    (inner, outer)
}

/// Advances `u` by `dt` (negative `dt` integrates backwards).
pub fn step(
    u: &ComplexRadialField,
    dt: f64,
    params: &PhysicalParams,
    cfg: &EvolutionConfig,
) -> Result<ComplexRadialField> {
    if !(dt.is_finite() && dt != 0.0) {
        return Err(Error::InvalidParams(format!("time step {dt} must be finite and nonzero")));
    }
    let grid = u.grid();
    let mut prop = Propagator::new(grid, params);
    let mut v = u.regular_factor();
    match cfg.scheme {
        Scheme::StrangSplit => {
            prop.phase(&mut v, 0.5 * dt);
            prop.linear(&mut v, dt)?;
            prop.phase(&mut v, 0.5 * dt);
        }
        Scheme::Relaxation => prop.relaxation(&mut v, dt)?,
    }
    finite_field(&v, grid, u.time + dt)
}

fn finite_field(v: &[Complex64], grid: &Arc<RadialGrid>, time: f64) -> Result<ComplexRadialField> {
    if let Some(i) = v.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite(i));
    }
    Ok(ComplexRadialField::from_regular_factor(v, grid.clone(), time))
}

/// Stepping kernels acting on the regular factor `v`; the last entry is the
/// Dirichlet node and stays zero.
struct Propagator<'a> {
    grid: &'a RadialGrid,
    p: f64,
    /// `r^{σ(p-1)}`, so that `|u|^{p-1} = r^{σ(p-1)} |v|^{p-1}`.
    phase_weight: Vec<f64>,
    /// `r^{2σ}`.
    r2s: Vec<f64>,
    quotient: Quotient,
    /// Diagonal of `K`.
    k_diag: Vec<f64>,
    work: Workspace,
}

#[derive(Default)]
struct Workspace {
    lower: Vec<Complex64>,
    diag: Vec<Complex64>,
    upper: Vec<Complex64>,
    rhs: Vec<Complex64>,
    base: Vec<Complex64>,
    scratch: Vec<Complex64>,
    next: Vec<Complex64>,
    cand: Vec<Complex64>,
    rho: Vec<f64>,
    rho_root: Vec<f64>,
    quot: Vec<f64>,
}

impl<'a> Propagator<'a> {
    fn new(grid: &'a RadialGrid, params: &PhysicalParams) -> Self {
        let p = params.exponent_p;
        let k = &grid.stiffness;
        let m = grid.len() - 1;
        Self {
            grid,
            p,
            phase_weight: grid.r_sigma.iter().map(|s| s.powf(p - 1.0)).collect(),
            r2s: grid.r_sigma.iter().map(|s| s * s).collect(),
            quotient: Quotient::new(params),
            k_diag: (0..m).map(|i| k[i] + if i > 0 { k[i - 1] } else { 0.0 }).collect(),
            work: Workspace::default(),
        }
    }

    fn interior(&self) -> usize {
        self.grid.len() - 1
    }

    /// `v → e^{i s |u|^{p-1}} v`, the exact flow of `i u_t = -|u|^{p-1}u`.
    fn phase(&self, v: &mut [Complex64], s: f64) {
        let q = 0.5 * (self.p - 1.0);
        let m = self.interior();
        for (vi, &w) in v[..m].iter_mut().zip(&self.phase_weight[..m]) {
            let (sn, cs) = (s * w * pow_half(vi.norm_sqr(), q)).sin_cos();
            *vi *= Complex64::new(cs, sn);
        }
    }

    /// Applies the half phase still owed by fused Strang steps.
    fn settle(&self, v: &mut [Complex64], owed: &mut f64) {
        if *owed != 0.0 {
            self.phase(v, *owed);
            *owed = 0.0;
        }
    }

    /// `(M - i dt/2 K) v` on the interior rows, into `out`.
    fn explicit_half(&self, v: &[Complex64], dt: f64, out: &mut Vec<Complex64>) {
        let g = self.grid;
        let k = &g.stiffness;
        let is = Complex64::new(0.0, 0.5 * dt);
        out.clear();
        out.extend((0..self.interior()).map(|i| {
            let mut kv = k[i] * (v[i] - v[i + 1]);
            if i > 0 {
                kv += k[i - 1] * (v[i] - v[i - 1]);
            }
            g.v_weights[i] * v[i] - is * kv
        }));
    }

    /// Off-diagonals of `M + i dt/2 K`.
    fn off_diagonals(&mut self, dt: f64) {
        let k = &self.grid.stiffness;
        let m = self.interior();
        let is = Complex64::new(0.0, 0.5 * dt);
        let w = &mut self.work;
        w.lower.clear();
        w.upper.clear();
        w.lower.extend((0..m).map(|i| if i > 0 { -is * k[i - 1] } else { Complex64::new(0.0, 0.0) }));
        w.upper.extend((0..m).map(|i| if i + 1 < m { -is * k[i] } else { Complex64::new(0.0, 0.0) }));
    }

    /// Diagonal of `M + i dt/2 K - i dt/2 M diag(quot)`, or without the
    /// last term when `with_quot` is false.
    fn fill_diagonal(&mut self, dt: f64, with_quot: bool) {
        let g = self.grid;
        let w = &mut self.work;
        w.diag.clear();
        for i in 0..self.k_diag.len() {
            let extra = if with_quot { g.v_weights[i] * w.quot[i] } else { 0.0 };
            w.diag.push(Complex64::new(g.v_weights[i], 0.5 * dt * (self.k_diag[i] - extra)));
        }
    }

    fn linear(&mut self, v: &mut Vec<Complex64>, dt: f64) -> Result<()> {
        let mut rhs = std::mem::take(&mut self.work.rhs);
        self.explicit_half(v, dt, &mut rhs);
        self.off_diagonals(dt);
        self.fill_diagonal(dt, false);
        let w = &mut self.work;
        let res = tridiag::solve_into(&w.lower, &w.diag, &w.upper, &rhs, &mut w.scratch, v);
        w.rhs = rhs;
        res?;
        v.push(Complex64::new(0.0, 0.0));
        Ok(())
    }

    /// `i M (v⁺ - v)/dt = K v_m - M G v_m`, `v_m = (v⁺ + v)/2`, with the
    /// difference quotient `G = 2/(p+1) (ρ⁺^{(p+1)/2} - ρ^{(p+1)/2}) / (ρ⁺ - ρ)`
    /// of `ρ = |u|²`, which makes the discrete energy an exact invariant. `G`
    /// is iterated to a fixed point with `v⁺` implicit in each sweep.
    fn relaxation(&mut self, v: &mut Vec<Complex64>, dt: f64) -> Result<()> {
        let m = self.interior();
        let mut w = std::mem::take(&mut self.work);
        w.rho.clear();
        w.rho.extend((0..m).map(|i| v[i].norm_sqr() * self.r2s[i]));
        w.rho_root.clear();
        w.rho_root.extend(w.rho.iter().map(|&x| self.quotient.root(x)));
        self.explicit_half(v, dt, &mut w.base);
        let mut next = std::mem::take(&mut w.next);
        next.clone_from(v);
        self.work = w;
        self.phase(&mut next, 0.5 * dt);
        self.linear(&mut next, dt)?;
        self.phase(&mut next, 0.5 * dt);
        let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let ihalf = Complex64::new(0.0, 0.5 * dt);
        let mut last = f64::INFINITY;
        for _ in 0..RELAXATION_MAX_ITER {
            {
                let w = &mut self.work;
                let q = &self.quotient;
                w.quot.clear();
                w.quot.extend((0..m).map(|i| {
                    let b = next[i].norm_sqr() * self.r2s[i];
                    q.eval(w.rho[i], w.rho_root[i], b, q.root(b))
                }));
                w.rhs.clear();
                w.rhs.extend((0..m).map(|i| w.base[i] + ihalf * (self.grid.v_weights[i] * w.quot[i]) * v[i]));
            }
            self.fill_diagonal(dt, true);
            let w = &mut self.work;
            tridiag::solve_into(&w.lower, &w.diag, &w.upper, &w.rhs, &mut w.scratch, &mut w.cand)?;
            w.cand.push(Complex64::new(0.0, 0.0));
            let change = w.cand.iter().zip(&next).map(|(a, b)| (a - b).norm_sqr()).fold(0.0, f64::max).sqrt();
            std::mem::swap(&mut next, &mut w.cand);
            // Near the tolerance the sweeps can cycle at the rounding level.
            if change <= RELAXATION_TOL * scale || (change >= last && change <= RELAXATION_FLOOR * scale) {
                std::mem::swap(v, &mut next);
                w.next = next;
                return Ok(());
            }
            last = change;
        }
        Err(Error::NoConvergence(format!("energy-conserving step did not converge with dt = {dt:e}")))
    }
}

/// `x^q`, with the exponents of the critical cases N = 3, 4 done cheaply.
fn pow_half(x: f64, q: f64) -> f64 {
    if q == 0.5 {
        x.sqrt()
    } else if (q - 2.0 / 3.0).abs() < 1e-15 {
        let c = cbrt(x);
        c * c
    } else {
        x.powf(q)
    }
}

/// Cube root from a bit-level estimate refined by three Halley steps;
/// within a few ulp of `f64::cbrt` and several times faster.
fn cbrt(x: f64) -> f64 {
    if !(x.is_normal() && x > 0.0) {
        return x.cbrt();
    }
    let mut y = f64::from_bits(x.to_bits() / 3 + 0x2A9F_7893_782D_A1CE);
    for _ in 0..3 {
        let y3 = y * y * y;
        y *= (y3 + 2.0 * x) / (2.0 * y3 + x);
    }
    y
}

/// `G(a, b) = (b^q - a^q) / (q (b - a))`, `q = (p+1)/2`, the difference
/// quotient that makes the discrete energy exact.
enum Quotient {
    /// `p = 1 + 4/N`: with `x = a^{1/N}`, `y = b^{1/N}` the quotient is a
    /// ratio of geometric sums and has no cancellation.
    Critical(u32),
    General(f64),
}

impl Quotient {
    fn new(params: &PhysicalParams) -> Self {
        if params.is_critical() && params.dim_n <= 16 {
            Quotient::Critical(params.dim_n)
        } else {
            Quotient::General(params.exponent_p)
        }
    }

    fn root(&self, x: f64) -> f64 {
        match *self {
            Quotient::Critical(3) => cbrt(x),
            Quotient::Critical(4) => x.sqrt().sqrt(),
            Quotient::Critical(n) => x.powf(1.0 / n as f64),
            Quotient::General(_) => x,
        }
    }

    /// `ra`, `rb` are [`Quotient::root`] of `a`, `b`.
    fn eval(&self, a: f64, ra: f64, b: f64, rb: f64) -> f64 {
        match *self {
            Quotient::Critical(n) => {
                // hi² Σ_{k<n+2} t^k / (q Σ_{k<n} t^k) with t = lo/hi.
                let (lo, hi) = if ra <= rb { (ra, rb) } else { (rb, ra) };
                if hi == 0.0 {
                    return 0.0;
                }
                let t = lo / hi;
                let (mut num, mut den, mut tk) = (0.0, 0.0, 1.0);
                for k in 0..n + 2 {
                    if k < n {
                        den += tk;
                    }
                    num += tk;
                    tk *= t;
                }
                let q = (n as f64 + 2.0) / n as f64;
                hi * hi * num / (q * den)
            }
            Quotient::General(p) => energy_quotient(a, b, p),
        }
    }
}

fn energy_quotient(a: f64, b: f64, p: f64) -> f64 {
    let q = 0.5 * (p + 1.0);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if lo <= 0.0 {
        return hi.powf(q - 1.0) / q;
    }
    // (hi^q - lo^q) / (q (hi - lo)) without cancellation.
    let x = (hi - lo) / lo;
    if x < 1e-300 {
        return lo.powf(q - 1.0);
    }
    lo.powf(q - 1.0) * (q * x.ln_1p()).exp_m1() / (q * x)
}

/// Outcome of [`evolve`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub diagnostics: TrajectoryDiagnostics,
    pub final_state: ComplexRadialField,
    pub steps: usize,
}

/// Integrates from `u0` until `t_end`, blow-up or step underflow.
pub fn evolve(u0: &ComplexRadialField, params: &PhysicalParams, cfg: &EvolutionConfig) -> Result<Trajectory> {
    evolve_with(u0, params, cfg, |_| Ok(()))
}

/// As [`evolve`], calling `observe` on every recorded state.
pub fn evolve_with<F>(
    u0: &ComplexRadialField,
    params: &PhysicalParams,
    cfg: &EvolutionConfig,
    mut observe: F,
) -> Result<Trajectory>
where
    F: FnMut(&ComplexRadialField) -> Result<()>,
{
    cfg.validate()?;
    let grid = u0.grid();
    let mut prop = Propagator::new(grid, params);
    let h0 = functionals::hardy_functional(u0, params);
    let threshold = cfg.h_blowup_threshold.unwrap_or(BLOWUP_FACTOR * h0);
    let t_stop = u0.time + cfg.t_end;
    let end_tol = 1e-12 * cfg.t_end.max(1.0);
    let mut diag = TrajectoryDiagnostics { hardy_sandwich_ok: true, ..Default::default() };
    diag.record(u0, params);
    observe(u0)?;

    let mut v = u0.regular_factor();
    let mut t = u0.time;
    // Strang steps share their adjacent half phases; `owed` is the half
    // phase still to be applied to bring `v` to the synchronized state.
    let mut owed = 0.0;
    let mut steps = 0usize;
    let mut since_record = 0usize;

    let terminated = loop {
        if t >= t_stop - end_tol {
            break Termination::ReachedTEnd;
        }
        let mut dt = cfg.dt_initial;
        let h = functionals::hardy_from_regular(grid, &v);
        if cfg.adapt && h0 > 0.0 && h > h0 {
            dt = cfg.dt_initial * h0 / h;
        }
        if dt < cfg.dt_min {
            break if h >= threshold { Termination::BlowupDetected } else { Termination::DtUnderflow };
        }
        let remaining = t_stop - t;
        let dt = dt.min(remaining);
        match cfg.scheme {
            Scheme::StrangSplit => {
                prop.phase(&mut v, owed + 0.5 * dt);
                prop.linear(&mut v, dt)?;
                owed = 0.5 * dt;
            }
            Scheme::Relaxation => prop.relaxation(&mut v, dt)?,
        }
        t = if remaining - dt <= end_tol { t_stop } else { t + dt };
        steps += 1;
        since_record += 1;
        if since_record == cfg.snapshot_stride {
            since_record = 0;
            prop.settle(&mut v, &mut owed);
            let u = finite_field(&v, grid, t)?;
            diag.record(&u, params);
            observe(&u)?;
        }
    };
    prop.settle(&mut v, &mut owed);
    let final_state = finite_field(&v, grid, t)?;
    if since_record != 0 {
        diag.record(&final_state, params);
        observe(&final_state)?;
    }
    diag.terminated = Some(terminated);
    Ok(Trajectory { diagnostics: diag, final_state, steps })
}

/// `max_t H(u(t))` over the sharp bound `2E(u0) / (1 - (‖u0‖/M_gs)^{4/N})`
/// that holds below the minimal mass.
pub fn global_bound_check(
    u0: &ComplexRadialField,
    diag: &TrajectoryDiagnostics,
    gs: &GroundState,
    params: &PhysicalParams,
) -> Result<f64> {
    let m2 = functionals::mass(u0);
    let threshold = gs.mass_gs * gs.mass_gs;
    if m2 >= threshold {
        return Err(Error::AboveThreshold { mass: m2, threshold });
    }
    if m2 == 0.0 {
        return Ok(0.0);
    }
    let e0 = functionals::energy(u0, params);
    let h0 = functionals::hardy_functional(u0, params);
    if e0 < -1e-12 * h0 {
        return Err(Error::NegativeEnergy(e0));
    }
    let ratio = (m2 / threshold).powf(2.0 / params.n());
    let bound = 2.0 * e0 / (1.0 - ratio);
    let h_max = diag.hardy_series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if bound <= 0.0 {
        return Ok(if h_max <= 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(h_max / bound)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupFit {
    pub t_blowup_est: f64,
    pub rate_exponent: f64,
    pub prefactor_c: f64,
    pub fit_window: (f64, f64),
    pub fit_residual: f64,
}

/// Minimum number of samples in the fit window.
pub const MIN_FIT_SAMPLES: usize = 20;

/// Fits `‖∇u‖ ≈ C (T - t)^β` over the samples whose gradient norm lies
/// within one decade of the final one, choosing `T` by a 1D search on the
/// least-squares residual.
pub fn fit_blowup_rate(diag: &TrajectoryDiagnostics) -> Result<BlowupFit> {
    if diag.terminated != Some(Termination::BlowupDetected) {
        return Err(Error::InsufficientData("trajectory did not end in blow-up".into()));
    }
    fit_power_law(&diag.times, &diag.gradnorm_series, 0.1)
}

/// The fit of [`fit_blowup_rate`] on raw series; `window` is the lowest
/// gradient norm kept, relative to the last one.
pub fn fit_power_law(times: &[f64], gradnorm: &[f64], window: f64) -> Result<BlowupFit> {
    if times.len() != gradnorm.len() || times.is_empty() {
        return Err(Error::InsufficientData("empty or misaligned series".into()));
    }
    let g_last = *gradnorm.last().unwrap();
    let start = gradnorm.iter().rposition(|&g| g < window * g_last).map_or(0, |i| i + 1);
    let (t, g) = (&times[start..], &gradnorm[start..]);
    if t.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!("{} samples in the fit window, need {MIN_FIT_SAMPLES}", t.len())));
    }
    let (t_lo, t_hi) = (t[0], t[t.len() - 1]);
    let span = t_hi - t_lo;
    if !(span > 0.0) {
        return Err(Error::InsufficientData("fit window has zero length".into()));
    }
    let log_g: Vec<f64> = g.iter().map(|x| x.ln()).collect();
    let fit_at = |log_delta: f64| linear_fit(t, &log_g, t_hi + log_delta.exp());

    // Coarse log-spaced scan of T - t_hi, then golden-section refinement.
    let (a, b) = ((1e-9 * span).ln(), (10.0 * span).ln());
    let samples = 400;
    let mut best = (a, f64::INFINITY);
    for k in 0..=samples {
        let x = a + (b - a) * k as f64 / samples as f64;
        let r = fit_at(x).2;
        if r < best.1 {
            best = (x, r);
        }
    }
    let h = (b - a) / samples as f64;
    let (mut lo, mut hi) = (best.0 - h, best.0 + h);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (fit_at(x1).2, fit_at(x2).2);
    for _ in 0..100 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = fit_at(x1).2;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = fit_at(x2).2;
        }
    }
    let x = 0.5 * (lo + hi);
    let (slope, intercept, residual) = fit_at(x);
    Ok(BlowupFit {
        t_blowup_est: t_hi + x.exp(),
        rate_exponent: slope,
        prefactor_c: intercept.exp(),
        fit_window: (t_lo, t_hi),
        fit_residual: residual,
    })
}

/// Least squares `y ≈ a log(T - t) + b`; returns `(a, b, rms residual)`.
fn linear_fit(t: &[f64], y: &[f64], blowup: f64) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let x: Vec<f64> = t.iter().map(|t| (blowup - t).ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rss: f64 = x.iter().zip(y).map(|(x, y)| (y - a * x - b).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MeshKind};
    use crate::ground_state::solve_shooting;
    use crate::params::hardy_constant;
    use crate::pseudoconformal::{exact_solution, standing_wave, BlowupFamilyParams};
    use std::sync::OnceLock;

    fn params() -> PhysicalParams {
        PhysicalParams::critical(3, 0.5 * hardy_constant(3)).unwrap()
    }

    fn ground_state() -> Arc<GroundState> {
        static GS: OnceLock<Arc<GroundState>> = OnceLock::new();
        GS.get_or_init(|| {
            let p = params();
            let g = Arc::new(build_grid(&p, 2048, 30.0, MeshKind::default()).unwrap());
            Arc::new(solve_shooting(&p, &g).unwrap())
        })
        .clone()
    }

    fn chirped_gaussian(amp: f64) -> ComplexRadialField {
        let gs = ground_state();
        ComplexRadialField::from_fn(gs.grid.clone(), 0.0, |r| Complex64::from_polar(amp * (-r * r).exp(), 0.3 * r * r))
            .unwrap()
    }

    fn config(scheme: Scheme) -> EvolutionConfig {
        EvolutionConfig { scheme, ..Default::default() }
    }

    #[test]
    fn zero_field_is_fixed() {
        let gs = ground_state();
        let z = ComplexRadialField::zeros(gs.grid.clone());
        for scheme in [Scheme::StrangSplit, Scheme::Relaxation] {
            let u = step(&z, 1e-2, &params(), &config(scheme)).unwrap();
            assert!(u.values().iter().all(|v| v.norm() == 0.0));
            assert_eq!(u.time, 1e-2);
        }
    }

    #[test]
    fn steps_conserve_mass() {
        let p = params();
        let u = chirped_gaussian(2.0);
        let m0 = functionals::mass(&u);
        for scheme in [Scheme::StrangSplit, Scheme::Relaxation] {
            let v = step(&u, 1e-2, &p, &config(scheme)).unwrap();
            assert!((functionals::mass(&v) / m0 - 1.0).abs() < 1e-12, "{scheme:?}");
        }
    }

    #[test]
    fn relaxation_conserves_energy() {
        let p = params();
        let mut u = chirped_gaussian(2.0);
        let e0 = functionals::energy(&u, &p);
        let h0 = functionals::hardy_functional(&u, &p);
        for _ in 0..20 {
            u = step(&u, 5e-3, &p, &config(Scheme::Relaxation)).unwrap();
        }
        assert!((functionals::energy(&u, &p) - e0).abs() < 1e-10 * h0);
    }

    #[test]
    fn steps_are_reversible() {
        let p = params();
        let u = chirped_gaussian(1.5);
        for scheme in [Scheme::StrangSplit, Scheme::Relaxation] {
            let cfg = config(scheme);
            let back = step(&step(&u, 1e-2, &p, &cfg).unwrap(), -1e-2, &p, &cfg).unwrap();
            let err = back.l2_distance(&u).unwrap() / functionals::mass(&u).sqrt();
            assert!(err < 1e-10, "{scheme:?}: {err:e}");
            assert!(back.time.abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_steps_and_configs() {
        let u = chirped_gaussian(1.0);
        let p = params();
        let cfg = EvolutionConfig::default();
        assert!(step(&u, 0.0, &p, &cfg).is_err());
        assert!(step(&u, f64::NAN, &p, &cfg).is_err());
        for bad in [
            EvolutionConfig { dt_min: 1.0, ..cfg },
            EvolutionConfig { t_end: -1.0, ..cfg },
            EvolutionConfig { snapshot_stride: 0, ..cfg },
            EvolutionConfig { h_blowup_threshold: Some(0.0), ..cfg },
        ] {
            assert!(evolve(&u, &p, &bad).is_err());
        }
    }

    #[test]
    fn standing_wave_keeps_its_modulus() {
        let gs = ground_state();
        let p = params();
        let u0 = standing_wave(&gs, 1.0, 0.0, 0.0).unwrap();
        let cfg = EvolutionConfig { t_end: 5.0, ..config(Scheme::Relaxation) };
        let tr = evolve(&u0, &p, &cfg).unwrap();
        assert_eq!(tr.diagnostics.terminated, Some(Termination::ReachedTEnd));
        assert!((tr.final_state.time - 5.0).abs() < 1e-12);
        let scale = gs.profile.iter().copied().fold(0.0, f64::max);
        let dev = tr
            .final_state
            .values()
            .iter()
            .zip(u0.values())
            .map(|(a, b)| (a.norm() - b.norm()).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6 * scale, "{dev:e}");
    }

    #[test]
    fn subthreshold_data_reach_t_end() {
        let gs = ground_state();
        let p = params();
        let u0 = gs.field().scale(Complex64::new(0.9, 0.0));
        let cfg = EvolutionConfig { t_end: 2.0, dt_initial: 2e-3, ..Default::default() };
        let tr = evolve(&u0, &p, &cfg).unwrap();
        let d = &tr.diagnostics;
        assert_eq!(d.terminated, Some(Termination::ReachedTEnd));
        assert!(d.hardy_sandwich_ok);
        assert!(d.mass_drift_rate() < 1e-12);
        assert!(global_bound_check(&u0, d, &gs, &p).unwrap() < 1.05);
        assert!(fit_blowup_rate(d).is_err());
    }

    #[test]
    fn exact_family_blows_up() {
        let gs = ground_state();
        let p = params();
        let fam = BlowupFamilyParams::new(0.5, 1.0, 0.0, gs).unwrap();
        let u0 = exact_solution(&fam, 0.0).unwrap();
        let cfg = EvolutionConfig { dt_initial: 4e-3, dt_min: 4e-7, t_end: 1.0, ..config(Scheme::Relaxation) };
        let tr = evolve(&u0, &p, &cfg).unwrap();
        assert_eq!(tr.diagnostics.terminated, Some(Termination::BlowupDetected));
        assert!(tr.final_state.time < 0.5);
        let h = tr.diagnostics.hardy_series.last().unwrap() / tr.diagnostics.hardy_series[0];
        assert!(h >= BLOWUP_FACTOR);
    }

    #[test]
    fn observer_sees_every_record() {
        let u = chirped_gaussian(1.0);
        let cfg = EvolutionConfig { t_end: 0.05, snapshot_stride: 7, ..Default::default() };
        let mut seen = Vec::new();
        let tr = evolve_with(&u, &params(), &cfg, |s| {
            seen.push(s.time);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, tr.diagnostics.times);
        assert_eq!(tr.steps, 50);
        assert_eq!(*seen.last().unwrap(), 0.05);
    }

    #[test]
    fn power_law_fit_recovers_synthetic_rate() {
        let times: Vec<f64> = (0..400).map(|i| 1.9 * (1.0 - (-(i as f64) / 60.0).exp())).collect();
        let g: Vec<f64> = times.iter().map(|t| 3.0 / (2.0 - t)).collect();
        let fit = fit_power_law(&times, &g, 0.1).unwrap();
        assert!((fit.rate_exponent + 1.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.t_blowup_est - 2.0).abs() < 1e-6);
        assert!((fit.prefactor_c - 3.0).abs() < 1e-5);
        assert!(fit.fit_residual < 1e-8);
        assert!(fit_power_law(&times[..5], &g[..5], 0.1).is_err());
    }

    #[test]
    fn concentration_limits() {
        let u = chirped_gaussian(1.0);
        assert_eq!(mass_concentration(&u, 0.0), 0.0);
        assert_eq!(mass_concentration(&u, 30.0), 1.0);
        let mut last = 0.0;
        for k in 1..100 {
            let m = mass_concentration(&u, 0.05 * k as f64);
            assert!(m >= last);
            last = m;
        }
        assert!(last > 1.0 - 1e-12);
        // N = 3: ∫_{|x|<1} e^{-2|x|²} / ∫ e^{-2|x|²}.
        let exact = libm_erf_ratio();
        assert!((mass_concentration(&u, 1.0) - exact).abs() < 1e-4);
        assert!(tail_fraction(&u) < 1e-12);
        assert_eq!(mass_concentration(&ComplexRadialField::zeros(u.grid().clone()), 1.0), 0.0);
    }

    /// `P(χ²₃ < 4)`: erf(√2) - √(8/π) e^{-2}.
    fn libm_erf_ratio() -> f64 {
        0.954499736103642 - (8.0 / std::f64::consts::PI).sqrt() * (-2f64).exp()
    }

    #[test]
    fn global_bound_rejects_threshold_data() {
        let gs = ground_state();
        let p = params();
        let d = TrajectoryDiagnostics::default();
        assert!(matches!(global_bound_check(&gs.field(), &d, &gs, &p), Err(Error::AboveThreshold { .. })));
        let z = ComplexRadialField::zeros(gs.grid.clone());
        assert_eq!(global_bound_check(&z, &d, &gs, &p).unwrap(), 0.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let u = chirped_gaussian(1.0);
        let cfg = EvolutionConfig { t_end: 0.01, snapshot_stride: 5, ..Default::default() };
        let tr = evolve(&u, &params(), &cfg).unwrap();
        let mut buf = Vec::new();
        tr.diagnostics.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,mass,energy,H,gradnorm,variance,variance_rate"));
        assert_eq!(lines.count(), tr.diagnostics.len());
    }

    #[test]
    fn critical_quotient_matches_general_form() {
        for n in [3u32, 4, 5] {
            let p = PhysicalParams::critical(n, 0.5 * hardy_constant(n)).unwrap();
            let crit = Quotient::new(&p);
            assert!(matches!(crit, Quotient::Critical(_)));
            for (a, b) in [(1.0f64, 2.0f64), (0.3, 1e-3), (0.0, 2.0), (4.0, 4.0), (0.0, 0.0)] {
                let g = crit.eval(a, crit.root(a), b, crit.root(b));
                let want = if a == b { a.powf(2.0 / n as f64) } else { energy_quotient(a, b, p.exponent_p) };
                assert!((g - want).abs() <= 1e-13 * want.max(1e-300), "N={n} {a} {b}: {g} vs {want}");
            }
        }
    }

    #[test]
    fn fast_cube_root() {
        for x in [1e-300, 3e-200, 1e-20, 0.1, 1.0, 2.0, 27.0, 1e10, 1e300] {
            assert!((cbrt(x) / x.cbrt() - 1.0).abs() < 4.0 * f64::EPSILON, "{x}");
        }
        assert_eq!(cbrt(0.0), 0.0);
        assert_eq!(cbrt(-8.0), -2.0);
    }

    #[test]
    fn energy_quotient_is_accurate() {
        let p = 7.0 / 3.0;
        let q = 0.5 * (p + 1.0);
        for (a, b) in [(1.0f64, 2.0f64), (0.3, 1e-3), (5.0, 5.0 * (1.0 + 1e-9)), (2.0, 0.0)] {
            let naive = (b.powf(q) - a.powf(q)) / (q * (b - a));
            let g = energy_quotient(a, b, p);
            let tol = if (b - a).abs() < 1e-6 { 1e-6 } else { 1e-13 };
            assert!((g / naive - 1.0).abs() < tol, "{a} {b}: {g} vs {naive}");
        }
        assert_eq!(energy_quotient(2.0, 2.0, p), 2f64.powf(q - 1.0));
    }
}
