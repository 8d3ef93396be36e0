//! Ground states `Q > 0` of `ΔQ + cQ/|x|² - Q + Q^p = 0`.
//!
//! Both solvers work with the regular factor `v = r^{-σ} Q` and the discrete
//! equation
//!
//! ```text
//! (K v)_i + w_i v_i - w_i r_i^{σ(p-1)} v_i^p = 0,   i < n-1,   v_{n-1} = 0,
//! ```
//!
//! whose quadratic part is exactly the discrete Hardy functional. Shooting
//! marches the three-term recurrence outwards from the origin and bisects on
//! the initial value; the gradient flow minimizes the discrete Weinstein
//! quotient from a seed and rescales the minimizer to unit frequency. Either
//! result is finished with a few Newton steps on the full system.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_radii, derivative_nodal, fmt_f64, read_columns, ComplexRadialField};
use crate::functionals::{self, stiffness_apply};
use crate::grid::{build_grid_from, GridDescriptor, RadialGrid};
use crate::interp::Pchip;
use crate::params::PhysicalParams;
use crate::tridiag;

/// Discrete Euler–Lagrange residual accepted for a ground state.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Relative agreement required between the two sharp-constant routes.
pub const CONSTANT_TOL: f64 = 1e-6;
/// Relative residual above which a rescaled field is not a critical point.
const MINIMIZER_TOL: f64 = 1e-2;
/// Nodes that must fit inside the unit core of a rescaled profile.
const CORE_NODES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Shooting,
    GradientFlow,
}

/// Sidecar record of a persisted ground state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateMeta {
    #[serde(rename = "N")]
    pub dim_n: u32,
    pub c: f64,
    pub p: f64,
    #[serde(rename = "M_gs")]
    pub mass_gs: f64,
    #[serde(rename = "H")]
    pub hardy_h: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub alpha: f64,
    pub residual: f64,
    pub method: SolveMethod,
    pub grid: GridDescriptor,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub profile: Vec<f64>,
    pub grid: Arc<RadialGrid>,
    pub params: PhysicalParams,
    /// `‖Q‖_{L²}`.
    pub mass_gs: f64,
    pub hardy_h: f64,
    pub energy: f64,
    pub alpha: f64,
    pub residual: f64,
    pub method: SolveMethod,
    interp: Pchip,
}

impl GroundState {
    /// Builds the record from samples of `Q`, recomputing every derived
    /// quantity.
    pub fn from_profile(
        profile: Vec<f64>,
        grid: Arc<RadialGrid>,
        params: PhysicalParams,
        method: SolveMethod,
    ) -> Result<Self> {
        grid.check_len(profile.len())?;
        if let Some(i) = profile.iter().position(|q| !q.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let field = ComplexRadialField::from_real(&profile, grid.clone(), 0.0)?;
        let rep = functionals::FunctionalReport::evaluate(&field, &params);
        let v: Vec<f64> = profile.iter().zip(&grid.r_sigma).map(|(q, s)| q / s).collect();
        let interp = Pchip::new(grid.nodes.clone(), v);
        let mut gs = Self {
            residual: stationary_residual(&field, &params),
            profile,
            grid,
            params,
            mass_gs: rep.mass_sq.sqrt(),
            hardy_h: rep.hardy_h,
            energy: rep.energy,
            alpha: 0.0,
            method,
            interp,
        };
        gs.alpha = sharp_constant_from_mass(&gs.params, gs.mass_gs);
        Ok(gs)
    }

    /// The JSON sidecar stored next to the `r,Q` table.
    pub fn meta(&self) -> GroundStateMeta {
        GroundStateMeta {
            dim_n: self.params.dim_n,
            c: self.params.coupling_c,
            p: self.params.exponent_p,
            mass_gs: self.mass_gs,
            hardy_h: self.hardy_h,
            energy: self.energy,
            alpha: self.alpha,
            residual: self.residual,
            method: self.method,
            grid: self.grid.descriptor(),
        }
    }

    /// Writes the `r,Q` table.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "Q"])?;
        for (r, q) in self.grid.nodes.iter().zip(&self.profile) {
            wr.write_record([fmt_f64(*r), fmt_f64(*q)])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Rebuilds a ground state from its `r,Q` table and sidecar. Derived
    /// quantities are recomputed from the samples, so a damaged table shows
    /// up in [`sharp_constant`] rather than being masked by the sidecar.
    pub fn read<R: Read>(table: R, meta: &GroundStateMeta) -> Result<Self> {
        let params = PhysicalParams::new(meta.dim_n, meta.c, meta.p)?;
        let grid = Arc::new(build_grid_from(&params, &meta.grid)?);
        let rows = read_columns(table, &["r", "Q"])?;
        if rows.is_empty() {
            return Err(Error::Format("ground-state table has no rows".into()));
        }
        check_radii(&rows.iter().map(|row| row[0]).collect::<Vec<_>>(), &grid)?;
        Self::from_profile(rows.iter().map(|row| row[1]).collect(), grid, params, meta.method)
    }

    pub fn field(&self) -> ComplexRadialField {
        ComplexRadialField::from_real(&self.profile, self.grid.clone(), 0.0).expect("finite profile")
    }

    /// `Q(r)` at an arbitrary radius (monotone cubic on `r^{-σ}Q`).
    pub fn sample(&self, r: f64) -> f64 {
        let g = &self.grid;
        if r >= g.r_max {
            return 0.0;
        }
        let v = if r <= g.nodes[0] {
            self.interp.eval(g.nodes[0]).unwrap_or(0.0)
        } else {
            self.interp.eval(r).unwrap_or(0.0)
        };
        r.powf(g.sigma) * v
    }

    /// Smallest radius beyond which `Q` carries less than `1e-12` of its mass.
    pub fn support_radius(&self) -> f64 {
        let g = &self.grid;
        let total = self.mass_gs * self.mass_gs;
        let mut tail = 0.0;
        for i in (0..g.len()).rev() {
            tail += g.quad_weights[i] * self.profile[i] * self.profile[i];
            if tail > 1e-12 * total {
                return g.nodes[i];
            }
        }
        g.nodes[0]
    }

    /// Admissible range of `λ` for `λ^{N/2} Q(λ·)` on this grid.
    pub fn lambda_range(&self) -> (f64, f64) {
        let g = &self.grid;
        let lo = self.support_radius() / g.r_max;
        let hi = 1.0 / g.nodes[CORE_NODES.min(g.len() - 1)];
        (lo, hi)
    }

    /// Maximum over interior nodes of `Q_{i+1} - Q_i` relative to `Q_0`.
    pub fn monotonicity_defect(&self) -> f64 {
        let q0 = self.profile[0];
        self.profile[..self.profile.len() - 1].windows(2).map(|w| (w[1] - w[0]) / q0).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup-norm distance to another ground state on the same grid, relative to `max Q`.
    pub fn sup_distance(&self, other: &GroundState) -> f64 {
        let scale = self.profile.iter().fold(0.0f64, |m, q| m.max(q.abs()));
        self.profile.iter().zip(&other.profile).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    }
}

/// Quadrature norm of `LQ + Q - |Q|^{p-1}Q` over the interior nodes.
pub fn stationary_residual(q: &ComplexRadialField, params: &PhysicalParams) -> f64 {
    stationary_residual_freq(q, params, 1.0)
}

/// Residual of `ΔQ + cQ/r² - ω Q + |Q|^{p-1}Q = 0`.
pub fn stationary_residual_freq(q: &ComplexRadialField, params: &PhysicalParams, omega: f64) -> f64 {
    let g = q.grid();
    let lq = functionals::apply_linear_operator(q, params);
    let n = g.len();
    (0..n - 1)
        .map(|i| {
            let z = q.values()[i];
            let r = lq.values()[i] + omega * z - z * z.norm().powf(params.exponent_p - 1.0);
            r.norm_sqr() * g.quad_weights[i]
        })
        .sum::<f64>()
        .sqrt()
}

struct Discrete<'a> {
    grid: &'a RadialGrid,
    p: f64,
    /// `w_i r_i^{σ(p-1)}`.
    nl_weight: Vec<f64>,
}

impl<'a> Discrete<'a> {
    fn new(grid: &'a RadialGrid, params: &PhysicalParams) -> Self {
        let p = params.exponent_p;
        let nl_weight = grid.v_weights.iter().zip(&grid.r_sigma).map(|(w, s)| w * s.powf(p - 1.0)).collect();
        Self { grid, p, nl_weight }
    }

    fn n(&self) -> usize {
        self.grid.len()
    }

    /// `F(v)` on interior rows; the last entry is zero.
    fn residual(&self, v: &[f64]) -> Vec<f64> {
        let kv = stiffness_apply(self.grid, v);
        let mut f: Vec<f64> = (0..self.n())
            .map(|i| kv[i] + self.grid.v_weights[i] * v[i] - self.nl_weight[i] * v[i].abs().powf(self.p - 1.0) * v[i])
            .collect();
        let n = self.n();
        f[n - 1] = 0.0;
        f
    }

    /// Quadrature norm of `F(v)` mapped back to `Q`-space.
    fn residual_norm(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.grid.v_weights).map(|(x, w)| x * x / w).sum::<f64>().sqrt()
    }

    fn newton(&self, mut v: Vec<f64>, max_iter: usize) -> Result<(Vec<f64>, f64)> {
        let n = self.n();
        let k = &self.grid.stiffness;
        v[n - 1] = 0.0;
        let mut f = self.residual(&v);
        let mut norm = self.residual_norm(&f);
        for _ in 0..max_iter {
            if norm < 1e-13 {
                break;
            }
            let m = n - 1;
            let mut lower = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut diag = vec![0.0; m];
            for i in 0..m {
                let mut d = self.grid.v_weights[i] - self.p * self.nl_weight[i] * v[i].abs().powf(self.p - 1.0);
                if i > 0 {
                    d += k[i - 1];
                    lower[i] = -k[i - 1];
                }
                d += k[i];
                if i + 1 < m {
                    upper[i] = -k[i];
                }
                diag[i] = d;
            }
            let rhs: Vec<f64> = f[..m].iter().map(|x| -x).collect();
            let delta = tridiag::solve(&lower, &diag, &upper, &rhs)?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = (0..n).map(|i| if i < m { v[i] + step * delta[i] } else { 0.0 }).collect();
                let ft = self.residual(&trial);
                let nt = self.residual_norm(&ft);
                if nt.is_finite() && nt < norm {
                    v = trial;
                    f = ft;
                    norm = nt;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if !norm.is_finite() {
            return Err(Error::NoConvergence("Newton refinement diverged".into()));
        }
        Ok((v, norm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shot {
    /// `Q` changes sign at this node: initial value too large.
    Crosses(usize),
    /// `Q` increases at this node while still positive: initial value too small.
    TurnsUp(usize),
    /// Reached the outer boundary decreasing and positive.
    Decays,
}

fn shoot(sys: &Discrete, a: f64, out: &mut Vec<f64>) -> Shot {
    let g = sys.grid;
    let n = sys.n();
    let k = &g.stiffness;
    out.clear();
    out.push(a);
    let mut q_prev = a * g.r_sigma[0];
    for i in 0..n - 1 {
        let vi = out[i];
        let mut row = g.v_weights[i] * vi - sys.nl_weight[i] * vi.abs().powf(sys.p - 1.0) * vi;
        if i > 0 {
            row += k[i - 1] * (vi - out[i - 1]);
        }
        let next = vi + row / k[i];
        out.push(next);
        let q = next * g.r_sigma[i + 1];
        if !(q > 0.0) {
            return Shot::Crosses(i + 1);
        }
        if q > q_prev {
            return Shot::TurnsUp(i + 1);
        }
        q_prev = q;
    }
    Shot::Decays
}

/// Ground state by discrete shooting on the initial value `v(0) = a`.
pub fn solve_shooting(params: &PhysicalParams, grid: &Arc<RadialGrid>) -> Result<GroundState> {
    let sys = Discrete::new(grid, params);
    let mut buf = Vec::with_capacity(grid.len());
    let too_big = |s: Shot| matches!(s, Shot::Crosses(_));

    // Bracket: a_lo turns up, a_hi crosses zero.
    let mut a = 1.0;
    let first = shoot(&sys, a, &mut buf);
    let (mut lo, mut hi);
    if too_big(first) {
        hi = a;
        lo = a;
        for _ in 0..200 {
            lo *= 0.5;
            if !too_big(shoot(&sys, lo, &mut buf)) {
                break;
            }
        }
        if too_big(shoot(&sys, lo, &mut buf)) {
            return Err(Error::NoConvergence("no undershooting initial value found".into()));
        }
    } else {
        lo = a;
        hi = a;
        for _ in 0..200 {
            hi *= 2.0;
            if too_big(shoot(&sys, hi, &mut buf)) {
                break;
            }
        }
        if !too_big(shoot(&sys, hi, &mut buf)) {
            return Err(Error::NoConvergence("no overshooting initial value found".into()));
        }
    }
    for _ in 0..200 {
        a = 0.5 * (lo + hi);
        if a <= lo || a >= hi {
            break;
        }
        if too_big(shoot(&sys, a, &mut buf)) {
            hi = a;
        } else {
            lo = a;
        }
    }

    let mut v_lo = Vec::new();
    let mut v_hi = Vec::new();
    let s_lo = shoot(&sys, lo, &mut v_lo);
    let s_hi = shoot(&sys, hi, &mut v_hi);
    let stop = match (s_lo, s_hi) {
        (Shot::Decays, _) | (_, Shot::Decays) => grid.len() - 1,
        (Shot::TurnsUp(i), Shot::Crosses(j)) | (Shot::Crosses(j), Shot::TurnsUp(i)) => i.min(j),
        (Shot::TurnsUp(i), Shot::TurnsUp(j)) | (Shot::Crosses(i), Shot::Crosses(j)) => i.min(j),
    };
    // Back off from the departure of the growing mode, then attach a decaying tail.
    let keep = departure_cutoff(grid, &v_lo, &v_hi, stop);
    let mut q: Vec<f64> = (0..grid.len())
        .map(|i| if i < v_lo.len().min(v_hi.len()) { 0.5 * (v_lo[i] + v_hi[i]) * grid.r_sigma[i] } else { 0.0 })
        .collect();
    attach_tail(grid, &mut q, keep);
    let v: Vec<f64> = q.iter().zip(&grid.r_sigma).map(|(q, s)| q / s).collect();
    finish(&sys, v, params, grid, SolveMethod::Shooting)
}

fn departure_cutoff(grid: &RadialGrid, v_lo: &[f64], v_hi: &[f64], stop: usize) -> usize {
    let m = v_lo.len().min(v_hi.len()).min(stop);
    let mut keep = m;
    for i in 0..m {
        let scale = v_lo[i].abs().max(v_hi[i].abs());
        if (v_lo[i] - v_hi[i]).abs() > 1e-3 * scale {
            keep = i;
            break;
        }
    }
    // Cut one unit of radius before the departure point.
    let r_cut = grid.nodes[keep.min(grid.len() - 1)] - 1.0;
    grid.index_at_or_above(r_cut.max(grid.nodes[1])).max(2)
}

/// Replaces `q[keep..]` with `q_k e^{-(r-r_k)} (r_k/r)^{(N-1)/2}`.
fn attach_tail(grid: &RadialGrid, q: &mut [f64], keep: usize) {
    let n = grid.len();
    if keep >= n - 1 {
        q[n - 1] = 0.0;
        return;
    }
    let k = keep - 1;
    let (rk, qk) = (grid.nodes[k], q[k]);
    let half = (f64::from(grid.dim_n) - 1.0) / 2.0;
    for (qi, &r) in q[keep..n].iter_mut().zip(&grid.nodes[keep..n]) {
        *qi = qk * (-(r - rk)).exp() * (rk / r).powf(half);
    }
    q[n - 1] = 0.0;
}

fn finish(
    sys: &Discrete,
    v: Vec<f64>,
    params: &PhysicalParams,
    grid: &Arc<RadialGrid>,
    method: SolveMethod,
) -> Result<GroundState> {
    let (v, norm) = sys.newton(v, 50)?;
    if !(norm <= RESIDUAL_TOL) {
        return Err(Error::NoConvergence(format!("Newton refinement stalled at residual {norm:.3e}")));
    }
    let profile: Vec<f64> = v.iter().zip(&grid.r_sigma).map(|(v, s)| v * s).collect();
    if profile[..profile.len() - 1].iter().any(|&q| !(q > 0.0)) {
        return Err(Error::NoConvergence("refined profile is not positive".into()));
    }
    GroundState::from_profile(profile, grid.clone(), *params, method)
}

/// Settings for [`minimize_weinstein`].
#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub max_iter: usize,
    /// Stop once the preconditioned gradient norm drops below this.
    pub tol: f64,
    /// Stop once a step lowers `log J` by less than this. The discrete
    /// quotient is only approximately dilation invariant, so on coarse grids
    /// the descent creeps along the scaling orbit instead of reaching `tol`;
    /// the frequency is fixed afterwards by [`rescale_to_stationary`].
    pub stall: f64,
    pub armijo: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { max_iter: 5_000, tol: 1e-6, stall: 1e-10, armijo: 1e-4 }
    }
}

/// Outcome of the descent before rescaling.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub j_history: Vec<f64>,
    pub iterations: usize,
    pub minimizer: ComplexRadialField,
}

fn tridiag_apply(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
    let m = diag.len();
    (0..m)
        .map(|i| {
            let mut y = diag[i] * x[i];
            if i > 0 {
                y += lower[i] * x[i - 1];
            }
            if i + 1 < m {
                y += upper[i] * x[i + 1];
            }
            y
        })
        .collect()
}

/// Ground state by minimizing the Weinstein quotient from `seed`.
pub fn solve_gradient_flow(
    params: &PhysicalParams,
    grid: &Arc<RadialGrid>,
    seed: &ComplexRadialField,
) -> Result<GroundState> {
    let trace = minimize_weinstein(params, grid, seed, FlowOptions::default())?;
    rescale_to_stationary(&trace.minimizer, params).map(|mut gs| {
        gs.method = SolveMethod::GradientFlow;
        gs
    })
}

/// H¹-preconditioned descent on `log J` with Armijo backtracking. The
/// amplitude is renormalized to the seed's mass after every step.
pub fn minimize_weinstein(
    params: &PhysicalParams,
    grid: &Arc<RadialGrid>,
    seed: &ComplexRadialField,
    opts: FlowOptions,
) -> Result<FlowTrace> {
    grid.check_len(seed.values().len())?;
    let n = grid.len();
    if seed.values()[..n - 1].iter().any(|z| !(z.re > 0.0) || z.im != 0.0) {
        return Err(Error::InvalidSeed("seed must be real and strictly positive on interior nodes".into()));
    }
    let sys = Discrete::new(grid, params);
    let (ea, eb) = params.weinstein_exponents();
    let p = params.exponent_p;
    let m = n - 1;
    let k = &grid.stiffness;
    let w = &grid.v_weights;
    let shift = grid.sigma + params.n() / 2.0;

    let mut v: Vec<f64> = seed.regular_factor().iter().map(|z| z.re).collect();
    v[m] = 0.0;
    let parts = |v: &[f64]| {
        let h = functionals::hardy_from_regular(grid, v);
        let m2: f64 = v.iter().zip(w).map(|(x, w)| w * x * x).sum();
        let pp: f64 = v.iter().zip(&sys.nl_weight).map(|(x, w)| w * x.abs().powf(p + 1.0)).sum();
        (h, m2, pp)
    };
    let objective = |(h, m2, pp): (f64, f64, f64)| ea * h.ln() + 0.5 * eb * m2.ln() - pp.ln();

    let (h0, m2_target, _) = parts(&v);
    if !(h0 > 0.0) {
        return Err(Error::InvalidSeed("seed has vanishing Hardy functional".into()));
    }
    let mut cur = parts(&v);
    let mut f = objective(cur);
    let mut j_history = vec![f.exp()];
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let (h, m2, pp) = cur;
        let kv = stiffness_apply(grid, &v);
        let grad: Vec<f64> = (0..m)
            .map(|i| {
                2.0 * ea * kv[i] / h + eb * w[i] * v[i] / m2
                    - (p + 1.0) * sys.nl_weight[i] * v[i].abs().powf(p - 1.0) * v[i] / pp
            })
            .collect();
        let omega = eb * h / (2.0 * ea * m2);
        let scale = 2.0 * ea / h;
        let mut lower = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut diag = vec![0.0; m];
        for i in 0..m {
            let mut d = omega * w[i] + k[i];
            if i > 0 {
                d += k[i - 1];
                lower[i] = -k[i - 1] * scale;
            }
            if i + 1 < m {
                upper[i] = -k[i] * scale;
            }
            diag[i] = d * scale;
        }
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut dir = tridiag::solve(&lower, &diag, &upper, &rhs)?;
        // Remove the dilation mode, along which the discrete quotient is
        // almost flat and the descent would otherwise creep.
        let dv = derivative_nodal(&grid.nodes, &v);
        let gen: Vec<f64> = (0..m).map(|i| grid.nodes[i] * dv[i] + shift * v[i]).collect();
        let pg = tridiag_apply(&lower, &diag, &upper, &gen);
        let gg: f64 = gen.iter().zip(&pg).map(|(a, b)| a * b).sum();
        if gg > 0.0 {
            let dg: f64 = dir.iter().zip(&pg).map(|(a, b)| a * b).sum();
            dir.iter_mut().zip(&gen).for_each(|(d, g)| *d -= dg / gg * g);
        }
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if -slope < opts.tol * opts.tol {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = (0..n).map(|i| if i < m { (v[i] + t * dir[i]).abs() } else { 0.0 }).collect();
            let tp = parts(&trial);
            let ft = objective(tp);
            if ft.is_finite() && ft <= f + opts.armijo * t * slope {
                let mu = (m2_target / tp.1).sqrt();
                trial.iter_mut().for_each(|x| *x *= mu);
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            // No further decrease representable in floating point.
            converged = true;
            break;
        };
        v = trial;
        cur = parts(&v);
        let decrease = f - ft;
        f = ft;
        j_history.push(f.exp());
        if decrease < opts.stall {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!("gradient flow did not converge in {} iterations", opts.max_iter)));
    }
    let minimizer = ComplexRadialField::from_regular_factor(
        &v.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>(),
        grid.clone(),
        0.0,
    );
    Ok(FlowTrace { j_history, iterations, minimizer })
}

/// Maps a near-minimizer `u` of `J` to a unit-frequency solution:
/// `u(x) = A Q(B x)` with `B² = ω` and `A^{p-1} = ω/κ`, where `ω` and `κ`
/// are the frequency and nonlinear coefficient of the Euler–Lagrange
/// equation satisfied by `u`. At the critical power and zero energy this is
/// the L² scaling `u = λ^{N/2} Q(λ·)`, `λ = √(2/N) √H(u)/‖u‖`.
pub fn rescale_to_stationary(u: &ComplexRadialField, params: &PhysicalParams) -> Result<GroundState> {
    let grid = u.grid().clone();
    let modulus = u.map(|_, z| Complex64::new(z.norm(), 0.0));
    let h = functionals::hardy_functional(&modulus, params);
    let m2 = functionals::mass(&modulus);
    let lp1 = functionals::lp1_norm(&modulus, params.exponent_p);
    if !(lp1 > 0.0) {
        return Err(Error::ZeroField);
    }
    let (ea, eb) = params.weinstein_exponents();
    let p = params.exponent_p;
    let omega = eb * h / (2.0 * ea * m2);
    let kappa = (p + 1.0) * h / (2.0 * ea * lp1);
    let b = omega.sqrt();
    let a = (omega / kappa).powf(1.0 / (p - 1.0));

    let v_u: Vec<f64> = modulus.regular_factor().iter().map(|z| z.re).collect();
    let interp = Pchip::new(grid.nodes.clone(), v_u);
    let sigma = grid.sigma;
    let r0 = grid.nodes[0];
    let sample = |s: f64| -> f64 {
        if s >= grid.r_max {
            0.0
        } else if s <= r0 {
            s.powf(sigma) * interp.eval(r0).unwrap_or(0.0)
        } else {
            s.powf(sigma) * interp.eval(s).unwrap_or(0.0)
        }
    };
    let mut q: Vec<f64> = grid.nodes.iter().map(|&r| sample(r / b) / a).collect();
    let last = q.len() - 1;
    q[last] = 0.0;

    let field = ComplexRadialField::from_real(&q, grid.clone(), 0.0)?;
    let rel = stationary_residual(&field, params) / functionals::mass(&field).sqrt().max(f64::MIN_POSITIVE);
    if !(rel <= MINIMIZER_TOL) {
        return Err(Error::NonMinimizer { residual: rel, tolerance: MINIMIZER_TOL });
    }
    let sys = Discrete::new(&grid, params);
    let v: Vec<f64> = q.iter().zip(&grid.r_sigma).map(|(q, s)| q / s).collect();
    finish(&sys, v, params, &grid, SolveMethod::GradientFlow)
}

/// `α = 2‖Q_EL‖^{p-1}/(p+1)` where `Q_EL` solves the Euler–Lagrange
/// equation of `J`; at the critical power `‖Q_EL‖ = ‖Q‖`.
fn sharp_constant_from_mass(params: &PhysicalParams, mass_gs: f64) -> f64 {
    let n = params.n();
    let p = params.exponent_p;
    let a = n * (p - 1.0) / 4.0;
    let b = 1.0 + (p - 1.0) * (2.0 - n) / 4.0;
    // Q_EL(x) = b^{1/(p-1)} Q(√(b/a) x).
    let el_mass_sq = b.powf(2.0 / (p - 1.0)) * (b / a).powf(-n / 2.0) * mass_gs * mass_gs;
    2.0 * el_mass_sq.powf((p - 1.0) / 2.0) / (p + 1.0)
}

/// Sharp Gagliardo–Nirenberg constant, cross-checked against the critical
/// closed form `M_gs^{4/N}/(1+2/N)` and against `J(Q)` by quadrature.
pub fn sharp_constant(gs: &GroundState, params: &PhysicalParams) -> Result<f64> {
    let alpha = sharp_constant_from_mass(params, gs.mass_gs);
    if params.is_critical() {
        let n = params.n();
        let closed = gs.mass_gs.powf(4.0 / n) / (1.0 + 2.0 / n);
        if (alpha - closed).abs() > CONSTANT_TOL * closed {
            return Err(Error::InconsistentConstant { from_mass: alpha, from_quotient: closed });
        }
    }
    let direct = functionals::weinstein_j(&gs.field(), params)?;
    if (alpha - direct).abs() > CONSTANT_TOL * alpha {
        return Err(Error::InconsistentConstant { from_mass: alpha, from_quotient: direct });
    }
    Ok(alpha)
}

/// `Q_λ(x) = λ^{N/2} Q(λx)` resampled on the ground state's grid.
pub fn scaled_ground_state(gs: &GroundState, lambda: f64) -> Result<ComplexRadialField> {
    let (lo, hi) = gs.lambda_range();
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!("scaling factor {lambda} must be positive")));
    }
    if lambda < lo || lambda > hi {
        return Err(Error::ResampleOutOfRange(format!("λ = {lambda} outside [{lo:.4e}, {hi:.4e}]")));
    }
    let amp = lambda.powf(gs.params.n() / 2.0);
    let mut values: Vec<Complex64> =
        gs.grid.nodes.iter().map(|&r| Complex64::new(amp * gs.sample(lambda * r), 0.0)).collect();
    let last = values.len() - 1;
    values[last] = Complex64::new(0.0, 0.0);
    ComplexRadialField::new(values, gs.grid.clone(), 0.0)
}

/// Default gradient-flow seed `e^{-r²/2}` on the interior nodes.
pub fn gaussian_seed(grid: &Arc<RadialGrid>) -> ComplexRadialField {
    let n = grid.len();
    let values = grid
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &r)| Complex64::new(if i + 1 < n { (-0.5 * r * r).exp().max(1e-300) } else { 0.0 }, 0.0))
        .collect();
    ComplexRadialField::new(values, grid.clone(), 0.0).expect("finite seed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MeshKind};
    use crate::params::hardy_constant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: u32, frac: f64, points: usize) -> (PhysicalParams, Arc<RadialGrid>) {
        let p = PhysicalParams::critical(n, frac * hardy_constant(n)).unwrap();
        let g = Arc::new(build_grid(&p, points, 30.0, MeshKind::default()).unwrap());
        (p, g)
    }

    #[test]
    fn shooting_solves_the_discrete_equation() {
        let (p, g) = setup(3, 0.5, 8192);
        let gs = solve_shooting(&p, &g).unwrap();
        assert!(gs.residual <= RESIDUAL_TOL, "residual {}", gs.residual);
        assert!(gs.energy.abs() <= 1e-6 * gs.hardy_h, "E/H = {}", gs.energy / gs.hardy_h);
        assert!(gs.profile[..g.len() - 1].iter().all(|&q| q > 0.0));
        assert!(gs.monotonicity_defect() <= 1e-12);
        assert_eq!(gs.method, SolveMethod::Shooting);
    }

    #[test]
    fn methods_agree() {
        let (p, g) = setup(4, 0.9, 8192);
        let a = solve_shooting(&p, &g).unwrap();
        let b = solve_gradient_flow(&p, &g, &gaussian_seed(&g)).unwrap();
        assert!((a.mass_gs - b.mass_gs).abs() <= 1e-5 * a.mass_gs);
        assert!(a.sup_distance(&b) <= 1e-4);
        assert!(b.residual <= RESIDUAL_TOL);
    }

    #[test]
    fn flow_descends_monotonically() {
        let (p, g) = setup(3, 0.1, 2048);
        let tr = minimize_weinstein(&p, &g, &gaussian_seed(&g), FlowOptions::default()).unwrap();
        let js = &tr.j_history;
        assert!(js.windows(2).all(|w| w[1] <= w[0]));
        let last = *js.last().unwrap();
        assert!(js.iter().all(|&j| j >= last - 1e-12));
    }

    #[test]
    fn flow_rejects_bad_seed() {
        let (p, g) = setup(3, 0.5, 256);
        let zero = ComplexRadialField::zeros(g.clone());
        assert!(solve_gradient_flow(&p, &g, &zero).is_err());
        let neg = gaussian_seed(&g).scale(Complex64::new(-1.0, 0.0));
        assert!(solve_gradient_flow(&p, &g, &neg).is_err());
    }

    #[test]
    fn rescale_is_idempotent_and_isometric_at_zero_energy() {
        let (p, g) = setup(3, 0.5, 8192);
        let gs = solve_shooting(&p, &g).unwrap();
        let again = rescale_to_stationary(&gs.field(), &p).unwrap();
        assert!(gs.sup_distance(&again) <= 1e-8);
        assert!((again.mass_gs - gs.mass_gs).abs() <= 1e-8 * gs.mass_gs);

        let lambda = 1.7;
        let q_l = scaled_ground_state(&gs, lambda).unwrap();
        let back = rescale_to_stationary(&q_l, &p).unwrap();
        assert!((back.mass_gs - gs.mass_gs).abs() <= 1e-6 * gs.mass_gs);
        let h_l = functionals::hardy_functional(&q_l, &p);
        assert!((h_l / lambda.powi(2) - back.hardy_h).abs() <= 1e-5 * back.hardy_h);
    }

    #[test]
    fn rescale_rejects_non_minimizer() {
        let (p, g) = setup(3, 0.5, 1024);
        let u = ComplexRadialField::from_fn(g.clone(), 0.0, |r| {
            Complex64::new(if r < 29.0 { (1.0 + (3.0 * r).cos()) * (-r).exp() + 1e-3 * (-r).exp() } else { 0.0 }, 0.0)
        })
        .unwrap();
        assert!(matches!(rescale_to_stationary(&u, &p), Err(Error::NonMinimizer { .. })));
    }

    #[test]
    fn scaled_ground_state_laws() {
        let (p, g) = setup(4, 0.5, 8192);
        let gs = solve_shooting(&p, &g).unwrap();
        let id = scaled_ground_state(&gs, 1.0).unwrap();
        assert!(id.l2_distance(&gs.field()).unwrap() <= 1e-12 * gs.mass_gs);
        for lambda in [0.5, 2.0] {
            let q = scaled_ground_state(&gs, lambda).unwrap();
            let m = functionals::mass(&q).sqrt();
            assert!((m - gs.mass_gs).abs() <= 1e-6 * gs.mass_gs, "λ={lambda}: {m} vs {}", gs.mass_gs);
            let h = functionals::hardy_functional(&q, &p);
            assert!((h - lambda * lambda * gs.hardy_h).abs() <= 1e-4 * h, "λ={lambda}");
        }
        // Away from λ_min the truncation at r_max does not cut through the tail.
        for lambda in [0.75, 2.0] {
            let q = scaled_ground_state(&gs, lambda).unwrap();
            let rel = stationary_residual_freq(&q, &p, lambda * lambda) / lambda.powi(2) / gs.mass_gs;
            assert!(rel <= 1e-3, "λ={lambda}: {rel}");
        }
        assert!(matches!(scaled_ground_state(&gs, 1e5), Err(Error::ResampleOutOfRange(_))));
        assert!(matches!(scaled_ground_state(&gs, 0.1), Err(Error::ResampleOutOfRange(_))));
        assert!(scaled_ground_state(&gs, -1.0).is_err());
    }

    #[test]
    fn sharp_constant_matches_quotient() {
        let (p, g) = setup(3, 0.9, 8192);
        let gs = solve_shooting(&p, &g).unwrap();
        let alpha = sharp_constant(&gs, &p).unwrap();
        let n = p.n();
        assert!((alpha * (1.0 + 2.0 / n) - gs.mass_gs.powf(4.0 / n)).abs() <= 1e-12 * alpha);
        let j = functionals::weinstein_j(&gs.field(), &p).unwrap();
        assert!((j - alpha).abs() <= 1e-6 * alpha);
        assert!(functionals::gn_inequality_check(&gs.field(), &p, alpha).unwrap().abs() <= 1e-6 * alpha);
    }

    #[test]
    fn corrupted_profile_fails_constant_check() {
        let (p, g) = setup(3, 0.5, 4096);
        let gs = solve_shooting(&p, &g).unwrap();
        let mut prof = gs.profile.clone();
        for (q, &r) in prof.iter_mut().zip(&g.nodes) {
            *q *= 1.0 + 0.05 * (-r * r).exp();
        }
        let bad = GroundState::from_profile(prof, g.clone(), p, SolveMethod::Shooting).unwrap();
        assert!(matches!(sharp_constant(&bad, &p), Err(Error::InconsistentConstant { .. })));
    }

    #[test]
    fn perturbations_do_not_lower_j() {
        let (p, g) = setup(3, 0.5, 2048);
        let gs = solve_shooting(&p, &g).unwrap();
        let jq = functionals::weinstein_j(&gs.field(), &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let eps: f64 = rng.gen_range(0.0..0.1);
            let c: f64 = rng.gen_range(0.0..5.0);
            let w: f64 = rng.gen_range(0.3..3.0);
            let u = gs.field().map(|r, z| {
                let bump = (-(r - c) * (r - c) / (w * w)).exp() * r.powf(g.sigma).min(1.0);
                z + eps * gs.profile[0] * bump
            });
            let j = functionals::weinstein_j(&u, &p).unwrap();
            assert!(j >= jq * (1.0 - 1e-4), "J={j} < J(Q)={jq}");
        }
    }

    #[test]
    fn mass_is_continuous_in_coupling() {
        let n = 3;
        let cs = hardy_constant(n);
        let masses: Vec<f64> = [1e-4, 0.05, 0.1, 0.15, 0.2]
            .iter()
            .map(|&f| {
                let p = PhysicalParams::critical(n, f * cs).unwrap();
                let g = Arc::new(build_grid(&p, 2048, 30.0, MeshKind::default()).unwrap());
                solve_shooting(&p, &g).unwrap().mass_gs
            })
            .collect();
        assert!(masses.windows(2).all(|w| w[1] < w[0]));
        assert!(masses.windows(2).all(|w| (w[0] - w[1]) / w[0] < 0.1));
    }

    #[test]
    fn subcritical_power_is_supported() {
        let p = PhysicalParams::new(3, 0.1, 2.0).unwrap();
        let g = Arc::new(build_grid(&p, 4096, 30.0, MeshKind::default()).unwrap());
        let gs = solve_shooting(&p, &g).unwrap();
        assert!(gs.residual <= RESIDUAL_TOL);
        let j = functionals::weinstein_j(&gs.field(), &p).unwrap();
        let alpha = sharp_constant(&gs, &p).unwrap();
        assert!((j - alpha).abs() <= 1e-6 * alpha);
    }

    #[test]
    fn persisted_profile_round_trips_and_damage_is_caught() {
        let (p, g) = setup(3, 0.5, 8192);
        let gs = solve_shooting(&p, &g).unwrap();
        let mut table = Vec::new();
        gs.write_csv(&mut table).unwrap();
        let meta: GroundStateMeta = serde_json::from_str(&serde_json::to_string(&gs.meta()).unwrap()).unwrap();
        let back = GroundState::read(table.as_slice(), &meta).unwrap();
        assert_eq!(back.profile, gs.profile);
        assert!(sharp_constant(&back, &p).is_ok());

        let text = String::from_utf8(table).unwrap();
        let damaged: String = text
            .lines()
            .enumerate()
            .map(|(i, line)| {
                if (2000..2400).contains(&i) {
                    let (r, q) = line.split_once(',').unwrap();
                    format!("{r},{}\n", q.parse::<f64>().unwrap() * 1.05)
                } else {
                    format!("{line}\n")
                }
            })
            .collect();
        let bad = GroundState::read(damaged.as_bytes(), &meta).unwrap();
        assert!(matches!(sharp_constant(&bad, &p), Err(Error::InconsistentConstant { .. })));
        assert!(GroundState::read("r,Q\n".as_bytes(), &meta).is_err());
    }
}
