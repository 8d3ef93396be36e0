use std::sync::Arc;

use inls_core::grid::build_grid_from;
use inls_core::ground_state::{self, GroundState, GroundStateMeta};
use inls_core::{functionals, PhysicalParams};
use serde::Serialize;

use crate::{create, output_error, prepare_out, write_json, CliError, Invocation, RunConfig};

/// Relative mass agreement required between the two solvers.
pub const MASS_AGREEMENT: f64 = 1e-5;

#[derive(Debug, Serialize)]
pub struct Checks {
    pub mass_disagreement: f64,
    pub energy_over_h: f64,
    pub quotient_gap: f64,
    pub methods_agree: bool,
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub params: PhysicalParams,
    /// The shooting solution, which is the one written to the table.
    pub ground_state: GroundStateMeta,
    pub gradient_flow: GroundStateMeta,
    pub checks: Checks,
}

pub fn run(inv: &Invocation) -> Result<(), CliError> {
    let cfg = &inv.config;
    let params = cfg.params.build()?;
    let grid = Arc::new(build_grid_from(&params, &cfg.grid).map_err(CliError::Input)?);
    let (shot, flow) = rayon::join(
        || ground_state::solve_shooting(&params, &grid),
        || ground_state::solve_gradient_flow(&params, &grid, &ground_state::gaussian_seed(&grid)),
    );
    let shot = shot.map_err(|e| CliError::Solver(format!("shooting: {e}")))?;
    let flow = flow.map_err(|e| CliError::Solver(format!("gradient flow: {e}")))?;

    let mass_disagreement = (flow.mass_gs - shot.mass_gs).abs() / shot.mass_gs;
    let checks = Checks {
        mass_disagreement,
        energy_over_h: shot.energy.abs() / shot.hardy_h,
        quotient_gap: quotient_gap(&shot)?,
        methods_agree: mass_disagreement <= MASS_AGREEMENT,
    };

    prepare_out(&inv.out)?;
    let table = inv.out.join("ground_state.csv");
    shot.write_csv(create(&table)?).map_err(|e| output_error(&table, e))?;
    let summary = Summary {
        command: "ground-state",
        config: cfg,
        params,
        ground_state: shot.meta(),
        gradient_flow: flow.meta(),
        checks,
    };
    write_json(&inv.out.join("ground_state.json"), &summary)?;
    println!(
        "M_gs = {:.12e}, alpha = {:.12e}, residual = {:.2e}, |E|/H = {:.2e}, solver mass gap = {:.2e}",
        shot.mass_gs, shot.alpha, shot.residual, summary.checks.energy_over_h, mass_disagreement
    );
    if !summary.checks.methods_agree {
        return Err(CliError::Disagreement(format!(
            "shooting and gradient flow disagree: relative mass gap {mass_disagreement:.3e} exceeds {MASS_AGREEMENT:e}"
        )));
    }
    Ok(())
}

fn quotient_gap(gs: &GroundState) -> Result<f64, CliError> {
    let j = functionals::weinstein_j(&gs.field(), &gs.params).map_err(|e| CliError::Solver(e.to_string()))?;
    Ok((j - gs.alpha).abs() / gs.alpha)
}
