use std::fs::File;
use std::sync::Arc;

use inls_core::evolution::{self, BlowupFit, Termination};
use inls_core::ground_state::{GroundState, GroundStateMeta};
use inls_core::pseudoconformal::{exact_solution, standing_wave, BlowupFamilyParams};
use inls_core::{functionals, ComplexRadialField, PhysicalParams};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::InitialData;
use crate::{create, obtain_ground_state, output_error, prepare_out, write_json, CliError, Invocation, RunConfig};

#[derive(Debug, Serialize)]
pub struct InitialSummary {
    pub mass: f64,
    pub energy: f64,
    pub hardy_h: f64,
    /// `‖u0‖ / M_gs`.
    pub mass_ratio: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub params: PhysicalParams,
    pub ground_state: GroundStateMeta,
    pub initial: InitialSummary,
    pub termination: Termination,
    pub steps: usize,
    pub records: usize,
    pub t_final: f64,
    pub mass_drift_rate: f64,
    pub energy_drift_rate: f64,
    pub max_tail_fraction: f64,
    pub tail_certified: bool,
    pub hardy_sandwich_ok: bool,
    /// `max H(u(t))` over the sharp bound, for data below the minimal mass.
    pub global_bound_ratio: Option<f64>,
    pub blowup_fit: Option<BlowupFit>,
    pub blowup_fit_error: Option<String>,
}

/// Relative mass gap below which data count as sitting at the threshold; the
/// sharp bound degenerates there.
const AT_THRESHOLD: f64 = 1e-6;

fn initial_data(inv: &Invocation, gs: &Arc<GroundState>) -> Result<ComplexRadialField, CliError> {
    let cfg = &inv.config;
    let fam = || BlowupFamilyParams::from_settings(cfg.family, gs.clone()).map_err(CliError::Input);
    match &cfg.initial {
        InitialData::ThetaQ { theta } => {
            if !theta.is_finite() {
                return Err(CliError::Usage(format!("theta = {theta} must be finite")));
            }
            Ok(gs.field().scale(Complex64::new(*theta, 0.0)))
        }
        InitialData::StandingWave => {
            standing_wave(gs, cfg.family.lambda0, cfg.family.gamma0, 0.0).map_err(CliError::Input)
        }
        InitialData::ExactFamily => exact_solution(&fam()?, 0.0).map_err(CliError::Input),
        InitialData::File { path } => {
            let file = File::open(path)
                .map_err(|e| CliError::Usage(format!("cannot read initial data {}: {e}", path.display())))?;
            ComplexRadialField::read_csv(file, gs.grid.clone(), 0.0).map_err(CliError::Input)
        }
    }
}

pub fn run(inv: &Invocation) -> Result<(), CliError> {
    let cfg = &inv.config;
    let params = cfg.params.build()?;
    cfg.evolution.validate().map_err(CliError::Input)?;
    let gs = obtain_ground_state(cfg)?;
    let u0 = initial_data(inv, &gs)?;

    prepare_out(&inv.out)?;
    let snapshots = inv.out.join("snapshots");
    if cfg.output.snapshot_every > 0 {
        std::fs::create_dir_all(&snapshots)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", snapshots.display())))?;
    }
    let initial = inv.out.join("initial.csv");
    u0.write_csv(create(&initial)?).map_err(|e| output_error(&initial, e))?;

    let every = cfg.output.snapshot_every;
    let mut index = 0usize;
    let trajectory = evolution::evolve_with(&u0, &params, &cfg.evolution, |u| {
        if every > 0 && index.is_multiple_of(every) {
            let path = snapshots.join(format!("u_{index:06}.csv"));
            let file = File::create(&path).map_err(inls_core::Error::Io)?;
            u.write_csv(std::io::BufWriter::new(file))?;
        }
        index += 1;
        Ok(())
    })
    .map_err(|e| match e {
        inls_core::Error::Io(e) => CliError::Usage(format!("cannot write snapshot: {e}")),
        e => CliError::Solver(format!("evolution failed: {e}")),
    })?;

    let d = &trajectory.diagnostics;
    let final_path = inv.out.join("final.csv");
    trajectory.final_state.write_csv(create(&final_path)?).map_err(|e| output_error(&final_path, e))?;
    let diag_path = inv.out.join("diagnostics.csv");
    d.write_csv(create(&diag_path)?).map_err(|e| output_error(&diag_path, e))?;

    let termination = d.terminated.unwrap_or(Termination::DtUnderflow);
    let (blowup_fit, blowup_fit_error) = if termination == Termination::BlowupDetected {
        match evolution::fit_blowup_rate(d) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let mass = functionals::mass(&u0);
    let summary = Summary {
        command: "evolve",
        config: cfg,
        params,
        ground_state: gs.meta(),
        initial: InitialSummary {
            mass,
            energy: functionals::energy(&u0, &params),
            hardy_h: functionals::hardy_functional(&u0, &params),
            mass_ratio: mass.sqrt() / gs.mass_gs,
        },
        termination,
        steps: trajectory.steps,
        records: d.len(),
        t_final: trajectory.final_state.time,
        mass_drift_rate: d.mass_drift_rate(),
        energy_drift_rate: d.energy_drift_rate(),
        max_tail_fraction: d.max_tail_fraction,
        tail_certified: d.tail_certified(),
        hardy_sandwich_ok: d.hardy_sandwich_ok,
        global_bound_ratio: if mass.sqrt() < (1.0 - AT_THRESHOLD) * gs.mass_gs {
            evolution::global_bound_check(&u0, d, &gs, &params).ok()
        } else {
            None
        },
        blowup_fit,
        blowup_fit_error,
    };
    write_json(&inv.out.join("summary.json"), &summary)?;

    let mut line = format!("{:?} at t = {:.6} after {} steps", termination, summary.t_final, summary.steps);
    if let Some(f) = &summary.blowup_fit {
        line += &format!("; fitted exponent {:.4}, T_est {:.6}", f.rate_exponent, f.t_blowup_est);
    }
    if let Some(r) = summary.global_bound_ratio {
        line += &format!("; max H / sharp bound {r:.6}");
    }
    println!("{line}");
    if !summary.tail_certified {
        return Err(CliError::Tail(format!(
            "mass beyond 0.8 r_max reached {:.3e} (limit {:e}); enlarge r_max",
            d.max_tail_fraction,
            evolution::TAIL_TOL
        )));
    }
    Ok(())
}
