use std::sync::Arc;

use inls_core::acceptance::{self, Suite, Verdict};
use serde::Serialize;

use crate::{load_ground_state, prepare_out, write_json, CliError, Invocation, RunConfig};

#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub only: Option<&'a str>,
    pub passed: bool,
    pub criteria: Vec<Verdict>,
}

pub fn run(inv: &Invocation) -> Result<(), CliError> {
    let cfg = &inv.config;
    let selected = acceptance::select(inv.only.as_deref()).map_err(CliError::Input)?;
    let mut suite = Suite::new(cfg.seed);
    if let Some(table) = &cfg.ground_state.table {
        let gs = load_ground_state(table, cfg.ground_state.sidecar.as_deref())?;
        suite = suite.with_ground_state(Arc::new(gs));
    }
    prepare_out(&inv.out)?;

    suite.prefetch(&selected);
    let mut verdicts = Vec::with_capacity(selected.len());
    for c in selected {
        let v = suite.run_one(c);
        println!("{}", v.line());
        verdicts.push(v);
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    let report = Report {
        command: "verify",
        config: cfg,
        only: inv.only.as_deref(),
        passed: failed.is_empty(),
        criteria: verdicts,
    };
    write_json(&inv.out.join("verify.json"), &report)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Disagreement(format!("failing criteria: {failed:?}")))
    }
}
