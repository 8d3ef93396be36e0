//! Library side of the `inls` binary: configuration, the three commands and
//! the mapping from failures to exit codes.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use inls_core::ground_state::{GroundState, GroundStateMeta};
use serde::Serialize;

pub mod config;
pub mod evolve;
pub mod ground_state;
pub mod verify;

pub use config::RunConfig;

/// Exit codes: 1 bad input or configuration, 2 solver or step failure,
/// 3 failed cross-check (method disagreement or a failing acceptance
/// criterion), 4 tail-mass certificate violated.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(inls_core::Error),
    Solver(String),
    Disagreement(String),
    Tail(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Disagreement(_) => 3,
            CliError::Tail(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Solver(m) | CliError::Disagreement(m) | CliError::Tail(m) => f.write_str(m),
            CliError::Input(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Everything a command needs besides its own config section.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: RunConfig,
    pub out: PathBuf,
    pub only: Option<String>,
}

pub(crate) fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn output_error(path: &Path, e: inls_core::Error) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

/// Loads a persisted ground state. The sidecar is either a bare
/// [`GroundStateMeta`] or a `ground-state` command summary.
pub fn load_ground_state(table: &Path, sidecar: Option<&Path>) -> Result<GroundState, CliError> {
    let sidecar = sidecar.map(Path::to_path_buf).unwrap_or_else(|| table.with_extension("json"));
    let text = fs::read_to_string(&sidecar)
        .map_err(|e| CliError::Usage(format!("cannot read ground-state sidecar {}: {e}", sidecar.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", sidecar.display())))?;
    let meta_value = value.get("ground_state").cloned().unwrap_or(value);
    let meta: GroundStateMeta = serde_json::from_value(meta_value)
        .map_err(|e| CliError::Usage(format!("{}: not a ground-state sidecar: {e}", sidecar.display())))?;
    let file = File::open(table)
        .map_err(|e| CliError::Usage(format!("cannot read ground-state table {}: {e}", table.display())))?;
    GroundState::read(file, &meta).map_err(CliError::Input)
}

/// The configured ground state, or a fresh shooting solve on the
/// configured grid.
pub(crate) fn obtain_ground_state(cfg: &RunConfig) -> Result<Arc<GroundState>, CliError> {
    let params = cfg.params.build()?;
    if let Some(table) = &cfg.ground_state.table {
        let gs = load_ground_state(table, cfg.ground_state.sidecar.as_deref())?;
        if gs.params.dim_n != params.dim_n
            || gs.params.coupling_c != params.coupling_c
            || gs.params.exponent_p != params.exponent_p
        {
            return Err(CliError::Usage(format!(
                "ground state {} was computed for N = {}, c = {}, p = {}, not the configured parameters",
                table.display(),
                gs.params.dim_n,
                gs.params.coupling_c,
                gs.params.exponent_p
            )));
        }
        if gs.grid.descriptor() != cfg.grid {
            return Err(CliError::Usage(format!(
                "ground state {} lives on a different grid than [grid]",
                table.display()
            )));
        }
        return Ok(Arc::new(gs));
    }
    let grid = Arc::new(inls_core::grid::build_grid_from(&params, &cfg.grid).map_err(CliError::Input)?);
    inls_core::ground_state::solve_shooting(&params, &grid)
        .map(Arc::new)
        .map_err(|e| CliError::Solver(format!("ground state: {e}")))
}
