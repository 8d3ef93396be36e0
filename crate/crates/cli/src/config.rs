//! Run configuration: one TOML file per run, echoed verbatim into every
//! output JSON.

use std::path::{Path, PathBuf};

use inls_core::evolution::EvolutionConfig;
use inls_core::params::hardy_constant;
use inls_core::pseudoconformal::FamilySettings;
use inls_core::{GridDescriptor, PhysicalParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub params: ParamsSection,
    pub grid: GridDescriptor,
    pub ground_state: GroundStateSection,
    pub evolution: EvolutionConfig,
    pub initial: InitialData,
    pub family: FamilySettings,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    #[serde(rename = "N")]
    pub dim_n: u32,
    /// Absolute coupling; takes precedence over `c_fraction`.
    pub c: Option<f64>,
    /// Coupling as a fraction of `c* = (N-2)²/4`. Without either key the
    /// coupling is `c*/2`.
    pub c_fraction: Option<f64>,
    /// Defaults to the critical power `1 + 4/N`.
    pub p: Option<f64>,
}

impl Default for ParamsSection {
    fn default() -> Self {
        Self { dim_n: 3, c: None, c_fraction: None, p: None }
    }
}

impl ParamsSection {
    pub fn build(&self) -> Result<PhysicalParams, CliError> {
        let c = match (self.c, self.c_fraction) {
            (Some(c), _) => c,
            (None, f) if self.dim_n >= 3 => f.unwrap_or(0.5) * hardy_constant(self.dim_n),
            (None, _) => f64::NAN,
        };
        let p = self.p.unwrap_or(1.0 + 4.0 / f64::from(self.dim_n.max(1)));
        PhysicalParams::new(self.dim_n, c, p).map_err(CliError::Input)
    }
}

/// A persisted ground state (`r,Q` table plus JSON sidecar). Without one,
/// commands solve for `Q` on the configured grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundStateSection {
    pub table: Option<PathBuf>,
    /// Defaults to the table path with a `.json` extension.
    pub sidecar: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    /// `θ Q`.
    ThetaQ { theta: f64 },
    /// `e^{iγ0} λ0^{N/2} Q(λ0 r)` from the `[family]` section.
    StandingWave,
    /// The explicit blow-up solution of the `[family]` section at `t = 0`.
    ExactFamily,
    /// An `r,re,im` table on the configured grid.
    File { path: PathBuf },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::ThetaQ { theta: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write every k-th recorded state as a snapshot; 0 keeps only the
    /// initial and final states.
    pub snapshot_every: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Relative paths in the file are taken relative to the file itself.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.ground_state.table.as_mut() {
            fix(p);
        }
        if let Some(p) = self.ground_state.sidecar.as_mut() {
            fix(p);
        }
        if let InitialData::File { path } = &mut self.initial {
            fix(path);
        }
        if let Some(p) = self.out.as_mut() {
            fix(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let p = cfg.params.build().unwrap();
        assert_eq!(p.dim_n, 3);
        assert!((p.coupling_c - 0.125).abs() < 1e-15);
        assert!(p.is_critical());
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::parse(
            r#"
seed = 7
[params]
N = 4
c = 0.3
[grid]
n_points = 1024
r_max = 20.0
mesh_kind = { kind = "graded-power", gamma = 3.0 }
[evolution]
scheme = "relaxation"
t_end = 2.5
[initial]
kind = "exact-family"
[family]
blowup_time_t = 0.5
lambda0 = 2.0
gamma0 = 0.0
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.params.build().unwrap().dim_n, 4);
        assert_eq!(cfg.grid.n_points, 1024);
        assert_eq!(cfg.evolution.t_end, 2.5);
        assert_eq!(cfg.evolution.dt_initial, EvolutionConfig::default().dt_initial);
        assert_eq!(cfg.initial, InitialData::ExactFamily);
        assert_eq!(cfg.family.lambda0, 2.0);
    }

    #[test]
    fn typos_and_bad_couplings_are_rejected() {
        assert!(RunConfig::parse("[params]\nNN = 3").is_err());
        assert!(RunConfig::parse("[evolution]\ndt = 0.1").is_err());
        let cfg = RunConfig::parse("[params]\nN = 3\nc = 0.3").unwrap();
        let err = cfg.params.build().unwrap_err().to_string();
        assert!(err.contains("0 < c < (N-2)^2/4"), "{err}");
    }
}
