//! Scenario files (TOML). Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nnredux::closed_loop::{InputSource, PlantInputMap, ReducedController, SafetySpec, SampledNncs, UnsafeRegion};
use nnredux::network::load_network;
use nnredux::ode::{AccPlant, Dynamics, LinearPlant};
use nnredux::reduction::{InflationMode, Precision};
use nnredux::IntervalBox;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    Acc {
        #[serde(default = "default_friction")]
        friction: f64,
    },
    /// `ẋ = Ax + Bu`, `y = Cx`, matrices as lists of rows.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>> },
}

fn default_friction() -> f64 {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub plant: PlantConfig,
    pub controller: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_controller: Option<PathBuf>,
    /// Precision report written by `nnredux precision`; required with a reduced controller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<PathBuf>,
    #[serde(default)]
    pub inflation: InflationMode,
    pub sampling_period: f64,
    pub horizon: f64,
    /// Integration step; defaults to a quarter of the sampling period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Controller input partition per dimension.
    #[serde(default = "default_splits")]
    pub splits: Vec<usize>,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
    pub initial_set: IntervalBox,
    pub reference: IntervalBox,
    pub layout: Vec<InputSource>,
    pub plant_inputs: PlantInputMap,
    #[serde(default, rename = "unsafe")]
    pub unsafe_regions: Vec<UnsafeRegion>,
}

fn default_splits() -> Vec<usize> {
    vec![1]
}

fn default_max_cells() -> usize {
    nnredux::reach::DEFAULT_MAX_CELLS
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ScenarioConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.version != SCENARIO_VERSION {
            return Err(CliError::Config(format!(
                "{}: version: unsupported scenario version {} (expected {SCENARIO_VERSION})",
                path.display(),
                cfg.version
            )));
        }
        if cfg.reduced_controller.is_some() != cfg.precision.is_some() {
            return Err(CliError::Config(format!(
                "{}: reduced_controller and precision must be given together",
                path.display()
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.controller);
        cfg.reduced_controller.as_mut().map(resolve);
        cfg.precision.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    fn plant(&self) -> Result<Arc<dyn Dynamics>, CliError> {
        match &self.plant {
            PlantConfig::Acc { friction } => Ok(Arc::new(AccPlant { mu: *friction })),
            PlantConfig::Linear { a, b, c } => {
                let n = a.len();
                let m = b.first().map_or(0, Vec::len);
                let p = c.len();
                let ragged = |rows: &[Vec<f64>], cols: usize| rows.iter().any(|r| r.len() != cols);
                if ragged(a, n) || b.len() != n || ragged(b, m) || ragged(c, n) {
                    return Err(CliError::Config("plant: matrices a (n x n), b (n x m), c (p x n) do not fit".into()));
                }
                let flat = |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<_>>();
                Ok(Arc::new(LinearPlant::new(n, m, p, flat(a), flat(b), flat(c))?))
            }
        }
    }

    /// Loads the networks and assembles the closed loop.
    pub fn system(&self) -> Result<SampledNncs, CliError> {
        let controller = load_network(&self.controller)?;
        let mut sys = SampledNncs::new(
            self.plant()?,
            controller,
            self.sampling_period,
            self.reference.clone(),
            self.layout.clone(),
            self.plant_inputs.clone(),
        )?;
        if let (Some(net), Some(report)) = (&self.reduced_controller, &self.precision) {
            let text = std::fs::read_to_string(report)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", report.display())))?;
            let precision: Precision = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", report.display())))?;
            sys = sys.with_reduced(ReducedController {
                network: load_network(net)?,
                precision,
                mode: self.inflation,
            })?;
        }
        Ok(sys)
    }

    pub fn spec(&self) -> SafetySpec {
        SafetySpec {
            unsafe_regions: self.unsafe_regions.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
controller = "c.json"
sampling_period = 0.1
horizon = 1.0
layout = [{ output = 0 }]
initial_set = { lower = [0.0], upper = [1.0] }
reference = { lower = [], upper = [] }
plant_inputs = { dim = 1, exogenous = [], control_slots = [0] }
plant = { kind = "linear", a = [[0.0]], b = [[1.0]], c = [[1.0]] }
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let cfg = ScenarioConfig::load(&path).unwrap();
        assert_eq!(cfg.controller, dir.path().join("c.json"));
        assert_eq!(cfg.splits, vec![1]);
        assert_eq!(cfg.inflation, InflationMode::SoundFullRho);
    }

    #[test]
    fn unknown_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, format!("{MINIMAL}\nhorizn = 2.0\n")).unwrap();
        let err = ScenarioConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("horizn"), "{err}");
    }

    #[test]
    fn reduced_needs_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, MINIMAL.replace("controller = \"c.json\"", "controller = \"c.json\"\nreduced_controller = \"r.json\"")).unwrap();
        let err = ScenarioConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("precision"), "{err}");
    }
}
