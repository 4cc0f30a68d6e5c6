//! Declarative experiment descriptions.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::ConnectivitySpec;
use crate::model::{make_builtin, BuiltinModel, HmmModel};
use crate::oracle::FiniteModel;
use crate::phi::TestFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MixingSweep,
    #[serde(rename = "estimate-vs-C")]
    EstimateVsC,
    #[serde(rename = "wasserstein-vs-C")]
    WassersteinVsC,
    #[serde(rename = "mse-vs-C")]
    MseVsC,
    #[serde(rename = "mse-vs-N")]
    MseVsN,
    CltCheck,
    DensityCompare,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::MixingSweep => "mixing-sweep",
            ExperimentKind::EstimateVsC => "estimate-vs-C",
            ExperimentKind::WassersteinVsC => "wasserstein-vs-C",
            ExperimentKind::MseVsC => "mse-vs-C",
            ExperimentKind::MseVsN => "mse-vs-N",
            ExperimentKind::CltCheck => "clt-check",
            ExperimentKind::DensityCompare => "density-compare",
        }
    }

    fn runs_filters(&self) -> bool {
        !matches!(self, ExperimentKind::MixingSweep)
    }
}

/// Connectivity family of a method; the number of connections comes from the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(alias = "complete")]
    Bootstrap,
    FixedRegular,
    LocalExchange,
    PerStepRandomRows,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bootstrap => "bootstrap",
            Method::FixedRegular => "fixed-regular",
            Method::LocalExchange => "local-exchange",
            Method::PerStepRandomRows => "per-step-random-rows",
        }
    }

    pub fn uses_c(&self) -> bool {
        !matches!(self, Method::Bootstrap)
    }

    pub fn spec(&self, c: Option<usize>, graph_seed: u64) -> ConnectivitySpec {
        match (self, c) {
            (Method::Bootstrap, _) | (_, None) => ConnectivitySpec::Complete,
            (Method::FixedRegular, Some(c)) => ConnectivitySpec::FixedRegular { c, graph_seed },
            (Method::LocalExchange, Some(c)) => ConnectivitySpec::LocalExchange { c },
            (Method::PerStepRandomRows, Some(c)) => ConnectivitySpec::PerStepRandomRows { c },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the "truth" of an error metric comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Reference {
    /// Kalman filter for `tracking`, exact oracle for finite models, else a
    /// bootstrap run with 10^6 particles.
    #[default]
    Auto,
    Kalman,
    Oracle,
    Bootstrap {
        #[serde(rename = "N")]
        n: usize,
    },
}

pub const DEFAULT_REFERENCE_PARTICLES: usize = 1_000_000;

fn default_replicates() -> usize {
    100
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_graphs() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: BuiltinModel,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    #[serde(rename = "C", default)]
    pub c: Vec<usize>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Seed of fixed regular graphs; the root seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_seed: Option<u64>,
    #[serde(default)]
    pub phi: Vec<TestFunction>,
    #[serde(default)]
    pub reference: Reference,
    /// Graphs per cell of a mixing sweep.
    #[serde(default = "default_graphs")]
    pub graphs: usize,
    /// Record every time step instead of the horizon only.
    #[serde(default)]
    pub full_trace: bool,
}

/// One point of the experiment grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub method: Method,
    pub c: Option<usize>,
    pub n: usize,
}

impl Cell {
    pub fn spec(&self, graph_seed: u64) -> ConnectivitySpec {
        self.method.spec(self.c, graph_seed)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text)
    }

    /// Serialisation with fixed field order, used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configs always serialise")
    }

    /// SHA-256 of [`Self::canonical_json`], lower-case hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn graph_seed(&self) -> u64 {
        self.graph_seed.unwrap_or(self.seed)
    }

    pub fn build_model(&self) -> Result<HmmModel> {
        make_builtin(&self.model)
    }

    pub fn methods(&self) -> Vec<Method> {
        if !self.methods.is_empty() {
            return self.methods.clone();
        }
        match self.experiment {
            ExperimentKind::MixingSweep => vec![Method::FixedRegular],
            ExperimentKind::CltCheck => vec![Method::PerStepRandomRows],
            _ => vec![Method::FixedRegular, Method::LocalExchange, Method::PerStepRandomRows],
        }
    }

    pub fn phis(&self) -> Vec<TestFunction> {
        if !self.phi.is_empty() {
            return self.phi.clone();
        }
        match self.experiment {
            ExperimentKind::EstimateVsC | ExperimentKind::DensityCompare | ExperimentKind::WassersteinVsC => {
                vec![TestFunction::X2]
            }
            ExperimentKind::MseVsC | ExperimentKind::MseVsN => vec![TestFunction::X],
            _ => vec![TestFunction::One],
        }
    }

    /// Whether a bootstrap baseline is run alongside the listed methods.
    pub fn needs_baseline(&self) -> bool {
        self.experiment.runs_filters()
    }

    /// Grid cells in a fixed order: methods as listed, then `C`, then `N`,
    /// followed by the bootstrap baseline for every `N`.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for method in self.methods() {
            if method.uses_c() {
                for &c in &self.c {
                    for &n in &self.n {
                        cells.push(Cell { method, c: Some(c), n });
                    }
                }
            } else if self.experiment.runs_filters() {
                for &n in &self.n {
                    cells.push(Cell { method, c: None, n });
                }
            }
        }
        if self.needs_baseline() && !self.methods().contains(&Method::Bootstrap) {
            for &n in &self.n {
                cells.push(Cell {
                    method: Method::Bootstrap,
                    c: None,
                    n,
                });
            }
        }
        cells
    }

    /// Resolved reference for error metrics.
    pub fn resolved_reference(&self, model: &HmmModel) -> Reference {
        match self.reference {
            Reference::Auto => {
                if model.tracking_sigma().is_some() {
                    Reference::Kalman
                } else if FiniteModel::from_model(model).is_ok() {
                    Reference::Oracle
                } else {
                    Reference::Bootstrap {
                        n: DEFAULT_REFERENCE_PARTICLES,
                    }
                }
            }
            r => r,
        }
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() {
            return Err(Error::invalid("the N grid is empty"));
        }
        if self.n.contains(&0) {
            return Err(Error::invalid("N must be positive"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        let methods = self.methods();
        if methods.iter().any(Method::uses_c) && self.c.is_empty() {
            return Err(Error::invalid("the C grid is empty"));
        }
        if self.experiment == ExperimentKind::MixingSweep {
            if self.graphs == 0 {
                return Err(Error::invalid("graphs must be at least 1"));
            }
            if methods.iter().any(|m| !m.uses_c()) {
                return Err(Error::invalid("a mixing sweep needs a method with connections"));
            }
        }
        let model = self.build_model()?;
        for cell in self.cells() {
            cell.spec(self.graph_seed()).check_feasible(cell.n)?;
        }
        let reference = self.resolved_reference(&model);
        match (self.experiment, reference) {
            (ExperimentKind::CltCheck, Reference::Oracle) => {
                FiniteModel::from_model(&model)?;
                if methods.iter().any(|m| !matches!(m, Method::PerStepRandomRows | Method::Bootstrap)) {
                    return Err(Error::invalid(
                        "clt-check compares against the random-rows limit; use per-step-random-rows",
                    ));
                }
            }
            (ExperimentKind::CltCheck, _) => {
                return Err(Error::invalid("clt-check needs an exact oracle reference"));
            }
            (_, Reference::Kalman) if model.tracking_sigma().is_none() => {
                return Err(Error::NoOracle(format!("{} (no Kalman form)", model.name())));
            }
            (_, Reference::Oracle) => {
                FiniteModel::from_model(&model)?;
            }
            (_, Reference::Bootstrap { n: 0 }) => {
                return Err(Error::invalid("reference needs at least one particle"));
            }
            _ => {}
        }
        if self.experiment == ExperimentKind::WassersteinVsC && !matches!(reference, Reference::Bootstrap { .. }) {
            return Err(Error::invalid("wasserstein-vs-C needs a bootstrap reference sample"));
        }
        Ok(())
    }
}
