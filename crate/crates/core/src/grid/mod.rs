//! Power network model: case-file parsing, validation and the
//! susceptance/incidence matrices every other module consumes.

mod json;
mod matpower;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub use json::SCHEMA_VERSION;

/// Errors raised while reading or validating a case.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file contents; carries a line/field diagnostic.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    /// Structurally valid file describing an invalid network.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("singular reduced admittance matrix: {0}")]
    Singular(String),
}

/// Case-file format selector for [`parse_case`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    /// MATPOWER `.m` text files; only the bus, gen, branch and gencost
    /// tables are read.
    MatpowerSubset,
    /// The crate's own versioned JSON schema.
    NativeJson,
}

/// A bus with its default active load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External bus number as given in the case file.
    pub id: u32,
    /// Default active power consumption (MW).
    pub load_mw: f64,
}

/// Quadratic generation cost g(P) = quadratic*P^2 + linear*P + constant,
/// with P in MW and g in $/h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub quadratic: f64,
    pub linear: f64,
    pub constant: f64,
}

/// A generator attached to a bus. `bus` is the internal bus index
/// (position in [`PowerNetwork::buses`]), not the external id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub cost: CostCurve,
}

/// A transmission line between two internal bus indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series reactance (per-unit on the system base).
    pub reactance_pu: f64,
    /// Thermal capacity (MW).
    pub capacity_mw: f64,
}

/// Immutable grid description. Loads and limits are stored in MW; the
/// computational kernels convert to per-unit on `base_mva` internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerNetwork {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    /// Internal index of the slack (reference) bus.
    pub slack_bus: usize,
}

/// Parse result: the validated network plus non-fatal warnings
/// (ignored tables, slack fallback, skipped out-of-service rows).
#[derive(Debug, Clone)]
pub struct ParsedCase {
    pub network: PowerNetwork,
    pub warnings: Vec<String>,
}

/// Parse a case file in the given format and validate it.
pub fn parse_case(path: impl AsRef<Path>, format: CaseFormat) -> Result<ParsedCase, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".to_string());
    match format {
        CaseFormat::MatpowerSubset => matpower::parse(&text, &path.display().to_string(), &name),
        CaseFormat::NativeJson => json::parse(&text, &path.display().to_string()),
    }
}

/// Serialize a network to the native JSON schema.
pub fn to_native_json(net: &PowerNetwork) -> String {
    json::serialize(net)
}

impl PowerNetwork {
    /// Number of buses.
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Number of generators.
    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Internal indices of buses with nonzero default load.
    pub fn load_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.load_mw != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index into `generators` of the slack-bus generator.
    pub fn slack_generator(&self) -> usize {
        self.generators
            .iter()
            .position(|g| g.bus == self.slack_bus)
            .expect("validated network has a generator at the slack bus")
    }

    /// Generator indices excluding the slack generator, in file order.
    pub fn non_slack_generators(&self) -> Vec<usize> {
        (0..self.generators.len())
            .filter(|&i| i != self.slack_generator())
            .collect()
    }

    /// Default load vector over all buses (MW).
    pub fn default_load(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.load_mw))
    }

    /// Content hash of the canonical JSON form, prefixed with the case
    /// name. Datasets and model files carry this to pin provenance.
    pub fn content_hash(&self) -> String {
        let json = json::serialize(self);
        let digest = Sha256::digest(json.as_bytes());
        format!("{}-{}", self.name, &hex::encode(digest)[..16])
    }

    /// Check every structural invariant; called by both parsers.
    /// Negated comparisons are deliberate: NaN fields must fail.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.buses.len();
        if n == 0 {
            return Err(GridError::Validation("network has no buses".into()));
        }
        if self.base_mva <= 0.0 {
            return Err(GridError::Validation(format!(
                "base MVA must be positive, got {}",
                self.base_mva
            )));
        }
        if self.slack_bus >= n {
            return Err(GridError::Validation(format!(
                "slack bus index {} out of range (N={})",
                self.slack_bus, n
            )));
        }
        if !self.generators.iter().any(|g| g.bus == self.slack_bus) {
            return Err(GridError::Validation(format!(
                "slack bus {} hosts no generator",
                self.buses[self.slack_bus].id
            )));
        }
        for (i, g) in self.generators.iter().enumerate() {
            if g.bus >= n {
                return Err(GridError::Validation(format!(
                    "generator {i} references bus index {} out of range",
                    g.bus
                )));
            }
            if !(g.p_min_mw <= g.p_max_mw) {
                return Err(GridError::Validation(format!(
                    "generator at bus {} has P_min {} > P_max {}",
                    self.buses[g.bus].id, g.p_min_mw, g.p_max_mw
                )));
            }
        }
        let mut seen = vec![false; n];
        for g in &self.generators {
            if seen[g.bus] {
                return Err(GridError::Validation(format!(
                    "multiple generators on bus {} (aggregate them or fix the case)",
                    self.buses[g.bus].id
                )));
            }
            seen[g.bus] = true;
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return Err(GridError::Validation(format!(
                    "branch {k} references a bus index out of range"
                )));
            }
            if br.from == br.to {
                return Err(GridError::Validation(format!(
                    "branch {k} is a self-loop on bus {}",
                    self.buses[br.from].id
                )));
            }
            if !(br.reactance_pu > 0.0) {
                return Err(GridError::Validation(format!(
                    "branch {k} ({}-{}) has non-positive reactance {}",
                    self.buses[br.from].id, self.buses[br.to].id, br.reactance_pu
                )));
            }
            if !(br.capacity_mw > 0.0) {
                return Err(GridError::Validation(format!(
                    "branch {k} ({}-{}) has non-positive capacity {}",
                    self.buses[br.from].id, self.buses[br.to].id, br.capacity_mw
                )));
            }
        }
        if !self.is_connected() {
            return Err(GridError::Validation(
                "branch graph is not connected".into(),
            ));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        if n <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }
}

/// Susceptance Laplacian, its slack-reduced form and the branch-flow
/// incidence matrix, with a cached LU factorization of the reduced
/// matrix. Immutable after construction.
#[derive(Debug, Clone)]
pub struct AdmittanceSystem {
    /// N×N DC susceptance Laplacian B.
    pub b_full: DMatrix<f64>,
    /// (N-1)×(N-1) reduced matrix with the slack row/column removed.
    pub b_reduced: DMatrix<f64>,
    /// |E|×N branch-flow matrix; row k has +1/x at the from bus and
    /// -1/x at the to bus, so `x_incidence * theta` is the per-line
    /// flow vector in per-unit.
    pub x_incidence: DMatrix<f64>,
    /// |E|×(N-1) form with the slack column removed.
    pub x_incidence_reduced: DMatrix<f64>,
    slack: usize,
    /// Bus index for each reduced position.
    non_slack: Vec<usize>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Assemble the admittance system for a validated network.
pub fn build_admittance(net: &PowerNetwork) -> Result<AdmittanceSystem, GridError> {
    let n = net.buses.len();
    let ne = net.branches.len();
    let mut b_full = DMatrix::zeros(n, n);
    let mut x_incidence = DMatrix::zeros(ne, n);
    for (k, br) in net.branches.iter().enumerate() {
        let y = 1.0 / br.reactance_pu;
        b_full[(br.from, br.from)] += y;
        b_full[(br.to, br.to)] += y;
        b_full[(br.from, br.to)] -= y;
        b_full[(br.to, br.from)] -= y;
        x_incidence[(k, br.from)] = y;
        x_incidence[(k, br.to)] = -y;
    }
    let non_slack: Vec<usize> = (0..n).filter(|&i| i != net.slack_bus).collect();
    let b_reduced = b_full.select_rows(&non_slack).select_columns(&non_slack);
    let x_incidence_reduced = x_incidence.select_columns(&non_slack);
    let lu = b_reduced.clone().lu();
    if n > 1 && !lu.is_invertible() {
        return Err(GridError::Singular(
            "reduced admittance matrix has a zero pivot (disconnected network?)".into(),
        ));
    }
    Ok(AdmittanceSystem {
        b_full,
        b_reduced,
        x_incidence,
        x_incidence_reduced,
        slack: net.slack_bus,
        non_slack,
        lu,
    })
}

impl AdmittanceSystem {
    pub fn n_buses(&self) -> usize {
        self.b_full.nrows()
    }

    pub fn n_branches(&self) -> usize {
        self.x_incidence.nrows()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Bus indices in reduced (slack-removed) order.
    pub fn non_slack_buses(&self) -> &[usize] {
        &self.non_slack
    }

    /// Solve `b_reduced * x = rhs` through the cached factorization.
    pub fn solve_reduced(&self, rhs: &DVector<f64>) -> DVector<f64> {
        if rhs.is_empty() {
            return DVector::zeros(0);
        }
        self.lu
            .solve(rhs)
            .expect("reduced admittance matrix is nonsingular for validated networks")
    }

    /// Solve `b_reduced * X = RHS` for a matrix right-hand side.
    pub fn solve_reduced_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if rhs.nrows() == 0 {
            return DMatrix::zeros(0, rhs.ncols());
        }
        self.lu
            .solve(rhs)
            .expect("reduced admittance matrix is nonsingular for validated networks")
    }

    /// Expand a reduced vector to full bus order, zero at the slack.
    pub fn embed_reduced(&self, reduced: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.n_buses());
        for (r, &bus) in self.non_slack.iter().enumerate() {
            full[bus] = reduced[r];
        }
        full
    }

    /// Restrict a full bus vector to reduced order.
    pub fn reduce_full(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.non_slack.len(),
            self.non_slack.iter().map(|&b| full[b]),
        )
    }

    /// Per-line flows (per-unit) for a full angle vector.
    pub fn flows_from_angles(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.x_incidence * theta
    }
}
