//! Scenario files: a [`crate::model::ScenarioConfig`] plus run metadata,
//! serialized as JSON. Unknown keys are rejected.
//!
//! Pools can be given either as an explicit type list or in product form:
//! shared dynamics plus independent per-cluster marginals for the
//! contagion coefficients and left factors. The product form expands into
//! the full cross product of atoms (heterogeneous pools built exactly the
//! way the bundled experiments specify them) and keeps the files small
//! even when the expansion has a thousand-plus atoms.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{
    AssumptionBounds, DriftSpec, NameType, ScenarioConfig, SolverControls, SystematicRisk,
};
use crate::Result;

/// Dynamics parameters shared by every atom of a product pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedDynamics {
    pub sigma: f64,
    pub drift: DriftSpec,
    pub beta_s: f64,
    pub rho: f64,
    pub lambda0: f64,
}

/// One atom of a marginal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalAtom {
    pub value: f64,
    pub prob: f64,
}

/// Per-cluster marginals for `beta_c_j` and `ell_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterMarginals {
    pub beta: Vec<MarginalAtom>,
    pub ell: Vec<MarginalAtom>,
}

/// Type-pool specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSpec {
    /// Explicit atoms.
    Types(Vec<NameType>),
    /// Independent per-cluster marginals over shared dynamics.
    Product {
        shared: SharedDynamics,
        clusters: Vec<ClusterMarginals>,
    },
}

fn default_bins() -> usize {
    50
}

/// A scenario file: config plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Pool sizes for convergence runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_list: Vec<usize>,
    /// Truncation rank for low-rank runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<usize>,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    pub risk: SystematicRisk,
    pub controls: SolverControls,
    pub pool: PoolSpec,
    #[serde(default)]
    pub assumptions: AssumptionBounds,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<ScenarioFile> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ScenarioFile> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }

    /// Expands the pool and checks that the result is structurally sound.
    pub fn to_config(&self) -> Result<ScenarioConfig> {
        let types = match &self.pool {
            PoolSpec::Types(list) => list.clone(),
            PoolSpec::Product { shared, clusters } => {
                if clusters.len() != self.rank {
                    return Err(Error::malformed(format!(
                        "product pool has {} cluster marginals but rank = {}",
                        clusters.len(),
                        self.rank
                    )));
                }
                expand_product(shared, clusters)
            }
        };
        let config = ScenarioConfig {
            types,
            risk: self.risk.clone(),
            controls: self.controls.clone(),
            pool_size: self.pool_size,
            rank: self.rank,
            assumptions: self.assumptions.clone(),
        };
        config.check_malformed()?;
        Ok(config)
    }
}

/// Cross product over all `2r` marginals; the last marginal varies fastest.
fn expand_product(shared: &SharedDynamics, clusters: &[ClusterMarginals]) -> Vec<NameType> {
    let marginals: Vec<&[MarginalAtom]> = clusters
        .iter()
        .map(|c| c.beta.as_slice())
        .chain(clusters.iter().map(|c| c.ell.as_slice()))
        .collect();
    let r = clusters.len();
    let total: usize = marginals.iter().map(|m| m.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; marginals.len()];
    for _ in 0..total {
        let mut weight = 1.0;
        let mut beta_c = Vec::with_capacity(r);
        let mut ell = Vec::with_capacity(r);
        for (pos, (&sel, marg)) in idx.iter().zip(&marginals).enumerate() {
            let atom = &marg[sel];
            weight *= atom.prob;
            if pos < r {
                beta_c.push(atom.value);
            } else {
                ell.push(atom.value);
            }
        }
        out.push(NameType {
            sigma: shared.sigma,
            drift: shared.drift.clone(),
            beta_s: shared.beta_s,
            beta_c,
            ell,
            rho: shared.rho,
            lambda0: shared.lambda0,
            weight,
        });
        for pos in (0..idx.len()).rev() {
            idx[pos] += 1;
            if idx[pos] < marginals[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}
