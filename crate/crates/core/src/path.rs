//! Output containers shared by the finite-pool and limit solvers.

use serde::{Deserialize, Serialize};

/// A recorded default: which name, which type atom it belonged to, and the
/// grid time at which the accumulated hazard crossed its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultEvent {
    pub name: usize,
    pub type_idx: usize,
    pub time: f64,
}

/// Curves on the time grid `{0, dt, ..., T}`.
///
/// * `d` — overall loss rate `D_t`,
/// * `d_by_type` — loss rate per type (or per dynamics class for the limit
///   solvers), outer index = type,
/// * `cluster_loss` — the r cluster loss rates `L_t^j`, outer index = j,
/// * `q_by_type` — mean default impact `Q_t(type) = beta_c(type) . L_t`,
/// * `x` — the common factor path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCurves {
    pub time: Vec<f64>,
    pub d: Vec<f64>,
    pub d_by_type: Vec<Vec<f64>>,
    pub cluster_loss: Vec<Vec<f64>>,
    pub q_by_type: Vec<Vec<f64>>,
    pub x: Vec<f64>,
}

impl GridCurves {
    pub fn zeros(steps: usize, n_types: usize, rank: usize, dt: f64) -> Self {
        GridCurves {
            time: (0..=steps).map(|k| k as f64 * dt).collect(),
            d: vec![0.0; steps + 1],
            d_by_type: vec![vec![0.0; steps + 1]; n_types],
            cluster_loss: vec![vec![0.0; steps + 1]; rank],
            q_by_type: vec![vec![0.0; steps + 1]; n_types],
            x: vec![0.0; steps + 1],
        }
    }

    /// Final overall loss rate `D_T`.
    pub fn d_final(&self) -> f64 {
        *self.d.last().expect("non-empty grid")
    }
}
