//! Domain types, configuration and validation of the model's standing
//! assumptions. Shared by every other module.
//!
//! A pool is described by a finite list of *types*: each type carries the
//! idiosyncratic dynamics of its names (volatility, drift, diffusion
//! exponent), the systematic sensitivity, the network data (contagion
//! coefficient vector `beta_c` and left-factor vector `ell`, one entry per
//! cluster) and a probability weight. The common factor is a CIR process
//! and solver controls fix the grid, the moment truncation level and the
//! Monte Carlo budget.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Number of doublings in the dissipativity sampling grid
/// `{K, 2K, 4K, ..., 2^20 K}`.
const DISSIPATIVITY_DOUBLINGS: u32 = 20;

/// Idiosyncratic drift of an intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum DriftSpec {
    /// Mean reversion `b(lambda) = -alpha_bar (lambda - lambda_bar)`.
    Affine { alpha_bar: f64, lambda_bar: f64 },
    /// `b(lambda) = c_0 + c_1 lambda + ... + c_q lambda^q`.
    Polynomial { coefficients: Vec<f64> },
}

impl DriftSpec {
    pub fn eval(&self, lambda: f64) -> f64 {
        match self {
            DriftSpec::Affine {
                alpha_bar,
                lambda_bar,
            } => -alpha_bar * (lambda - lambda_bar),
            DriftSpec::Polynomial { coefficients } => {
                let mut acc = 0.0;
                for &c in coefficients.iter().rev() {
                    acc = acc * lambda + c;
                }
                acc
            }
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, DriftSpec::Affine { .. })
    }

    /// Samples `lambda * b(lambda) < 0` on the geometric grid
    /// `{start, 2 start, ..., 2^20 start}`. A sign violation anywhere on
    /// the grid fails the check. This is a practical stand-in for the
    /// asymptotic dissipativity condition; it is representation-agnostic.
    pub fn dissipativity_sample(&self, grid_start: f64) -> bool {
        if grid_start <= 0.0 {
            return false;
        }
        let mut lambda = grid_start;
        for _ in 0..=DISSIPATIVITY_DOUBLINGS {
            let v = lambda * self.eval(lambda);
            if !(v < 0.0) {
                return false;
            }
            lambda *= 2.0;
        }
        true
    }

    fn bits(&self) -> Vec<u64> {
        match self {
            DriftSpec::Affine {
                alpha_bar,
                lambda_bar,
            } => vec![0, alpha_bar.to_bits(), lambda_bar.to_bits()],
            DriftSpec::Polynomial { coefficients } => {
                let mut v = vec![1];
                v.extend(coefficients.iter().map(|c| c.to_bits()));
                v
            }
        }
    }
}

/// One type atom of the pool measure: dynamics parameters, network data and
/// probability mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NameType {
    /// Idiosyncratic volatility (assumption: bounded away from 0).
    pub sigma: f64,
    pub drift: DriftSpec,
    /// Sensitivity to the common factor.
    pub beta_s: f64,
    /// Contagion coefficients, one per cluster.
    pub beta_c: Vec<f64>,
    /// Left-factor entries, one per cluster.
    pub ell: Vec<f64>,
    /// Diffusion exponent in [1/2, 1).
    pub rho: f64,
    /// Initial intensity (point mass).
    pub lambda0: f64,
    /// Probability mass in (0, 1].
    pub weight: f64,
}

impl NameType {
    /// Key identifying the intensity dynamics of this type: everything but
    /// `ell` and `weight`. Types with equal keys share one moment equation.
    fn dynamics_key(&self) -> Vec<u64> {
        let mut key = vec![
            self.sigma.to_bits(),
            self.beta_s.to_bits(),
            self.rho.to_bits(),
            self.lambda0.to_bits(),
        ];
        key.extend(self.drift.bits());
        key.extend(self.beta_c.iter().map(|b| b.to_bits()));
        key
    }
}

/// Common systematic factor, CIR form `dX = kappa (theta - X) dt + eps sqrt(X) dV`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystematicRisk {
    pub kappa: f64,
    pub theta: f64,
    pub eps: f64,
    pub x0: f64,
}

impl SystematicRisk {
    /// `b_0(x)`, evaluated with the full-truncation convention `x -> x v 0`.
    pub fn drift(&self, x: f64) -> f64 {
        self.kappa * (self.theta - x.max(0.0))
    }

    /// `sigma_0(x)`, evaluated with the full-truncation convention.
    pub fn diffusion(&self, x: f64) -> f64 {
        self.eps * x.max(0.0).sqrt()
    }

    /// Feller condition `2 kappa theta >= eps^2` (origin unattainable).
    pub fn feller_ok(&self) -> bool {
        2.0 * self.kappa * self.theta >= self.eps * self.eps
    }
}

/// Closure rule for the truncated moment hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosureRule {
    /// `u_{K+1} := u_K`.
    CopyLast,
    /// `u_{K+1} := 0`.
    Zero,
}

/// Grid, truncation and Monte Carlo controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverControls {
    /// Horizon.
    pub t_end: f64,
    /// Step.
    pub dt: f64,
    /// Moment truncation level K (>= 2).
    pub moment_cap: usize,
    /// Monte Carlo trial count (>= 1).
    pub trials: usize,
    /// Master seed.
    pub seed: u64,
    pub closure_rule: ClosureRule,
}

impl SolverControls {
    /// Number of steps; `t_end/dt` must be an integer within 1e-9.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::malformed("dt and t_end must be positive"));
        }
        let ratio = self.t_end / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 {
            return Err(Error::malformed(format!(
                "t_end/dt = {ratio} is not an integer number of steps"
            )));
        }
        Ok(n as usize)
    }
}

/// Bounds used by the assumption checks. All fields default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionBounds {
    /// Uniform bound on |sigma|, |beta_s|, |beta_c_j|, |ell_j|.
    pub coefficient_bound: f64,
    /// Lower bound sigma_bar: requires inf sigma^2 >= sigma_bar^2 > 0.
    pub sigma_lower: f64,
    /// Start of the geometric grid for the dissipativity sample.
    pub dissipativity_grid_start: f64,
}

impl Default for AssumptionBounds {
    fn default() -> Self {
        AssumptionBounds {
            coefficient_bound: 1e3,
            sigma_lower: 1e-6,
            dissipativity_grid_start: 1.0,
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Type atoms; weights must sum to 1.
    pub types: Vec<NameType>,
    pub risk: SystematicRisk,
    pub controls: SolverControls,
    /// Pool size N; required for finite-pool runs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    /// Number of clusters r; every `beta_c`/`ell` has this length.
    pub rank: usize,
    #[serde(default)]
    pub assumptions: AssumptionBounds,
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Reported but not enforced (the scheme is safe without it).
    Warn,
    /// Not machine-checkable; taken on faith and documented.
    Assumed,
}

/// One line of a validation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

/// Per-assumption pass/fail summary. Checks with status `Fail` should block
/// a simulation run; `Warn` and `Assumed` should not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> Vec<&AssumptionCheck> {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<8} {:<28} {}", format!("{:?}", c.status), c.name, c.detail)?;
        }
        Ok(())
    }
}

impl ScenarioConfig {
    /// Structural sanity: rejects inputs that are unusable regardless of
    /// assumption checks. Distinct from assumption violations.
    pub fn check_malformed(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::malformed("no types given"));
        }
        for (i, t) in self.types.iter().enumerate() {
            if t.beta_c.len() != self.rank || t.ell.len() != self.rank {
                return Err(Error::malformed(format!(
                    "type {i}: beta_c/ell length must equal rank {}",
                    self.rank
                )));
            }
            if !(t.weight > 0.0 && t.weight <= 1.0) {
                return Err(Error::malformed(format!(
                    "type {i}: weight {} outside (0, 1]",
                    t.weight
                )));
            }
            if !(t.lambda0 >= 0.0) {
                return Err(Error::malformed(format!("type {i}: lambda0 < 0")));
            }
            if let DriftSpec::Affine { alpha_bar, .. } = t.drift {
                if !(alpha_bar > 0.0) {
                    return Err(Error::malformed(format!("type {i}: alpha_bar must be > 0")));
                }
            }
            if let DriftSpec::Polynomial { coefficients } = &t.drift {
                if coefficients.len() < 2 {
                    return Err(Error::malformed(format!(
                        "type {i}: polynomial drift needs degree >= 1"
                    )));
                }
            }
            for v in t
                .beta_c
                .iter()
                .chain(t.ell.iter())
                .chain([&t.sigma, &t.beta_s, &t.rho, &t.lambda0])
            {
                if !v.is_finite() {
                    return Err(Error::malformed(format!("type {i}: non-finite parameter")));
                }
            }
        }
        let total: f64 = self.types.iter().map(|t| t.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::malformed(format!(
                "type weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        let r = &self.risk;
        if !(r.kappa > 0.0 && r.theta > 0.0 && r.eps > 0.0 && r.x0 >= 0.0) {
            return Err(Error::malformed(
                "systematic risk requires kappa, theta, eps > 0 and x0 >= 0",
            ));
        }
        self.controls.steps()?;
        if self.controls.moment_cap < 2 {
            return Err(Error::malformed("moment_cap must be >= 2"));
        }
        if self.controls.trials < 1 {
            return Err(Error::malformed("trials must be >= 1"));
        }
        if self.pool_size == Some(0) {
            return Err(Error::malformed("pool_size must be >= 1 when given"));
        }
        Ok(())
    }

    /// Checks the machine-checkable assumptions and reports the rest as
    /// assumed. Pure: the report depends only on the config.
    pub fn validate(&self) -> Result<ValidationReport> {
        self.check_malformed()?;
        let b = &self.assumptions;
        let mut checks = Vec::new();

        checks.push(AssumptionCheck {
            name: "type-measure".into(),
            status: CheckStatus::Pass,
            detail: format!(
                "explicit finite measure, {} atoms, weights sum to 1",
                self.types.len()
            ),
        });

        // Boundedness of all coefficients plus the sigma lower bound.
        let mut over = Vec::new();
        let mut sigma_min = f64::INFINITY;
        for (i, t) in self.types.iter().enumerate() {
            sigma_min = sigma_min.min(t.sigma.abs());
            let mut coeffs = vec![t.sigma.abs(), t.beta_s.abs()];
            coeffs.extend(t.beta_c.iter().map(|v| v.abs()));
            coeffs.extend(t.ell.iter().map(|v| v.abs()));
            if coeffs.into_iter().any(|v| v > b.coefficient_bound) {
                over.push(i);
            }
        }
        checks.push(AssumptionCheck {
            name: "coefficient-bound".into(),
            status: if over.is_empty() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: if over.is_empty() {
                format!("all coefficients within {}", b.coefficient_bound)
            } else {
                format!("types {over:?} exceed bound {}", b.coefficient_bound)
            },
        });
        checks.push(AssumptionCheck {
            name: "sigma-lower-bound".into(),
            status: if sigma_min >= b.sigma_lower {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: format!("min |sigma| = {sigma_min}, required >= {}", b.sigma_lower),
        });

        // Drift dissipativity. Affine drifts with alpha_bar > 0 are
        // dissipative for every lambda beyond lambda_bar, so they pass
        // structurally; polynomial drifts get the structural sign checks
        // plus the sampled grid.
        let mut drift_fail = Vec::new();
        for (i, t) in self.types.iter().enumerate() {
            let ok = match &t.drift {
                DriftSpec::Affine { .. } => true,
                DriftSpec::Polynomial { coefficients } => {
                    let c0 = coefficients[0];
                    let cq = *coefficients.last().unwrap();
                    let q = coefficients.len() - 1;
                    c0 > 0.0
                        && (q % 2 == 1 || cq < 0.0)
                        && t.drift.dissipativity_sample(b.dissipativity_grid_start)
                }
            };
            if !ok {
                drift_fail.push(i);
            }
        }
        checks.push(AssumptionCheck {
            name: "drift-dissipativity".into(),
            status: if drift_fail.is_empty() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: if drift_fail.is_empty() {
                format!(
                    "grid {{K, 2K, ..., 2^{DISSIPATIVITY_DOUBLINGS} K}}, K = {}",
                    b.dissipativity_grid_start
                )
            } else {
                format!("types {drift_fail:?} fail b(0) > 0 / leading sign / grid sample")
            },
        });

        let rho_bad: Vec<usize> = self
            .types
            .iter()
            .enumerate()
            .filter(|(_, t)| !(0.5..1.0).contains(&t.rho))
            .map(|(i, _)| i)
            .collect();
        checks.push(AssumptionCheck {
            name: "rho-range".into(),
            status: if rho_bad.is_empty() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: if rho_bad.is_empty() {
                "all rho in [1/2, 1)".into()
            } else {
                format!("types {rho_bad:?} have rho outside [1/2, 1)")
            },
        });

        // Feller is a warning: the scheme truncates X at 0 regardless.
        checks.push(AssumptionCheck {
            name: "feller-condition".into(),
            status: if self.risk.feller_ok() {
                CheckStatus::Pass
            } else {
                CheckStatus::Warn
            },
            detail: format!(
                "2 kappa theta = {} vs eps^2 = {}",
                2.0 * self.risk.kappa * self.risk.theta,
                self.risk.eps * self.risk.eps
            ),
        });

        checks.push(AssumptionCheck {
            name: "sigma0-bounded/X-moments".into(),
            status: CheckStatus::Assumed,
            detail: "integrability of the factor process is not machine-checkable".into(),
        });
        checks.push(AssumptionCheck {
            name: "girsanov-control".into(),
            status: CheckStatus::Assumed,
            detail: "u(x) with sigma0(x) u(x) = -b0(x) is unbounded near 0 for CIR; \
                     treated as purely analytic"
                .into(),
        });

        Ok(ValidationReport { checks })
    }

    /// The discrete type measure after merging types that share the same
    /// intensity dynamics (equal sigma, drift, beta_s, rho, lambda0 and
    /// beta_c). Merged atoms carry the summed weight and the
    /// weight-averaged left-factor vector; that average is exactly what the
    /// limit solvers couple through, so the merge is lossless for them.
    ///
    /// Atoms are returned in a canonical order (ascending by beta_c, then
    /// by the remaining dynamics parameters), which makes downstream
    /// outputs invariant under permutation of the input type list.
    pub fn type_measure(&self) -> Result<Vec<NameType>> {
        self.check_malformed()?;
        // Canonical member order first so merged sums are order-independent.
        let mut members: Vec<&NameType> = self.types.iter().collect();
        members.sort_by(|a, b| {
            let ka = (a.dynamics_key(), ell_bits(a), a.weight.to_bits());
            let kb = (b.dynamics_key(), ell_bits(b), b.weight.to_bits());
            ka.cmp(&kb)
        });

        let mut classes: Vec<NameType> = Vec::new();
        let mut keys: Vec<Vec<u64>> = Vec::new();
        for t in members {
            let key = t.dynamics_key();
            match keys.iter().position(|k| *k == key) {
                Some(i) => {
                    let c = &mut classes[i];
                    for (acc, v) in c.ell.iter_mut().zip(&t.ell) {
                        *acc += t.weight * v;
                    }
                    c.weight += t.weight;
                }
                None => {
                    keys.push(key);
                    let mut c = t.clone();
                    c.ell = t.ell.iter().map(|v| t.weight * v).collect();
                    classes.push(c);
                }
            }
        }
        for c in &mut classes {
            for v in &mut c.ell {
                *v /= c.weight;
            }
        }
        classes.sort_by(|a, b| {
            let ka: Vec<u64> = a.beta_c.iter().map(|v| total_order(*v)).collect();
            let kb: Vec<u64> = b.beta_c.iter().map(|v| total_order(*v)).collect();
            ka.cmp(&kb).then_with(|| a.dynamics_key().cmp(&b.dynamics_key()))
        });
        Ok(classes)
    }

    /// Mean left-factor vector `ell_bar_j = sum_types w ell_j`.
    pub fn ell_bar(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rank];
        for t in &self.types {
            for (o, v) in out.iter_mut().zip(&t.ell) {
                *o += t.weight * v;
            }
        }
        out
    }
}

fn ell_bits(t: &NameType) -> Vec<u64> {
    t.ell.iter().map(|v| v.to_bits()).collect()
}

/// Total-order key for an f64, ascending.
fn total_order(v: f64) -> u64 {
    let b = v.to_bits();
    if b & (1 << 63) != 0 {
        !b
    } else {
        b | (1 << 63)
    }
}
