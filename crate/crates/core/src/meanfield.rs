//! The large-pool limit computed through a truncated moment hierarchy.
//!
//! For each type class `p` the lambda-moments of the limiting survival
//! density, `u_k(t, p) = int lambda^k v(t, p, lambda) dlambda`, satisfy
//!
//! ```text
//! du_k = [ k (-alpha_bar + beta_s b0(X)) u_k
//!          + 1/2 beta_s^2 sigma0^2(X) k (k-1) u_k
//!          + (1/2 sigma^2 k (k-1) + alpha_bar lambda_bar k
//!             + k beta_c . Q(t)) u_{k-1}
//!          - u_{k+1} ] dt
//!        + beta_s sigma0(X) k u_k dV
//! ```
//!
//! with the coupling `Q_j(t) = sum_p weight(p) ell_j(p) u_1(t, p)` and the
//! mass equation `du_0 = -u_1 dt` (the killing term of the generator; the
//! drift/diffusion terms vanish for the constant test function). The
//! hierarchy is not closed — `u_k` depends on `u_{k+1}` — so it is
//! truncated at level `K` with `u_{K+1} := u_K` (or `:= 0` as a diagnostic
//! alternative) and solved backwards from there. Stepping is explicit
//! Euler with the same Brownian increment that advances the factor, which
//! keeps the discretization bias aligned with the particle solvers.
//!
//! Two guards police the hierarchy. Moments that dip below a small
//! negative tolerance are clamped to zero and counted: the clamp fires at
//! birth (the synchronous update reads only the previous state), so a
//! spurious negative value never enters any equation. The blowup guard is
//! deliberately far above the paper-scale dynamics: the top moment's
//! common-noise multiplier `beta_s sigma0(X) K` is of order 10 per sqrt
//! year for the bundled scenarios, so the closure's own top level swings
//! through `1e8` with roughly percent probability per trial while the
//! clamp keeps those swings from ever reaching the observable levels (a
//! positive spike only drains the level below it negative, which is
//! clamped on the spot). The guard therefore flags only genuine
//! divergence — non-finite values or runaway positive feedback — rather
//! than the benign top-of-ladder churn.
//!
//! The system is restricted to affine drift and `rho = 1/2`; those are the
//! cases in which the hierarchy above holds. The weighted-cloud solver in
//! [`crate::oracle`] has no such restriction and doubles as an independent
//! check of this one.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{ClosureRule, NameType, ScenarioConfig, SolverControls, SystematicRisk};
use crate::path::GridCurves;
use crate::rng::{trial_seed, Streams};
use crate::stats::{self, try_par_chunk_fold, CurveSums, Histogram};
use crate::Result;

/// Clamp threshold: moments below this are zeroed and counted.
pub const NEGATIVE_MOMENT_TOL: f64 = -1e-6;
/// Blowup guard for any |u_k|; exceeding it signals closure instability.
/// Set ~30 sigma above the benign log-normal excursions of the top moment
/// at paper-scale parameters (see the module docs).
pub const MOMENT_GUARD: f64 = 1e30;

/// Truncated moment state: `u[class][k]` for `k = 0..=K`, the current time
/// and the current common-factor value.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub t: f64,
    pub x: f64,
    pub u: Vec<Vec<f64>>,
}

/// Per-trial numerical diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrialDiagnostics {
    /// Smallest pre-clamp `u_0` seen on the path.
    pub u0_min: f64,
    /// Largest `u_0` seen on the path.
    pub u0_max: f64,
    /// Largest single-step increase of any `u_0` (should be ~0).
    pub u0_max_step_increase: f64,
    /// Number of moments clamped at 0 after dipping below the tolerance.
    pub negative_clamps: usize,
}

impl TrialDiagnostics {
    fn new() -> Self {
        TrialDiagnostics {
            u0_min: f64::INFINITY,
            u0_max: f64::NEG_INFINITY,
            u0_max_step_increase: f64::NEG_INFINITY,
            negative_clamps: 0,
        }
    }

    fn merge(self, other: TrialDiagnostics) -> TrialDiagnostics {
        TrialDiagnostics {
            u0_min: self.u0_min.min(other.u0_min),
            u0_max: self.u0_max.max(other.u0_max),
            u0_max_step_increase: self.u0_max_step_increase.max(other.u0_max_step_increase),
            negative_clamps: self.negative_clamps + other.negative_clamps,
        }
    }
}

/// One trial of the limit: curves on the grid plus diagnostics.
#[derive(Debug, Clone)]
pub struct TrialPath {
    pub curves: GridCurves,
    pub diagnostics: TrialDiagnostics,
}

/// Ensemble output: mean curves, per-trial terminal loss rates (in trial
/// order) and merged diagnostics.
#[derive(Debug, Clone)]
pub struct LimitOutput {
    pub mean: GridCurves,
    pub d_final: Vec<f64>,
    pub trials: usize,
    pub diagnostics: TrialDiagnostics,
}

impl LimitOutput {
    pub fn mean_d_final(&self) -> f64 {
        stats::mean(&self.d_final)
    }

    pub fn var_d_final(&self) -> f64 {
        if self.d_final.len() < 2 {
            0.0
        } else {
            stats::variance(&self.d_final)
        }
    }

    pub fn histogram(&self, bins: usize) -> Histogram {
        Histogram::build(&self.d_final, bins)
    }
}

/// The moment hierarchy for one scenario: merged type classes, the common
/// factor and the solver controls.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    classes: Vec<NameType>,
    risk: SystematicRisk,
    controls: SolverControls,
    rank: usize,
    steps: usize,
    ell_bar: Vec<f64>,
}

impl MomentSystem {
    /// Builds the per-class system. Fails on configs outside the solver's
    /// derivation (non-affine drift or `rho != 1/2`).
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.check_malformed()?;
        for (i, t) in config.types.iter().enumerate() {
            if !t.drift.is_affine() {
                return Err(Error::SolverRestriction(format!(
                    "moment solver requires affine drift (type {i})"
                )));
            }
            if t.rho != 0.5 {
                return Err(Error::SolverRestriction(format!(
                    "moment solver requires rho = 1/2 (type {i} has rho = {})",
                    t.rho
                )));
            }
        }
        let classes = config.type_measure()?;
        let steps = config.controls.steps()?;
        Ok(MomentSystem {
            classes,
            risk: config.risk.clone(),
            controls: config.controls.clone(),
            rank: config.rank,
            steps,
            ell_bar: config.ell_bar(),
        })
    }

    /// Dynamics classes in canonical order (weights summed, `ell` averaged).
    pub fn classes(&self) -> &[NameType] {
        &self.classes
    }

    pub fn controls(&self) -> &SolverControls {
        &self.controls
    }

    /// Moments of the initial point masses: `u_k(0) = lambda0^k`, `u_0 = 1`.
    pub fn initial_state(&self) -> MomentState {
        let cap = self.controls.moment_cap;
        let u = self
            .classes
            .iter()
            .map(|c| (0..=cap).map(|k| c.lambda0.powi(k as i32)).collect())
            .collect();
        MomentState {
            t: 0.0,
            x: self.risk.x0,
            u,
        }
    }

    /// The coupling vector `Q_j(t) = sum_p weight ell_j u_1`.
    pub fn coupling_q(&self, state: &MomentState) -> Vec<f64> {
        let mut q = vec![0.0; self.rank];
        for (c, u) in self.classes.iter().zip(&state.u) {
            let u1 = u[1];
            for (qj, lj) in q.iter_mut().zip(&c.ell) {
                *qj += c.weight * lj * u1;
            }
        }
        q
    }

    /// One Euler step of the hierarchy driven by the Brownian increment
    /// `dv` (already scaled by sqrt(dt)); advances the factor with the
    /// same increment.
    pub fn step_moments(&self, state: &MomentState, dv: f64, dt: f64) -> Result<MomentState> {
        let mut diag = TrialDiagnostics::new();
        self.step_with_diag(state, dv, dt, &mut diag)
    }

    fn step_with_diag(
        &self,
        state: &MomentState,
        dv: f64,
        dt: f64,
        diag: &mut TrialDiagnostics,
    ) -> Result<MomentState> {
        let cap = self.controls.moment_cap;
        let q = self.coupling_q(state);
        let b0 = self.risk.drift(state.x);
        let s0 = self.risk.diffusion(state.x);

        let mut next = Vec::with_capacity(self.classes.len());
        for (c, u) in self.classes.iter().zip(&state.u) {
            let (alpha, lambda_bar) = match &c.drift {
                crate::model::DriftSpec::Affine {
                    alpha_bar,
                    lambda_bar,
                } => (*alpha_bar, *lambda_bar),
                _ => unreachable!("checked at construction"),
            };
            let bc_q: f64 = c.beta_c.iter().zip(&q).map(|(b, qj)| b * qj).sum();
            let sigma_sq = c.sigma * c.sigma;
            let bs = c.beta_s;

            let mut new_u = vec![0.0; cap + 1];
            new_u[0] = u[0] - u[1] * dt;
            for k in 1..=cap {
                let kf = k as f64;
                let kk1 = kf * (kf - 1.0);
                let u_above = if k == cap {
                    match self.controls.closure_rule {
                        ClosureRule::CopyLast => u[cap],
                        ClosureRule::Zero => 0.0,
                    }
                } else {
                    u[k + 1]
                };
                let drift = u[k] * (kf * (-alpha + bs * b0) + 0.5 * bs * bs * s0 * s0 * kk1)
                    + u[k - 1] * (0.5 * sigma_sq * kk1 + alpha * lambda_bar * kf + kf * bc_q)
                    - u_above;
                let diffusion = bs * s0 * kf * u[k];
                new_u[k] = u[k] + drift * dt + diffusion * dv;
            }

            diag.u0_min = diag.u0_min.min(new_u[0]);
            diag.u0_max = diag.u0_max.max(new_u[0]);
            diag.u0_max_step_increase = diag.u0_max_step_increase.max(new_u[0] - u[0]);
            for v in new_u.iter_mut() {
                if !v.is_finite() || v.abs() > MOMENT_GUARD {
                    return Err(Error::NumericalBlowup {
                        quantity: "moment u_k",
                        value: *v,
                        t: state.t,
                    });
                }
                if *v < NEGATIVE_MOMENT_TOL {
                    *v = 0.0;
                    diag.negative_clamps += 1;
                }
            }
            next.push(new_u);
        }

        Ok(MomentState {
            t: state.t + dt,
            x: state.x + b0 * dt + s0 * dv,
            u: next,
        })
    }

    fn record(&self, state: &MomentState, step: usize, curves: &mut GridCurves) {
        let mut d_bar = 0.0;
        let mut loss = self.ell_bar.clone();
        for (ci, (c, u)) in self.classes.iter().zip(&state.u).enumerate() {
            d_bar += c.weight * u[0];
            curves.d_by_type[ci][step] = 1.0 - u[0];
            for (lj, ell) in loss.iter_mut().zip(&c.ell) {
                *lj -= c.weight * ell * u[0];
            }
        }
        curves.d[step] = 1.0 - d_bar;
        for (j, lj) in loss.iter().enumerate() {
            curves.cluster_loss[j][step] = *lj;
        }
        for (ci, c) in self.classes.iter().enumerate() {
            curves.q_by_type[ci][step] = c.beta_c.iter().zip(&loss).map(|(b, l)| b * l).sum();
        }
        curves.x[step] = state.x;
    }

    /// Integrates one trial: a fresh `V` path from the trial seed, the
    /// hierarchy on the grid, and the derived loss/impact curves.
    pub fn solve_trial(&self, seed: u64) -> Result<TrialPath> {
        let dt = self.controls.dt;
        let mut vrng = Streams::new(seed).common();
        let mut diag = TrialDiagnostics::new();
        let mut state = self.initial_state();
        let mut curves = GridCurves::zeros(self.steps, self.classes.len(), self.rank, dt);
        self.record(&state, 0, &mut curves);
        for step in 1..=self.steps {
            let z: f64 = vrng.sample(StandardNormal);
            state = self.step_with_diag(&state, z * dt.sqrt(), dt, &mut diag)?;
            self.record(&state, step, &mut curves);
        }
        Ok(TrialPath {
            curves,
            diagnostics: diag,
        })
    }

    /// Runs `controls.trials` independent `V` paths and aggregates.
    /// Deterministic for a fixed seed regardless of thread count.
    pub fn solve_ensemble(&self) -> Result<LimitOutput> {
        let master = self.controls.seed;
        let n_types = self.classes.len();
        let folded = try_par_chunk_fold(
            self.controls.trials,
            || {
                (
                    CurveSums::zeros(self.steps, n_types, self.rank, self.controls.dt),
                    TrialDiagnostics::new(),
                )
            },
            |(mut sums, diag), i| {
                let trial = self.solve_trial(trial_seed(master, i as u64))?;
                sums.add(&trial.curves);
                Ok((sums, diag.merge(trial.diagnostics)))
            },
            |(a, da), (b, db)| (a.merge(b), da.merge(db)),
        )?;
        let (sums, diagnostics) = folded;
        let trials = sums.trials;
        let (mean, d_final) = sums.into_means();
        Ok(LimitOutput {
            mean,
            d_final,
            trials,
            diagnostics,
        })
    }
}

/// Percent-error entry for one dynamics class of the full system matched
/// against its counterpart in the reduced system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassPercentError {
    /// Contagion coefficients of the full class.
    pub beta_c: Vec<f64>,
    /// Index of the matching class in the reduced system.
    pub reduced_class: usize,
    /// `max_t |Q_full - Q_reduced| / Q_full` over grid times with
    /// `Q_full != 0`.
    pub max_pe: f64,
}

/// Output of a full-vs-reduced comparison under matched seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    /// `max_t |mean D_t - mean D_reduced,t|`.
    pub max_d_gap: f64,
    pub per_class: Vec<ClassPercentError>,
    /// Max of `per_class.max_pe`.
    pub max_pe: f64,
    pub wall_full_secs: f64,
    pub wall_reduced_secs: f64,
    /// full / reduced.
    pub wall_ratio: f64,
}

/// Runs the full and reduced scenarios with matched controls and seeds (so
/// `V` paths agree trial by trial) and reports the loss-rate gap, the
/// percent error of mean impacts per type, and the wall-clock ratio.
///
/// The reduced scenario must be a leading-cluster truncation of the full
/// one: every full class must match exactly one reduced class on its first
/// `reduced.rank` contagion coefficients.
pub fn compare_lowrank(
    full: &ScenarioConfig,
    reduced: &ScenarioConfig,
) -> Result<(CompareReport, LimitOutput, LimitOutput)> {
    if full.controls != reduced.controls {
        return Err(Error::malformed(
            "compare requires identical solver controls (grid, trials, seed, closure)",
        ));
    }
    if full.risk != reduced.risk {
        return Err(Error::malformed("compare requires an identical factor process"));
    }
    if reduced.rank > full.rank {
        return Err(Error::malformed(
            "reduced scenario must not have more clusters than the full one",
        ));
    }
    let sys_full = MomentSystem::new(full)?;
    let sys_red = MomentSystem::new(reduced)?;

    let t0 = Instant::now();
    let out_full = sys_full.solve_ensemble()?;
    let wall_full = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let out_red = sys_red.solve_ensemble()?;
    let wall_red = t1.elapsed().as_secs_f64();

    let rp = reduced.rank;
    let mut per_class = Vec::new();
    let mut max_pe: f64 = 0.0;
    for (fi, fc) in sys_full.classes().iter().enumerate() {
        let matches: Vec<usize> = sys_red
            .classes()
            .iter()
            .enumerate()
            .filter(|(_, rc)| {
                rc.beta_c
                    .iter()
                    .zip(&fc.beta_c[..rp])
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0))
            })
            .map(|(i, _)| i)
            .collect();
        let ri = match matches.as_slice() {
            [one] => *one,
            [] => {
                return Err(Error::malformed(format!(
                    "full class {fi} has no reduced counterpart (beta prefix {:?})",
                    &fc.beta_c[..rp]
                )))
            }
            _ => {
                return Err(Error::malformed(format!(
                    "full class {fi} matches several reduced classes"
                )))
            }
        };
        let qf = &out_full.mean.q_by_type[fi];
        let qr = &out_red.mean.q_by_type[ri];
        let mut pe: f64 = 0.0;
        for (a, b) in qf.iter().zip(qr) {
            if *a != 0.0 {
                pe = pe.max((a - b).abs() / a.abs());
            }
        }
        max_pe = max_pe.max(pe);
        per_class.push(ClassPercentError {
            beta_c: fc.beta_c.clone(),
            reduced_class: ri,
            max_pe: pe,
        });
    }

    let max_d_gap = out_full
        .mean
        .d
        .iter()
        .zip(&out_red.mean.d)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let report = CompareReport {
        max_d_gap,
        per_class,
        max_pe,
        wall_full_secs: wall_full,
        wall_reduced_secs: wall_red,
        wall_ratio: wall_full / wall_red,
    };
    Ok((report, out_full, out_red))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::one_cluster_config;

    fn system() -> MomentSystem {
        MomentSystem::new(&one_cluster_config()).unwrap()
    }

    #[test]
    fn initial_moments_are_powers_of_lambda0() {
        let sys = system();
        let s = sys.initial_state();
        for u in &s.u {
            for (k, v) in u.iter().enumerate() {
                assert_eq!(*v, 0.2f64.powi(k as i32), "k = {k}");
            }
        }
    }

    #[test]
    fn coupling_q_at_start_matches_arithmetic() {
        // Q_1(0) = ell * lambda0 = 0.0316 * 0.2 = 0.00632 for equal-weight
        // types sharing ell.
        let sys = system();
        let q = sys.coupling_q(&sys.initial_state());
        assert!((q[0] - 0.00632).abs() < 1e-15, "{}", q[0]);
    }

    #[test]
    fn coupling_q_zero_when_ell_zero() {
        let mut cfg = one_cluster_config();
        for t in &mut cfg.types {
            t.ell = vec![0.0];
        }
        let sys = MomentSystem::new(&cfg).unwrap();
        let q = sys.coupling_q(&sys.initial_state());
        assert_eq!(q, vec![0.0]);
    }

    #[test]
    fn coupling_q_two_type_hand_value() {
        // Hand-set u_1 on distinct types: Q = 0.5*0.04*0.7 + 0.5*(-0.01)*0.3.
        let mut cfg = one_cluster_config();
        cfg.types[0].ell = vec![0.04];
        cfg.types[1].ell = vec![-0.01];
        let sys = MomentSystem::new(&cfg).unwrap();
        let mut st = sys.initial_state();
        // canonical order sorts by beta_c ascending: class 0 is beta=0.6362
        // (which kept ell = -0.01), class 1 is beta=1.2361 (ell = 0.04).
        assert_eq!(sys.classes()[0].ell[0], -0.01);
        st.u[0][1] = 0.3;
        st.u[1][1] = 0.7;
        let expect = 0.5 * (-0.01) * 0.3 + 0.5 * 0.04 * 0.7;
        assert!((sys.coupling_q(&st)[0] - expect).abs() < 1e-16);
    }

    #[test]
    fn mass_equation_is_exact() {
        let sys = system();
        let s0 = sys.initial_state();
        let s1 = sys.step_moments(&s0, 0.013, 0.01).unwrap();
        for (u0, u1) in s0.u.iter().zip(&s1.u) {
            assert_eq!(u1[0], u0[0] - u0[1] * 0.01);
        }
    }

    #[test]
    fn one_step_matches_expanded_update() {
        // Independent transcription of the k = 1, 2 updates for the
        // two-type system at K = 2, evaluated with explicit scalars.
        let mut cfg = one_cluster_config();
        cfg.controls.moment_cap = 2;
        let sys = MomentSystem::new(&cfg).unwrap();
        let dt = 0.01;
        let dv = 0.05;
        let state = sys.initial_state();
        let next = sys.step_moments(&state, dv, dt).unwrap();

        let (kappa, theta, eps, x): (f64, f64, f64, f64) = (4.0, 0.5, 0.5, 0.2);
        let (alpha, lam_bar, sigma, bs, ell) = (4.0, 0.2, 0.9, 2.0, 0.0316);
        let b0 = kappa * (theta - x);
        let s0 = eps * x.sqrt();
        let q = ell * (0.5 * 0.2 + 0.5 * 0.2);
        // classes in ascending beta order
        for (ci, beta) in [0.6362, 1.2361].iter().enumerate() {
            let (u0, u1, u2) = (1.0, 0.2, 0.04);
            let u3 = u2; // CopyLast closure at K = 2
            let du1 = (u1 * (-alpha + bs * b0) + u0 * (alpha * lam_bar + beta * q) - u2) * dt
                + bs * s0 * u1 * dv;
            let du2 = (u2 * 2.0 * (-alpha + bs * b0)
                + u2 * 0.5 * bs * bs * s0 * s0 * 2.0
                + u1 * (0.5 * sigma * sigma * 2.0 + alpha * lam_bar * 2.0 + 2.0 * beta * q)
                - u3)
                * dt
                + bs * s0 * 2.0 * u2 * dv;
            assert!((next.u[ci][1] - (u1 + du1)).abs() < 1e-15, "class {ci} k=1");
            assert!((next.u[ci][2] - (u2 + du2)).abs() < 1e-15, "class {ci} k=2");
        }
    }

    #[test]
    fn bundled_scale_ensemble_completes_without_blowup() {
        // At the bundled parameters the top-moment noise coefficient is
        // large (B_K ~ 14); the log-normal factor must carry hundreds of
        // trials without tripping the moment guard.
        let mut cfg = one_cluster_config();
        cfg.controls.trials = 400;
        let sys = MomentSystem::new(&cfg).unwrap();
        let out = sys.solve_ensemble().unwrap();
        assert_eq!(out.trials, 400);
    }

    #[test]
    fn guard_trips_on_runaway_positive_feedback() {
        // Strong enough contagion coupling (beta_c . Q feeding u_1 back
        // into itself through Q) grows the ladder by ~1e4 per step.
        let mut cfg = one_cluster_config();
        for t in &mut cfg.types {
            t.beta_c = vec![1e3];
            t.ell = vec![1e3];
        }
        let sys = MomentSystem::new(&cfg).unwrap();
        assert!(matches!(
            sys.solve_trial(1),
            Err(Error::NumericalBlowup { .. })
        ));
    }

    #[test]
    fn trial_starts_at_zero_loss() {
        let sys = system();
        let path = sys.solve_trial(1).unwrap();
        assert_eq!(path.curves.d[0], 0.0);
        for l in &path.curves.cluster_loss {
            assert_eq!(l[0], 0.0);
        }
    }

    #[test]
    fn q_ordering_holds_path_by_path() {
        // beta^{C,1} > beta^{C,2} with shared nonnegative L forces
        // Q_t(p1) >= Q_t(p2) at every grid time of every trial.
        let sys = system();
        for trial in 0..20 {
            let path = sys.solve_trial(trial_seed(7, trial)).unwrap();
            let strong = &path.curves.q_by_type[1]; // beta = 1.2361
            let weak = &path.curves.q_by_type[0]; // beta = 0.6362
            for (a, b) in strong.iter().zip(weak) {
                assert!(a >= b, "Q ordering violated: {a} < {b}");
            }
        }
    }

    #[test]
    fn single_trial_ensemble_equals_trial() {
        let mut cfg = one_cluster_config();
        cfg.controls.trials = 1;
        let sys = MomentSystem::new(&cfg).unwrap();
        let ens = sys.solve_ensemble().unwrap();
        let single = sys.solve_trial(trial_seed(cfg.controls.seed, 0)).unwrap();
        assert_eq!(ens.mean.d, single.curves.d);
        assert_eq!(ens.d_final, vec![single.curves.d_final()]);
    }

    #[test]
    fn no_common_noise_means_zero_variance() {
        // eps -> 0 removes the only randomness of the limit.
        let mut cfg = one_cluster_config();
        cfg.risk.eps = 1e-300;
        cfg.controls.trials = 8;
        let sys = MomentSystem::new(&cfg).unwrap();
        let ens = sys.solve_ensemble().unwrap();
        assert!(ens.var_d_final() < 1e-25);
    }

    #[test]
    fn closure_rules_agree_at_k20() {
        let base = one_cluster_config();
        let sys_copy = MomentSystem::new(&base).unwrap();
        let mut zero_cfg = base.clone();
        zero_cfg.controls.closure_rule = ClosureRule::Zero;
        let sys_zero = MomentSystem::new(&zero_cfg).unwrap();
        let seed = trial_seed(base.controls.seed, 0);
        let a = sys_copy.solve_trial(seed).unwrap();
        let b = sys_zero.solve_trial(seed).unwrap();
        let gap = a
            .curves
            .d
            .iter()
            .zip(&b.curves.d)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-3, "closure sensitivity {gap}");
    }

    #[test]
    fn permuting_types_leaves_output_unchanged() {
        let cfg = one_cluster_config();
        let mut flipped = cfg.clone();
        flipped.types.reverse();
        let seed = 99;
        let a = MomentSystem::new(&cfg).unwrap().solve_trial(seed).unwrap();
        let b = MomentSystem::new(&flipped)
            .unwrap()
            .solve_trial(seed)
            .unwrap();
        assert_eq!(a.curves, b.curves);
    }

    #[test]
    fn subprobability_band_and_monotonicity() {
        let sys = system();
        for trial in 0..10 {
            let p = sys.solve_trial(trial_seed(3, trial)).unwrap();
            assert!(p.diagnostics.u0_min >= -1e-6);
            assert!(p.diagnostics.u0_max <= 1.0 + 1e-6);
            assert!(p.diagnostics.u0_max_step_increase <= 1e-6);
        }
    }

    #[test]
    fn polynomial_drift_rejected() {
        let mut cfg = one_cluster_config();
        cfg.types[0].drift = crate::model::DriftSpec::Polynomial {
            coefficients: vec![1.0, 0.0, 0.0, -1.0],
        };
        assert!(matches!(
            MomentSystem::new(&cfg),
            Err(Error::SolverRestriction(_))
        ));
    }

    #[test]
    fn compare_identical_scenarios_gives_zero_pe() {
        let mut cfg = one_cluster_config();
        cfg.controls.trials = 4;
        let (report, _, _) = compare_lowrank(&cfg, &cfg).unwrap();
        assert_eq!(report.max_pe, 0.0);
        assert_eq!(report.max_d_gap, 0.0);
    }

    #[test]
    fn compare_rejects_mismatched_controls() {
        let cfg = one_cluster_config();
        let mut other = cfg.clone();
        other.controls.seed ^= 1;
        assert!(compare_lowrank(&cfg, &other).is_err());
    }
}
