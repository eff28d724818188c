//! Finite-pool simulation of the interacting intensity system.
//!
//! Every name carries an intensity following
//!
//! ```text
//! d lambda^n = b(lambda^n) dt + sigma_n (lambda^n v 0)^rho dW^n
//!              + beta_c_n . dL^N + beta_s_n lambda^n dX
//! ```
//!
//! where `L^N_j = (1/N) sum_i ell_{i,j} 1{tau_i <= t}` routes defaults
//! through the network: when name `i` defaults, every surviving intensity
//! jumps by `(1/N) beta_c_n . ell_i` (entry `omega(i, n)/N` of the
//! adjacency matrix). Name `n` defaults once its accumulated hazard
//! `int lambda^n ds` crosses an independent standard-exponential threshold.
//!
//! Discretization is explicit Euler–Maruyama with full truncation:
//! diffusion coefficients evaluate `(lambda v 0)^rho` and `(x v 0)^(1/2)`,
//! the post-step intensity is floored at 0, and the hazard integral is a
//! left-endpoint Riemann sum. Defaults detected within a step are
//! processed in ascending name order and all contagion jumps are applied
//! at step end, after the default sweep; simultaneous defaults have
//! probability zero in the model, so any deterministic rule is admissible.
//! Defaulted names are frozen — they no longer enter any statistic.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{NameType, ScenarioConfig};
use crate::network::NetworkSvd;
use crate::path::{DefaultEvent, GridCurves};
use crate::rng::{trial_seed, Streams};
use crate::stats::{try_par_chunk_fold, CurveSums};
use crate::Result;

/// Intensity guard; beyond this the step size is considered unstable.
pub const INTENSITY_GUARD: f64 = 1e6;

/// Mutable per-pool state while a trial runs.
///
/// Invariants maintained by the stepper: `hazard` is nonnegative and
/// nondecreasing per step while alive; `alive[n]` flips to false exactly
/// once `hazard[n] >= threshold[n]`; `lambda[n]` is frozen after default.
#[derive(Debug, Clone)]
pub struct PoolState {
    pub t: f64,
    pub lambda: Vec<f64>,
    pub hazard: Vec<f64>,
    pub threshold: Vec<f64>,
    pub alive: Vec<bool>,
    pub x: f64,
}

/// Numerical diagnostics of one finite-pool trial.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoolDiagnostics {
    /// Smallest intensity observed after flooring (>= 0 by construction).
    pub min_intensity: f64,
    /// `(1/(N (steps+1))) sum_{n,k} lambda` — empirical first moment.
    pub lambda_mean_p1: f64,
    /// Same for `lambda^2`.
    pub lambda_mean_p2: f64,
}

/// One simulated pool path: loss/impact curves on the grid, the default
/// events that generated them, and diagnostics.
#[derive(Debug, Clone)]
pub struct PathOutput {
    pub curves: GridCurves,
    pub defaults: Vec<DefaultEvent>,
    pub diagnostics: PoolDiagnostics,
}

/// Ensemble of pool trials: mean curves plus terminal loss rates per trial.
#[derive(Debug, Clone)]
pub struct PoolEnsemble {
    pub mean: GridCurves,
    pub d_final: Vec<f64>,
    pub trials: usize,
    pub min_intensity: f64,
}

/// Deterministic block assignment of names to types, proportional to the
/// type weights: boundaries at `round(cum_weight * n)`.
pub fn assign_types(types: &[NameType], n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut start = 0usize;
    for (i, t) in types.iter().enumerate() {
        cum += t.weight;
        let end = if i + 1 == types.len() {
            n
        } else {
            (cum * n as f64).round() as usize
        };
        out.resize(out.len() + end.saturating_sub(start), i);
        start = end.max(start);
    }
    debug_assert_eq!(out.len(), n);
    out
}

/// Per-name network data: contagion row and left-factor row.
struct Roster {
    type_idx: Vec<usize>,
    beta_c: Vec<Vec<f64>>,
    ell: Vec<Vec<f64>>,
}

fn build_roster(
    config: &ScenarioConfig,
    svd: Option<&NetworkSvd>,
    n: usize,
) -> Result<Roster> {
    let type_idx = assign_types(&config.types, n);
    let (beta_c, ell) = match svd {
        Some(svd) => {
            if svd.dim() != n {
                return Err(Error::malformed(format!(
                    "pool size {n} does not match network dimension {}",
                    svd.dim()
                )));
            }
            if svd.rank() != config.rank {
                return Err(Error::malformed(format!(
                    "network rank {} does not match config rank {}",
                    svd.rank(),
                    config.rank
                )));
            }
            (
                (0..n).map(|i| svd.beta_row(i)).collect(),
                (0..n).map(|i| svd.ell_row(i)).collect(),
            )
        }
        None => (
            type_idx
                .iter()
                .map(|&ti| config.types[ti].beta_c.clone())
                .collect(),
            type_idx
                .iter()
                .map(|&ti| config.types[ti].ell.clone())
                .collect(),
        ),
    };
    Ok(Roster {
        type_idx,
        beta_c,
        ell,
    })
}

/// Simulates one full path of the interacting pool.
///
/// Per-name network vectors come from the types, or from the rows of `svd`
/// when one is supplied (its dimension must equal the pool size). All
/// noise derives from `trial_seed`; the common stream matches the one the
/// limit solvers use for the same seed.
pub fn simulate_pool(
    config: &ScenarioConfig,
    svd: Option<&NetworkSvd>,
    trial_seed: u64,
) -> Result<PathOutput> {
    simulate_pool_with_streams(config, svd, trial_seed, trial_seed)
}

/// As [`simulate_pool`], but with the common-factor stream and the
/// idiosyncratic streams seeded separately. Conditional experiments fix
/// `common_seed` while varying `idio_seed`.
pub fn simulate_pool_with_streams(
    config: &ScenarioConfig,
    svd: Option<&NetworkSvd>,
    common_seed: u64,
    idio_seed: u64,
) -> Result<PathOutput> {
    config.check_malformed()?;
    let n = config
        .pool_size
        .ok_or_else(|| Error::malformed("pool_size required for finite-pool runs"))?;
    let steps = config.controls.steps()?;
    let dt = config.controls.dt;
    let sqrt_dt = dt.sqrt();
    let rank = config.rank;
    let roster = build_roster(config, svd, n)?;

    let mut vrng = Streams::new(common_seed).common();
    let idio = Streams::new(idio_seed);
    let mut name_rngs: Vec<_> = (0..n).map(|i| idio.name(i)).collect();

    let mut state = PoolState {
        t: 0.0,
        lambda: roster
            .type_idx
            .iter()
            .map(|&ti| config.types[ti].lambda0)
            .collect(),
        hazard: vec![0.0; n],
        threshold: name_rngs.iter_mut().map(|r| r.sample(Exp1)).collect(),
        alive: vec![true; n],
        x: config.risk.x0,
    };

    let mut defaults: Vec<DefaultEvent> = Vec::new();
    let mut x_path = Vec::with_capacity(steps + 1);
    x_path.push(state.x);
    let mut diag = PoolDiagnostics {
        min_intensity: f64::INFINITY,
        lambda_mean_p1: 0.0,
        lambda_mean_p2: 0.0,
    };
    let tally = |diag: &mut PoolDiagnostics, lambda: &[f64]| {
        for &l in lambda {
            diag.min_intensity = diag.min_intensity.min(l);
            diag.lambda_mean_p1 += l;
            diag.lambda_mean_p2 += l * l;
        }
    };
    tally(&mut diag, &state.lambda);

    let mut newly_defaulted: Vec<usize> = Vec::new();
    for step in 0..steps {
        let z: f64 = vrng.sample(StandardNormal);
        let dv = z * sqrt_dt;
        let b0 = config.risk.drift(state.x);
        let s0 = config.risk.diffusion(state.x);
        let x_next = state.x + b0 * dt + s0 * dv;
        let dx = x_next - state.x;
        let t_next = (step + 1) as f64 * dt;

        for i in 0..n {
            if !state.alive[i] {
                continue;
            }
            let ty = &config.types[roster.type_idx[i]];
            let lam = state.lambda[i];
            state.hazard[i] += lam * dt;
            let dw: f64 = name_rngs[i].sample::<f64, _>(StandardNormal) * sqrt_dt;
            let vol = if ty.rho == 0.5 {
                lam.max(0.0).sqrt()
            } else {
                lam.max(0.0).powf(ty.rho)
            };
            let next = lam + ty.drift.eval(lam) * dt + ty.sigma * vol * dw + ty.beta_s * lam * dx;
            if !next.is_finite() || next.abs() > INTENSITY_GUARD {
                return Err(Error::NumericalBlowup {
                    quantity: "intensity",
                    value: next,
                    t: state.t,
                });
            }
            state.lambda[i] = next.max(0.0);
        }

        // Default sweep in ascending name order, then one jump pass.
        newly_defaulted.clear();
        for i in 0..n {
            if state.alive[i] && state.hazard[i] >= state.threshold[i] {
                state.alive[i] = false;
                newly_defaulted.push(i);
                defaults.push(DefaultEvent {
                    name: i,
                    type_idx: roster.type_idx[i],
                    time: t_next,
                });
            }
        }
        if !newly_defaulted.is_empty() {
            let mut ell_sum = vec![0.0; rank];
            for &i in &newly_defaulted {
                for (acc, v) in ell_sum.iter_mut().zip(&roster.ell[i]) {
                    *acc += v;
                }
            }
            let inv_n = 1.0 / n as f64;
            for i in 0..n {
                if !state.alive[i] {
                    continue;
                }
                let jump: f64 = roster.beta_c[i]
                    .iter()
                    .zip(&ell_sum)
                    .map(|(b, l)| b * l)
                    .sum();
                let next = state.lambda[i] + inv_n * jump;
                if !next.is_finite() || next.abs() > INTENSITY_GUARD {
                    return Err(Error::NumericalBlowup {
                        quantity: "intensity",
                        value: next,
                        t: state.t,
                    });
                }
                state.lambda[i] = next.max(0.0);
            }
        }

        state.x = x_next;
        state.t = t_next;
        x_path.push(state.x);
        tally(&mut diag, &state.lambda);
    }

    let scale = 1.0 / (n as f64 * (steps + 1) as f64);
    diag.lambda_mean_p1 *= scale;
    diag.lambda_mean_p2 *= scale;

    let type_beta: Vec<Vec<f64>> = config.types.iter().map(|t| t.beta_c.clone()).collect();
    let mut curves = portfolio_stats(
        &roster.type_idx,
        &roster.ell,
        &type_beta,
        &defaults,
        steps,
        dt,
        rank,
    );
    curves.x = x_path;
    Ok(PathOutput {
        curves,
        defaults,
        diagnostics: diag,
    })
}

/// Rebuilds the portfolio statistics from default events alone:
/// `D_t = (1/N) sum 1{tau <= t}`, the per-type loss fractions,
/// `L_t^j = (1/N) sum_i ell_{i,j} 1{tau_i <= t}` and
/// `Q_t(type) = beta_c(type) . L_t`. The `x` series of the result is left
/// zeroed; the caller owns the factor path.
pub fn portfolio_stats(
    type_idx: &[usize],
    ell_rows: &[Vec<f64>],
    type_beta: &[Vec<f64>],
    defaults: &[DefaultEvent],
    steps: usize,
    dt: f64,
    rank: usize,
) -> GridCurves {
    let n = type_idx.len();
    let n_types = type_beta.len();
    let mut type_counts = vec![0usize; n_types];
    for &ti in type_idx {
        type_counts[ti] += 1;
    }

    let mut by_step: Vec<Vec<&DefaultEvent>> = vec![Vec::new(); steps + 1];
    for e in defaults {
        let k = (e.time / dt).round() as usize;
        by_step[k.min(steps)].push(e);
    }

    let mut curves = GridCurves::zeros(steps, n_types, rank, dt);
    let mut defaulted = 0usize;
    let mut defaulted_by_type = vec![0usize; n_types];
    let mut ell_acc = vec![0.0; rank];
    for k in 0..=steps {
        for e in &by_step[k] {
            defaulted += 1;
            defaulted_by_type[e.type_idx] += 1;
            for (acc, v) in ell_acc.iter_mut().zip(&ell_rows[e.name]) {
                *acc += v;
            }
        }
        curves.d[k] = defaulted as f64 / n as f64;
        for ti in 0..n_types {
            curves.d_by_type[ti][k] = if type_counts[ti] == 0 {
                0.0
            } else {
                defaulted_by_type[ti] as f64 / type_counts[ti] as f64
            };
        }
        for j in 0..rank {
            curves.cluster_loss[j][k] = ell_acc[j] / n as f64;
        }
        for ti in 0..n_types {
            curves.q_by_type[ti][k] = type_beta[ti]
                .iter()
                .enumerate()
                .map(|(j, b)| b * curves.cluster_loss[j][k])
                .sum();
        }
    }
    curves
}

/// Runs `controls.trials` independent pool paths and aggregates mean
/// curves. Deterministic for a fixed seed regardless of thread count.
pub fn pool_ensemble(
    config: &ScenarioConfig,
    svd: Option<&NetworkSvd>,
) -> Result<PoolEnsemble> {
    config.check_malformed()?;
    let steps = config.controls.steps()?;
    let n_types = config.types.len();
    let master = config.controls.seed;
    let (sums, min_intensity) = try_par_chunk_fold(
        config.controls.trials,
        || {
            (
                CurveSums::zeros(steps, n_types, config.rank, config.controls.dt),
                f64::INFINITY,
            )
        },
        |(mut sums, min_i), i| {
            let path = simulate_pool(config, svd, trial_seed(master, i as u64))?;
            sums.add(&path.curves);
            Ok((sums, min_i.min(path.diagnostics.min_intensity)))
        },
        |(a, ma), (b, mb)| (a.merge(b), ma.min(mb)),
    )?;
    let trials = sums.trials;
    let (mean, d_final) = sums.into_means();
    Ok(PoolEnsemble {
        mean,
        d_final,
        trials,
        min_intensity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::one_cluster_config;
    use crate::model::DriftSpec;

    /// Pool whose intensities stay frozen at `lambda0` (no noise, no
    /// coupling, drift vanishing on the path).
    fn frozen_pool(lambda0: f64, n: usize) -> ScenarioConfig {
        let mut cfg = one_cluster_config();
        cfg.types.truncate(1);
        let t = &mut cfg.types[0];
        t.weight = 1.0;
        t.sigma = 0.0;
        t.beta_s = 0.0;
        t.beta_c = vec![0.0];
        t.drift = DriftSpec::Affine {
            alpha_bar: 1.0,
            lambda_bar: lambda0,
        };
        t.lambda0 = lambda0;
        cfg.pool_size = Some(n);
        cfg
    }

    #[test]
    fn zero_intensity_pool_never_defaults() {
        let cfg = frozen_pool(0.0, 200);
        let out = simulate_pool(&cfg, None, 7).unwrap();
        assert!(out.defaults.is_empty());
        assert_eq!(out.curves.d_final(), 0.0);
        for q in &out.curves.q_by_type {
            assert!(q.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn unit_intensity_pool_matches_exponential_law() {
        // lambda == 1 makes defaults i.i.d. Exp(1) clocks:
        // D_1 = 1 - e^{-1} within the 3-sigma binomial band.
        let cfg = frozen_pool(1.0, 5000);
        let out = simulate_pool(&cfg, None, 20260810).unwrap();
        let expect = 1.0 - (-1.0f64).exp();
        let band = 3.0 * (expect * (1.0 - expect) / 5000.0).sqrt();
        let got = out.curves.d_final();
        assert!(
            (got - expect).abs() <= band,
            "D_T = {got}, expected {expect} +- {band}"
        );
    }

    #[test]
    fn block_assignment_follows_weights() {
        let cfg = one_cluster_config();
        let idx = assign_types(&cfg.types, 10);
        assert_eq!(idx, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn block_assignment_handles_rounding() {
        let mut cfg = one_cluster_config();
        cfg.types[0].weight = 0.7;
        cfg.types[1].weight = 0.3;
        let idx = assign_types(&cfg.types, 9);
        // round(0.7 * 9) = 6 names of type 0, rest type 1.
        assert_eq!(idx.iter().filter(|&&i| i == 0).count(), 6);
        assert_eq!(idx.len(), 9);
    }

    #[test]
    fn hand_built_four_name_pool_statistics() {
        // N = 4, two types, r = 2; names 0,1 type A (ell (0.5, 0.1)),
        // names 2,3 type B (ell (0.25, -0.2)). Scripted defaults: name 1
        // at t = 0.25, name 2 at t = 0.75.
        //
        // Hand computation at t = 0.5: one default (name 1):
        //   D = 1/4; D_A = 1/2; D_B = 0;
        //   L_1 = 0.5/4 = 0.125; L_2 = 0.1/4 = 0.025
        //   Q_A = 1.0*0.125 + 2.0*0.025 = 0.175
        //   Q_B = 3.0*0.125 + 0.5*0.025 = 0.3875
        // At t = 1.0: names 1 and 2 defaulted:
        //   D = 1/2; D_A = 1/2; D_B = 1/2
        //   L_1 = (0.5 + 0.25)/4 = 0.1875; L_2 = (0.1 - 0.2)/4 = -0.025
        //   Q_A = 1.0*0.1875 + 2.0*(-0.025) = 0.1375
        //   Q_B = 3.0*0.1875 + 0.5*(-0.025) = 0.55
        let type_idx = vec![0, 0, 1, 1];
        let ell_rows = vec![
            vec![0.5, 0.1],
            vec![0.5, 0.1],
            vec![0.25, -0.2],
            vec![0.25, -0.2],
        ];
        let type_beta = vec![vec![1.0, 2.0], vec![3.0, 0.5]];
        let defaults = vec![
            DefaultEvent {
                name: 1,
                type_idx: 0,
                time: 0.25,
            },
            DefaultEvent {
                name: 2,
                type_idx: 1,
                time: 0.75,
            },
        ];
        let curves = portfolio_stats(&type_idx, &ell_rows, &type_beta, &defaults, 4, 0.25, 2);
        let k_half = 2; // t = 0.5
        assert_eq!(curves.d[k_half], 0.25);
        assert_eq!(curves.d_by_type[0][k_half], 0.5);
        assert_eq!(curves.d_by_type[1][k_half], 0.0);
        assert!((curves.cluster_loss[0][k_half] - 0.125).abs() < 1e-12);
        assert!((curves.cluster_loss[1][k_half] - 0.025).abs() < 1e-12);
        assert!((curves.q_by_type[0][k_half] - 0.175).abs() < 1e-12);
        assert!((curves.q_by_type[1][k_half] - 0.3875).abs() < 1e-12);
        let k_end = 4;
        assert_eq!(curves.d[k_end], 0.5);
        assert!((curves.cluster_loss[0][k_end] - 0.1875).abs() < 1e-12);
        assert!((curves.cluster_loss[1][k_end] + 0.025).abs() < 1e-12);
        assert!((curves.q_by_type[0][k_end] - 0.1375).abs() < 1e-12);
        assert!((curves.q_by_type[1][k_end] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn all_defaulted_saturates_statistics() {
        // Huge lambda0 forces everyone out almost immediately.
        let mut cfg = frozen_pool(400.0, 50);
        cfg.types[0].ell = vec![0.3];
        let out = simulate_pool(&cfg, None, 3).unwrap();
        assert_eq!(out.curves.d_final(), 1.0);
        let l_t = *out.curves.cluster_loss[0].last().unwrap();
        assert!((l_t - 0.3).abs() < 1e-12, "L_T = mean ell, got {l_t}");
    }

    #[test]
    fn intensities_stay_nonnegative() {
        let mut cfg = one_cluster_config();
        cfg.pool_size = Some(300);
        let out = simulate_pool(&cfg, None, 11).unwrap();
        assert!(out.diagnostics.min_intensity >= 0.0);
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let mut cfg = one_cluster_config();
        cfg.pool_size = Some(200);
        let a = simulate_pool(&cfg, None, 5).unwrap();
        let b = simulate_pool(&cfg, None, 5).unwrap();
        assert_eq!(a.curves, b.curves);
        assert_eq!(a.defaults, b.defaults);
    }

    #[test]
    fn ensemble_deterministic_across_thread_counts() {
        let mut cfg = one_cluster_config();
        cfg.pool_size = Some(100);
        cfg.controls.trials = 48;
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| pool_ensemble(&cfg, None))
            .unwrap();
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| pool_ensemble(&cfg, None))
            .unwrap();
        assert_eq!(single.mean, multi.mean);
        assert_eq!(single.d_final, multi.d_final);
    }

    #[test]
    fn default_rate_grows_with_contagion() {
        // Switching contagion off lowers terminal losses.
        let mut with = one_cluster_config();
        with.pool_size = Some(500);
        with.controls.trials = 20;
        let mut without = with.clone();
        for t in &mut without.types {
            t.beta_c = vec![0.0];
        }
        let a = pool_ensemble(&with, None).unwrap();
        let b = pool_ensemble(&without, None).unwrap();
        assert!(
            crate::stats::mean(&a.d_final) > crate::stats::mean(&b.d_final),
            "contagion must increase mean losses"
        );
    }

    #[test]
    fn empirical_moments_stay_bounded_in_n() {
        let mut prev: Option<(f64, f64)> = None;
        for n in [250usize, 500, 1000, 2000] {
            let mut cfg = one_cluster_config();
            cfg.pool_size = Some(n);
            let out = simulate_pool(&cfg, None, 404).unwrap();
            let d = out.diagnostics;
            assert!(d.lambda_mean_p1.is_finite() && d.lambda_mean_p2.is_finite());
            if let Some((p1, p2)) = prev {
                assert!(
                    d.lambda_mean_p1 <= 2.0 * p1 && d.lambda_mean_p2 <= 2.0 * p2,
                    "moment growth between pool sizes exceeds 2x at N = {n}"
                );
            }
            prev = Some((d.lambda_mean_p1, d.lambda_mean_p2));
        }
    }

    #[test]
    fn conditional_variance_shrinks_with_n() {
        // Fixed common stream, varying idiosyncratic streams: the spread
        // of D_T across trials must shrink as the pool grows.
        let var_at = |n: usize| {
            let mut cfg = one_cluster_config();
            cfg.pool_size = Some(n);
            let d: Vec<f64> = (0..60)
                .map(|i| {
                    simulate_pool_with_streams(&cfg, None, 31, trial_seed(500, i))
                        .unwrap()
                        .curves
                        .d_final()
                })
                .collect();
            crate::stats::variance(&d)
        };
        let v250 = var_at(250);
        let v1000 = var_at(1000);
        assert!(
            v1000 < v250,
            "conditional variance should fall with N: {v250} -> {v1000}"
        );
    }

    #[test]
    fn pool_size_required() {
        let mut cfg = one_cluster_config();
        cfg.pool_size = None;
        assert!(matches!(
            simulate_pool(&cfg, None, 1),
            Err(Error::MalformedConfig(_))
        ));
    }
}
