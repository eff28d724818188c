//! Independent verification machinery: a weighted McKean–Vlasov particle
//! solver for the large-pool limit, and the finite-pool vs. limit
//! convergence harness.
//!
//! The limit law is represented by survival-weighted particles instead of
//! killed ones: per type class, `M` particles evolve
//!
//! ```text
//! d lambda* = [ b(lambda*) + beta_c . Q(t) ] dt
//!             + sigma (lambda* v 0)^rho dW* + beta_s lambda* dX
//! w_t = exp( - int_0^t lambda* ds )
//! ```
//!
//! and the coupling is the fixed point
//! `Q_j(t) = sum_classes weight ell_j (1/M) sum_particles lambda* w`,
//! computed by one-pass forward propagation: the `Q` evaluated from the
//! cloud at a step start feeds the contagion drift over that step. A
//! path-level Picard iteration over the whole `Q` path is available as a
//! diagnostic for the discretization bias of the one-pass rule.
//!
//! Unlike the moment solver this makes no structural demands on the
//! drift or on `rho`, which is what qualifies it as an independent check.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::meanfield::MomentSystem;
use crate::model::{NameType, ScenarioConfig};
use crate::particle::simulate_pool;
use crate::path::GridCurves;
use crate::rng::{trial_seed, Streams};
use crate::stats::ls_slope;
use crate::Result;

/// Same intensity guard as the finite-pool stepper.
pub const INTENSITY_GUARD: f64 = 1e6;

/// Minimum particles per class.
pub const MIN_PARTICLES: usize = 100;

/// Weighted particles of one type class.
#[derive(Debug, Clone)]
pub struct ClassCloud {
    pub lambda: Vec<f64>,
    pub weight: Vec<f64>,
}

/// Numerical diagnostics of one weighted-cloud trial.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CloudDiagnostics {
    /// Largest single-step weight change (never positive: factors are
    /// `exp(-lambda dt) <= 1`).
    pub max_weight_step_increase: f64,
    pub min_weight: f64,
    pub min_intensity: f64,
}

/// One weighted-cloud trial: limit curves plus diagnostics.
#[derive(Debug, Clone)]
pub struct CloudPath {
    pub curves: GridCurves,
    pub diagnostics: CloudDiagnostics,
}

/// Result of the path-level Picard diagnostic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PicardDiagnostics {
    pub iterations: usize,
    /// Sup-norm distance between the last two `Q` paths.
    pub final_sup_diff: f64,
}

struct CloudSystem {
    classes: Vec<NameType>,
    risk: crate::model::SystematicRisk,
    dt: f64,
    steps: usize,
    rank: usize,
    ell_bar: Vec<f64>,
    particles: usize,
}

impl CloudSystem {
    fn new(config: &ScenarioConfig, particles: usize) -> Result<Self> {
        config.check_malformed()?;
        if particles < MIN_PARTICLES {
            return Err(Error::malformed(format!(
                "at least {MIN_PARTICLES} particles per class required"
            )));
        }
        Ok(CloudSystem {
            classes: config.type_measure()?,
            risk: config.risk.clone(),
            dt: config.controls.dt,
            steps: config.controls.steps()?,
            rank: config.rank,
            ell_bar: config.ell_bar(),
            particles,
        })
    }

    fn init_clouds(&self) -> Vec<ClassCloud> {
        self.classes
            .iter()
            .map(|c| ClassCloud {
                lambda: vec![c.lambda0; self.particles],
                weight: vec![1.0; self.particles],
            })
            .collect()
    }

    /// Weighted class means `(u0, u1) = ((1/M) sum w, (1/M) sum lambda w)`,
    /// summed in particle order.
    fn class_means(&self, clouds: &[ClassCloud]) -> Vec<(f64, f64)> {
        clouds
            .iter()
            .map(|cl| {
                let mut u0 = 0.0;
                let mut u1 = 0.0;
                for (l, w) in cl.lambda.iter().zip(&cl.weight) {
                    u0 += w;
                    u1 += l * w;
                }
                let m = cl.lambda.len() as f64;
                (u0 / m, u1 / m)
            })
            .collect()
    }

    fn coupling_q(&self, means: &[(f64, f64)]) -> Vec<f64> {
        let mut q = vec![0.0; self.rank];
        for (c, (_, u1)) in self.classes.iter().zip(means) {
            for (qj, lj) in q.iter_mut().zip(&c.ell) {
                *qj += c.weight * lj * u1;
            }
        }
        q
    }

    fn record(&self, means: &[(f64, f64)], x: f64, step: usize, curves: &mut GridCurves) {
        let mut d_bar = 0.0;
        let mut loss = self.ell_bar.clone();
        for (ci, (c, (u0, _))) in self.classes.iter().zip(means).enumerate() {
            d_bar += c.weight * u0;
            curves.d_by_type[ci][step] = 1.0 - u0;
            for (lj, ell) in loss.iter_mut().zip(&c.ell) {
                *lj -= c.weight * ell * u0;
            }
        }
        curves.d[step] = 1.0 - d_bar;
        for (j, lj) in loss.iter().enumerate() {
            curves.cluster_loss[j][step] = *lj;
        }
        for (ci, c) in self.classes.iter().enumerate() {
            curves.q_by_type[ci][step] = c.beta_c.iter().zip(&loss).map(|(b, l)| b * l).sum();
        }
        curves.x[step] = x;
    }

    /// Runs the propagation once. When `frozen_q` is given, the contagion
    /// drift uses that path instead of the cloud's own coupling (the
    /// Picard re-propagation); the realized coupling path is returned
    /// either way. Idiosyncratic streams are recreated from the trial
    /// seed, so repeated propagations see identical noise.
    fn propagate(
        &self,
        seed: u64,
        frozen_q: Option<&[Vec<f64>]>,
    ) -> Result<(CloudPath, Vec<Vec<f64>>)> {
        let streams = Streams::new(seed);
        let mut vrng = streams.common();
        let sqrt_dt = self.dt.sqrt();
        let mut clouds = self.init_clouds();
        let mut rngs: Vec<Vec<_>> = (0..self.classes.len())
            .map(|ci| {
                (0..self.particles)
                    .map(|m| streams.cloud(ci, m, self.particles))
                    .collect()
            })
            .collect();

        let mut curves = GridCurves::zeros(self.steps, self.classes.len(), self.rank, self.dt);
        let mut q_path: Vec<Vec<f64>> = Vec::with_capacity(self.steps + 1);
        let mut x = self.risk.x0;
        let mut means = self.class_means(&clouds);
        self.record(&means, x, 0, &mut curves);
        q_path.push(self.coupling_q(&means));

        let mut diag = CloudDiagnostics {
            max_weight_step_increase: f64::NEG_INFINITY,
            min_weight: 1.0,
            min_intensity: f64::INFINITY,
        };

        for step in 0..self.steps {
            let q_own = q_path[step].clone();
            let q_used: &[f64] = match frozen_q {
                Some(path) => &path[step],
                None => &q_own,
            };
            let z: f64 = vrng.sample(StandardNormal);
            let dv = z * sqrt_dt;
            let b0 = self.risk.drift(x);
            let s0 = self.risk.diffusion(x);
            let dx = b0 * self.dt + s0 * dv;

            let dt = self.dt;
            let step_diags: Vec<Result<CloudDiagnostics>> = clouds
                .par_iter_mut()
                .zip(rngs.par_iter_mut())
                .zip(self.classes.par_iter())
                .map(|((cloud, class_rngs), class)| {
                    let bc_q: f64 = class.beta_c.iter().zip(q_used).map(|(b, q)| b * q).sum();
                    let mut d = CloudDiagnostics {
                        max_weight_step_increase: f64::NEG_INFINITY,
                        min_weight: 1.0,
                        min_intensity: f64::INFINITY,
                    };
                    for ((lam, w), rng) in cloud
                        .lambda
                        .iter_mut()
                        .zip(cloud.weight.iter_mut())
                        .zip(class_rngs.iter_mut())
                    {
                        let l = *lam;
                        let dw: f64 = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
                        let vol = if class.rho == 0.5 {
                            l.max(0.0).sqrt()
                        } else {
                            l.max(0.0).powf(class.rho)
                        };
                        let next = l
                            + (class.drift.eval(l) + bc_q) * dt
                            + class.sigma * vol * dw
                            + class.beta_s * l * dx;
                        if !next.is_finite() || next.abs() > INTENSITY_GUARD {
                            return Err(Error::NumericalBlowup {
                                quantity: "cloud intensity",
                                value: next,
                                t: step as f64 * dt,
                            });
                        }
                        let w_new = *w * (-l * dt).exp();
                        d.max_weight_step_increase = d.max_weight_step_increase.max(w_new - *w);
                        *w = w_new;
                        d.min_weight = d.min_weight.min(w_new);
                        *lam = next.max(0.0);
                        d.min_intensity = d.min_intensity.min(*lam);
                    }
                    Ok(d)
                })
                .collect();
            for d in step_diags {
                let d = d?;
                diag.max_weight_step_increase =
                    diag.max_weight_step_increase.max(d.max_weight_step_increase);
                diag.min_weight = diag.min_weight.min(d.min_weight);
                diag.min_intensity = diag.min_intensity.min(d.min_intensity);
            }

            x += dx;
            means = self.class_means(&clouds);
            self.record(&means, x, step + 1, &mut curves);
            q_path.push(self.coupling_q(&means));
        }

        Ok((
            CloudPath {
                curves,
                diagnostics: diag,
            },
            q_path,
        ))
    }
}

/// Solves the limit by one-pass weighted-cloud propagation with
/// `particles` particles per type class.
pub fn mv_solve(config: &ScenarioConfig, seed: u64, particles: usize) -> Result<CloudPath> {
    let sys = CloudSystem::new(config, particles)?;
    Ok(sys.propagate(seed, None)?.0)
}

/// Picard refinement of the one-pass fixed point: re-propagates the cloud
/// against the frozen `Q` path from the previous pass (identical noise)
/// until the path moves less than `tol` in sup norm or `max_iter` passes
/// are spent. Returns the final path and the convergence record.
pub fn mv_solve_picard(
    config: &ScenarioConfig,
    seed: u64,
    particles: usize,
    max_iter: usize,
    tol: f64,
) -> Result<(CloudPath, PicardDiagnostics)> {
    let sys = CloudSystem::new(config, particles)?;
    let (mut path, mut q_path) = sys.propagate(seed, None)?;
    let mut diag = PicardDiagnostics {
        iterations: 0,
        final_sup_diff: f64::INFINITY,
    };
    for it in 1..=max_iter {
        let (next_path, next_q) = sys.propagate(seed, Some(&q_path))?;
        let sup = q_path
            .iter()
            .flatten()
            .zip(next_q.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        path = next_path;
        q_path = next_q;
        diag = PicardDiagnostics {
            iterations: it,
            final_sup_diff: sup,
        };
        if sup <= tol {
            break;
        }
    }
    Ok((path, diag))
}

/// One pool size of a convergence report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlnEntry {
    pub pool_size: usize,
    /// RMS over trials of `|D_T^N - D_T|` with the `V` path shared
    /// between the pool and the limit solver.
    pub rms_error: f64,
}

/// Finite-pool vs. limit convergence report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub entries: Vec<LlnEntry>,
    pub trials: usize,
    /// Least-squares slope of `log rms` against `log N`.
    pub slope: f64,
    pub slope_stderr: f64,
}

/// Runs `trials` paired (pool, limit) trials per pool size. Each trial
/// shares its seed — hence its `V` path — between the finite pool and the
/// moment solver, and contributes `|D_T^N - D_T|^2` to the RMS for that
/// pool size.
pub fn lln_harness(
    config: &ScenarioConfig,
    n_list: &[usize],
    trials: usize,
) -> Result<ConvergenceReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::malformed("n_list must be ascending and non-empty"));
    }
    if trials < 1 {
        return Err(Error::malformed("trials must be >= 1"));
    }
    let limit = MomentSystem::new(config)?;
    let master = config.controls.seed;

    let sq_sums = crate::stats::try_par_chunk_fold(
        trials,
        || vec![0.0; n_list.len()],
        |mut acc, i| {
            let seed = trial_seed(master, i as u64);
            let d_limit = limit.solve_trial(seed)?.curves.d_final();
            for (slot, &n) in acc.iter_mut().zip(n_list) {
                let mut cfg = config.clone();
                cfg.pool_size = Some(n);
                let d_pool = simulate_pool(&cfg, None, seed)?.curves.d_final();
                *slot += (d_pool - d_limit) * (d_pool - d_limit);
            }
            Ok(acc)
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            a
        },
    )?;

    let entries: Vec<LlnEntry> = n_list
        .iter()
        .zip(&sq_sums)
        .map(|(&n, &s)| LlnEntry {
            pool_size: n,
            rms_error: (s / trials as f64).sqrt(),
        })
        .collect();
    let xs: Vec<f64> = entries.iter().map(|e| (e.pool_size as f64).ln()).collect();
    let ys: Vec<f64> = entries.iter().map(|e| e.rms_error.ln()).collect();
    let (slope, slope_stderr) = if entries.len() >= 2 {
        ls_slope(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ConvergenceReport {
        entries,
        trials,
        slope,
        slope_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::one_cluster_config;
    use crate::model::DriftSpec;

    /// Deterministic killed exponential: no noise anywhere, constant
    /// intensity lambda_bar.
    fn deterministic_config(lambda: f64) -> ScenarioConfig {
        let mut cfg = one_cluster_config();
        cfg.types.truncate(1);
        let t = &mut cfg.types[0];
        t.weight = 1.0;
        t.sigma = 0.0;
        t.beta_s = 0.0;
        t.beta_c = vec![0.0];
        t.drift = DriftSpec::Affine {
            alpha_bar: 1.0,
            lambda_bar: lambda,
        };
        t.lambda0 = lambda;
        cfg.risk.eps = 1e-300;
        cfg
    }

    #[test]
    fn killed_exponential_is_exact() {
        // lambda* constant: w = e^{-lambda t} exactly on the grid, so
        // D_t = 1 - e^{-lambda t} with no Euler error at all.
        let lambda = 0.2;
        let cfg = deterministic_config(lambda);
        let path = mv_solve(&cfg, 5, 200).unwrap();
        for (k, d) in path.curves.d.iter().enumerate() {
            let t = k as f64 * 0.01;
            assert!(
                (d - (1.0 - (-lambda * t).exp())).abs() < 1e-12,
                "t = {t}: {d}"
            );
        }
    }

    #[test]
    fn weights_never_increase_and_mass_in_unit_interval() {
        let cfg = one_cluster_config();
        let path = mv_solve(&cfg, 17, 500).unwrap();
        assert!(path.diagnostics.max_weight_step_increase <= 0.0);
        assert!(path.diagnostics.min_weight > 0.0);
        for d in &path.curves.d {
            assert!((-1e-12..=1.0).contains(d));
        }
    }

    #[test]
    fn cloud_intensities_stay_nonnegative() {
        let cfg = one_cluster_config();
        let path = mv_solve(&cfg, 23, 300).unwrap();
        assert!(path.diagnostics.min_intensity >= 0.0);
    }

    #[test]
    fn no_interaction_factorizes_into_single_name_runs() {
        // With beta_c = 0 the coupling feeds nothing, so the cloud is one
        // independent single-name integration per particle. Check D_t
        // against a separately coded single-particle weighted integrator
        // driven by the same streams.
        let mut cfg = one_cluster_config();
        for t in &mut cfg.types {
            t.beta_c = vec![0.0];
        }
        let m = 300;
        let seed = 77;
        let path = mv_solve(&cfg, seed, m).unwrap();

        let classes = cfg.type_measure().unwrap();
        let streams = Streams::new(seed);
        let mut vrng = streams.common();
        let dt = cfg.controls.dt;
        let steps = cfg.controls.steps().unwrap();
        let mut x = cfg.risk.x0;
        let mut lambdas: Vec<Vec<f64>> = classes
            .iter()
            .map(|c| vec![c.lambda0; m])
            .collect();
        let mut weights: Vec<Vec<f64>> = vec![vec![1.0; m]; classes.len()];
        let mut rngs: Vec<Vec<_>> = (0..classes.len())
            .map(|ci| (0..m).map(|p| streams.cloud(ci, p, m)).collect())
            .collect();
        let mut d_path = vec![0.0];
        for _step in 0..steps {
            let z: f64 = vrng.sample(StandardNormal);
            let dv = z * dt.sqrt();
            let b0 = cfg.risk.drift(x);
            let s0 = cfg.risk.diffusion(x);
            let dx = b0 * dt + s0 * dv;
            for (ci, class) in classes.iter().enumerate() {
                for p in 0..m {
                    let l = lambdas[ci][p];
                    let dw: f64 =
                        rngs[ci][p].sample::<f64, _>(StandardNormal) * dt.sqrt();
                    let next = l
                        + class.drift.eval(l) * dt
                        + class.sigma * l.max(0.0).sqrt() * dw
                        + class.beta_s * l * dx;
                    weights[ci][p] *= (-l * dt).exp();
                    lambdas[ci][p] = next.max(0.0);
                }
            }
            x += dx;
            let mut mass = 0.0;
            for (ci, class) in classes.iter().enumerate() {
                let u0: f64 = weights[ci].iter().sum::<f64>() / m as f64;
                mass += class.weight * u0;
            }
            d_path.push(1.0 - mass);
        }
        for (a, b) in path.curves.d.iter().zip(&d_path) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn picard_diagnostic_converges_near_one_pass() {
        let cfg = one_cluster_config();
        let (one_pass, _) = (mv_solve(&cfg, 3, 2000).unwrap(), ());
        let (refined, diag) = mv_solve_picard(&cfg, 3, 2000, 5, 1e-6).unwrap();
        assert!(diag.final_sup_diff <= 1e-6 || diag.iterations == 5);
        let gap = one_pass
            .curves
            .d
            .iter()
            .zip(&refined.curves.d)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 5e-3, "one-pass vs Picard gap {gap}");
    }

    #[test]
    fn lln_single_entry_single_trial() {
        let mut cfg = one_cluster_config();
        cfg.pool_size = Some(100);
        let report = lln_harness(&cfg, &[100], 1).unwrap();
        assert_eq!(report.entries.len(), 1);
        assert!(report.entries[0].rms_error.is_finite());
    }

    #[test]
    fn lln_zero_interaction_matches_binomial_noise() {
        // sigma = 0, beta = 0, eps ~ 0: lambda == lambda_bar determinist-
        // ically, defaults are i.i.d. Bernoulli(1 - e^{-lambda T}), so the
        // RMS error against the deterministic limit is the binomial
        // standard deviation sqrt(p(1-p)/N) up to sampling noise.
        let cfg = deterministic_config(0.2);
        let n = 400;
        let trials = 300;
        let report = lln_harness(&cfg, &[n], trials).unwrap();
        let p = 1.0 - (-0.2f64).exp();
        let expect = (p * (1.0 - p) / n as f64).sqrt();
        let got = report.entries[0].rms_error;
        assert!(
            (got - expect).abs() < 0.3 * expect,
            "rms {got} vs binomial {expect}"
        );
    }

    #[test]
    fn too_few_particles_rejected() {
        let cfg = one_cluster_config();
        assert!(matches!(
            mv_solve(&cfg, 1, 10),
            Err(Error::MalformedConfig(_))
        ));
    }

    #[test]
    fn unsorted_n_list_rejected() {
        let cfg = one_cluster_config();
        assert!(lln_harness(&cfg, &[500, 250], 1).is_err());
    }
}
