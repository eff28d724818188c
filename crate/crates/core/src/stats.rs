//! Deterministic parallel reduction and small statistics helpers.
//!
//! Trials are folded in fixed-size chunks: chunks run in parallel, each
//! chunk accumulates sequentially in trial order, and the chunk partials
//! are merged sequentially in chunk order. The result is bit-identical for
//! any thread count because the floating-point summation order never
//! depends on scheduling.

use rayon::prelude::*;

use crate::path::GridCurves;
use crate::Result;

/// Fixed chunk size for trial-level parallelism.
pub const TRIAL_CHUNK: usize = 32;

/// Folds `0..count` into an accumulator with a schedule-independent
/// summation order. `fold` may fail; the first failure in chunk order wins.
pub fn try_par_chunk_fold<A, I, F, M>(count: usize, init: I, fold: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(A, usize) -> Result<A> + Sync,
    M: Fn(A, A) -> A,
{
    let n_chunks = count.div_ceil(TRIAL_CHUNK);
    let partials: Vec<Result<A>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * TRIAL_CHUNK;
            let hi = ((c + 1) * TRIAL_CHUNK).min(count);
            let mut acc = init();
            for i in lo..hi {
                acc = fold(acc, i)?;
            }
            Ok(acc)
        })
        .collect();
    let mut out = init();
    for p in partials {
        out = merge(out, p?);
    }
    Ok(out)
}

/// Running sums of grid curves over trials, plus the per-trial terminal
/// loss rates in trial order (for histograms and variances).
#[derive(Debug, Clone)]
pub struct CurveSums {
    pub trials: usize,
    pub curves: GridCurves,
    pub d_final: Vec<f64>,
}

impl CurveSums {
    pub fn zeros(steps: usize, n_types: usize, rank: usize, dt: f64) -> Self {
        CurveSums {
            trials: 0,
            curves: GridCurves::zeros(steps, n_types, rank, dt),
            d_final: Vec::new(),
        }
    }

    pub fn add(&mut self, path: &GridCurves) {
        self.trials += 1;
        add_assign(&mut self.curves.d, &path.d);
        add_assign(&mut self.curves.x, &path.x);
        for (acc, p) in self.curves.d_by_type.iter_mut().zip(&path.d_by_type) {
            add_assign(acc, p);
        }
        for (acc, p) in self.curves.cluster_loss.iter_mut().zip(&path.cluster_loss) {
            add_assign(acc, p);
        }
        for (acc, p) in self.curves.q_by_type.iter_mut().zip(&path.q_by_type) {
            add_assign(acc, p);
        }
        self.d_final.push(path.d_final());
    }

    pub fn merge(mut self, other: CurveSums) -> Self {
        self.trials += other.trials;
        add_assign(&mut self.curves.d, &other.curves.d);
        add_assign(&mut self.curves.x, &other.curves.x);
        for (acc, p) in self.curves.d_by_type.iter_mut().zip(&other.curves.d_by_type) {
            add_assign(acc, p);
        }
        for (acc, p) in self
            .curves
            .cluster_loss
            .iter_mut()
            .zip(&other.curves.cluster_loss)
        {
            add_assign(acc, p);
        }
        for (acc, p) in self.curves.q_by_type.iter_mut().zip(&other.curves.q_by_type) {
            add_assign(acc, p);
        }
        self.d_final.extend(other.d_final);
        self
    }

    /// Divides the sums through by the trial count.
    pub fn into_means(mut self) -> (GridCurves, Vec<f64>) {
        let scale = 1.0 / self.trials as f64;
        for v in self
            .curves
            .d
            .iter_mut()
            .chain(self.curves.x.iter_mut())
            .chain(self.curves.d_by_type.iter_mut().flatten())
            .chain(self.curves.cluster_loss.iter_mut().flatten())
            .chain(self.curves.q_by_type.iter_mut().flatten())
        {
            *v *= scale;
        }
        (self.curves, self.d_final)
    }
}

fn add_assign(acc: &mut [f64], inc: &[f64]) {
    debug_assert_eq!(acc.len(), inc.len());
    for (a, b) in acc.iter_mut().zip(inc) {
        *a += b;
    }
}

/// Histogram over `[min, max]` of the samples with equal-width bins.
#[derive(Debug, Clone)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(samples: &[f64], bins: usize) -> Histogram {
        assert!(bins >= 1 && !samples.is_empty());
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = (max - min).max(0.0);
        let edges: Vec<f64> = (0..=bins)
            .map(|i| min + width * i as f64 / bins as f64)
            .collect();
        let mut counts = vec![0usize; bins];
        for &s in samples {
            let idx = if width == 0.0 {
                0
            } else {
                (((s - min) / width * bins as f64) as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        Histogram { edges, counts }
    }
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Least-squares slope and its standard error for `y ~ a + b x`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if xs.len() <= 2 {
        return (slope, 0.0);
    }
    let resid: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let fit = my + slope * (x - mx);
            (y - fit) * (y - fit)
        })
        .sum();
    let se = (resid / (n - 2.0) / sxx).sqrt();
    (slope, se)
}
