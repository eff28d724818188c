//! Adjacency-matrix handling: SVD, cluster-coefficient extraction,
//! empirical type distributions and best low-rank approximations with
//! error certificates.
//!
//! The decomposition written `A = sum_j xi_sq_j ell_j u_j^T` keeps the
//! model's naming: `ell_j` are the orthonormal left factors (column space),
//! `u_j` the orthonormal right factors (row space) and `xi_sq_j` the
//! singular values in decreasing order. Row `n` of the right factor matrix
//! scaled by the singular values is the contagion coefficient vector
//! `beta_c` of name `n`; row `i` of the left factor matrix is its `ell`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{DriftSpec, NameType};
use crate::Result;

/// Maximum one-sided Jacobi sweeps before giving up.
const MAX_SWEEPS: usize = 64;
/// Relative off-diagonal level at which a sweep is considered converged.
const CONVERGENCE_EPS: f64 = 1e-14;

/// Dense nonnegative weighted adjacency matrix; entry `(i, j)` is the
/// default impact of name `i` on name `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl AdjacencyMatrix {
    /// Validates dimensions, finiteness and nonnegativity.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::malformed(format!(
                "adjacency matrix needs n*n entries, got {} for n = {n}",
                data.len()
            )));
        }
        for (k, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::malformed(format!(
                    "non-finite entry at ({}, {})",
                    k / n,
                    k % n
                )));
            }
            if v < 0.0 {
                return Err(Error::malformed(format!(
                    "negative entry {v} at ({}, {})",
                    k / n,
                    k % n
                )));
            }
        }
        Ok(AdjacencyMatrix { n, data })
    }

    /// No validation. Used for truncated reconstructions, which are
    /// approximations and may carry small negative entries.
    pub fn from_entries_unchecked(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        AdjacencyMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other||_F`.
    pub fn frobenius_distance(&self, other: &AdjacencyMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Singular value decomposition of an adjacency matrix, truncated to the
/// numerically nonzero part.
#[derive(Debug, Clone)]
pub struct NetworkSvd {
    n: usize,
    xi_sq: Vec<f64>,
    /// Left factor columns, each of length `n`.
    left: Vec<Vec<f64>>,
    /// Right factor columns, each of length `n`.
    right: Vec<Vec<f64>>,
}

impl NetworkSvd {
    /// Assembles a decomposition and checks the factor invariants
    /// (orthonormality within 1e-10, nonincreasing positive values).
    pub fn from_parts(n: usize, xi_sq: Vec<f64>, left: Vec<Vec<f64>>, right: Vec<Vec<f64>>) -> Result<Self> {
        let svd = Self::from_parts_unchecked(n, xi_sq, left, right)?;
        let ortho = svd.orthonormality_error();
        if ortho > 1e-10 {
            return Err(Error::malformed(format!(
                "factors not orthonormal: max |<f_i, f_j> - delta_ij| = {ortho:.3e}"
            )));
        }
        Ok(svd)
    }

    /// Shape checks only. Needed when factor data is reconstructed from
    /// reported tables rather than computed from a matrix, in which case
    /// orthonormality cannot be presumed.
    pub fn from_parts_unchecked(
        n: usize,
        xi_sq: Vec<f64>,
        left: Vec<Vec<f64>>,
        right: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if xi_sq.len() != left.len() || xi_sq.len() != right.len() {
            return Err(Error::malformed("factor count mismatch"));
        }
        if left.iter().chain(right.iter()).any(|c| c.len() != n) {
            return Err(Error::malformed("factor column length != n"));
        }
        if xi_sq.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::malformed("singular values must be positive and finite"));
        }
        if xi_sq.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::malformed("singular values must be nonincreasing"));
        }
        Ok(NetworkSvd {
            n,
            xi_sq,
            left,
            right,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.xi_sq.len()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.xi_sq
    }

    pub fn left_column(&self, j: usize) -> &[f64] {
        &self.left[j]
    }

    pub fn right_column(&self, j: usize) -> &[f64] {
        &self.right[j]
    }

    /// Contagion coefficient vector of name `n`: `beta_c_j = xi_sq_j u_{n,j}`.
    pub fn beta_row(&self, name: usize) -> Vec<f64> {
        (0..self.rank())
            .map(|j| self.xi_sq[j] * self.right[j][name])
            .collect()
    }

    /// Left-factor vector of name `n`: `ell_j = ell_{n,j}`.
    pub fn ell_row(&self, name: usize) -> Vec<f64> {
        (0..self.rank()).map(|j| self.left[j][name]).collect()
    }

    /// Max deviation of the factor Gramians from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let gram_err = |cols: &[Vec<f64>]| -> f64 {
            let mut worst: f64 = 0.0;
            for (i, a) in cols.iter().enumerate() {
                for (j, b) in cols.iter().enumerate().skip(i) {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((dot - target).abs());
                }
            }
            worst
        };
        gram_err(&self.left).max(gram_err(&self.right))
    }

    /// Dense `sum_{j <= theta} xi_sq_j ell_j u_j^T`.
    fn partial_reconstruction(&self, theta: usize) -> AdjacencyMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for j in 0..theta {
            let s = self.xi_sq[j];
            let (l, u) = (&self.left[j], &self.right[j]);
            for i in 0..n {
                let li = s * l[i];
                let row = &mut data[i * n..(i + 1) * n];
                for (cell, uk) in row.iter_mut().zip(u) {
                    *cell += li * uk;
                }
            }
        }
        AdjacencyMatrix::from_entries_unchecked(n, data)
    }

    /// Full reconstruction `sum_j xi_sq_j ell_j u_j^T`.
    pub fn reconstruction(&self) -> AdjacencyMatrix {
        self.partial_reconstruction(self.rank())
    }
}

/// Error certificate for a rank-`theta` truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowRankError {
    pub theta: usize,
    /// `||A - A_theta||_F = sqrt(sum_{i > theta} xi_sq_i^2)`.
    pub frobenius: f64,
    /// Operator-2 error `xi_sq_{theta+1}` (0 when theta = rank).
    pub spectral: f64,
    /// Tail sum `sum_{i > theta} xi_sq_i`; an upper bound for the
    /// spectral error, reported alongside the standard identities.
    pub tail_sum: f64,
}

/// Computes the SVD by one-sided Jacobi orthogonalization.
///
/// `tol` sets the rank cutoff: singular values `<= tol * max_sv` are
/// discarded. Factor signs are fixed by forcing the largest-magnitude
/// entry of each right column positive; exact ties in singular values are
/// ordered by descending left-factor lexicographic comparison, so the
/// result is deterministic for a fixed input.
pub fn svd_decompose(a: &AdjacencyMatrix, tol: f64) -> Result<NetworkSvd> {
    if !(tol > 0.0) {
        return Err(Error::malformed("svd tolerance must be > 0"));
    }
    let n = a.dim();
    // Column-major working copies of A and of the accumulated rotations.
    let mut b: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| a.entry(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            col
        })
        .collect();

    let mut converged = false;
    let mut last_off = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        // Fresh squared column norms each sweep (updated incrementally
        // within it), and deflation: columns below machine precision
        // relative to the largest one carry no resolvable direction and
        // would otherwise stall convergence on rank-deficient input.
        let mut sq: Vec<f64> = b
            .iter()
            .map(|col| col.iter().map(|x| x * x).sum::<f64>())
            .collect();
        let max_norm = sq.iter().cloned().fold(0.0, f64::max).sqrt();
        if max_norm == 0.0 {
            converged = true;
            break;
        }
        let deflate = max_norm * f64::EPSILON;
        for (col, s) in b.iter_mut().zip(sq.iter_mut()) {
            if s.sqrt() <= deflate {
                col.fill(0.0);
                *s = 0.0;
            }
        }

        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                if sq[p] == 0.0 || sq[q] == 0.0 {
                    continue;
                }
                let gamma: f64 = b[p].iter().zip(&b[q]).map(|(x, y)| x * y).sum();
                let rel = gamma.abs() / (sq[p].sqrt() * sq[q].sqrt());
                off = off.max(rel);
                if rel <= CONVERGENCE_EPS {
                    continue;
                }
                let zeta = (sq[q] - sq[p]) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut b, p, q, c, s);
                rotate(&mut v, p, q, c, s);
                sq[p] = (sq[p] - t * gamma).max(0.0);
                sq[q] += t * gamma;
            }
        }
        last_off = off;
        if off <= CONVERGENCE_EPS {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            sweeps: MAX_SWEEPS,
            off: last_off,
        });
    }

    let mut triples: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    let norms: Vec<f64> = b.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let max_sv = norms.iter().cloned().fold(0.0, f64::max);
    for j in 0..n {
        if norms[j] > tol * max_sv && norms[j] > 0.0 {
            let ell: Vec<f64> = b[j].iter().map(|x| x / norms[j]).collect();
            triples.push((norms[j], ell, v[j].clone()));
        }
    }

    // Sign convention, then ordering.
    for (_, ell, u) in &mut triples {
        let mut arg = 0;
        for (i, x) in u.iter().enumerate() {
            if x.abs() > u[arg].abs() {
                arg = i;
            }
        }
        if u[arg] < 0.0 {
            for x in ell.iter_mut() {
                *x = -*x;
            }
            for x in u.iter_mut() {
                *x = -*x;
            }
        }
    }
    triples.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| lex_desc(&a.1, &b.1))
    });

    let xi_sq: Vec<f64> = triples.iter().map(|t| t.0).collect();
    let left: Vec<Vec<f64>> = triples.iter().map(|t| t.1.clone()).collect();
    let right: Vec<Vec<f64>> = triples.iter().map(|t| t.2.clone()).collect();
    NetworkSvd::from_parts(n, xi_sq, left, right)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let bp = &mut head[p];
    let bq = &mut tail[0];
    for (x, y) in bp.iter_mut().zip(bq.iter_mut()) {
        let xp = c * *x - s * *y;
        let xq = s * *x + c * *y;
        *x = xp;
        *y = xq;
    }
}

/// Descending lexicographic order on factor columns (larger column first).
fn lex_desc(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.partial_cmp(x).unwrap() {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Best rank-`theta` approximation plus its error certificate.
pub fn low_rank(svd: &NetworkSvd, theta: usize) -> Result<(AdjacencyMatrix, LowRankError)> {
    let r = svd.rank();
    if theta == 0 || theta > r {
        return Err(Error::RankOutOfRange { theta, rank: r });
    }
    let approx = svd.partial_reconstruction(theta);
    let tail = &svd.xi_sq[theta..];
    let report = LowRankError {
        theta,
        frobenius: tail.iter().map(|s| s * s).sum::<f64>().sqrt(),
        spectral: tail.first().copied().unwrap_or(0.0),
        tail_sum: tail.iter().sum(),
    };
    Ok((approx, report))
}

/// Singular values double as the contagion-coefficient column norms:
/// `||beta_c_{., j}||_2 = xi_sq_j ||u_j||_2 = xi_sq_j`.
pub fn beta_norms(svd: &NetworkSvd) -> Vec<f64> {
    svd.xi_sq.clone()
}

/// One atom of an empirical type distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeAtom {
    pub beta_c: Vec<f64>,
    pub ell: Vec<f64>,
    pub probability: f64,
    pub count: usize,
}

/// Discrete distribution of `(beta_c, ell)` tuples over the names of a
/// network, obtained by grouping rows of the factor matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeDistribution {
    pub atoms: Vec<TypeAtom>,
}

impl TypeDistribution {
    /// Marginal distribution of `beta_c_j`, aggregated at 4-decimal
    /// precision and sorted ascending by value.
    pub fn beta_marginal(&self, j: usize) -> Vec<(f64, f64)> {
        marginal(self.atoms.iter().map(|a| (a.beta_c[j], a.probability, a.count)))
    }

    /// Marginal distribution of `ell_j`.
    pub fn ell_marginal(&self, j: usize) -> Vec<(f64, f64)> {
        marginal(self.atoms.iter().map(|a| (a.ell[j], a.probability, a.count)))
    }

    /// Expands the distribution into pool types, attaching the shared
    /// dynamics parameters to every atom.
    pub fn to_types(
        &self,
        sigma: f64,
        drift: DriftSpec,
        beta_s: f64,
        rho: f64,
        lambda0: f64,
    ) -> Vec<NameType> {
        self.atoms
            .iter()
            .map(|a| NameType {
                sigma,
                drift: drift.clone(),
                beta_s,
                beta_c: a.beta_c.clone(),
                ell: a.ell.clone(),
                rho,
                lambda0,
                weight: a.probability,
            })
            .collect()
    }
}

fn marginal(items: impl Iterator<Item = (f64, f64, usize)>) -> Vec<(f64, f64)> {
    let mut acc: HashMap<i64, (f64, f64, usize)> = HashMap::new();
    for (value, prob, count) in items {
        let key = round4_key(value);
        let e = acc.entry(key).or_insert((0.0, 0.0, 0));
        e.0 += value * count as f64;
        e.1 += prob;
        e.2 += count;
    }
    let mut out: Vec<(f64, f64)> = acc
        .into_values()
        .map(|(vsum, p, c)| (vsum / c as f64, p))
        .collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn round4_key(v: f64) -> i64 {
    (v * 1e4).round() as i64
}

/// Groups names whose `(beta_c, ell)` tuples agree within `group_tol`
/// (max-norm, after rounding each component to 4 decimals, matching the
/// precision of reported type tables). Probability is row count over `n`.
pub fn extract_types(svd: &NetworkSvd, group_tol: f64) -> Result<TypeDistribution> {
    if !(group_tol > 0.0) {
        return Err(Error::malformed("group tolerance must be > 0"));
    }
    let n = svd.dim();
    let r = svd.rank();

    // Collapse identical rounded tuples first.
    let mut groups: Vec<(Vec<i64>, Vec<f64>, usize)> = Vec::new();
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    for name in 0..n {
        let mut tuple = svd.beta_row(name);
        tuple.extend(svd.ell_row(name));
        let key: Vec<i64> = tuple.iter().map(|&v| round4_key(v)).collect();
        match index.get(&key) {
            Some(&g) => {
                for (acc, v) in groups[g].1.iter_mut().zip(&tuple) {
                    *acc += v;
                }
                groups[g].2 += 1;
            }
            None => {
                index.insert(key.clone(), groups.len());
                groups.push((key, tuple, 1));
            }
        }
    }

    // Single-linkage merge of rounded tuples within group_tol (max-norm).
    let tol_cells = (group_tol * 1e4).floor() as i64;
    let m = groups.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    if tol_cells > 0 {
        for i in 0..m {
            for j in (i + 1)..m {
                let close = groups[i]
                    .0
                    .iter()
                    .zip(&groups[j].0)
                    .all(|(a, b)| (a - b).abs() <= tol_cells);
                if close {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[rj] = ri;
                    }
                }
            }
        }
    }

    let mut merged: HashMap<usize, (Vec<f64>, usize)> = HashMap::new();
    for i in 0..m {
        let root = find(&mut parent, i);
        let e = merged
            .entry(root)
            .or_insert_with(|| (vec![0.0; 2 * r], 0));
        for (acc, v) in e.0.iter_mut().zip(&groups[i].1) {
            *acc += v;
        }
        e.1 += groups[i].2;
    }

    let mut atoms: Vec<TypeAtom> = merged
        .into_values()
        .map(|(sum, count)| {
            let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
            TypeAtom {
                beta_c: mean[..r].to_vec(),
                ell: mean[r..].to_vec(),
                probability: count as f64 / n as f64,
                count,
            }
        })
        .collect();
    atoms.sort_by(|a, b| lex_asc(&a.beta_c, &b.beta_c).then_with(|| lex_asc(&a.ell, &b.ell)));
    Ok(TypeDistribution { atoms })
}

fn lex_asc(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap() {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Builds a synthetic network with prescribed singular values from cluster
/// patterns. The left/right patterns are orthonormalized in order
/// (modified Gram–Schmidt), so the returned decomposition is exact and
/// `xi_sq` are the true singular values of its reconstruction.
pub fn from_cluster_patterns(
    n: usize,
    clusters: &[(f64, Vec<f64>, Vec<f64>)],
) -> Result<NetworkSvd> {
    if clusters.is_empty() {
        return Err(Error::malformed("at least one cluster required"));
    }
    let mut lefts: Vec<Vec<f64>> = Vec::new();
    let mut rights: Vec<Vec<f64>> = Vec::new();
    let mut xi_sq = Vec::new();
    for (s, l, u) in clusters {
        if l.len() != n || u.len() != n {
            return Err(Error::malformed("cluster pattern length != n"));
        }
        if !(*s > 0.0) {
            return Err(Error::malformed("cluster strength must be positive"));
        }
        lefts.push(orthonormalize(l, &lefts)?);
        rights.push(orthonormalize(u, &rights)?);
        xi_sq.push(*s);
    }
    if xi_sq.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::malformed(
            "cluster strengths must be given in nonincreasing order",
        ));
    }
    NetworkSvd::from_parts(n, xi_sq, lefts, rights)
}

fn orthonormalize(v: &[f64], basis: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut w = v.to_vec();
    for b in basis {
        let dot: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
        for (wi, bi) in w.iter_mut().zip(b) {
            *wi -= dot * bi;
        }
    }
    let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::malformed(
            "cluster pattern linearly dependent on earlier clusters",
        ));
    }
    for x in &mut w {
        *x /= norm;
    }
    Ok(w)
}
