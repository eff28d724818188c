//! Shared test fixtures: an independent SVD oracle and the bundled
//! experiment data.
//!
//! The oracle computes singular values through a two-sided Jacobi
//! eigenvalue iteration on the Gram matrix `A^T A` — a different algorithm
//! and a different route than the library's one-sided orthogonalization of
//! `A`, so agreement between the two is a real check.

#![allow(dead_code)]

use contagion_core::network::AdjacencyMatrix;

/// Jacobi eigenvalue iteration for a symmetric matrix. Returns
/// (eigenvalues, eigenvector columns), eigenvalues descending.
pub fn jacobi_eigh(sym: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = sym.len();
    let mut a: Vec<Vec<f64>> = sym.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            row
        })
        .collect();

    let off = |a: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p][q] * a[p][q];
                }
            }
        }
        s.sqrt()
    };
    let scale: f64 = sym
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(1e-300);

    for _sweep in 0..100 {
        if off(&a) <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let eigs: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let vecs: Vec<Vec<f64>> = order
        .iter()
        .map(|&j| (0..n).map(|i| v[i][j]).collect())
        .collect();
    (eigs, vecs)
}

/// Oracle singular values of a matrix: square roots of the eigenvalues of
/// `A^T A`, descending, clipped at 0.
pub fn oracle_singular_values(a: &AdjacencyMatrix) -> Vec<f64> {
    let n = a.dim();
    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a.entry(k, i) * a.entry(k, j);
            }
            gram[i][j] = s;
        }
    }
    let (eigs, _) = jacobi_eigh(&gram);
    eigs.iter().map(|e| e.max(0.0).sqrt()).collect()
}

// --- Bundled experiment data -------------------------------------------

/// Raw one-cluster patterns: strength 10, flat left pattern, two-valued
/// right pattern on equal halves of the pool.
pub fn one_cluster_patterns(n: usize) -> (f64, Vec<f64>, Vec<f64>) {
    assert!(n % 2 == 0);
    let ell = vec![0.0316; n];
    let mut u = vec![0.12361; n / 2];
    u.extend(vec![0.06362; n / 2]);
    (10.0, ell, u)
}

/// Raw two-cluster patterns: strengths 10 and 1.
pub fn two_cluster_patterns(n: usize) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    assert!(n % 6 == 0);
    let ell1 = vec![0.0316; n];
    let mut u1 = vec![0.0205; n / 2];
    u1.extend(vec![0.0398; n / 2]);
    let mut u2 = vec![0.0009; 2 * n / 3];
    u2.extend(vec![0.0022; n / 3]);
    let mut ell2 = vec![0.0043; n / 2];
    ell2.extend(vec![-0.0022; n / 2]);
    vec![(10.0, ell1, u1), (1.0, ell2, u2)]
}

/// The published 10x10 core block of the core-periphery adjacency matrix.
pub fn core_periphery_block() -> AdjacencyMatrix {
    let rows: [[f64; 10]; 10] = [
        [0., 10., 1., 10., 10., 1., 10., 1., 1., 10.],
        [10., 0., 1., 1., 10., 10., 10., 1., 10., 1.],
        [1., 1., 0., 1., 1., 1., 1., 1., 1., 1.],
        [5., 1., 1., 0., 1., 1., 1., 1., 1., 1.],
        [5., 5., 1., 1., 0., 1., 1., 1., 1., 1.],
        [1., 5., 1., 1., 1., 0., 1., 1., 1., 1.],
        [5., 1., 1., 1., 1., 1., 0., 1., 1., 1.],
        [1., 1., 1., 1., 1., 1., 1., 0., 1., 1.],
        [1., 5., 1., 1., 1., 1., 1., 1., 0., 1.],
        [1., 1., 1., 1., 1., 1., 1., 1., 1., 0.],
    ];
    AdjacencyMatrix::new(10, rows.iter().flatten().copied().collect()).unwrap()
}

/// Reported core-periphery type tables: (value, probability) pairs.
pub const CP_XI_SQ_1: f64 = 105.1800;
pub const CP_XI_SQ_2: f64 = 34.8857;

pub fn cp_beta1_table() -> Vec<(f64, f64)> {
    vec![
        (9.6707, 0.70),
        (11.8406, 0.13),
        (11.9426, 0.14),
        (14.1198, 0.01),
        (15.6449, 0.01),
        (15.7501, 0.01),
    ]
}

pub fn cp_ell1_table() -> Vec<(f64, f64)> {
    vec![
        (0.0934, 0.78),
        (0.0989, 0.20),
        (0.2424, 0.01),
        (0.2533, 0.01),
    ]
}

pub fn cp_beta2_table() -> Vec<(f64, f64)> {
    vec![
        (-8.2340, 0.01),
        (-6.4583, 0.10),
        (-6.4339, 0.04),
        (-0.4545, 0.01),
        (0.1979, 0.70),
        (6.1494, 0.04),
        (6.1773, 0.09),
        (8.2984, 0.01),
    ]
}

pub fn cp_ell2_table() -> Vec<(f64, f64)> {
    vec![
        (-0.7360, 0.01),
        (-0.0293, 0.09),
        (-0.0239, 0.01),
        (-0.0022, 0.04),
        (0.0027, 0.70),
        (0.0081, 0.04),
        (0.0354, 0.10),
        (0.6608, 0.01),
    ]
}

/// Expands a (value, probability) table into `n` rows (counts are
/// `prob * n`, which is integral for the published tables at n = 1000).
pub fn expand_table(table: &[(f64, f64)], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    for (value, prob) in table {
        let count = (prob * n as f64).round() as usize;
        out.extend(std::iter::repeat(*value).take(count));
    }
    assert_eq!(out.len(), n, "table probabilities must resolve to integer counts");
    out
}

/// Small deterministic PRNG for test matrices (SplitMix64).
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn matrix(&mut self, n: usize) -> AdjacencyMatrix {
        let data: Vec<f64> = (0..n * n).map(|_| self.uniform()).collect();
        AdjacencyMatrix::new(n, data).unwrap()
    }
}
