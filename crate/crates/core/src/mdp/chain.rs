use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MdpError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryOptions {
    /// Stop when `|pi P - pi|_1` falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub irreducible: bool,
    pub aperiodic: bool,
    /// gcd of cycle lengths; 1 for aperiodic chains.
    pub period: usize,
    /// `1 - |lambda_2|`.
    pub spectral_gap: f64,
}

impl ErgodicityReport {
    pub fn ergodic(&self) -> bool {
        self.irreducible && self.aperiodic
    }
}

fn check_square(chain: &[Vec<f64>]) -> Result<usize, MdpError> {
    let n = chain.len();
    if n == 0 || chain.iter().any(|r| r.len() != n) {
        return Err(MdpError::InvalidModel("chain must be a non-empty square matrix".into()));
    }
    for (i, row) in chain.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(MdpError::InvalidModel(format!("row {i} is not a probability vector")));
        }
    }
    Ok(n)
}

fn successors(chain: &[Vec<f64>], u: usize) -> impl Iterator<Item = usize> + '_ {
    chain[u].iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(v, _)| v)
}

/// Strongly connected component id of every state (Kosaraju).
fn components(chain: &[Vec<f64>]) -> Vec<usize> {
    let n = chain.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        // Iterative post-order DFS.
        let mut stack = vec![(start, successors(chain, start).collect::<Vec<_>>())];
        seen[start] = true;
        while let Some((u, next)) = stack.last_mut() {
            if let Some(v) = next.pop() {
                if !seen[v] {
                    seen[v] = true;
                    stack.push((v, successors(chain, v).collect()));
                }
            } else {
                order.push(*u);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut next_id = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        let mut stack = vec![root];
        comp[root] = next_id;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if chain[v][u] > 0.0 && comp[v] == usize::MAX {
                    comp[v] = next_id;
                    stack.push(v);
                }
            }
        }
        next_id += 1;
    }
    comp
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of a strongly connected component, from BFS depths:
/// the gcd of `depth(u) + 1 - depth(v)` over edges inside the component.
/// Returns 0 for a single state without a self-loop (no cycles).
fn component_period(chain: &[Vec<f64>], comp: &[usize], id: usize) -> usize {
    let root = comp.iter().position(|&c| c == id).expect("component is non-empty");
    let mut depth = vec![usize::MAX; chain.len()];
    depth[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut g = 0;
    while let Some(u) = queue.pop_front() {
        for v in successors(chain, u).filter(|&v| comp[v] == id) {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            } else {
                g = gcd(g, (depth[u] + 1).abs_diff(depth[v]));
            }
        }
    }
    g
}

/// Irreducibility, aperiodicity and spectral gap of a row-stochastic matrix.
pub fn check_ergodicity(chain: &[Vec<f64>]) -> Result<ErgodicityReport, MdpError> {
    let n = check_square(chain)?;
    let comp = components(chain);
    let n_comp = comp.iter().max().map_or(0, |m| m + 1);
    let irreducible = n_comp == 1;

    let period = (0..n_comp)
        .map(|id| component_period(chain, &comp, id))
        .filter(|&p| p > 0)
        .fold(0, |acc, p| if acc == 0 { p } else { acc.max(p) });
    let period = period.max(1);

    let matrix = DMatrix::from_fn(n, n, |i, j| chain[i][j]);
    let mut moduli: Vec<f64> = matrix.complex_eigenvalues().iter().map(|c| c.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let second = moduli.get(1).copied().unwrap_or(0.0);
    Ok(ErgodicityReport {
        irreducible,
        aperiodic: period == 1,
        period,
        spectral_gap: (1.0 - second).max(0.0),
    })
}

/// Stationary distribution by power iteration from the uniform vector.
///
/// Periodic chains are rejected up front: from a uniform start their
/// iterates can look converged while no limiting distribution exists.
pub fn stationary_distribution(chain: &[Vec<f64>], opts: &StationaryOptions) -> Result<Vec<f64>, MdpError> {
    let n = check_square(chain)?;
    let report = check_ergodicity(chain)?;
    if !report.aperiodic {
        return Err(MdpError::Periodic { period: report.period });
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let mut next = vec![0.0; n];
        for (i, row) in chain.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                next[j] += pi[i] * p;
            }
        }
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        let total: f64 = next.iter().sum();
        pi = next.into_iter().map(|x| x / total).collect();
        if residual < opts.tol {
            return Ok(pi);
        }
    }
    Err(MdpError::NonConvergence {
        iterations: opts.max_iters,
        residual,
    })
}
