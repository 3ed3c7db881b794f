use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MdpError;

/// Index-based MDP. Tensors are flattened as `[action][state][next_state]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Discount applied to the value of each successor state.
    pub discounts: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        discounts: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let mdp = Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            discounts,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    #[inline]
    pub fn idx(&self, a: usize, s: usize, next: usize) -> usize {
        (a * self.n_states + s) * self.n_states + next
    }

    pub fn p(&self, a: usize, s: usize, next: usize) -> f64 {
        self.transitions[self.idx(a, s, next)]
    }

    pub fn r(&self, a: usize, s: usize, next: usize) -> f64 {
        self.rewards[self.idx(a, s, next)]
    }

    pub fn row(&self, a: usize, s: usize) -> &[f64] {
        let start = self.idx(a, s, 0);
        &self.transitions[start..start + self.n_states]
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        let bad = |m: String| Err(MdpError::InvalidModel(m));
        if self.n_states == 0 || self.n_actions == 0 {
            return bad("need at least one state and one action".into());
        }
        let len = self.n_actions * self.n_states * self.n_states;
        if self.transitions.len() != len || self.rewards.len() != len {
            return bad(format!("tensors must have {len} entries"));
        }
        if self.discounts.len() != self.n_states {
            return bad(format!("need {} discounts", self.n_states));
        }
        if let Some(g) = self.discounts.iter().find(|g| !(0.0..1.0).contains(*g)) {
            return bad(format!("discount {g} outside [0, 1)"));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return bad("rewards must be finite".into());
        }
        for a in 0..self.n_actions {
            for s in 0..self.n_states {
                let row = self.row(a, s);
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return bad(format!("negative or non-finite probability in row ({a}, {s})"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return bad(format!("row ({a}, {s}) sums to {sum}"));
                }
            }
        }
        Ok(())
    }

    /// `Q(s, a) = sum_s' P(s'|s,a) (R(s,a,s') + gamma(s') V(s'))`.
    pub fn q_value(&self, v: &[f64], s: usize, a: usize) -> f64 {
        (0..self.n_states)
            .map(|n| self.p(a, s, n) * (self.r(a, s, n) + self.discounts[n] * v[n]))
            .sum()
    }

    /// Greedy Q table, `[state][action]`.
    pub fn q_table(&self, v: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.q_value(v, s, a)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Seed for the random initial value function.
    pub seed: u64,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViSolution {
    pub values: Vec<f64>,
    /// `[state][action]`.
    pub q: Vec<Vec<f64>>,
    pub optimal: Vec<usize>,
    /// Best action other than the optimal one; `None` with a single action.
    pub suboptimal: Vec<Option<usize>>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm change of each sweep.
    pub residuals: Vec<f64>,
}

impl ViSolution {
    pub fn residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Index of the maximum, lowest index winning ties.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>, skip: Option<usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Optimal and second-best action per state of a Q table.
pub(crate) fn extract(q: &[Vec<f64>]) -> (Vec<usize>, Vec<Option<usize>>) {
    let optimal: Vec<usize> = q
        .iter()
        .map(|row| argmax(row.iter().copied(), None).expect("at least one action"))
        .collect();
    let suboptimal = q
        .iter()
        .zip(&optimal)
        .map(|(row, &o)| argmax(row.iter().copied(), Some(o)))
        .collect();
    (optimal, suboptimal)
}

/// Synchronous value iteration from a seeded random start, stopping once
/// the max-norm change of a sweep drops below `tol`. Hitting `max_iters`
/// returns the last iterate with `converged == false`.
pub fn value_iteration(mdp: &TabularMdp, opts: &ViOptions) -> Result<ViSolution, MdpError> {
    mdp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..mdp.n_states).map(|_| rng.random::<f64>()).collect();
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let next: Vec<f64> = (0..mdp.n_states)
            .map(|s| {
                (0..mdp.n_actions)
                    .map(|a| mdp.q_value(&v, s, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(MdpError::NonFinite { iteration: iterations });
        }
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        residuals.push(delta);
        v = next;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "value iteration hit max_iters={} with residual {:e}",
            opts.max_iters,
            residuals.last().copied().unwrap_or(f64::NAN)
        );
    }

    let q = mdp.q_table(&v);
    let (optimal, suboptimal) = extract(&q);
    Ok(ViSolution {
        values: v,
        q,
        optimal,
        suboptimal,
        iterations,
        converged,
        residuals,
    })
}
