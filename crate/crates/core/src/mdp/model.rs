use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::solver::{argmax, value_iteration, TabularMdp, ViOptions};
use super::{Action, MdpError};
use crate::affect::Emotion;

/// Named MDP over emotions and teaching actions. `actions` is also the
/// argmax tie-break order.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    pub states: Vec<Emotion>,
    pub actions: Vec<Action>,
    pub tabular: TabularMdp,
}

impl MdpModel {
    pub fn state_index(&self, s: Emotion) -> Option<usize> {
        self.states.iter().position(|&x| x == s)
    }

    pub fn action_index(&self, a: Action) -> Option<usize> {
        self.actions.iter().position(|&x| x == a)
    }

    pub fn discount(&self, s: Emotion) -> Option<f64> {
        self.state_index(s).map(|i| self.tabular.discounts[i])
    }

    /// Row-stochastic chain induced by choosing `choose(s)` in each state.
    pub fn chain_under(&self, choose: impl Fn(Emotion) -> Action) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .enumerate()
            .map(|(si, &s)| {
                let a = self.action_index(choose(s)).expect("action in model");
                self.tabular.row(a, si).to_vec()
            })
            .collect()
    }

    /// Chain with every action equally likely.
    pub fn uniform_action_chain(&self) -> Vec<Vec<f64>> {
        let n = self.states.len();
        let k = self.actions.len() as f64;
        (0..n)
            .map(|s| {
                (0..n)
                    .map(|next| (0..self.actions.len()).map(|a| self.tabular.p(a, s, next)).sum::<f64>() / k)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank {
    Optimal,
    Suboptimal,
    BestFeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub optimal: BTreeMap<Emotion, Action>,
    pub suboptimal: BTreeMap<Emotion, Action>,
    pub q_values: BTreeMap<Emotion, BTreeMap<Action, f64>>,
    pub values: BTreeMap<Emotion, f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// Tie-break order used for every argmax.
    pub action_order: Vec<Action>,
}

impl Policy {
    /// Re-derives the optimal/sub-optimal maps and values from `q_values`.
    pub fn rederive(&mut self) {
        let mut optimal = BTreeMap::new();
        let mut suboptimal = BTreeMap::new();
        let mut values = BTreeMap::new();
        for (&s, row) in &self.q_values {
            let ordered: Vec<f64> = self.action_order.iter().map(|a| row[a]).collect();
            let best = argmax(ordered.iter().copied(), None).expect("non-empty action set");
            optimal.insert(s, self.action_order[best]);
            values.insert(s, ordered[best]);
            if let Some(second) = argmax(ordered.iter().copied(), Some(best)) {
                suboptimal.insert(s, self.action_order[second]);
            }
        }
        self.optimal = optimal;
        self.suboptimal = suboptimal;
        self.values = values;
    }

    pub fn q(&self, s: Emotion, a: Action) -> Option<f64> {
        self.q_values.get(&s)?.get(&a).copied()
    }

    pub fn max_abs_q(&self) -> f64 {
        self.q_values
            .values()
            .flat_map(|row| row.values())
            .fold(0.0, |m, q| m.max(q.abs()))
    }
}

/// Runs value iteration and names the result.
pub fn solve(model: &MdpModel, opts: &ViOptions) -> Result<Policy, MdpError> {
    let sol = value_iteration(&model.tabular, opts)?;
    let mut q_values = BTreeMap::new();
    let mut values = BTreeMap::new();
    let mut optimal = BTreeMap::new();
    let mut suboptimal = BTreeMap::new();
    for (si, &s) in model.states.iter().enumerate() {
        q_values.insert(
            s,
            model
                .actions
                .iter()
                .enumerate()
                .map(|(ai, &a)| (a, sol.q[si][ai]))
                .collect(),
        );
        values.insert(s, sol.values[si]);
        optimal.insert(s, model.actions[sol.optimal[si]]);
        if let Some(sub) = sol.suboptimal[si] {
            suboptimal.insert(s, model.actions[sub]);
        }
    }
    Ok(Policy {
        optimal,
        suboptimal,
        q_values,
        values,
        iterations: sol.iterations,
        converged: sol.converged,
        residual: sol.residual(),
        action_order: model.actions.clone(),
    })
}

/// Optimal action if feasible, else the sub-optimal one, else the feasible
/// action with the highest Q value.
pub fn lookup_action(policy: &Policy, s: Emotion, infeasible: &BTreeSet<Action>) -> Result<(Action, Rank), MdpError> {
    let feasible = |a: &Action| !infeasible.contains(a);
    if let Some(a) = policy.optimal.get(&s).filter(|a| feasible(a)) {
        return Ok((*a, Rank::Optimal));
    }
    if let Some(a) = policy.suboptimal.get(&s).filter(|a| feasible(a)) {
        return Ok((*a, Rank::Suboptimal));
    }
    let row = policy
        .q_values
        .get(&s)
        .ok_or_else(|| MdpError::InvalidModel(format!("state {s} not in policy")))?;
    let candidates: Vec<Action> = policy.action_order.iter().copied().filter(feasible).collect();
    argmax(candidates.iter().map(|a| row[a]), None)
        .map(|i| (candidates[i], Rank::BestFeasible))
        .ok_or_else(|| MdpError::AllInfeasible(s.to_string()))
}
