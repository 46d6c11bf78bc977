//! Per-instance welfare optima.
//!
//! Optimal utilitarian welfare is a per-item maximum. Optimal Nash welfare is
//! found by exhaustive enumeration or by depth-first branch and bound; both
//! maximize `Σ ln u_i` over one-hot allocations.
//!
//! Allocations leaving some agent at zero utility rank below every
//! all-positive allocation. If no all-positive allocation exists, the solvers
//! maximize the number of agents with positive utility, then the product of
//! those utilities, and report `best_log_nash = -∞`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::baselines::round_robin;
use crate::error::{Error, Result};
use crate::model::{DiscreteAllocation, Instance};
use crate::welfare::{log_nash, utilities};

pub const DEFAULT_BRUTE_BUDGET: u64 = 100_000_000;
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// `Σ_k max_i V(k, i)`, summed in item order.
pub fn optimal_uw(inst: &Instance) -> f64 {
    (0..inst.m())
        .map(|k| inst.row(k).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExactMethod {
    Brute,
    Bnb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactNwResult {
    pub best_alloc: DiscreteAllocation,
    /// `Σ ln u_i` of `best_alloc`, recomputed from item-order utilities.
    pub best_log_nash: f64,
    pub nodes_explored: u64,
    pub method: ExactMethod,
    /// False when a node budget cut the search short.
    pub proven: bool,
}

impl ExactNwResult {
    /// Geometric-mean Nash welfare of the optimum.
    pub fn nash_welfare(&self, n: usize) -> f64 {
        if self.best_log_nash.is_finite() {
            (self.best_log_nash / n as f64).exp()
        } else {
            0.0
        }
    }
}

/// Ranking key: (agents with positive utility, Σ ln over those agents).
#[derive(Clone, Copy, Debug, PartialEq)]
struct Key {
    positive: usize,
    log_sum: f64,
}

impl Key {
    const WORST: Key = Key {
        positive: 0,
        log_sum: f64::NEG_INFINITY,
    };

    fn of(u: &[f64]) -> Self {
        let mut positive = 0;
        let mut log_sum = 0.0;
        for &x in u {
            if x > 0.0 {
                positive += 1;
                log_sum += x.ln();
            }
        }
        Key { positive, log_sum }
    }

    fn cmp(&self, other: &Key) -> Ordering {
        self.positive
            .cmp(&other.positive)
            .then(self.log_sum.partial_cmp(&other.log_sum).unwrap_or(Ordering::Equal))
    }
}

fn finish(inst: &Instance, owner: Vec<usize>, nodes: u64, method: ExactMethod, proven: bool) -> Result<ExactNwResult> {
    let best_alloc = DiscreteAllocation::new(owner);
    let best_log_nash = log_nash(&utilities(inst, &best_alloc)?);
    Ok(ExactNwResult {
        best_alloc,
        best_log_nash,
        nodes_explored: nodes,
        method,
        proven,
    })
}

pub fn optimal_nw_brute(inst: &Instance) -> Result<ExactNwResult> {
    optimal_nw_brute_with_budget(inst, DEFAULT_BRUTE_BUDGET)
}

/// Enumerates all `n^m` allocations in lexicographic owner order; the first
/// maximizer wins ties.
pub fn optimal_nw_brute_with_budget(inst: &Instance, budget: u64) -> Result<ExactNwResult> {
    let (n, m) = (inst.n(), inst.m());
    let needed = (n as f64).powi(m as i32);
    if needed > budget as f64 {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    struct Search<'a> {
        inst: &'a Instance,
        owner: Vec<usize>,
        u: Vec<f64>,
        best: Key,
        best_owner: Vec<usize>,
        leaves: u64,
    }
    impl Search<'_> {
        fn go(&mut self, k: usize) {
            if k == self.inst.m() {
                self.leaves += 1;
                let key = Key::of(&self.u);
                if key.cmp(&self.best) == Ordering::Greater {
                    self.best = key;
                    self.best_owner.copy_from_slice(&self.owner);
                }
                return;
            }
            for a in 0..self.inst.n() {
                let old = self.u[a];
                self.u[a] = old + self.inst.value(k, a);
                self.owner[k] = a;
                self.go(k + 1);
                self.u[a] = old;
            }
        }
    }
    let mut s = Search {
        inst,
        owner: vec![0; m],
        u: vec![0.0; n],
        best: Key::WORST,
        best_owner: vec![0; m],
        leaves: 0,
    };
    s.go(0);
    let (owner, leaves) = (s.best_owner, s.leaves);
    finish(inst, owner, leaves, ExactMethod::Brute, true)
}

pub fn optimal_nw_bnb(inst: &Instance) -> Result<ExactNwResult> {
    optimal_nw_bnb_with_budget(inst, Some(DEFAULT_NODE_BUDGET))
}

/// Depth-first branch and bound over items sorted by decreasing row maximum.
/// A node with partial utilities `u` and remaining per-agent mass `R` is cut
/// when `Σ ln(u_i + R_i)` cannot beat the incumbent. `node_budget = None`
/// disables the cap.
pub fn optimal_nw_bnb_with_budget(inst: &Instance, node_budget: Option<u64>) -> Result<ExactNwResult> {
    let (n, m) = (inst.n(), inst.m());
    let row_max = |k: usize| inst.row(k).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        row_max(b)
            .partial_cmp(&row_max(a))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    // suffix[d * n + i]: agent i's total value for items at branch depth >= d
    let mut suffix = vec![0.0; (m + 1) * n];
    for d in (0..m).rev() {
        for i in 0..n {
            suffix[d * n + i] = suffix[(d + 1) * n + i] + inst.value(order[d], i);
        }
    }
    // agents to try per depth, most valuable first
    let child_order: Vec<Vec<usize>> = order
        .iter()
        .map(|&k| {
            let mut agents: Vec<usize> = (0..n).collect();
            agents.sort_by(|&a, &b| {
                inst.value(k, b)
                    .partial_cmp(&inst.value(k, a))
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            agents
        })
        .collect();

    let seed = round_robin(inst, None)?;
    let seed_key = Key::of(&utilities(inst, &seed)?.0);

    struct Search<'a> {
        inst: &'a Instance,
        order: &'a [usize],
        suffix: &'a [f64],
        child_order: &'a [Vec<usize>],
        owner: Vec<usize>,
        u: Vec<f64>,
        best: Key,
        best_owner: Vec<usize>,
        nodes: u64,
        budget: u64,
        exhausted: bool,
    }
    impl Search<'_> {
        fn bound(&self, depth: usize) -> Key {
            let n = self.inst.n();
            let caps: Vec<f64> = (0..n).map(|i| self.u[i] + self.suffix[depth * n + i]).collect();
            Key::of(&caps)
        }

        fn cut(&self, bound: Key) -> bool {
            match bound.positive.cmp(&self.best.positive) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => {
                    // float slack keeps rounding in the bound from discarding a tie-level optimum
                    let slack = 1e-12 * (1.0 + self.best.log_sum.abs());
                    bound.log_sum <= self.best.log_sum - slack
                }
            }
        }

        fn go(&mut self, depth: usize) {
            if self.exhausted {
                return;
            }
            self.nodes += 1;
            if self.nodes > self.budget {
                self.exhausted = true;
                return;
            }
            if depth == self.order.len() {
                let key = Key::of(&self.u);
                if key.cmp(&self.best) == Ordering::Greater {
                    self.best = key;
                    self.best_owner.copy_from_slice(&self.owner);
                }
                return;
            }
            if self.cut(self.bound(depth)) {
                return;
            }
            let k = self.order[depth];
            for idx in 0..self.child_order[depth].len() {
                let a = self.child_order[depth][idx];
                let old = self.u[a];
                self.u[a] = old + self.inst.value(k, a);
                self.owner[k] = a;
                self.go(depth + 1);
                self.u[a] = old;
            }
        }
    }

    let mut s = Search {
        inst,
        order: &order,
        suffix: &suffix,
        child_order: &child_order,
        owner: vec![0; m],
        u: vec![0.0; n],
        best: seed_key,
        best_owner: seed.owner.clone(),
        nodes: 0,
        budget: node_budget.unwrap_or(u64::MAX),
        exhausted: false,
    };
    s.go(0);
    let proven = !s.exhausted;
    if !proven {
        log::warn!(
            "branch and bound hit its node budget ({} nodes); result not proven",
            s.budget
        );
    }
    let (owner, nodes) = (s.best_owner, s.nodes);
    finish(inst, owner, nodes, ExactMethod::Bnb, proven)
}
