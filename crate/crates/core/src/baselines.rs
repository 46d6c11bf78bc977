//! Classical allocators: Round-Robin, Envy Cycle Elimination and MaxUtil.

use crate::envy::argmax_first;
use crate::error::{Error, Result};
use crate::model::{DiscreteAllocation, Instance};

/// Agents pick in `order` (identity by default), cyclically, each taking its
/// most valuable remaining item; ties go to the lowest item index.
pub fn round_robin(inst: &Instance, order: Option<&[usize]>) -> Result<DiscreteAllocation> {
    let n = inst.n();
    let identity: Vec<usize>;
    let order = match order {
        Some(o) => {
            let mut seen = vec![false; n];
            if o.len() != n || o.iter().any(|&a| a >= n || std::mem::replace(&mut seen[a], true)) {
                return Err(Error::InvalidArgument("picking order must permute the agents".into()));
            }
            o
        }
        None => {
            identity = (0..n).collect();
            &identity
        }
    };
    let m = inst.m();
    let mut owner = vec![usize::MAX; m];
    let mut remaining = m;
    let mut turn = 0;
    while remaining > 0 {
        let agent = order[turn % n];
        let mut pick = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for (k, o) in owner.iter().enumerate() {
            if *o == usize::MAX && inst.value(k, agent) > best {
                best = inst.value(k, agent);
                pick = k;
            }
        }
        owner[pick] = agent;
        remaining -= 1;
        turn += 1;
    }
    Ok(DiscreteAllocation::new(owner))
}

/// Directed envy graph over agents for a (partial) allocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvyGraph {
    n: usize,
    adj: Vec<bool>,
}

impl EnvyGraph {
    /// Edge `(i, j)` iff `v_i(A_i) < v_i(A_j)`. `bundles` may leave items unassigned.
    pub fn build(inst: &Instance, bundles: &[Vec<usize>]) -> Self {
        let n = inst.n();
        let mut adj = vec![false; n * n];
        for i in 0..n {
            let own: f64 = bundles[i].iter().map(|&k| inst.value(k, i)).sum();
            for j in 0..n {
                if i != j {
                    let other: f64 = bundles[j].iter().map(|&k| inst.value(k, i)).sum();
                    adj[i * n + j] = own < other;
                }
            }
        }
        Self { n, adj }
    }

    pub fn envies(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    pub fn in_degree(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.envies(i, j)).count()
    }

    pub fn unenvied(&self) -> Option<usize> {
        (0..self.n).find(|&j| self.in_degree(j) == 0)
    }

    /// Finds an envy cycle when every agent is envied. The walk starts at
    /// agent 0 and repeatedly steps to the lowest-index agent envying the
    /// current one; since every agent has an envier, a node must repeat.
    /// Returned in envy direction: `c[t]` envies `c[t + 1]` (cyclically).
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        let mut seen_at = vec![usize::MAX; self.n];
        let mut walk = Vec::new();
        let mut cur = 0;
        loop {
            if seen_at[cur] != usize::MAX {
                let mut cycle = walk[seen_at[cur]..].to_vec();
                cycle.reverse();
                return Some(cycle);
            }
            seen_at[cur] = walk.len();
            walk.push(cur);
            cur = (0..self.n).find(|&i| self.envies(i, cur))?;
        }
    }
}

/// Statistics from one ECE run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EceTrace {
    pub rotations: usize,
}

/// Envy Cycle Elimination: items in index order go to the lowest-index
/// unenvied agent; envy cycles are rotated away whenever every agent is envied.
pub fn envy_cycle_elimination(inst: &Instance) -> Result<DiscreteAllocation> {
    envy_cycle_elimination_traced(inst).map(|(a, _)| a)
}

pub fn envy_cycle_elimination_traced(inst: &Instance) -> Result<(DiscreteAllocation, EceTrace)> {
    let n = inst.n();
    let mut bundles: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut trace = EceTrace::default();
    for k in 0..inst.m() {
        let target = loop {
            let graph = EnvyGraph::build(inst, &bundles);
            if let Some(a) = graph.unenvied() {
                break a;
            }
            let cycle = graph
                .find_cycle()
                .ok_or_else(|| Error::Defect("every agent is envied but no envy cycle was found".into()))?;
            rotate(&mut bundles, &cycle);
            trace.rotations += 1;
        };
        bundles[target].push(k);
    }
    let mut owner = vec![0; inst.m()];
    for (a, b) in bundles.iter().enumerate() {
        for &k in b {
            owner[k] = a;
        }
    }
    Ok((DiscreteAllocation::new(owner), trace))
}

/// Each agent on the cycle takes the bundle of the agent it envies.
fn rotate(bundles: &mut [Vec<usize>], cycle: &[usize]) {
    let first = std::mem::take(&mut bundles[cycle[0]]);
    for t in 0..cycle.len() - 1 {
        bundles[cycle[t]] = std::mem::take(&mut bundles[cycle[t + 1]]);
    }
    bundles[cycle[cycle.len() - 1]] = first;
}

/// Each item to an agent valuing it most (lowest index on ties). Maximizes
/// utilitarian welfare under additive valuations.
pub fn max_util(inst: &Instance) -> DiscreteAllocation {
    DiscreteAllocation::new((0..inst.m()).map(|k| argmax_first(inst.row(k))).collect())
}
