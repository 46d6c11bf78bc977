//! EF1 repair by Nash-improving single-item transfers.
//!
//! Each pass scans ordered pairs `(i, j)` lexicographically. When `i` violates
//! EF1 toward `j`, the item of `j`'s bundle maximizing
//! `ln(u_i + V(o,i)) + ln(u_j − V(o,j))` moves to `i` and the utilities are
//! updated before the scan continues. The run stops after a pass with no
//! transfer, or after `max_passes` passes.
//!
//! Two implementations share these semantics bit for bit: [`ef1_quick_repair`]
//! (reference) and [`ef1_quick_repair_fast`] (flat arrays, one item sweep per
//! envier).

use serde::{Deserialize, Serialize};

use crate::envy::bundle_value;
use crate::error::{Error, Result};
use crate::model::{DiscreteAllocation, Instance, UtilityVector};
use crate::welfare::utilities;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairResult {
    pub alloc: DiscreteAllocation,
    /// Outer iterations in which the pair scan ran.
    pub passes_executed: usize,
    pub transfers: usize,
    /// A full pass finished without any transfer.
    pub converged: bool,
}

impl RepairResult {
    /// Passes that moved at least one item. Zero means the input was already EF1.
    pub fn passes_with_transfers(&self) -> usize {
        if self.converged {
            self.passes_executed - 1
        } else {
            self.passes_executed
        }
    }
}

/// `v_i(A_j) − v_i(A_i) > max_{o ∈ A_j} v_i(o)`; never true for an empty `A_j`.
pub fn ef1_violation(inst: &Instance, alloc: &DiscreteAllocation, i: usize, j: usize) -> bool {
    let mut best: Option<f64> = None;
    for (k, &a) in alloc.owner.iter().enumerate() {
        if a == j {
            let v = inst.value(k, i);
            best = Some(best.map_or(v, |b| b.max(v)));
        }
    }
    match best {
        None => false,
        Some(b) => bundle_value(inst, alloc, i, j) - bundle_value(inst, alloc, i, i) > b,
    }
}

/// Log-Nash gain score for moving item `o` from `j` to `i`; `-∞` when the
/// donor would be left with nothing or the receiver would still have nothing.
pub fn transfer_score(inst: &Instance, u: &UtilityVector, i: usize, j: usize, o: usize) -> f64 {
    score(u[i] + inst.value(o, i), u[j] - inst.value(o, j))
}

#[inline]
fn score(receiver: f64, donor: f64) -> f64 {
    if donor <= 0.0 || receiver <= 0.0 {
        f64::NEG_INFINITY
    } else {
        receiver.ln() + donor.ln()
    }
}

/// Picks the item to move: best finite score (lowest index on ties), else the
/// item maximizing the receiver's new utility (lowest index on ties).
fn choose(candidates: impl Iterator<Item = (usize, f64, f64)>) -> Option<usize> {
    let mut best_finite: Option<(usize, f64)> = None;
    let mut best_gain: Option<(usize, f64)> = None;
    for (k, receiver, donor) in candidates {
        let s = score(receiver, donor);
        if s.is_finite() && best_finite.is_none_or(|(_, b)| s > b) {
            best_finite = Some((k, s));
        }
        if best_gain.is_none_or(|(_, b)| receiver > b) {
            best_gain = Some((k, receiver));
        }
    }
    best_finite.or(best_gain).map(|(k, _)| k)
}

fn check_inputs(inst: &Instance, alloc: &DiscreteAllocation, max_passes: usize) -> Result<()> {
    alloc.check(inst)?;
    if max_passes == 0 {
        return Err(Error::InvalidArgument("max_passes must be >= 1".into()));
    }
    Ok(())
}

/// Reference implementation.
pub fn ef1_quick_repair(inst: &Instance, alloc: &DiscreteAllocation, max_passes: usize) -> Result<RepairResult> {
    ef1_quick_repair_observed(inst, alloc, max_passes, |_, _, _| {})
}

/// Reference implementation with a hook called after every transfer with
/// `(utilities before, utilities after, allocation after)`.
pub fn ef1_quick_repair_observed(
    inst: &Instance,
    alloc: &DiscreteAllocation,
    max_passes: usize,
    mut on_transfer: impl FnMut(&UtilityVector, &UtilityVector, &DiscreteAllocation),
) -> Result<RepairResult> {
    check_inputs(inst, alloc, max_passes)?;
    let n = inst.n();
    let mut a = alloc.clone();
    let mut u = utilities(inst, &a)?;
    let mut passes = 0;
    let mut transfers = 0;
    let mut converged = false;
    while passes < max_passes {
        passes += 1;
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if i == j || !ef1_violation(inst, &a, i, j) {
                    continue;
                }
                let candidates = a
                    .owner
                    .iter()
                    .enumerate()
                    .filter(|&(_, &o)| o == j)
                    .map(|(k, _)| (k, u[i] + inst.value(k, i), u[j] - inst.value(k, j)))
                    .collect::<Vec<_>>();
                let k = choose(candidates.into_iter())
                    .ok_or_else(|| Error::Defect("violation against an empty bundle".into()))?;
                let before = u.clone();
                a.owner[k] = i;
                u.0[i] += inst.value(k, i);
                u.0[j] -= inst.value(k, j);
                on_transfer(&before, &u, &a);
                transfers += 1;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(RepairResult {
        alloc: a,
        passes_executed: passes,
        transfers,
        converged,
    })
}

/// Accelerated implementation: for each envier `i` a single item sweep fills
/// `v_i(A_j)` and `max_{o∈A_j} v_i(o)` for every `j`; the row is refreshed
/// only after a transfer. Decisions match [`ef1_quick_repair`] exactly.
pub fn ef1_quick_repair_fast(inst: &Instance, alloc: &DiscreteAllocation, max_passes: usize) -> Result<RepairResult> {
    check_inputs(inst, alloc, max_passes)?;
    let n = inst.n();
    let m = inst.m();
    let vals = inst.values();
    let mut owner = alloc.owner.clone();
    let mut u = vec![0.0; n];
    for (k, &a) in owner.iter().enumerate() {
        u[a] += vals[k * n + a];
    }
    let mut cross = vec![0.0; n];
    let mut top = vec![f64::NEG_INFINITY; n];
    let mut count = vec![0usize; n];

    let sweep = |owner: &[usize], i: usize, cross: &mut [f64], top: &mut [f64], count: &mut [usize]| {
        cross.fill(0.0);
        top.fill(f64::NEG_INFINITY);
        count.fill(0);
        for k in 0..m {
            let j = owner[k];
            let v = vals[k * n + i];
            cross[j] += v;
            if v > top[j] {
                top[j] = v;
            }
            count[j] += 1;
        }
    };

    let mut passes = 0;
    let mut transfers = 0;
    let mut converged = false;
    while passes < max_passes {
        passes += 1;
        let mut changed = false;
        for i in 0..n {
            sweep(&owner, i, &mut cross, &mut top, &mut count);
            for j in 0..n {
                if i == j || count[j] == 0 || cross[j] - cross[i] <= top[j] {
                    continue;
                }
                let (ui, uj) = (u[i], u[j]);
                let k = choose(
                    (0..m)
                        .filter(|&k| owner[k] == j)
                        .map(|k| (k, ui + vals[k * n + i], uj - vals[k * n + j])),
                )
                .ok_or_else(|| Error::Defect("violation against an empty bundle".into()))?;
                owner[k] = i;
                u[i] += vals[k * n + i];
                u[j] -= vals[k * n + j];
                transfers += 1;
                changed = true;
                sweep(&owner, i, &mut cross, &mut top, &mut count);
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(RepairResult {
        alloc: DiscreteAllocation::new(owner),
        passes_executed: passes,
        transfers,
        converged,
    })
}
