//! Envy, EF1 and EFX checks for additive valuations.
//!
//! Comparisons use the stored sums directly, without tolerances. Every
//! quantity is a sum or difference of input entries, so verdicts are
//! reproducible bit for bit.

use crate::model::{DiscreteAllocation, FractionalAllocation, Instance};

/// `v_i(A_j)`, summed in item order.
pub fn bundle_value(inst: &Instance, alloc: &DiscreteAllocation, i: usize, j: usize) -> f64 {
    alloc
        .owner
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a == j)
        .map(|(k, _)| inst.value(k, i))
        .sum()
}

fn max_item(inst: &Instance, alloc: &DiscreteAllocation, i: usize, j: usize) -> Option<f64> {
    alloc
        .owner
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a == j)
        .map(|(k, _)| inst.value(k, i))
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn min_item(inst: &Instance, alloc: &DiscreteAllocation, i: usize, j: usize, positive_only: bool) -> Option<f64> {
    alloc
        .owner
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a == j)
        .map(|(k, _)| inst.value(k, i))
        .filter(|&v| !positive_only || v > 0.0)
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
}

/// EF1 for the ordered pair `(i, j)` via the additive closed form: envy is
/// bounded by `i`'s most valuable item in `j`'s bundle.
pub fn ef1_pair_closed(inst: &Instance, alloc: &DiscreteAllocation, i: usize, j: usize) -> bool {
    debug_assert_ne!(i, j);
    let envy = bundle_value(inst, alloc, i, j) - bundle_value(inst, alloc, i, i);
    if envy <= 0.0 {
        return true;
    }
    // envy > 0 under nonnegative values means A_j is nonempty
    match max_item(inst, alloc, i, j) {
        Some(best) => envy <= best,
        None => true,
    }
}

/// EF1 for `(i, j)` by definition: no envy, or removing some single item
/// from `j`'s bundle removes it.
pub fn ef1_pair_general(inst: &Instance, alloc: &DiscreteAllocation, i: usize, j: usize) -> bool {
    debug_assert_ne!(i, j);
    let own = bundle_value(inst, alloc, i, i);
    let other = bundle_value(inst, alloc, i, j);
    if own >= other {
        return true;
    }
    alloc
        .owner
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a == j)
        .any(|(removed, _)| {
            let rest: f64 = alloc
                .owner
                .iter()
                .enumerate()
                .filter(|&(k, &a)| a == j && k != removed)
                .map(|(k, _)| inst.value(k, i))
                .sum();
            own >= rest
        })
}

/// Checks every ordered pair in lexicographic order and reports the first
/// violating pair.
pub fn is_ef1(inst: &Instance, alloc: &DiscreteAllocation) -> (bool, Option<(usize, usize)>) {
    let n = inst.n();
    let cross = cross_values(inst, alloc);
    let maxes = bundle_item_extremes(inst, alloc, false).0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let envy = cross[i * n + j] - cross[i * n + i];
            if envy > 0.0 && envy > maxes[i * n + j].unwrap_or(f64::INFINITY) {
                return (false, Some((i, j)));
            }
        }
    }
    (true, None)
}

/// EFX: every envious pair's envy is bounded by the least valuable item of
/// the envied bundle. With `positive_only`, items that `i` values at zero are
/// ignored when taking the minimum.
pub fn is_efx(inst: &Instance, alloc: &DiscreteAllocation, positive_only: bool) -> bool {
    let n = inst.n();
    let cross = cross_values(inst, alloc);
    let mins = bundle_item_extremes(inst, alloc, positive_only).1;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let envy = cross[i * n + j] - cross[i * n + i];
            if envy > 0.0 {
                if let Some(lo) = mins[i * n + j] {
                    if envy > lo {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// n×n matrix of `v_i(A_j)` (row `i`, column `j`), each entry summed in item order.
pub fn cross_values(inst: &Instance, alloc: &DiscreteAllocation) -> Vec<f64> {
    let n = inst.n();
    let mut w = vec![0.0; n * n];
    for (k, &j) in alloc.owner.iter().enumerate() {
        for i in 0..n {
            w[i * n + j] += inst.value(k, i);
        }
    }
    w
}

fn bundle_item_extremes(
    inst: &Instance,
    alloc: &DiscreteAllocation,
    positive_only: bool,
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let n = inst.n();
    let mut hi = vec![None; n * n];
    let mut lo: Vec<Option<f64>> = vec![None; n * n];
    for (k, &j) in alloc.owner.iter().enumerate() {
        for i in 0..n {
            let v = inst.value(k, i);
            let h = &mut hi[i * n + j];
            *h = Some(h.map_or(v, |x: f64| x.max(v)));
            if !positive_only || v > 0.0 {
                let l = &mut lo[i * n + j];
                *l = Some(l.map_or(v, |x: f64| x.min(v)));
            }
        }
    }
    (hi, lo)
}

/// One ordered pair of an [`EnvyReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct PairEnvy {
    pub i: usize,
    pub j: usize,
    /// `v_i(A_j) - v_i(A_i)`.
    pub envy: f64,
    /// `max_{o ∈ A_j} v_i(o)`; `None` for an empty bundle.
    pub max_item: Option<f64>,
    pub ef1_ok: bool,
    pub efx_ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvyReport {
    pub pairs: Vec<PairEnvy>,
}

impl EnvyReport {
    pub fn is_ef1(&self) -> bool {
        self.pairs.iter().all(|p| p.ef1_ok)
    }

    pub fn is_efx(&self) -> bool {
        self.pairs.iter().all(|p| p.efx_ok)
    }
}

pub fn envy_report(inst: &Instance, alloc: &DiscreteAllocation, positive_only: bool) -> EnvyReport {
    let n = inst.n();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let envy = bundle_value(inst, alloc, i, j) - bundle_value(inst, alloc, i, i);
            let max_item = max_item(inst, alloc, i, j);
            let ef1_ok = envy <= 0.0 || max_item.is_some_and(|h| envy <= h);
            let efx_ok = envy <= 0.0 || min_item(inst, alloc, i, j, positive_only).is_none_or(|l| envy <= l);
            pairs.push(PairEnvy {
                i,
                j,
                envy,
                max_item,
                ef1_ok,
                efx_ok,
            });
        }
    }
    EnvyReport { pairs }
}

/// Row-wise argmax; ties go to the lowest agent index.
pub fn discretize(frac: &FractionalAllocation) -> DiscreteAllocation {
    let owner = (0..frac.m()).map(|k| argmax_first(frac.row(k))).collect();
    DiscreteAllocation::new(owner)
}

/// Index of the first maximal entry.
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
