//! Realized utilities and the two welfare objectives.

use crate::error::{Error, Result};
use crate::model::{DiscreteAllocation, FractionalAllocation, Instance, UtilityVector};

/// Anything that can be read as an m×n assignment matrix.
pub trait Assignment {
    /// Checks that the assignment fits `inst`.
    fn validate(&self, inst: &Instance) -> Result<()>;
    /// Adds `Σ_k V(k,i)·A(k,i)` into `out[i]`, summing in item order.
    fn accumulate(&self, inst: &Instance, out: &mut [f64]);
}

impl Assignment for DiscreteAllocation {
    fn validate(&self, inst: &Instance) -> Result<()> {
        self.check(inst)
    }

    fn accumulate(&self, inst: &Instance, out: &mut [f64]) {
        for (k, &a) in self.owner.iter().enumerate() {
            out[a] += inst.value(k, a);
        }
    }
}

impl Assignment for FractionalAllocation {
    fn validate(&self, inst: &Instance) -> Result<()> {
        if self.m() != inst.m() || self.n() != inst.n() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", inst.m(), inst.n()),
                got: format!("{}x{}", self.m(), self.n()),
            });
        }
        Ok(())
    }

    fn accumulate(&self, inst: &Instance, out: &mut [f64]) {
        for k in 0..self.m() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += inst.value(k, i) * self.prob(k, i);
            }
        }
    }
}

pub fn utilities<A: Assignment>(inst: &Instance, alloc: &A) -> Result<UtilityVector> {
    alloc.validate(inst)?;
    let mut u = vec![0.0; inst.n()];
    alloc.accumulate(inst, &mut u);
    Ok(UtilityVector(u))
}

pub fn utilitarian_welfare(u: &UtilityVector) -> f64 {
    u.0.iter().sum()
}

/// UW of a discrete allocation summed item by item. This ordering matches
/// [`crate::exact::optimal_uw`], so a per-item argmax allocation reproduces
/// the optimum bit for bit.
pub fn item_order_welfare(inst: &Instance, alloc: &DiscreteAllocation) -> f64 {
    alloc.owner.iter().enumerate().map(|(k, &a)| inst.value(k, a)).sum()
}

/// Geometric mean of utilities; 0 when any utility is 0.
pub fn nash_welfare(u: &UtilityVector) -> f64 {
    if u.0.is_empty() || u.0.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    (log_nash(u) / u.0.len() as f64).exp()
}

/// `Σ ln u_i`, or `-∞` if some utility is not positive.
pub fn log_nash(u: &UtilityVector) -> f64 {
    let mut s = 0.0;
    for &x in &u.0 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        s += x.ln();
    }
    s
}
