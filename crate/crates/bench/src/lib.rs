//! Shared fixtures for the criterion benches.

use fairdiv::gen::{gen_uniform, Distribution, GenSpec};
use fairdiv::Instance;

/// `count` uniform instances of size `n`×`m` with consecutive seeds.
pub fn uniform_cohort(n: usize, m: usize, count: usize) -> Vec<Instance> {
    (0..count as u64)
        .map(|s| gen_uniform(n, m, 1000 + s).expect("valid size"))
        .collect()
}

pub fn cohort(dist: Distribution, n: usize, m: usize, count: usize) -> Vec<Instance> {
    (0..count as u64)
        .map(|s| GenSpec::new(dist, n, m, 1000 + s).generate().expect("valid size"))
        .collect()
}
