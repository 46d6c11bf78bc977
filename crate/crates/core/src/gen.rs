//! Seeded valuation generators.
//!
//! Draw order is part of the file contract: uniform fills row-major (item,
//! then agent); correlated draws every item quality first, then the noise
//! matrix row-major; Pareto fills row-major, then min-max normalizes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, InstanceMeta};
use crate::rng::Prng;

pub const DEFAULT_PARETO_ALPHA: f64 = 3.0;
pub const DEFAULT_CORRELATION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Uniform,
    Pareto,
    Correlated,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::Uniform => "uniform",
            Distribution::Pareto => "pareto",
            Distribution::Correlated => "correlated",
        })
    }
}

impl FromStr for Distribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "pareto" => Ok(Distribution::Pareto),
            "correlated" => Ok(Distribution::Correlated),
            other => Err(Error::InvalidArgument(format!("unknown distribution `{other}`"))),
        }
    }
}

/// Full description of one generated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub distribution: Distribution,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub seed: u64,
    #[serde(default)]
    pub require_m_ge_n: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_PARETO_ALPHA
}

fn default_lambda() -> f64 {
    DEFAULT_CORRELATION
}

impl GenSpec {
    pub fn new(distribution: Distribution, n: usize, m: usize, seed: u64) -> Self {
        Self {
            distribution,
            n,
            m,
            alpha: DEFAULT_PARETO_ALPHA,
            lambda: DEFAULT_CORRELATION,
            seed,
            require_m_ge_n: false,
        }
    }

    pub fn generate(&self) -> Result<Instance> {
        if self.require_m_ge_n && self.m < self.n {
            return Err(Error::InvalidArgument(format!(
                "m >= n required (got n={}, m={})",
                self.n, self.m
            )));
        }
        match self.distribution {
            Distribution::Uniform => gen_uniform(self.n, self.m, self.seed),
            Distribution::Pareto => gen_pareto(self.n, self.m, self.alpha, self.seed),
            Distribution::Correlated => gen_correlated(self.n, self.m, self.lambda, self.seed),
        }
    }
}

fn check_size(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("need n, m >= 1 (got n={n}, m={m})")));
    }
    Ok(())
}

fn meta(dist: Distribution, params: &[(&str, f64)], seed: u64) -> InstanceMeta {
    InstanceMeta {
        dist: dist.to_string(),
        params: params
            .iter()
            .map(|&(k, v)| (k.to_string(), v))
            .collect::<BTreeMap<_, _>>(),
        seed,
    }
}

/// I.i.d. `U[0, 1)` valuations.
pub fn gen_uniform(n: usize, m: usize, seed: u64) -> Result<Instance> {
    check_size(n, m)?;
    let mut rng = Prng::new(seed);
    let values = (0..n * m).map(|_| rng.next_f64()).collect();
    Ok(Instance::new(n, m, values)?.with_meta(meta(Distribution::Uniform, &[], seed)))
}

/// Raw Pareto(`alpha`) draws with unit scale, min-max normalized per instance.
pub fn gen_pareto(n: usize, m: usize, alpha: f64, seed: u64) -> Result<Instance> {
    check_size(n, m)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pareto alpha must be > 0 (got {alpha})"
        )));
    }
    let mut rng = Prng::new(seed);
    let raw = pareto_raw(&mut rng, n * m, alpha);
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi > lo {
        raw.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        log::warn!("pareto instance (seed {seed}) has zero spread; emitting all zeros");
        vec![0.0; n * m]
    };
    Ok(Instance::new(n, m, values)?.with_meta(meta(Distribution::Pareto, &[("alpha", alpha)], seed)))
}

/// Inverse-CDF draws `x = (1 - u)^(-1/alpha)`; `u < 1` keeps them finite.
pub fn pareto_raw(rng: &mut Prng, count: usize, alpha: f64) -> Vec<f64> {
    (0..count).map(|_| (1.0 - rng.next_f64()).powf(-1.0 / alpha)).collect()
}

/// `V(o, i) = λ·β_o + (1 − λ)·ε_{o,i}` with shared item quality `β`.
pub fn gen_correlated(n: usize, m: usize, lambda: f64, seed: u64) -> Result<Instance> {
    check_size(n, m)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda must lie in [0, 1] (got {lambda})"
        )));
    }
    let mut rng = Prng::new(seed);
    let beta: Vec<f64> = (0..m).map(|_| rng.next_f64()).collect();
    let mut values = Vec::with_capacity(n * m);
    for b in &beta {
        for _ in 0..n {
            values.push(lambda * b + (1.0 - lambda) * rng.next_f64());
        }
    }
    Ok(Instance::new(n, m, values)?.with_meta(meta(Distribution::Correlated, &[("lambda", lambda)], seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_range_and_determinism() {
        let a = gen_uniform(4, 9, 17).unwrap();
        assert!(a.values().iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(a, gen_uniform(4, 9, 17).unwrap());
        assert_ne!(a.values(), gen_uniform(4, 9, 18).unwrap().values());
    }

    #[test]
    fn uniform_fill_order_is_row_major() {
        let inst = gen_uniform(3, 2, 99).unwrap();
        let mut rng = Prng::new(99);
        for k in 0..2 {
            for i in 0..3 {
                assert_eq!(inst.value(k, i).to_bits(), rng.next_f64().to_bits());
            }
        }
    }

    #[test]
    fn pareto_is_min_max_normalized() {
        for seed in 0..50 {
            let inst = gen_pareto(3, 6, 3.0, seed).unwrap();
            let lo = inst.values().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = inst.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
        }
        assert!(gen_pareto(2, 2, 0.0, 1).is_err());
    }

    #[test]
    fn pareto_raw_collapses_for_large_alpha() {
        let mut rng = Prng::new(4);
        let raw = pareto_raw(&mut rng, 1000, 1e9);
        let spread = raw.iter().copied().fold(0.0f64, |a, x| a.max((x - 1.0).abs()));
        assert!(spread < 1e-6, "spread {spread}");
        assert!(raw.iter().all(|&x| x >= 1.0));
    }

    #[test]
    fn pareto_raw_is_right_skewed() {
        let mut rng = Prng::new(2024);
        let xs = pareto_raw(&mut rng, 100_000, 3.0);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        assert!(skew > 1.0, "skewness {skew}");
        // mean of Pareto(3) with unit scale is 3/2
        assert!((mean - 1.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn correlated_limits() {
        let one = gen_correlated(4, 5, 1.0, 8).unwrap();
        for k in 0..5 {
            assert!(one.row(k).iter().all(|&v| v == one.row(k)[0]));
        }
        // λ = 0: the noise matrix is the uniform stream after the m quality draws
        let zero = gen_correlated(4, 5, 0.0, 8).unwrap();
        let mut rng = Prng::new(8);
        for _ in 0..5 {
            rng.next_f64();
        }
        for &v in zero.values() {
            assert_eq!(v, rng.next_f64());
        }
        let half = gen_correlated(4, 5, 0.5, 8).unwrap();
        assert!(half.values().iter().all(|v| (0.0..1.0).contains(v)));
        assert!(gen_correlated(2, 2, 1.5, 0).is_err());
    }

    #[test]
    fn spec_dispatch_and_m_ge_n() {
        let mut s = GenSpec::new(Distribution::Correlated, 5, 3, 1);
        assert!(s.generate().is_ok());
        s.require_m_ge_n = true;
        assert!(s.generate().is_err());
        s.m = 5;
        assert_eq!(s.generate().unwrap(), gen_correlated(5, 5, 0.5, 1).unwrap());
        assert_eq!("pareto".parse::<Distribution>().unwrap(), Distribution::Pareto);
    }
}
