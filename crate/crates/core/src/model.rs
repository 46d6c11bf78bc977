//! Instances and allocations.
//!
//! Every matrix in this crate is oriented items × agents: entry `(k, i)` is
//! agent `i`'s value for item `k`. External data in the other orientation
//! must be transposed on ingestion.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance of a generated instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub dist: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

/// Additive fair-division instance: an m×n nonnegative valuation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    n: usize,
    m: usize,
    values: Vec<f64>,
    meta: Option<InstanceMeta>,
}

#[derive(Serialize, Deserialize)]
struct InstanceJson {
    n: usize,
    m: usize,
    values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<InstanceMeta>,
}

impl Instance {
    /// Builds an instance from a row-major (item-major) buffer of length `m * n`.
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidInstance(format!("need n, m >= 1 (got n={n}, m={m})")));
        }
        if values.len() != n * m {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values ({m} items x {n} agents)", n * m),
                got: values.len().to_string(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInstance(format!(
                "entry ({}, {}) = {} is not a finite nonnegative real",
                pos / n,
                pos % n,
                values[pos]
            )));
        }
        Ok(Self {
            n,
            m,
            values,
            meta: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInstance("ragged valuation rows".into()));
        }
        Self::new(n, m, rows.concat())
    }

    pub fn with_meta(mut self, meta: InstanceMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn value(&self, item: usize, agent: usize) -> f64 {
        self.values[item * self.n + agent]
    }

    /// Row-major valuation buffer.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.values[item * self.n..(item + 1) * self.n]
    }

    pub fn meta(&self) -> Option<&InstanceMeta> {
        self.meta.as_ref()
    }

    /// Reorders items and agents: new item `k` is old item `item_perm[k]`,
    /// new agent `i` is old agent `agent_perm[i]`.
    pub fn permuted(&self, item_perm: &[usize], agent_perm: &[usize]) -> Self {
        assert_eq!(item_perm.len(), self.m);
        assert_eq!(agent_perm.len(), self.n);
        let mut values = Vec::with_capacity(self.values.len());
        for &k in item_perm {
            for &i in agent_perm {
                values.push(self.value(k, i));
            }
        }
        Self {
            n: self.n,
            m: self.m,
            values,
            meta: self.meta.clone(),
        }
    }

    /// Multiplies every valuation by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let values = self.values.iter().map(|v| v * c).collect();
        Self {
            n: self.n,
            m: self.m,
            values,
            meta: self.meta.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let rows = (0..self.m).map(|k| self.row(k).to_vec()).collect();
        let doc = InstanceJson {
            n: self.n,
            m: self.m,
            values: rows,
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceJson = serde_json::from_str(text)?;
        if doc.values.len() != doc.m {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", doc.m),
                got: doc.values.len().to_string(),
            });
        }
        if doc.values.iter().any(|r| r.len() != doc.n) {
            return Err(Error::DimensionMismatch {
                expected: format!("rows of length {}", doc.n),
                got: "ragged rows".into(),
            });
        }
        let inst = Self::new(doc.n, doc.m, doc.values.concat())?;
        Ok(match doc.meta {
            Some(meta) => inst.with_meta(meta),
            None => inst,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// One-hot allocation stored as the owner of each item.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteAllocation {
    pub owner: Vec<usize>,
}

impl DiscreteAllocation {
    pub fn new(owner: Vec<usize>) -> Self {
        Self { owner }
    }

    pub fn m(&self) -> usize {
        self.owner.len()
    }

    pub fn check(&self, inst: &Instance) -> Result<()> {
        if self.owner.len() != inst.m() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} owners", inst.m()),
                got: self.owner.len().to_string(),
            });
        }
        if let Some(&bad) = self.owner.iter().find(|&&a| a >= inst.n()) {
            return Err(Error::InvalidAllocation(format!(
                "owner {bad} out of range for {} agents",
                inst.n()
            )));
        }
        Ok(())
    }

    /// Items held by each agent, in increasing item order.
    pub fn bundles(&self, n: usize) -> Vec<Vec<usize>> {
        let mut b = vec![Vec::new(); n];
        for (k, &a) in self.owner.iter().enumerate() {
            b[a].push(k);
        }
        b
    }

    pub fn to_fractional(&self, n: usize) -> FractionalAllocation {
        let mut probs = vec![0.0; self.owner.len() * n];
        for (k, &a) in self.owner.iter().enumerate() {
            probs[k * n + a] = 1.0;
        }
        FractionalAllocation {
            n,
            m: self.owner.len(),
            probs,
        }
    }
}

/// Row-stochastic m×n assignment matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionalAllocation {
    n: usize,
    m: usize,
    probs: Vec<f64>,
}

impl FractionalAllocation {
    pub const ROW_SUM_TOL: f64 = 1e-9;

    pub fn new(n: usize, m: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n * m {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", n * m),
                got: probs.len().to_string(),
            });
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidAllocation("entries must lie in [0, 1]".into()));
        }
        for (k, row) in probs.chunks(n.max(1)).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(Error::InvalidAllocation(format!("row {k} sums to {s}")));
            }
        }
        Ok(Self { n, m, probs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn prob(&self, item: usize, agent: usize) -> f64 {
        self.probs[item * self.n + agent]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.probs[item * self.n..(item + 1) * self.n]
    }

    /// `λ·self + (1−λ)·other`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        if self.n != other.n || self.m != other.m {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.m, self.n),
                got: format!("{}x{}", other.m, other.n),
            });
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        Ok(Self {
            n: self.n,
            m: self.m,
            probs,
        })
    }
}

/// Either allocation kind, as read from an allocation JSON file.
#[derive(Clone, Debug, PartialEq)]
pub enum Allocation {
    Discrete(DiscreteAllocation),
    Fractional(FractionalAllocation),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AllocationJson {
    Discrete { owner: Vec<usize> },
    Fractional { probs: Vec<Vec<f64>> },
}

impl Allocation {
    pub fn to_json(&self) -> Result<String> {
        let doc = match self {
            Allocation::Discrete(d) => AllocationJson::Discrete { owner: d.owner.clone() },
            Allocation::Fractional(f) => AllocationJson::Fractional {
                probs: (0..f.m).map(|k| f.row(k).to_vec()).collect(),
            },
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(match serde_json::from_str(text)? {
            AllocationJson::Discrete { owner } => Allocation::Discrete(DiscreteAllocation { owner }),
            AllocationJson::Fractional { probs } => {
                let m = probs.len();
                let n = probs.first().map_or(0, Vec::len);
                if probs.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidAllocation("ragged probability rows".into()));
                }
                Allocation::Fractional(FractionalAllocation::new(n, m, probs.concat())?)
            }
        })
    }

    /// Discrete view; fractional inputs are rounded by row-wise argmax.
    pub fn into_discrete(self) -> DiscreteAllocation {
        match self {
            Allocation::Discrete(d) => d,
            Allocation::Fractional(f) => crate::envy::discretize(&f),
        }
    }
}

/// Realized valuation of every agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityVector(pub Vec<f64>);

impl UtilityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for UtilityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_entries() {
        assert!(Instance::new(2, 1, vec![1.0, -0.5]).is_err());
        assert!(Instance::new(2, 1, vec![1.0, f64::NAN]).is_err());
        assert!(Instance::new(0, 1, vec![]).is_err());
        assert!(Instance::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn instance_json_roundtrip() {
        let inst = Instance::from_rows(&[vec![0.25, 1.0], vec![0.0, 0.1], vec![3.0, 2.0]])
            .unwrap()
            .with_meta(InstanceMeta {
                dist: "uniform".into(),
                params: BTreeMap::new(),
                seed: 42,
            });
        let text = inst.to_json().unwrap();
        assert!(text.contains("\"values\":[[0.25,1.0],[0.0,0.1],[3.0,2.0]]"));
        assert_eq!(Instance::from_json(&text).unwrap(), inst);
    }

    #[test]
    fn allocation_json_forms() {
        let d = Allocation::from_json(r#"{"owner":[1,0,1]}"#).unwrap();
        assert_eq!(d, Allocation::Discrete(DiscreteAllocation::new(vec![1, 0, 1])));
        let f = Allocation::from_json(r#"{"probs":[[0.25,0.75],[1.0,0.0]]}"#).unwrap();
        assert_eq!(f.clone().into_discrete().owner, vec![1, 0]);
        assert!(Allocation::from_json(r#"{"probs":[[0.5,0.6]]}"#).is_err());
        let text = f.to_json().unwrap();
        assert_eq!(Allocation::from_json(&text).unwrap(), f);
    }

    #[test]
    fn owner_out_of_range() {
        let inst = Instance::new(2, 2, vec![1.0; 4]).unwrap();
        assert!(DiscreteAllocation::new(vec![0, 2]).check(&inst).is_err());
        assert!(DiscreteAllocation::new(vec![0]).check(&inst).is_err());
        assert!(DiscreteAllocation::new(vec![0, 1]).check(&inst).is_ok());
    }
}
