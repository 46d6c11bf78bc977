use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::method::{Method, DEFAULT_MAX_PASSES};
use crate::envy::{is_ef1, is_efx};
use crate::error::{Error, Result};
use crate::exact::{optimal_nw_bnb_with_budget, optimal_uw, DEFAULT_NODE_BUDGET};
use crate::fairformer::ModelParams;
use crate::gen::{Distribution, GenSpec, DEFAULT_CORRELATION, DEFAULT_PARETO_ALPHA};
use crate::model::{DiscreteAllocation, Instance};
use crate::welfare::{item_order_welfare, log_nash, utilities};

/// Everything that determines an evaluation run except wall time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub dist: Distribution,
    /// Generator parameters: `alpha` (Pareto) and `lambda` (correlated).
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub sizes: Vec<[usize; 2]>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Hash of the model checkpoint used by FairFormer methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

impl CohortManifest {
    pub fn new(dist: Distribution, sizes: &[(usize, usize)], seeds: Vec<u64>, methods: Vec<Method>) -> Self {
        Self {
            dist,
            params: BTreeMap::new(),
            sizes: sizes.iter().map(|&(n, m)| [n, m]).collect(),
            seeds,
            methods,
            checkpoint_hash: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn gen_spec(&self, n: usize, m: usize, seed: u64) -> GenSpec {
        GenSpec {
            alpha: self.params.get("alpha").copied().unwrap_or(DEFAULT_PARETO_ALPHA),
            lambda: self.params.get("lambda").copied().unwrap_or(DEFAULT_CORRELATION),
            ..GenSpec::new(self.dist, n, m, seed)
        }
    }

    /// `(size, seed)` jobs in manifest order.
    pub fn jobs(&self) -> Vec<(usize, usize, u64)> {
        self.sizes
            .iter()
            .flat_map(|&[n, m]| self.seeds.iter().map(move |&s| (n, m, s)))
            .collect()
    }

    pub fn instance_id(&self, n: usize, m: usize, seed: u64) -> String {
        instance_id(self.dist, n, m, seed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Stable, sortable identifier such as `pareto-003x006-000042`.
pub fn instance_id(dist: Distribution, n: usize, m: usize, seed: u64) -> String {
    format!("{dist}-{n:03}x{m:03}-{seed:06}")
}

/// One (instance, method) evaluation. Ratios are percentages of the
/// instance optimum; `nash_ratio` is empty when the exact solver could not
/// prove an optimum within budget or the optimum is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub dist: Distribution,
    pub nash_ratio: Option<f64>,
    pub util_ratio: f64,
    pub ef1: bool,
    pub efx: bool,
    pub repair_passes: usize,
    pub repair_transfers: usize,
    pub wall_time_us: f64,
}

impl RunRecord {
    /// Same record with the wall time zeroed, for reproducibility checks.
    pub fn without_time(&self) -> Self {
        Self {
            wall_time_us: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Node budget of the branch-and-bound Nash solver.
    pub node_budget: u64,
    pub max_passes: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            node_budget: DEFAULT_NODE_BUDGET,
            max_passes: DEFAULT_MAX_PASSES,
        }
    }
}

/// Welfare optima of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Optima {
    pub uw: f64,
    /// Proven optimal `Σ ln u_i`, when finite.
    pub log_nw: Option<f64>,
}

impl Optima {
    pub fn compute(inst: &Instance, node_budget: u64) -> Result<Self> {
        let nw = optimal_nw_bnb_with_budget(inst, Some(node_budget))?;
        let log_nw = (nw.proven && nw.best_log_nash.is_finite()).then_some(nw.best_log_nash);
        if !nw.proven {
            log::warn!("Nash optimum not proven within {node_budget} nodes; ratio left empty");
        }
        Ok(Self {
            uw: optimal_uw(inst),
            log_nw,
        })
    }

    /// `100 · NW(A) / NW*` computed in log space.
    pub fn nash_ratio(&self, inst: &Instance, alloc: &DiscreteAllocation) -> Result<Option<f64>> {
        let u = utilities(inst, alloc)?;
        let n = inst.n() as f64;
        Ok(self.log_nw.map(|best| 100.0 * ((log_nash(&u) - best) / n).exp()))
    }

    pub fn util_ratio(&self, inst: &Instance, alloc: &DiscreteAllocation) -> f64 {
        if self.uw > 0.0 {
            100.0 * (item_order_welfare(inst, alloc) / self.uw)
        } else {
            100.0
        }
    }
}

/// Runs every method on one instance. Timing covers the method and its
/// repair, not generation or the exact solvers.
pub fn evaluate_instance(
    id: &str,
    inst: &Instance,
    dist: Distribution,
    methods: &[Method],
    model: Option<&ModelParams>,
    opts: &EvalOptions,
) -> Result<Vec<RunRecord>> {
    let optima = Optima::compute(inst, opts.node_budget)?;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let (alloc, repair) = method.run(inst, model, opts.max_passes)?;
        let wall_time_us = start.elapsed().as_secs_f64() * 1e6;
        out.push(RunRecord {
            instance_id: id.to_string(),
            method,
            n: inst.n(),
            m: inst.m(),
            dist,
            nash_ratio: optima.nash_ratio(inst, &alloc)?,
            util_ratio: optima.util_ratio(inst, &alloc),
            ef1: is_ef1(inst, &alloc).0,
            efx: is_efx(inst, &alloc, false),
            repair_passes: repair.as_ref().map_or(0, |r| r.passes_executed),
            repair_transfers: repair.as_ref().map_or(0, |r| r.transfers),
            wall_time_us,
        });
    }
    Ok(out)
}

/// Evaluates a cohort in parallel over instances. Records come back sorted
/// by `(instance_id, method)`, independent of scheduling.
pub fn evaluate(manifest: &CohortManifest, model: Option<&ModelParams>, opts: &EvalOptions) -> Result<Vec<RunRecord>> {
    if model.is_none() {
        if let Some(m) = manifest.methods.iter().find(|m| m.needs_model()) {
            return Err(Error::InvalidArgument(format!("method `{m}` needs a model checkpoint")));
        }
    }
    let per_instance: Vec<Vec<RunRecord>> = manifest
        .jobs()
        .par_iter()
        .map(|&(n, m, seed)| {
            let inst = manifest.gen_spec(n, m, seed).generate()?;
            let id = manifest.instance_id(n, m, seed);
            evaluate_instance(&id, &inst, manifest.dist, &manifest.methods, model, opts)
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<RunRecord> = per_instance.into_iter().flatten().collect();
    records.sort_by(|a, b| (&a.instance_id, a.method).cmp(&(&b.instance_id, b.method)));
    Ok(records)
}
