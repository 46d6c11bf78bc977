use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{envy_cycle_elimination, max_util, round_robin};
use crate::error::{Error, Result};
use crate::fairformer::{self, ModelParams};
use crate::model::{DiscreteAllocation, Instance};
use crate::repair::{ef1_quick_repair_fast, RepairResult};

/// Pass cap for methods defined with repair.
pub const DEFAULT_MAX_PASSES: usize = 100;

/// An allocation method as named in cohort manifests, CLI flags and CSV rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rr")]
    RoundRobin,
    #[serde(rename = "ece")]
    Ece,
    #[serde(rename = "maxutil")]
    MaxUtil,
    #[serde(rename = "maxutil+repair")]
    MaxUtilRepair,
    #[serde(rename = "fairformer")]
    FairFormer,
    #[serde(rename = "fairformer+repair")]
    FairFormerRepair,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::RoundRobin,
        Method::Ece,
        Method::MaxUtil,
        Method::MaxUtilRepair,
        Method::FairFormer,
        Method::FairFormerRepair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RoundRobin => "rr",
            Method::Ece => "ece",
            Method::MaxUtil => "maxutil",
            Method::MaxUtilRepair => "maxutil+repair",
            Method::FairFormer => "fairformer",
            Method::FairFormerRepair => "fairformer+repair",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Method::FairFormer | Method::FairFormerRepair)
    }

    pub fn repairs(self) -> bool {
        matches!(self, Method::MaxUtilRepair | Method::FairFormerRepair)
    }

    /// Runs the method, including its repair step when it has one.
    pub fn run(
        self,
        inst: &Instance,
        model: Option<&ModelParams>,
        max_passes: usize,
    ) -> Result<(DiscreteAllocation, Option<RepairResult>)> {
        let base = match self {
            Method::RoundRobin => round_robin(inst, None)?,
            Method::Ece => envy_cycle_elimination(inst)?,
            Method::MaxUtil | Method::MaxUtilRepair => max_util(inst),
            Method::FairFormer | Method::FairFormerRepair => {
                let params =
                    model.ok_or_else(|| Error::InvalidArgument(format!("method `{self}` needs a model checkpoint")))?;
                fairformer::allocate(inst, params)?
            }
        };
        if self.repairs() {
            let r = ef1_quick_repair_fast(inst, &base, max_passes)?;
            Ok((r.alloc.clone(), Some(r)))
        } else {
            Ok((base, None))
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}
