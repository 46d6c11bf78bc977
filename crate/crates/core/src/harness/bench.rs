use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cohort::CohortManifest;
use super::method::{Method, DEFAULT_MAX_PASSES};
use crate::error::Result;
use crate::fairformer::ModelParams;
use crate::model::Instance;

/// Per-instance wall time of one method at one size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    /// Timed runs: instances × repetitions.
    pub samples: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

impl TimingRow {
    pub const CSV_HEADER: [&'static str; 8] = [
        "method",
        "n",
        "m",
        "samples",
        "mean_us",
        "median_us",
        "min_us",
        "max_us",
    ];

    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.method.to_string(),
            self.n.to_string(),
            self.m.to_string(),
            self.samples.to_string(),
            self.mean_us.to_string(),
            self.median_us.to_string(),
            self.min_us.to_string(),
            self.max_us.to_string(),
        ]
    }
}

/// Where the timings were taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub optimized: bool,
    pub version: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            optimized: !cfg!(debug_assertions),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub environment: Environment,
    pub repetitions: usize,
    pub warmup: usize,
    pub rows: Vec<TimingRow>,
}

impl TimingTable {
    pub fn row(&self, method: Method, n: usize, m: usize) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n && r.m == m)
    }
}

/// Times every manifest method on every manifest instance, single-threaded.
/// Each instance is run `warmup` times untimed, then `repetitions` times
/// timed. Generation is excluded; repair is included for repairing methods.
pub fn bench(
    manifest: &CohortManifest,
    model: Option<&ModelParams>,
    repetitions: usize,
    warmup: usize,
) -> Result<TimingTable> {
    let mut rows = Vec::new();
    if repetitions > 0 {
        for &[n, m] in &manifest.sizes {
            let insts: Vec<Instance> = manifest
                .seeds
                .iter()
                .map(|&s| manifest.gen_spec(n, m, s).generate())
                .collect::<Result<_>>()?;
            for &method in &manifest.methods {
                let mut times = Vec::with_capacity(insts.len() * repetitions);
                for inst in &insts {
                    for _ in 0..warmup {
                        std::hint::black_box(method.run(inst, model, DEFAULT_MAX_PASSES)?);
                    }
                    for _ in 0..repetitions {
                        let start = Instant::now();
                        std::hint::black_box(method.run(inst, model, DEFAULT_MAX_PASSES)?);
                        times.push(start.elapsed().as_secs_f64() * 1e6);
                    }
                }
                if let Some(row) = timing_row(method, n, m, times) {
                    rows.push(row);
                }
            }
        }
    }
    Ok(TimingTable {
        environment: Environment::current(),
        repetitions,
        warmup,
        rows,
    })
}

fn timing_row(method: Method, n: usize, m: usize, mut times: Vec<f64>) -> Option<TimingRow> {
    if times.is_empty() {
        return None;
    }
    times.sort_by(f64::total_cmp);
    let k = times.len();
    let median_us = if k % 2 == 1 {
        times[k / 2]
    } else {
        0.5 * (times[k / 2 - 1] + times[k / 2])
    };
    Some(TimingRow {
        method,
        n,
        m,
        samples: k,
        mean_us: times.iter().sum::<f64>() / k as f64,
        median_us,
        min_us: times[0],
        max_us: times[k - 1],
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
