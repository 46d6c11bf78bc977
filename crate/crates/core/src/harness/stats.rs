use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::cohort::RunRecord;
use super::method::Method;
use crate::error::{Error, Result};

/// Mean, sample standard deviation (`n − 1`), min and max.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty slice; a single value has `std = 0`.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self {
            count: xs.len(),
            mean: mean.clamp(min, max),
            std,
            min,
            max,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    /// One group per `(n, m)`.
    Size,
    /// One group per items-per-agent ratio `m / n` (one decimal).
    Ratio,
    /// All records of a method together. Statistics are taken over records,
    /// not over per-size means.
    Pooled,
}

/// `m / n` rounded to one decimal; a 10×20 instance falls in bucket 2.0.
pub fn ratio_bucket(n: usize, m: usize) -> f64 {
    (10.0 * m as f64 / n as f64).round() / 10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    /// `"10x20"`, `"2.0"` or `"all"`.
    pub group: String,
    pub records: usize,
    /// Over records with a proven optimum only.
    pub nash_ratio: Option<Summary>,
    pub util_ratio: Summary,
    pub repair_passes: Summary,
    pub wall_time_us: Summary,
}

impl AggregateRow {
    pub const CSV_HEADER: [&'static str; 19] = [
        "method",
        "group",
        "records",
        "nash_count",
        "nash_mean",
        "nash_std",
        "nash_min",
        "nash_max",
        "util_mean",
        "util_std",
        "util_min",
        "util_max",
        "passes_mean",
        "passes_std",
        "passes_min",
        "passes_max",
        "time_mean_us",
        "time_std_us",
        "time_max_us",
    ];

    pub fn csv_fields(&self) -> Vec<String> {
        let f = |x: f64| x.to_string();
        let mut out = vec![self.method.to_string(), self.group.clone(), self.records.to_string()];
        match &self.nash_ratio {
            Some(s) => out.extend([s.count.to_string(), f(s.mean), f(s.std), f(s.min), f(s.max)]),
            None => out.extend([
                "0".to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]),
        }
        for s in [&self.util_ratio, &self.repair_passes] {
            out.extend([f(s.mean), f(s.std), f(s.min), f(s.max)]);
        }
        let t = &self.wall_time_us;
        out.extend([f(t.mean), f(t.std), f(t.max)]);
        out
    }
}

pub fn aggregate(records: &[RunRecord], grouping: Grouping) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Method, u64, u64), (String, Vec<&RunRecord>)> = BTreeMap::new();
    for r in records {
        let (a, b, label) = match grouping {
            Grouping::Size => (r.n as u64, r.m as u64, format!("{}x{}", r.n, r.m)),
            Grouping::Ratio => {
                let q = ratio_bucket(r.n, r.m);
                ((q * 10.0).round() as u64, 0, format!("{q:.1}"))
            }
            Grouping::Pooled => (0, 0, "all".to_string()),
        };
        groups
            .entry((r.method, a, b))
            .or_insert_with(|| (label, Vec::new()))
            .1
            .push(r);
    }
    groups
        .into_iter()
        .map(|((method, _, _), (group, rs))| {
            let col = |f: &dyn Fn(&RunRecord) -> f64| {
                Summary::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("nonempty group")
            };
            let nash: Vec<f64> = rs.iter().filter_map(|r| r.nash_ratio).collect();
            AggregateRow {
                method,
                group,
                records: rs.len(),
                nash_ratio: Summary::of(&nash),
                util_ratio: col(&|r| r.util_ratio),
                repair_passes: col(&|r| r.repair_passes as f64),
                wall_time_us: col(&|r| r.wall_time_us),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nash,
    Util,
}

impl Metric {
    fn of(self, r: &RunRecord) -> Option<f64> {
        match self {
            Metric::Nash => r.nash_ratio,
            Metric::Util => Some(r.util_ratio),
        }
    }
}

/// Paired comparison of method A against B (differences are `A − B`, in
/// percentage points).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub method_a: Method,
    pub method_b: Method,
    pub metric: Metric,
    pub pairs: usize,
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean difference over the standard deviation of differences; 0 when
    /// all differences are equal.
    pub cohens_d: f64,
    pub t_p: f64,
    pub wilcoxon_p: f64,
    /// Exact null distribution (at most 25 nonzero differences) rather
    /// than the normal approximation.
    pub wilcoxon_exact: bool,
}

/// Pairs the records of `a` and `b` by instance id. Instances lacking a
/// value for either method (e.g. no proven optimum) are skipped.
pub fn paired_stats(records: &[RunRecord], a: Method, b: Method, metric: Metric) -> Result<PairedComparison> {
    let pick = |m: Method| -> BTreeMap<&str, Option<f64>> {
        records
            .iter()
            .filter(|r| r.method == m)
            .map(|r| (r.instance_id.as_str(), metric.of(r)))
            .collect()
    };
    let (va, vb) = (pick(a), pick(b));
    if va.keys().ne(vb.keys()) {
        return Err(Error::InvalidArgument(format!(
            "`{a}` and `{b}` were not run on the same instances"
        )));
    }
    let diffs: Vec<f64> = va
        .iter()
        .filter_map(|(id, x)| Some(x.as_ref()? - vb[id].as_ref()?))
        .collect();
    let s = paired_diffs(&diffs)?;
    Ok(PairedComparison {
        method_a: a,
        method_b: b,
        metric,
        ..s
    })
}

/// Statistics of paired differences; method fields are placeholders.
pub fn paired_diffs(diffs: &[f64]) -> Result<PairedComparison> {
    if diffs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 pairs, got {}",
            diffs.len()
        )));
    }
    let s = Summary::of(diffs).expect("nonempty");
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let (ci_low, ci_high, t_p, d) = if s.std > 0.0 {
        let se = s.std / n.sqrt();
        let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t distribution");
        let crit = t.inverse_cdf(0.975);
        let p = 2.0 * (1.0 - t.cdf((mean / se).abs()));
        (mean - crit * se, mean + crit * se, p.min(1.0), mean / s.std)
    } else {
        // zero variance: the interval collapses and the test is decided outright
        (mean, mean, if mean == 0.0 { 1.0 } else { 0.0 }, 0.0)
    };
    let (wilcoxon_p, wilcoxon_exact) = wilcoxon_signed_rank(diffs);
    Ok(PairedComparison {
        method_a: Method::RoundRobin,
        method_b: Method::RoundRobin,
        metric: Metric::Nash,
        pairs: diffs.len(),
        mean_diff: mean,
        ci_low,
        ci_high,
        cohens_d: d,
        t_p,
        wilcoxon_p,
        wilcoxon_exact,
    })
}

/// Largest number of nonzero differences handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided Wilcoxon signed-rank p-value. Zero differences are dropped and
/// tied magnitudes get average ranks. Returns `(p, exact)`.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> (f64, bool) {
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return (1.0, true);
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    // doubled average ranks stay integral
    let mut rank2 = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        let r2 = (i + 1 + j + 1) as u64;
        rank2[i..=j].iter_mut().for_each(|r| *r = r2);
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w2: u64 = nz.iter().zip(&rank2).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX {
        let total: u64 = rank2.iter().sum();
        let mut counts = vec![0.0f64; total as usize + 1];
        counts[0] = 1.0;
        for &r in &rank2 {
            for s in (r as usize..=total as usize).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let all = 2f64.powi(n as i32);
        let lower: f64 = counts[..=w2 as usize].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2 as usize..].iter().sum::<f64>() / all;
        return ((2.0 * lower.min(upper)).min(1.0), true);
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return (1.0, false);
    }
    let z = (w2 as f64 / 2.0 - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    ((2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::Distribution;
    use crate::rng::Prng;

    fn rec(id: &str, method: Method, n: usize, m: usize, nash: f64) -> RunRecord {
        RunRecord {
            instance_id: id.into(),
            method,
            n,
            m,
            dist: Distribution::Uniform,
            nash_ratio: Some(nash),
            util_ratio: 90.0,
            ef1: true,
            efx: false,
            repair_passes: 1,
            repair_transfers: 0,
            wall_time_us: 3.0,
        }
    }

    #[test]
    fn summary_basics() {
        let s = Summary::of(&[4.0]).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (4.0, 0.0, 4.0, 4.0));
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn grouping_conventions() {
        let recs = vec![
            rec("a", Method::RoundRobin, 10, 20, 90.0),
            rec("b", Method::RoundRobin, 5, 10, 80.0),
            rec("c", Method::RoundRobin, 5, 10, 70.0),
            rec("d", Method::RoundRobin, 3, 10, 100.0),
        ];
        let by_ratio = aggregate(&recs, Grouping::Ratio);
        assert_eq!(
            by_ratio.iter().map(|r| r.group.as_str()).collect::<Vec<_>>(),
            vec!["2.0", "3.3"]
        );
        assert_eq!(by_ratio[0].records, 3);
        let by_size = aggregate(&recs, Grouping::Size);
        assert_eq!(
            by_size.iter().map(|r| r.group.as_str()).collect::<Vec<_>>(),
            vec!["3x10", "5x10", "10x20"]
        );
        assert_eq!(by_size[1].nash_ratio.unwrap().mean, 75.0);
        // pooled over records: (90 + 80 + 70 + 100) / 4, not the mean of size means
        let pooled = aggregate(&recs, Grouping::Pooled);
        assert_eq!(pooled[0].nash_ratio.unwrap().mean, 85.0);
        for row in by_size.iter().chain(&by_ratio).chain(&pooled) {
            let s = row.nash_ratio.unwrap();
            assert!(s.min <= s.mean && s.mean <= s.max);
            assert_eq!(row.csv_fields().len(), AggregateRow::CSV_HEADER.len());
        }
    }

    #[test]
    fn identical_methods_give_null_comparison() {
        let mut recs = Vec::new();
        for (i, v) in [91.0, 95.5, 88.0, 97.0].iter().enumerate() {
            recs.push(rec(&i.to_string(), Method::RoundRobin, 3, 6, *v));
            recs.push(rec(&i.to_string(), Method::Ece, 3, 6, *v));
        }
        let c = paired_stats(&recs, Method::RoundRobin, Method::Ece, Metric::Nash).unwrap();
        assert_eq!((c.mean_diff, c.cohens_d, c.t_p, c.wilcoxon_p), (0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn constant_difference_collapses_interval() {
        let c = paired_diffs(&[2.5; 10]).unwrap();
        assert_eq!((c.ci_low, c.ci_high, c.t_p), (2.5, 2.5, 0.0));
        assert!(paired_diffs(&[1.0]).is_err());
    }

    #[test]
    fn swapping_methods_is_antisymmetric() {
        let mut rng = Prng::new(8);
        let mut recs = Vec::new();
        for i in 0..40 {
            recs.push(rec(
                &format!("{i:02}"),
                Method::RoundRobin,
                3,
                6,
                90.0 + 5.0 * rng.next_f64(),
            ));
            recs.push(rec(&format!("{i:02}"), Method::Ece, 3, 6, 89.0 + 5.0 * rng.next_f64()));
        }
        let ab = paired_stats(&recs, Method::RoundRobin, Method::Ece, Metric::Nash).unwrap();
        let ba = paired_stats(&recs, Method::Ece, Method::RoundRobin, Metric::Nash).unwrap();
        assert_eq!(ab.mean_diff, -ba.mean_diff);
        assert!((ab.t_p - ba.t_p).abs() < 1e-12);
        assert!((ab.wilcoxon_p - ba.wilcoxon_p).abs() < 1e-12);
        assert!(ab.ci_low <= ab.mean_diff && ab.mean_diff <= ab.ci_high);
        let sd = Summary::of(
            &recs
                .chunks(2)
                .map(|p| p[0].nash_ratio.unwrap() - p[1].nash_ratio.unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap()
        .std;
        assert!((ab.cohens_d - ab.mean_diff / sd).abs() < 1e-12);
        let mut short = recs.clone();
        short.pop();
        assert!(paired_stats(&short, Method::RoundRobin, Method::Ece, Metric::Nash).is_err());
    }

    #[test]
    fn t_test_reference_values() {
        // diffs 1..=5: mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5)/sqrt(5)) = 4.2426, df 4
        let c = paired_diffs(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((c.t_p - 0.013236).abs() < 1e-5, "{}", c.t_p);
        let half = 2.776445 * (2.5f64).sqrt() / 5f64.sqrt();
        assert!((c.ci_low - (3.0 - half)).abs() < 1e-5);
    }

    #[test]
    fn wilcoxon_reference_values() {
        // all positive, n = 5: P(W+ = 15) = 1/32, two-sided 1/16
        let (p, exact) = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(exact);
        assert!((p - 0.0625).abs() < 1e-15);
        // n = 6 with ranks of positives {1, 2, 3, 4, 5}, negative rank 6: W+ = 15
        // P(W+ <= 15) = P(W+ >= 6) and the two-sided value is 2·P(W+ >= 15) = 2·(#sums >= 15)/64
        let (p, _) = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, -6.0]);
        let mut counts = [0u32; 22];
        for mask in 0u32..64 {
            let s: u32 = (0..6).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).sum();
            counts[s as usize] += 1;
        }
        let upper: u32 = counts[15..].iter().sum();
        let lower: u32 = counts[..=15].iter().sum();
        assert!((p - 2.0 * upper.min(lower) as f64 / 64.0).abs() < 1e-15);
        assert_eq!(wilcoxon_signed_rank(&[0.0, 0.0]), (1.0, true));
    }

    #[test]
    fn wilcoxon_normal_approximation_is_close_to_exact() {
        let mut rng = Prng::new(3);
        let diffs: Vec<f64> = (0..25).map(|_| rng.next_gaussian() + 0.4).collect();
        let (exact, e) = wilcoxon_signed_rank(&diffs);
        assert!(e);
        let mut more = diffs.clone();
        more.extend((0..25).map(|_| rng.next_gaussian() + 0.4));
        let (approx, e) = wilcoxon_signed_rank(&more);
        assert!(!e);
        assert!(exact > 0.0 && exact < 1.0 && approx > 0.0 && approx < 1.0);
    }
}
