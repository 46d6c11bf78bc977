use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bench::TimingTable;
use super::cohort::RunRecord;
use super::method::Method;
use super::stats::{aggregate, paired_stats, ratio_bucket, AggregateRow, Grouping, Metric, PairedComparison};
use crate::error::{Error, Result};

/// Column order of record CSV files.
pub const RECORD_HEADER: [&str; 12] = [
    "instance_id",
    "method",
    "n",
    "m",
    "dist",
    "nash_ratio",
    "util_ratio",
    "ef1",
    "efx",
    "repair_passes",
    "repair_transfers",
    "wall_time_us",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    /// From a file extension; anything other than `.json` is CSV.
    pub fn of_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format `{s}` (csv or json)"))),
        }
    }
}

pub fn write_records_csv(w: impl Write, records: &[RunRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    if records.is_empty() {
        out.write_record(RECORD_HEADER)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv(r: impl Read) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected record header {header:?}")));
    }
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_records(path: impl AsRef<Path>, records: &[RunRecord], format: Format) -> Result<()> {
    let file = fs::File::create(path)?;
    match format {
        Format::Csv => write_records_csv(file, records),
        Format::Json => Ok(serde_json::to_writer_pretty(file, records)?),
    }
}

/// Reads records, choosing the format from the extension.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    match Format::of_path(path) {
        Format::Csv => read_records_csv(file),
        Format::Json => Ok(serde_json::from_reader(file)?),
    }
}

fn write_table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aggregates(path: impl AsRef<Path>, rows: &[AggregateRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_table(
            path.as_ref(),
            &AggregateRow::CSV_HEADER,
            rows.iter().map(AggregateRow::csv_fields),
        ),
        Format::Json => Ok(fs::write(path, serde_json::to_string_pretty(rows)?)?),
    }
}

const COMPARISON_HEADER: [&str; 11] = [
    "method_a",
    "method_b",
    "metric",
    "pairs",
    "mean_diff",
    "ci_low",
    "ci_high",
    "cohens_d",
    "t_p",
    "wilcoxon_p",
    "wilcoxon_exact",
];

pub fn write_comparisons(path: impl AsRef<Path>, rows: &[PairedComparison], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_table(
            path.as_ref(),
            &COMPARISON_HEADER,
            rows.iter().map(|c| {
                vec![
                    c.method_a.to_string(),
                    c.method_b.to_string(),
                    serde_json::to_value(c.metric)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                    c.pairs.to_string(),
                    c.mean_diff.to_string(),
                    c.ci_low.to_string(),
                    c.ci_high.to_string(),
                    c.cohens_d.to_string(),
                    c.t_p.to_string(),
                    c.wilcoxon_p.to_string(),
                    c.wilcoxon_exact.to_string(),
                ]
            }),
        ),
        Format::Json => Ok(fs::write(path, serde_json::to_string_pretty(rows)?)?),
    }
}

/// Writes the rows as CSV (environment goes in a JSON sidecar) or the whole
/// table as JSON.
pub fn write_timings(path: impl AsRef<Path>, table: &TimingTable, format: Format) -> Result<()> {
    let path = path.as_ref();
    match format {
        Format::Csv => {
            write_table(
                path,
                &super::bench::TimingRow::CSV_HEADER,
                table.rows.iter().map(|r| r.csv_fields()),
            )?;
            let meta = serde_json::json!({
                "environment": table.environment,
                "repetitions": table.repetitions,
                "warmup": table.warmup,
            });
            fs::write(path.with_extension("env.json"), serde_json::to_string_pretty(&meta)?)?;
            Ok(())
        }
        Format::Json => Ok(fs::write(path, serde_json::to_string_pretty(table)?)?),
    }
}

/// One point of a ratio curve: mean metric at items-per-agent ratio `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: Method,
    pub x: f64,
    pub y: f64,
    pub count: usize,
}

/// Mean `metric` per method and `m / n` bucket, sorted by series then `x`.
/// Records without a value (unproven optimum) are left out.
pub fn plot_data(records: &[RunRecord], metric: Metric) -> Vec<PlotPoint> {
    let mut acc: BTreeMap<(Method, u64), (f64, usize)> = BTreeMap::new();
    for r in records {
        let y = match metric {
            Metric::Nash => r.nash_ratio,
            Metric::Util => Some(r.util_ratio),
        };
        if let Some(y) = y {
            let x = ratio_bucket(r.n, r.m);
            let e = acc.entry((r.method, (x * 10.0).round() as u64)).or_insert((0.0, 0));
            e.0 += y;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|((series, x10), (sum, count))| PlotPoint {
            series,
            x: x10 as f64 / 10.0,
            y: sum / count as f64,
            count,
        })
        .collect()
}

pub fn write_plot_data(path: impl AsRef<Path>, points: &[PlotPoint], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_table(
            path.as_ref(),
            &["series", "x", "y", "count"],
            points.iter().map(|p| {
                vec![
                    p.series.to_string(),
                    p.x.to_string(),
                    p.y.to_string(),
                    p.count.to_string(),
                ]
            }),
        ),
        Format::Json => Ok(fs::write(path, serde_json::to_string_pretty(points)?)?),
    }
}

/// Writes the per-size, per-ratio and pooled tables, the Nash and
/// utilitarian ratio curves and all pairwise comparisons into `dir`.
/// Returns the files written.
pub fn write_report(dir: impl AsRef<Path>, records: &[RunRecord], format: Format) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let ext = format.extension();
    let mut written = Vec::new();
    for (tag, grouping) in [
        ("size", Grouping::Size),
        ("ratio", Grouping::Ratio),
        ("pooled", Grouping::Pooled),
    ] {
        let p = dir.join(format!("aggregate_{tag}.{ext}"));
        write_aggregates(&p, &aggregate(records, grouping), format)?;
        written.push(p);
    }
    for (tag, metric) in [("nash", Metric::Nash), ("util", Metric::Util)] {
        let p = dir.join(format!("plot_{tag}_by_ratio.{ext}"));
        write_plot_data(&p, &plot_data(records, metric), format)?;
        written.push(p);
    }
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut comparisons = Vec::new();
    for (i, &a) in methods.iter().enumerate() {
        for &b in &methods[i + 1..] {
            for metric in [Metric::Nash, Metric::Util] {
                match paired_stats(records, a, b, metric) {
                    Ok(c) => comparisons.push(c),
                    Err(e) => log::info!("skipping {a} vs {b}: {e}"),
                }
            }
        }
    }
    let p = dir.join(format!("comparisons.{ext}"));
    write_comparisons(&p, &comparisons, format)?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::Distribution;
    use crate::harness::cohort::{evaluate, CohortManifest, EvalOptions};

    fn records() -> Vec<RunRecord> {
        let c = CohortManifest::new(
            Distribution::Uniform,
            &[(2, 4), (3, 6), (3, 9)],
            (0..6).collect(),
            vec![Method::RoundRobin, Method::Ece, Method::MaxUtil],
        );
        evaluate(&c, None, &EvalOptions::default()).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut recs = records();
        recs[0].nash_ratio = None;
        recs[1].wall_time_us = 0.1 + 0.2;
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), RECORD_HEADER.join(","));
        assert!(text.lines().nth(1).unwrap().contains(",,"));
        assert_eq!(read_records_csv(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn empty_csv_still_has_a_header() {
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().trim(), RECORD_HEADER.join(","));
        assert!(read_records_csv(&buf[..]).unwrap().is_empty());
        assert!(read_records_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn file_round_trip_in_both_formats() {
        let recs = records();
        let dir = tempfile::tempdir().unwrap();
        for f in [Format::Csv, Format::Json] {
            let p = dir.path().join(format!("records.{f}"));
            write_records(&p, &recs, f).unwrap();
            assert_eq!(read_records(&p).unwrap(), recs);
        }
    }

    #[test]
    fn plot_data_groups_by_ratio_per_method() {
        let recs = records();
        let pts = plot_data(&recs, Metric::Nash);
        // three methods, buckets 2.0 and 3.0 (2x4 and 3x6 share 2.0)
        assert_eq!(pts.len(), 6);
        let rr2: Vec<f64> = recs
            .iter()
            .filter(|r| r.method == Method::RoundRobin && r.m == 2 * r.n)
            .map(|r| r.nash_ratio.unwrap())
            .collect();
        let p = pts
            .iter()
            .find(|p| p.series == Method::RoundRobin && p.x == 2.0)
            .unwrap();
        assert_eq!(p.count, 12);
        assert!((p.y - rr2.iter().sum::<f64>() / 12.0).abs() < 1e-12);
        let util = plot_data(&recs, Metric::Util);
        assert!(util
            .iter()
            .filter(|p| p.series == Method::MaxUtil)
            .all(|p| p.y == 100.0));
    }

    #[test]
    fn report_writes_every_table() {
        let dir = tempfile::tempdir().unwrap();
        for f in [Format::Csv, Format::Json] {
            let files = write_report(dir.path().join(f.extension()), &records(), f).unwrap();
            assert_eq!(files.len(), 6);
            for p in &files {
                assert!(fs::metadata(p).unwrap().len() > 0, "{}", p.display());
            }
        }
        let cmp = fs::read_to_string(dir.path().join("csv/comparisons.csv")).unwrap();
        assert_eq!(cmp.lines().count(), 1 + 3 * 2);
    }
}
