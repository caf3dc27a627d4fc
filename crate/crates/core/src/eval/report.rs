//! Metric report rows, canonical ordering and CSV / JSON Lines output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Fusion;
use crate::synth::Validation;

pub const CSV_HEADER: [&str; 9] = [
    "validation",
    "fold",
    "fusion",
    "gaze",
    "input_frames",
    "noise_e",
    "metric",
    "value",
    "units",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AvgPosition,
    EndPose,
    KeyPoseAngle,
    VqvaeFloorAvgPosition,
    VqvaeFloorEndPose,
    /// Marker row for a cell whose training or rollout failed.
    CellFailed,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::AvgPosition,
        Metric::EndPose,
        Metric::KeyPoseAngle,
        Metric::VqvaeFloorAvgPosition,
        Metric::VqvaeFloorEndPose,
        Metric::CellFailed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AvgPosition => "avg_position",
            Metric::EndPose => "end_pose",
            Metric::KeyPoseAngle => "key_pose_angle",
            Metric::VqvaeFloorAvgPosition => "vqvae_floor_avg_position",
            Metric::VqvaeFloorEndPose => "vqvae_floor_end_pose",
            Metric::CellFailed => "cell_failed",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            Metric::KeyPoseAngle => "rad",
            Metric::CellFailed => "",
            _ => "m",
        }
    }

    /// The floor counterpart of a generator metric.
    pub fn floor(self) -> Option<Metric> {
        match self {
            Metric::AvgPosition => Some(Metric::VqvaeFloorAvgPosition),
            Metric::EndPose => Some(Metric::VqvaeFloorEndPose),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown metric {:?}", s)))
    }
}

/// One value for one (configuration, metric, fold).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub validation: Validation,
    pub fold: usize,
    pub fusion: Fusion,
    pub gaze: bool,
    pub input_frames: usize,
    pub noise_e: f64,
    pub metric: Metric,
    pub value: f64,
    pub units: String,
}

impl ReportRow {
    fn key(&self) -> (Validation, usize, Fusion, bool, usize, u64, Metric) {
        (
            self.validation,
            self.fold,
            self.fusion,
            !self.gaze,
            self.input_frames,
            self.noise_e.to_bits(),
            self.metric,
        )
    }
}

/// Fold-averaged value for one (configuration, metric).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub validation: Validation,
    pub fold: String,
    pub fusion: Fusion,
    pub gaze: bool,
    pub input_frames: usize,
    pub noise_e: f64,
    pub metric: Metric,
    pub value: f64,
    pub units: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
    /// Human-readable description of each failed cell.
    pub failures: Vec<String>,
    /// Angle rows skipped because the angle was undefined.
    pub skipped_angles: usize,
    /// Embedded invariant checks that did not hold.
    pub violations: Vec<String>,
}

impl MetricReport {
    /// Sort rows into canonical order so output never depends on scheduling.
    pub fn canonicalize(&mut self) {
        self.rows.sort_by(|a, b| a.key().cmp(&b.key()));
        self.failures.sort();
        self.violations.sort();
    }

    /// Unweighted mean over folds of each (configuration, metric).
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(Validation, Fusion, bool, usize, u64, Metric), (f64, usize)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.metric != Metric::CellFailed) {
            let e = groups
                .entry((r.validation, r.fusion, !r.gaze, r.input_frames, r.noise_e.to_bits(), r.metric))
                .or_insert((0.0, 0));
            e.0 += r.value;
            e.1 += 1;
        }
        groups
            .into_iter()
            .map(|((v, f, ng, t, e, m), (s, n))| SummaryRow {
                validation: v,
                fold: "mean".into(),
                fusion: f,
                gaze: !ng,
                input_frames: t,
                noise_e: f64::from_bits(e),
                metric: m,
                value: s / n as f64,
                units: m.units().into(),
            })
            .collect()
    }

    /// Values and units squared, for mean-squared-error style plots.
    pub fn squared(&self) -> MetricReport {
        let mut out = self.clone();
        for r in &mut out.rows {
            if r.metric != Metric::CellFailed {
                r.value *= r.value;
                r.units = format!("{}^2", r.units);
            }
        }
        out
    }
}

fn csv_line(
    validation: Validation,
    fold: &str,
    fusion: Fusion,
    gaze: bool,
    input_frames: usize,
    noise_e: f64,
    metric: Metric,
    value: f64,
    units: &str,
) -> Vec<String> {
    vec![
        validation.code().to_string(),
        fold.to_string(),
        fusion.name().to_string(),
        gaze.to_string(),
        input_frames.to_string(),
        noise_e.to_string(),
        metric.name().to_string(),
        value.to_string(),
        units.to_string(),
    ]
}

pub fn write_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(csv_line(
            r.validation,
            &r.fold.to_string(),
            r.fusion,
            r.gaze,
            r.input_frames,
            r.noise_e,
            r.metric,
            r.value,
            &r.units,
        ))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(csv_line(
            r.validation,
            &r.fold,
            r.fusion,
            r.gaze,
            r.input_frames,
            r.noise_e,
            r.metric,
            r.value,
            &r.units,
        ))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected report header {:?}", header),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |m: String| Error::Parse { line, message: m };
        let field = |k: usize| rec.get(k).ok_or_else(|| bad(format!("missing column {}", CSV_HEADER[k])));
        let num = |k: usize| -> Result<f64> {
            field(k)?.parse::<f64>().map_err(|e| bad(format!("{}: {}", CSV_HEADER[k], e)))
        };
        let int = |k: usize| -> Result<usize> {
            field(k)?.parse::<usize>().map_err(|e| bad(format!("{}: {}", CSV_HEADER[k], e)))
        };
        rows.push(ReportRow {
            validation: field(0)?.parse().map_err(|e: Error| bad(e.to_string()))?,
            fold: int(1)?,
            fusion: field(2)?.parse().map_err(|e: Error| bad(e.to_string()))?,
            gaze: field(3)?.parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?,
            input_frames: int(4)?,
            noise_e: num(5)?,
            metric: field(6)?.parse().map_err(|e: Error| bad(e.to_string()))?,
            value: num(7)?,
            units: field(8)?.to_string(),
        });
    }
    Ok(rows)
}

pub fn write_jsonl(rows: &[ReportRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ReportRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" => Ok(ReportFormat::Jsonl),
            other => Err(Error::Parameter(format!("unknown report format {:?}", other))),
        }
    }
}

/// Write the rows of `report`. An empty report writes nothing and logs a
/// warning; returns whether a file was written.
pub fn write_report(report: &MetricReport, path: &Path, format: ReportFormat) -> Result<bool> {
    if report.rows.is_empty() {
        log::warn!("report is empty; nothing written to {}", path.display());
        return Ok(false);
    }
    match format {
        ReportFormat::Csv => write_csv(&report.rows, path)?,
        ReportFormat::Jsonl => write_jsonl(&report.rows, path)?,
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(fold: usize, value: f64, metric: Metric) -> ReportRow {
        ReportRow {
            validation: Validation::CrossMotion,
            fold,
            fusion: Fusion::Convolution,
            gaze: false,
            input_frames: 8,
            noise_e: 0.15,
            metric,
            value,
            units: metric.units().into(),
        }
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let rows = vec![
            row(0, 0.123_456_789_012_345_68, Metric::EndPose),
            row(1, 1.0 / 3.0, Metric::KeyPoseAngle),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("validation,fold,fusion,gaze,input_frames,noise_e,metric,value,units\n"));
        assert_eq!(read_csv(&p).unwrap(), rows);
        let j = dir.path().join("r.jsonl");
        write_jsonl(&rows, &j).unwrap();
        assert_eq!(read_jsonl(&j).unwrap(), rows);
    }

    #[test]
    fn summary_means_over_folds() {
        let report = MetricReport {
            rows: vec![row(0, 1.0, Metric::EndPose), row(1, 2.0, Metric::EndPose)],
            ..Default::default()
        };
        let s = report.summary();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].value, 1.5);
        assert_eq!(s[0].fold, "mean");
        let sq = report.squared();
        assert_eq!(sq.rows[1].value, 4.0);
        assert_eq!(sq.rows[1].units, "m^2");
    }

    #[test]
    fn empty_report_is_a_noop() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("none.csv");
        assert!(!write_report(&MetricReport::default(), &p, ReportFormat::Csv).unwrap());
        assert!(!p.exists());
    }
}
