//! File formats and ingestion.
//!
//! Model and scenario files are TOML; readings travel as CSV with a header
//! row. Reports are plain text, per-block accuracy goes to a flat CSV for
//! external plotting. All emitters are deterministic: identical inputs give
//! byte-identical files.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulation::Enhancements;
use crate::metrics::AccuracyReport;
use crate::model::{
    compile_with, ApplianceSpec, GroupOverrides, HouseholdModel, ModelError, StateSpec,
    DEFAULT_COMBO_TOL, DEFAULT_MAX_SUBSET, OFF,
};
use crate::pipeline::StageCounters;
use crate::simgen::SimScenario;

pub const MODEL_SCHEMA: &str = "alip-model/1";
pub const REPORT_SCHEMA: &str = "alip-report/1";
pub const PLOT_SCHEMA: &str = "alip-plot/1";
pub const SERIES_SCHEMA: &str = "alip-series/1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: row {row}: {message}")]
    ParseRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path}: appliance `{appliance}`: unknown state label `{label}` in STD edge")]
    UnknownStateLabel {
        path: String,
        appliance: String,
        label: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Model file

#[derive(Debug, Deserialize)]
struct ModelFileRaw {
    #[serde(default)]
    schema: Option<String>,
    #[serde(default)]
    tol: Option<f64>,
    #[serde(default)]
    max_subset: Option<usize>,
    #[serde(default)]
    unit: Option<String>,
    #[serde(rename = "appliance")]
    appliances: Vec<ApplianceRaw>,
    #[serde(default)]
    groups: Option<GroupsRaw>,
}

#[derive(Debug, Deserialize)]
struct ApplianceRaw {
    id: String,
    #[serde(default)]
    always_on: bool,
    #[serde(rename = "state")]
    states: Vec<StateRaw>,
    /// Label pairs; "OFF" names the off state. Missing or empty means the
    /// diagram is fully connected.
    #[serde(default)]
    edges: Vec<(String, String)>,
}

#[derive(Debug, Deserialize)]
struct StateRaw {
    label: String,
    rating: f64,
    #[serde(default)]
    tmin: Option<f64>,
    #[serde(default)]
    tmax: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct GroupsRaw {
    #[serde(default)]
    combo: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    alias: Option<Vec<Vec<usize>>>,
}

/// A parsed model file: the compiled model plus the declaration metadata.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub model: HouseholdModel,
    pub tol: f64,
    pub max_subset: usize,
    /// Opaque unit tag ("VA" unless the file says otherwise).
    pub unit: String,
}

/// Loads and compiles a TOML model file.
pub fn load_model(path: &Path) -> Result<ModelFile, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let raw: ModelFileRaw = toml::from_str(&text).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if let Some(schema) = &raw.schema {
        if schema != MODEL_SCHEMA {
            return Err(IoError::Parse {
                path: path.display().to_string(),
                message: format!("unsupported schema `{schema}`, expected `{MODEL_SCHEMA}`"),
            });
        }
    }
    let mut specs = Vec::with_capacity(raw.appliances.len());
    for a in &raw.appliances {
        let states: Vec<StateSpec> = a
            .states
            .iter()
            .map(|s| StateSpec {
                label: s.label.clone(),
                rating: s.rating,
                transient_min: s.tmin.unwrap_or(s.rating),
                transient_max: s.tmax.unwrap_or(s.rating),
            })
            .collect();
        let mut edges = BTreeSet::new();
        for (from, to) in &a.edges {
            let resolve = |label: &str| -> Result<usize, IoError> {
                if label.eq_ignore_ascii_case("OFF") {
                    return Ok(OFF);
                }
                a.states
                    .iter()
                    .position(|s| s.label == label)
                    .map(|i| i + 1)
                    .ok_or_else(|| IoError::UnknownStateLabel {
                        path: path.display().to_string(),
                        appliance: a.id.clone(),
                        label: label.to_string(),
                    })
            };
            edges.insert((resolve(from)?, resolve(to)?));
        }
        let mut spec = ApplianceSpec::new(a.id.clone(), states);
        spec.always_on = a.always_on;
        spec.std_edges = edges;
        specs.push(spec);
    }
    let tol = raw.tol.unwrap_or(DEFAULT_COMBO_TOL);
    let max_subset = raw.max_subset.unwrap_or(DEFAULT_MAX_SUBSET);
    let groups = raw.groups.unwrap_or_default();
    let overrides = GroupOverrides {
        combo_groups: groups.combo,
        alias_groups: groups.alias,
    };
    let model = compile_with(&specs, tol, max_subset, &overrides)?;
    Ok(ModelFile {
        model,
        tol,
        max_subset,
        unit: raw.unit.unwrap_or_else(|| "VA".to_string()),
    })
}

/// Loads a TOML scenario file for the simulator.
pub fn load_scenario(path: &Path) -> Result<SimScenario, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    toml::from_str(&text).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Reading series

/// Maps CSV columns onto the series fields. With `aggregate` unset the
/// aggregate is derived as the row sum over the channel columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub timestamp: String,
    pub aggregate: Option<String>,
    /// Explicit ground-truth channel columns; None takes every column that
    /// is neither the timestamp nor the aggregate.
    pub channels: Option<Vec<String>>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: "timestamp".into(),
            aggregate: Some("aggregate".into()),
            channels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadingSeries {
    pub timestamps: Vec<f64>,
    pub aggregate: Vec<f64>,
    /// Per-appliance ground truth, T x n, when channel columns exist.
    pub truth: Option<Vec<Vec<f64>>>,
    pub channel_names: Vec<String>,
    /// Rows discarded during sanitation (non-finite values).
    pub dropped_rows: usize,
}

impl ReadingSeries {
    pub fn len(&self) -> usize {
        self.aggregate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aggregate.is_empty()
    }
}

/// Parses a readings CSV. Header row required; rows containing non-finite
/// values are dropped and counted; negative aggregates clamp to zero.
pub fn load_csv(path: &Path, map: &ColumnMap) -> Result<ReadingSeries, IoError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::Parse {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| IoError::Parse {
            path: display.clone(),
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let ts_col = find(&map.timestamp).ok_or_else(|| IoError::MissingColumn {
        path: display.clone(),
        column: map.timestamp.clone(),
    })?;
    let agg_col = match &map.aggregate {
        Some(name) => match find(name) {
            Some(col) => Some(col),
            // The default map tolerates a missing aggregate column and
            // derives it; an explicitly requested one must exist.
            None if name == "aggregate" => None,
            None => {
                return Err(IoError::MissingColumn {
                    path: display,
                    column: name.clone(),
                })
            }
        },
        None => None,
    };
    let channel_cols: Vec<(String, usize)> = match &map.channels {
        Some(names) => {
            let mut cols = Vec::with_capacity(names.len());
            for name in names {
                let col = find(name).ok_or_else(|| IoError::MissingColumn {
                    path: display.clone(),
                    column: name.clone(),
                })?;
                cols.push((name.clone(), col));
            }
            cols
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != ts_col && Some(i) != agg_col)
            .map(|(i, h)| (h.to_string(), i))
            .collect(),
    };
    if agg_col.is_none() && channel_cols.is_empty() {
        return Err(IoError::MissingColumn {
            path: display,
            column: "aggregate".into(),
        });
    }

    let mut timestamps = Vec::new();
    let mut aggregate = Vec::new();
    let mut truth: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::ParseRow {
            path: display.clone(),
            row: row_idx + 2,
            message: e.to_string(),
        })?;
        let cell = |col: usize| -> Result<f64, IoError> {
            let raw = record.get(col).ok_or_else(|| IoError::ParseRow {
                path: display.clone(),
                row: row_idx + 2,
                message: format!("missing field {col}"),
            })?;
            raw.parse::<f64>().map_err(|_| IoError::ParseRow {
                path: display.clone(),
                row: row_idx + 2,
                message: format!("`{raw}` is not a number"),
            })
        };
        let ts = cell(ts_col)?;
        let channels: Vec<f64> = channel_cols
            .iter()
            .map(|&(_, col)| cell(col))
            .collect::<Result<_, _>>()?;
        let agg = match agg_col {
            Some(col) => cell(col)?,
            None => channels.iter().sum(),
        };
        if !ts.is_finite() || !agg.is_finite() || channels.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        timestamps.push(ts);
        aggregate.push(agg.max(0.0));
        if !channel_cols.is_empty() {
            truth.push(channels);
        }
    }
    Ok(ReadingSeries {
        timestamps,
        aggregate,
        truth: if truth.is_empty() { None } else { Some(truth) },
        channel_names: channel_cols.into_iter().map(|(n, _)| n).collect(),
        dropped_rows: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownsampleMode {
    /// Keep every factor-th sample (default).
    Decimate,
    /// Average each window of `factor` samples.
    Mean,
}

/// Downsamples the series by an integer factor; ground-truth channels are
/// transformed identically.
pub fn downsample(series: &ReadingSeries, factor: usize, mode: DownsampleMode) -> ReadingSeries {
    assert!(factor >= 1);
    if factor == 1 {
        return series.clone();
    }
    let t = series.len();
    match mode {
        DownsampleMode::Decimate => {
            let keep: Vec<usize> = (0..t).step_by(factor).collect();
            ReadingSeries {
                timestamps: keep.iter().map(|&k| series.timestamps[k]).collect(),
                aggregate: keep.iter().map(|&k| series.aggregate[k]).collect(),
                truth: series
                    .truth
                    .as_ref()
                    .map(|m| keep.iter().map(|&k| m[k].clone()).collect()),
                channel_names: series.channel_names.clone(),
                dropped_rows: series.dropped_rows,
            }
        }
        DownsampleMode::Mean => {
            let mut timestamps = Vec::new();
            let mut aggregate = Vec::new();
            let mut truth: Option<Vec<Vec<f64>>> = series.truth.as_ref().map(|_| Vec::new());
            let mut start = 0;
            while start < t {
                let end = (start + factor).min(t);
                let len = (end - start) as f64;
                timestamps.push(series.timestamps[start]);
                aggregate.push(series.aggregate[start..end].iter().sum::<f64>() / len);
                if let (Some(out), Some(m)) = (truth.as_mut(), series.truth.as_ref()) {
                    let n = series.channel_names.len();
                    let mut row = vec![0.0; n];
                    for k in start..end {
                        for i in 0..n {
                            row[i] += m[k][i];
                        }
                    }
                    for v in &mut row {
                        *v /= len;
                    }
                    out.push(row);
                }
                start = end;
            }
            ReadingSeries {
                timestamps,
                aggregate,
                truth,
                channel_names: series.channel_names.clone(),
                dropped_rows: series.dropped_rows,
            }
        }
    }
}

/// Writes a readings CSV (timestamp, aggregate, one column per channel).
pub fn write_series_csv(
    path: &Path,
    series: &ReadingSeries,
) -> Result<(), IoError> {
    let mut out = String::new();
    writeln!(out, "# {SERIES_SCHEMA}").unwrap();
    let mut header = vec!["timestamp".to_string(), "aggregate".to_string()];
    header.extend(series.channel_names.iter().cloned());
    writeln!(out, "{}", header.join(",")).unwrap();
    for k in 0..series.len() {
        let mut fields = vec![
            format_num(series.timestamps[k]),
            format_num(series.aggregate[k]),
        ];
        if let Some(truth) = &series.truth {
            fields.extend(truth[k].iter().map(|&v| format_num(v)));
        }
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

/// Writes an estimates CSV (timestamp plus one refined-draw column per
/// appliance).
pub fn write_estimates_csv(
    path: &Path,
    timestamps: &[f64],
    ids: &[String],
    power: &[Vec<f64>],
) -> Result<(), IoError> {
    let mut out = String::new();
    writeln!(out, "# {SERIES_SCHEMA}").unwrap();
    let mut header = vec!["timestamp".to_string()];
    header.extend(ids.iter().cloned());
    writeln!(out, "{}", header.join(",")).unwrap();
    for (k, row) in power.iter().enumerate() {
        let mut fields = vec![format_num(timestamps.get(k).copied().unwrap_or(k as f64))];
        fields.extend(row.iter().map(|&v| format_num(v)));
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

fn format_num(v: f64) -> String {
    // Shortest round-trip form keeps the files compact and deterministic.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

// ---------------------------------------------------------------------------
// Reports

/// Everything the text report needs.
#[derive(Debug, Clone)]
pub struct ReportData {
    pub enhancements: Enhancements,
    pub median_lag: usize,
    pub block_size: usize,
    pub appliance_ids: Vec<String>,
    pub samples: usize,
    pub dropped_rows: usize,
    pub counters: StageCounters,
    pub accuracy: Option<AccuracyReport>,
    /// Wall-clock mean per sample; excluded from the file unless
    /// `include_timing` is set, so fixed inputs give byte-identical reports.
    pub mean_sample_seconds: f64,
    pub include_timing: bool,
}

pub fn render_report(data: &ReportData) -> String {
    let mut out = String::new();
    let e = &data.enhancements;
    writeln!(out, "schema: {REPORT_SCHEMA}").unwrap();
    writeln!(out, "method: {}", e.label()).unwrap();
    writeln!(
        out,
        "enhancements: constraints={} std_correction={} median={} lp_refine={}",
        e.constraints, e.std_correction, e.median, e.lp_refine
    )
    .unwrap();
    writeln!(out, "median_lag: {}", data.median_lag).unwrap();
    writeln!(out, "block_size: {}", data.block_size).unwrap();
    writeln!(out, "samples: {}", data.samples).unwrap();
    writeln!(out, "dropped_rows: {}", data.dropped_rows).unwrap();
    writeln!(out, "std_corrections: {}", data.counters.std_corrections).unwrap();
    writeln!(out, "median_corrections: {}", data.counters.median_corrections).unwrap();
    writeln!(out, "lp_refined_samples: {}", data.counters.lp_refined_samples).unwrap();
    match &data.accuracy {
        Some(report) => {
            for (id, ac) in data.appliance_ids.iter().zip(&report.ac) {
                match ac {
                    Some(v) => writeln!(out, "ac[{id}]: {v:.6}").unwrap(),
                    None => writeln!(out, "ac[{id}]: undefined (zero ground truth)").unwrap(),
                }
            }
            match report.acc {
                Some(v) => writeln!(out, "acc: {v:.6}").unwrap(),
                None => writeln!(out, "acc: undefined (zero ground truth)").unwrap(),
            }
        }
        None => writeln!(out, "acc: unavailable (no ground truth channels)").unwrap(),
    }
    if data.include_timing {
        writeln!(
            out,
            "mean_ms_per_sample: {:.3}",
            data.mean_sample_seconds * 1e3
        )
        .unwrap();
    }
    out
}

/// Writes the text report.
pub fn emit_report(path: &Path, data: &ReportData) -> Result<(), IoError> {
    let mut file = fs::File::create(path).map_err(|e| file_err(path, e))?;
    file.write_all(render_report(data).as_bytes())
        .map_err(|e| file_err(path, e))
}

/// Writes the flat per-block CSV driving external plots.
pub fn write_plot_csv(
    path: &Path,
    ids: &[String],
    report: &AccuracyReport,
) -> Result<(), IoError> {
    let mut out = String::new();
    writeln!(out, "# {PLOT_SCHEMA}").unwrap();
    let mut header = vec![
        "block".to_string(),
        "start".to_string(),
        "end".to_string(),
        "partial".to_string(),
    ];
    header.extend(ids.iter().map(|id| format!("ac_{id}")));
    header.push("acc".to_string());
    writeln!(out, "{}", header.join(",")).unwrap();
    for b in &report.blocks {
        let mut fields = vec![
            b.block.to_string(),
            b.start.to_string(),
            b.end.to_string(),
            b.partial.to_string(),
        ];
        for ac in &b.ac {
            fields.push(match ac {
                Some(v) => format!("{v:.6}"),
                None => "nan".to_string(),
            });
        }
        fields.push(match b.acc {
            Some(v) => format!("{v:.6}"),
            None => "nan".to_string(),
        });
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}
