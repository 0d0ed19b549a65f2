//! Run records, manifests and CSV/JSON report emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::metrics::MetricsReport;
use crate::{Error, Result};

/// Version of the manifest and report layout.
pub const ARTIFACT_VERSION: u32 = 1;

/// A 2-D score grid through two pre-rotation coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGrid {
    pub coord_a: usize,
    pub coord_b: usize,
    pub half_width: f64,
    /// `scores[i][j]` at `(axis[i], axis[j])`.
    pub scores: Vec<Vec<f64>>,
}

impl BoundaryGrid {
    pub fn axis(&self) -> Vec<f64> {
        let r = self.scores.len();
        (0..r)
            .map(|i| -self.half_width + 2.0 * self.half_width * i as f64 / (r - 1) as f64)
            .collect()
    }
}

/// One row of an experiment table: a single trained condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Unique within a manifest; rows are emitted sorted by id.
    pub id: String,
    pub repeat: usize,
    /// Text-valued condition columns (dataset, arch, role, ...).
    pub labels: BTreeMap<String, String>,
    /// Numeric columns.
    pub values: BTreeMap<String, f64>,
    pub seeds: BTreeMap<String, u64>,
    pub report: Option<MetricsReport>,
    pub grid: Option<BoundaryGrid>,
}

impl RunRecord {
    pub fn new(id: impl Into<String>, repeat: usize) -> Self {
        Self {
            id: id.into(),
            repeat,
            labels: BTreeMap::new(),
            values: BTreeMap::new(),
            seeds: BTreeMap::new(),
            report: None,
            grid: None,
        }
    }

    pub fn label(mut self, k: &str, v: impl Into<String>) -> Self {
        self.labels.insert(k.to_string(), v.into());
        self
    }

    pub fn value(mut self, k: &str, v: f64) -> Self {
        self.values.insert(k.to_string(), v);
        self
    }

    pub fn set(&mut self, k: &str, v: f64) {
        self.values.insert(k.to_string(), v);
    }

    pub fn get(&self, k: &str) -> Option<f64> {
        self.values.get(k).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Seeds derived for each repeat.
    pub seeds: BTreeMap<String, u64>,
    pub runs: Vec<RunRecord>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        Ok(Self {
            artifact_version: ARTIFACT_VERSION,
            config_hash: config.hash()?,
            config,
            seeds: BTreeMap::new(),
            runs: Vec::new(),
            wall_clock_secs: 0.0,
        })
    }

    pub fn run(&self, id: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.id == id)
    }

    /// Whether two manifests report identical results, ignoring wall-clock.
    pub fn same_results(&self, other: &RunManifest) -> bool {
        self.artifact_version == other.artifact_version
            && self.config_hash == other.config_hash
            && self.seeds == other.seeds
            && bits_equal(&self.runs, &other.runs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.artifact_version != ARTIFACT_VERSION {
            return Err(Error::VersionMismatch {
                found: m.artifact_version,
                expected: ARTIFACT_VERSION,
            });
        }
        if m.config.hash()? != m.config_hash {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "config hash does not match the stored config".into(),
            });
        }
        Ok(m)
    }
}

/// Run-by-run equality on the bit patterns of every float, so that NaN
/// entries compare equal to themselves.
fn bits_equal(a: &[RunRecord], b: &[RunRecord]) -> bool {
    let key = |r: &RunRecord| serde_json::to_string(r).unwrap_or_default();
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.values.len() == y.values.len()
                && x
                    .values
                    .iter()
                    .zip(&y.values)
                    .all(|((ka, va), (kb, vb))| ka == kb && va.to_bits() == vb.to_bits())
                && key(x) == key(y)
        })
}

/// Fixed text columns per experiment, emitted before the numeric ones.
pub fn label_columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::ExtremeSb => &["dataset", "arch"],
        ExperimentKind::Generalization => &["dataset", "arch", "role"],
        ExperimentKind::Ensemble => &["dataset", "arch"],
        ExperimentKind::AdvSweep => &["dataset", "arch", "norm"],
        ExperimentKind::Interpolation => &["dataset", "arch"],
        ExperimentKind::Theory => &["role"],
        ExperimentKind::Uap => &["dataset", "arch"],
    }
}

/// Fixed numeric columns per experiment.
pub fn value_columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::ExtremeSb => &[
            "d",
            "sc_size",
            "epochs",
            "train_accuracy",
            "test_accuracy",
            "test_auc",
            "s_rand_auc",
            "sc_rand_auc",
            "s_rand_accuracy",
            "sc_rand_accuracy",
            "s_logit_shift",
            "sc_logit_shift",
        ],
        ExperimentKind::Generalization => &[
            "lr",
            "batch_size",
            "weight_decay",
            "momentum",
            "selected",
            "epochs",
            "train_accuracy",
            "val_accuracy",
            "test_accuracy",
            "s_rand_accuracy",
            "sc_rand_accuracy",
        ],
        ExperimentKind::Ensemble => &[
            "size",
            "ensemble_accuracy",
            "first_member_accuracy",
            "member_mean_accuracy",
            "gain",
            "s_rand_accuracy",
            "sc_rand_accuracy",
        ],
        ExperimentKind::AdvSweep => &[
            "epsilon",
            "epochs",
            "final_loss",
            "standard_accuracy",
            "robust_accuracy",
            "s_rand_accuracy",
            "sc_rand_accuracy",
            "gamma_s",
            "gamma_data",
        ],
        ExperimentKind::Interpolation => &[
            "alpha",
            "pre_accuracy",
            "pre_s_rand_auc",
            "pre_sc_rand_auc",
            "post_accuracy",
            "post_auc",
            "post_s_rand_auc",
            "post_sc_rand_auc",
        ],
        ExperimentKind::Theory => &[
            "step",
            "hinge_active_fraction",
            "w1_abs_min",
            "w1_abs_max",
            "w1_expected",
            "w1_band_lo",
            "w1_band_hi",
            "w1_in_band",
            "w2_abs_max",
            "w2_bound",
            "slab_to_linear_ratio",
            "test_error",
            "passed",
        ],
        ExperimentKind::Uap => &[
            "source_accuracy",
            "fooled_fraction",
            "energy_s",
            "energy_sc",
            "class_energy_s",
            "target_accuracy",
            "transfer_error",
            "class_transfer_error",
        ],
    }
}

/// Decimal rendering with six significant digits (no exponent), `NaN`,
/// `inf` or `-inf` for non-finite values.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.5e}", x.abs());
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let body = if exp >= 5 {
        format!("{digits}{}", "0".repeat((exp - 5) as usize))
    } else if exp >= 0 {
        let (int, frac) = digits.split_at(exp as usize + 1);
        format!("{int}.{frac}")
    } else {
        format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
    };
    if x < 0.0 {
        format!("-{body}")
    } else {
        body
    }
}

/// Columns of the main table for `kind`.
pub fn table_header(kind: ExperimentKind) -> Vec<String> {
    let mut h = vec!["id".to_string(), "repeat".to_string()];
    h.extend(label_columns(kind).iter().map(|s| s.to_string()));
    h.extend(value_columns(kind).iter().map(|s| s.to_string()));
    h
}

fn table_bytes(kind: ExperimentKind, runs: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table_header(kind))?;
    let mut sorted: Vec<&RunRecord> = runs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id).then(a.repeat.cmp(&b.repeat)));
    for r in sorted {
        let mut row = vec![r.id.clone(), r.repeat.to_string()];
        for c in label_columns(kind) {
            row.push(r.labels.get(*c).cloned().unwrap_or_default());
        }
        for c in value_columns(kind) {
            row.push(r.values.get(*c).map(|v| format_sig6(*v)).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn grid_bytes(g: &BoundaryGrid) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        format!("x{}", g.coord_a),
        format!("x{}", g.coord_b),
        "score".to_string(),
    ])?;
    let axis = g.axis();
    for (i, row) in g.scores.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            w.write_record([format_sig6(axis[i]), format_sig6(axis[j]), format_sig6(*s)])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `<experiment>.csv`, one boundary-grid CSV per run that has one,
/// and `manifest.json` into `dir`. Returns the written paths. Identical
/// manifests produce byte-identical files.
pub fn emit_report(manifest: &RunManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let kind = manifest.config.experiment;
    let mut out = Vec::new();
    let table = dir.join(format!("{}.csv", kind.as_str()));
    fs::write(&table, table_bytes(kind, &manifest.runs)?)?;
    out.push(table);
    let mut with_grid: Vec<&RunRecord> = manifest.runs.iter().filter(|r| r.grid.is_some()).collect();
    with_grid.sort_by(|a, b| a.id.cmp(&b.id));
    for r in with_grid {
        let p = dir.join(format!("{}_boundary_{}.csv", kind.as_str(), sanitize(&r.id)));
        fs::write(&p, grid_bytes(r.grid.as_ref().expect("filtered"))?)?;
        out.push(p);
    }
    let mp = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    fs::write(&mp, json)?;
    out.push(mp);
    Ok(out)
}

/// A parsed main table: header plus rows of raw cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric cell, `None` when empty.
    pub fn number(&self, row: usize, col: &str) -> Result<Option<f64>> {
        let c = self
            .column(col)
            .ok_or_else(|| Error::spec(format!("no column `{col}`")))?;
        let cell = &self.rows[row][c];
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse::<f64>()
            .map(Some)
            .map_err(|_| Error::spec(format!("cell `{cell}` in `{col}` is not a number")))
    }
}
