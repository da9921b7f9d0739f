//! On-disk JSON schemas: the mask registry, the synthetic blob world, pair
//! records, manifest lines, evaluation probes, and the statistics report —
//! plus conversions into the corresponding domain types.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rse_core::diffusion::{BlobSpec, BlobWorld};
use rse_core::instruction::{EditInstruction, Finding, FindingSet, FindingState, Severity};
use rse_core::maskreg::{BoundingBox, MaskRegistry};

use crate::error::{CliError, Result};

/// Reads and deserializes one JSON file, attributing failures to the path.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: invalid JSON: {e}", path.display())))
}

/// Mask registry file: canvas size plus per-finding bounding boxes, each
/// `[x0, y0, x1, y1]` inclusive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryFile {
    /// Registry canvas width.
    pub width: usize,
    /// Registry canvas height.
    pub height: usize,
    /// Boxes per finding name.
    pub findings: BTreeMap<String, Vec<[usize; 4]>>,
}

impl RegistryFile {
    /// Builds the domain registry, validating names, boxes, and bounds.
    pub fn into_registry(self) -> Result<MaskRegistry> {
        let mut registry = MaskRegistry::new(self.width, self.height)?;
        for (name, boxes) in self.findings {
            let finding = Finding::new(&name)?;
            for [x0, y0, x1, y1] in boxes {
                registry.insert(finding.clone(), BoundingBox::new(x0, y0, x1, y1)?)?;
            }
        }
        Ok(registry)
    }
}

/// One blob in the synthetic world file.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlobFile {
    /// Center in pixel coordinates `[x, y]`.
    pub center: [f64; 2],
    /// Hard support radius in pixels.
    pub radius: f64,
    /// Peak intensity change at full severity.
    pub amplitude: f64,
}

/// Synthetic world file: named blobs plus optional severity overrides
/// keyed by severity name (`minimal`, `small`, ...).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    /// Blob definition per finding name.
    pub findings: BTreeMap<String, BlobFile>,
    /// Per-severity amplitude multiplier overrides.
    #[serde(default)]
    pub severity_scale: BTreeMap<String, f64>,
}

impl WorldFile {
    /// Builds the oracle world, validating finding names and severities.
    pub fn into_world(self) -> Result<BlobWorld> {
        let mut findings = BTreeMap::new();
        for (name, blob) in self.findings {
            findings.insert(
                Finding::new(&name)?,
                BlobSpec {
                    center: (blob.center[0], blob.center[1]),
                    radius: blob.radius,
                    amplitude: blob.amplitude,
                },
            );
        }
        let mut overrides = Vec::new();
        for (name, multiplier) in self.severity_scale {
            let severity: Severity = serde_json::from_value(serde_json::Value::String(
                name.clone(),
            ))
            .map_err(|_| CliError::Config(format!("unknown severity `{name}`")))?;
            overrides.push((severity, multiplier));
        }
        Ok(BlobWorld::with_severity_scale(findings, overrides)?)
    }
}

/// One finding with optional location and severity, as stored in record
/// and finding-set files.
pub type FindingStateFile = Vec<FindingState>;

/// Converts a list of finding states into the domain set, rejecting
/// duplicates.
pub fn into_finding_set(states: FindingStateFile) -> Result<FindingSet> {
    Ok(FindingSet::from_states(states)?)
}

/// One image pair in the ingest records file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordFile {
    /// Unique pair identifier.
    pub id: String,
    /// Patient identifier; drives deterministic split assignment.
    pub patient: String,
    /// Path to the earlier study image.
    pub past: String,
    /// Path to the later study image.
    pub current: String,
    /// Radiographic view label; records without one are dropped.
    #[serde(default)]
    pub view: Option<String>,
    /// Findings recorded for the earlier study.
    #[serde(default)]
    pub past_findings: FindingStateFile,
    /// Findings recorded for the later study.
    #[serde(default)]
    pub current_findings: FindingStateFile,
    /// Explicit split tag; derived from the patient hash when absent.
    #[serde(default)]
    pub split: Option<String>,
}

/// One line of the manifest JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLine {
    /// Schema version; always 1.
    pub schema: u32,
    /// Pair identifier.
    pub id: String,
    /// Path to the earlier study image.
    pub past: String,
    /// Path to the later study image.
    pub current: String,
    /// Radiographic view label.
    pub view: String,
    /// Recovered rigid transform `[angle_rad, scale, tx, ty]`.
    pub transform: [f64; 4],
    /// Mutual-information alignment score (lower is better).
    pub mi: f64,
    /// Structured edit instructions.
    pub instructions: Vec<EditInstruction>,
    /// The instructions rendered as text.
    pub text: String,
    /// Dataset split tag.
    pub split: String,
}

/// A named evaluation probe: scores feeding one accuracy or retention
/// entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeFile {
    /// Name the resulting metric is reported under.
    pub name: String,
    /// How to score the probe.
    #[serde(flatten)]
    pub kind: ProbeKind,
}

/// The two supported probe statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProbeKind {
    /// Ranking probe: AUROC of scores against binary labels.
    Auroc {
        /// Ground-truth labels.
        labels: Vec<bool>,
        /// Predicted scores, aligned with labels.
        scores: Vec<f64>,
    },
    /// Correlation probe: Pearson r between two series, negative values
    /// floored at zero so the result stays a `[0, 1]` retention score.
    Pearson {
        /// First series (for example, predicted values).
        x: Vec<f64>,
        /// Second series (for example, ground truth).
        y: Vec<f64>,
    },
}

/// Per-class probability profiles for the divergence metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlSpecFile {
    /// Profile measured on reference images.
    pub p: BTreeMap<String, f64>,
    /// Profile measured on generated images.
    pub q: BTreeMap<String, f64>,
}

/// The probes file driving `rse eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbesFile {
    /// Probes aggregated as accuracy scores.
    #[serde(default)]
    pub accuracy: Vec<ProbeFile>,
    /// Probes aggregated as retention scores.
    #[serde(default)]
    pub retention: Vec<ProbeFile>,
    /// Optional divergence inputs.
    #[serde(default)]
    pub kl: Option<KlSpecFile>,
}

/// Statistics report printed by `rse stats` and `rse ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    /// Number of manifest entries.
    pub samples: usize,
    /// Entries per split tag.
    pub splits: BTreeMap<String, usize>,
    /// Operation counts.
    pub operations: OperationCounts,
    /// Share of each operation in percent, rounded to one decimal.
    pub percent: OperationPercentages,
    /// Mean operations per sample, rounded to two decimals.
    pub average_operations: f64,
}

/// Raw operation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationCounts {
    /// Additions.
    pub add: usize,
    /// Removals.
    pub remove: usize,
    /// Severity changes.
    pub change_level: usize,
    /// All operations.
    pub total: usize,
}

/// Rounded operation shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperationPercentages {
    /// Additions, percent.
    pub add: f64,
    /// Removals, percent.
    pub remove: f64,
    /// Severity changes, percent.
    pub change_level: f64,
}
