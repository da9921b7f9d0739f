//! Dataset plumbing: pair records, view filtering, the registration-gated
//! manifest builder, and dataset statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

use rse_core::imaging::{bilateral_filter, resize, GrayImage};
use rse_core::instruction::{
    generate_instructions, parse_instruction, render_instruction, FindingSet, InstructionSet,
    Operation,
};
use rse_core::registration::{register_rigid, RegistrationConfig, RigidTransform};

use crate::error::{CliError, Result};
use crate::formats::{
    into_finding_set, ManifestLine, OperationCounts, OperationPercentages, RecordFile, StatsFile,
};
use crate::io::load_gray_png;

/// Dataset split tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    /// Training pairs.
    Train,
    /// Held-out pairs for model selection.
    Holdout,
    /// Test pairs.
    Test,
    /// Validation pairs.
    Validation,
}

impl Split {
    /// The canonical lowercase tag.
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Holdout => "holdout",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "holdout" => Ok(Split::Holdout),
            "test" => Ok(Split::Test),
            "validation" => Ok(Split::Validation),
            other => Err(CliError::Config(format!(
                "unknown split `{other}`; expected train, holdout, test, or validation"
            ))),
        }
    }
}

/// Deterministic patient-wise split assignment: an FNV-1a hash of the
/// patient id buckets into train/holdout/test/validation at roughly
/// 88/10/1/1 percent. Every pair from one patient lands in one split.
pub fn assign_split(patient: &str) -> Split {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for byte in patient.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    match hash % 100 {
        0..=87 => Split::Train,
        88..=97 => Split::Holdout,
        98 => Split::Test,
        _ => Split::Validation,
    }
}

/// One image pair ready for the manifest builder.
#[derive(Debug, Clone)]
pub struct PairRecord {
    /// Unique pair identifier.
    pub id: String,
    /// Path to the earlier study image.
    pub past: PathBuf,
    /// Path to the later study image.
    pub current: PathBuf,
    /// Radiographic view label, if recorded.
    pub view: Option<String>,
    /// Findings in the earlier study.
    pub past_findings: FindingSet,
    /// Findings in the later study.
    pub current_findings: FindingSet,
    /// Assigned dataset split.
    pub split: Split,
}

impl PairRecord {
    /// Converts a parsed record file entry, assigning the split from the
    /// patient hash when none is given and rejecting identical paths.
    pub fn from_file(record: RecordFile) -> Result<Self> {
        if record.past == record.current {
            return Err(CliError::Config(format!(
                "record `{}`: past and current images must be distinct paths",
                record.id
            )));
        }
        let split = match &record.split {
            Some(tag) => tag.parse()?,
            None => assign_split(&record.patient),
        };
        Ok(Self {
            id: record.id,
            past: PathBuf::from(record.past),
            current: PathBuf::from(record.current),
            view: record.view,
            past_findings: into_finding_set(record.past_findings)?,
            current_findings: into_finding_set(record.current_findings)?,
            split,
        })
    }
}

/// What the view filter kept and why the rest fell out.
#[derive(Debug, Clone)]
pub struct ViewFilterOutcome {
    /// Records whose view matched.
    pub kept: Vec<PairRecord>,
    /// Records dropped for carrying no view label at all.
    pub unlabeled: usize,
    /// Records dropped for a different view label.
    pub mismatched: usize,
}

/// Keeps records whose view label equals `keep`; unlabeled records are
/// dropped (and counted) rather than guessed at.
pub fn filter_view(records: Vec<PairRecord>, keep: &str) -> ViewFilterOutcome {
    let mut outcome = ViewFilterOutcome {
        kept: Vec::with_capacity(records.len()),
        unlabeled: 0,
        mismatched: 0,
    };
    for record in records {
        match record.view.as_deref() {
            Some(view) if view == keep => outcome.kept.push(record),
            Some(_) => outcome.mismatched += 1,
            None => outcome.unlabeled += 1,
        }
    }
    outcome
}

/// One accepted pair: the record's identity plus alignment and the derived
/// instructions.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    /// Pair identifier.
    pub id: String,
    /// Path to the earlier study image.
    pub past: PathBuf,
    /// Path to the later study image.
    pub current: PathBuf,
    /// Radiographic view label.
    pub view: String,
    /// Rigid transform recovered by registration.
    pub transform: RigidTransform,
    /// Mutual-information score at the recovered alignment.
    pub mi: f64,
    /// Instructions describing the change from past to current.
    pub instructions: InstructionSet,
    /// The instructions rendered as text.
    pub text: String,
    /// Dataset split tag.
    pub split: Split,
}

impl ManifestEntry {
    /// The JSONL wire representation.
    pub fn to_line(&self) -> ManifestLine {
        ManifestLine {
            schema: 1,
            id: self.id.clone(),
            past: self.past.to_string_lossy().into_owned(),
            current: self.current.to_string_lossy().into_owned(),
            view: self.view.clone(),
            transform: [
                self.transform.angle,
                self.transform.scale,
                self.transform.tx,
                self.transform.ty,
            ],
            mi: self.mi,
            instructions: self.instructions.as_slice().to_vec(),
            text: self.text.clone(),
            split: self.split.as_str().to_owned(),
        }
    }

    /// Rebuilds an entry from its wire representation, re-validating the
    /// instruction set and split tag.
    pub fn from_line(line: ManifestLine) -> Result<Self> {
        if line.schema != 1 {
            return Err(CliError::Config(format!(
                "manifest entry `{}`: unsupported schema {}",
                line.id, line.schema
            )));
        }
        Ok(Self {
            id: line.id,
            past: PathBuf::from(line.past),
            current: PathBuf::from(line.current),
            view: line.view,
            transform: RigidTransform::new(
                line.transform[0],
                line.transform[1],
                line.transform[2],
                line.transform[3],
            )?,
            mi: line.mi,
            instructions: InstructionSet::new(line.instructions)?,
            text: line.text,
            split: line.split.parse()?,
        })
    }
}

/// Knobs for the manifest builder.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    /// Square canvas size images are resized to before alignment.
    pub canvas: usize,
    /// Spatial sigma of the pre-registration bilateral filter, in pixels.
    pub bilateral_spatial: f64,
    /// Range sigma of the bilateral filter, on the 0–255 intensity scale.
    pub bilateral_range: f64,
    /// Registration search and acceptance settings.
    pub registration: RegistrationConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            canvas: 512,
            bilateral_spatial: 2.0,
            bilateral_range: 50.0,
            registration: RegistrationConfig::default(),
        }
    }
}

/// Everything the manifest builder produces: accepted entries, their
/// statistics, and counts for every way a record can fall out.
#[derive(Debug, Clone)]
pub struct BuildOutcome {
    /// Accepted entries, ordered by pair id.
    pub entries: Vec<ManifestEntry>,
    /// Statistics over the accepted entries.
    pub stats: DatasetStats,
    /// Records skipped because an image would not load.
    pub unreadable: usize,
    /// Records rejected by the alignment gate.
    pub rejected: usize,
    /// Records skipped because past and current findings were identical.
    pub unchanged: usize,
}

/// Aligns, gates, and converts records into manifest entries.
///
/// Per record: load both images, resize to the canvas, smooth with the
/// bilateral filter, register the current image onto the past one, and gate
/// on the mutual-information score. Accepted pairs get instructions
/// generated from the finding delta; pairs with no delta are skipped.
/// Records are processed in parallel and the output is ordered by pair id,
/// so the manifest is deterministic for fixed inputs.
pub fn build_manifest(records: Vec<PairRecord>, cfg: &BuildConfig) -> BuildOutcome {
    enum Processed {
        Accepted(Box<ManifestEntry>),
        Unreadable,
        Rejected,
        Unchanged,
    }

    let process = |record: PairRecord| -> Processed {
        let load = |path: &PathBuf| -> Option<GrayImage> {
            let image = load_gray_png(path).ok()?;
            let resized = resize(&image, cfg.canvas, cfg.canvas).ok()?;
            bilateral_filter(&resized, cfg.bilateral_spatial, cfg.bilateral_range).ok()
        };
        let Some(past) = load(&record.past) else {
            return Processed::Unreadable;
        };
        let Some(current) = load(&record.current) else {
            return Processed::Unreadable;
        };
        let Ok(result) = register_rigid(&past, &current, &cfg.registration) else {
            return Processed::Rejected;
        };
        if !result.accepted {
            return Processed::Rejected;
        }
        let instructions =
            generate_instructions(&record.past_findings, &record.current_findings);
        if instructions.is_empty() {
            return Processed::Unchanged;
        }
        let text = render_instruction(&instructions);
        debug_assert_eq!(
            parse_instruction(&text).as_ref(),
            Ok(&instructions),
            "rendered instruction text must re-parse to the same set"
        );
        Processed::Accepted(Box::new(ManifestEntry {
            id: record.id,
            past: record.past,
            current: record.current,
            view: record.view.unwrap_or_default(),
            transform: result.transform,
            mi: result.score.value,
            instructions,
            text,
            split: record.split,
        }))
    };

    let processed: Vec<Processed> = records.into_par_iter().map(process).collect();

    let mut outcome = BuildOutcome {
        entries: Vec::new(),
        stats: compute_stats(&[]),
        unreadable: 0,
        rejected: 0,
        unchanged: 0,
    };
    for item in processed {
        match item {
            Processed::Accepted(entry) => outcome.entries.push(*entry),
            Processed::Unreadable => outcome.unreadable += 1,
            Processed::Rejected => outcome.rejected += 1,
            Processed::Unchanged => outcome.unchanged += 1,
        }
    }
    outcome.entries.sort_by(|a, b| a.id.cmp(&b.id));
    outcome.stats = compute_stats(&outcome.entries);
    outcome
}

/// Split, operation, and per-sample statistics over manifest entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    /// Number of entries.
    pub samples: usize,
    /// Entries per split tag.
    pub splits: BTreeMap<Split, usize>,
    /// Add-operation count.
    pub add: usize,
    /// Remove-operation count.
    pub remove: usize,
    /// Change-level-operation count.
    pub change_level: usize,
    /// All operations.
    pub total_operations: usize,
    /// Add share in percent, one decimal.
    pub add_percent: f64,
    /// Remove share in percent, one decimal.
    pub remove_percent: f64,
    /// Change-level share in percent, one decimal.
    pub change_percent: f64,
    /// Mean operations per entry, two decimals.
    pub average_operations: f64,
}

impl DatasetStats {
    /// The JSON wire representation.
    pub fn to_file(&self) -> StatsFile {
        StatsFile {
            samples: self.samples,
            splits: self
                .splits
                .iter()
                .map(|(split, count)| (split.as_str().to_owned(), *count))
                .collect(),
            operations: OperationCounts {
                add: self.add,
                remove: self.remove,
                change_level: self.change_level,
                total: self.total_operations,
            },
            percent: OperationPercentages {
                add: self.add_percent,
                remove: self.remove_percent,
                change_level: self.change_percent,
            },
            average_operations: self.average_operations,
        }
    }
}

fn round_to(value: f64, decimals: i32) -> f64 {
    let factor = 10f64.powi(decimals);
    (value * factor).round() / factor
}

/// Aggregates split counts, operation counts, percentage shares (one
/// decimal), and mean operations per sample (two decimals). Pure counting,
/// so the result is invariant under entry reordering.
pub fn compute_stats(entries: &[ManifestEntry]) -> DatasetStats {
    let mut splits = BTreeMap::new();
    let (mut add, mut remove, mut change_level) = (0usize, 0usize, 0usize);
    for entry in entries {
        *splits.entry(entry.split).or_insert(0) += 1;
        for instruction in &entry.instructions {
            match instruction.op {
                Operation::Add => add += 1,
                Operation::Remove => remove += 1,
                Operation::ChangeLevel => change_level += 1,
            }
        }
    }
    let total_operations = add + remove + change_level;
    let percent = |count: usize| {
        if total_operations == 0 {
            0.0
        } else {
            round_to(count as f64 * 100.0 / total_operations as f64, 1)
        }
    };
    let average_operations = if entries.is_empty() {
        0.0
    } else {
        round_to(total_operations as f64 / entries.len() as f64, 2)
    };
    DatasetStats {
        samples: entries.len(),
        splits,
        add,
        remove,
        change_level,
        total_operations,
        add_percent: percent(add),
        remove_percent: percent(remove),
        change_percent: percent(change_level),
        average_operations,
    }
}

/// Serializes entries as JSON Lines, one entry per line, and re-parses each
/// rendered instruction string as a write-time consistency check.
pub fn render_manifest(entries: &[ManifestEntry]) -> Result<String> {
    let mut out = String::new();
    for entry in entries {
        let reparsed = parse_instruction(&entry.text)?;
        if reparsed != entry.instructions {
            return Err(CliError::Config(format!(
                "manifest entry `{}`: text does not re-parse to its instructions",
                entry.id
            )));
        }
        let line = serde_json::to_string(&entry.to_line())
            .map_err(|e| CliError::Config(format!("manifest serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a JSONL manifest back into entries.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(line).map_err(|e| {
            CliError::Config(format!("manifest line {}: invalid JSON: {e}", number + 1))
        })?;
        entries.push(ManifestEntry::from_line(parsed)?);
    }
    Ok(entries)
}
