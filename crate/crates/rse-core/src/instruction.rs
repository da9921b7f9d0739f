//! Edit-instruction grammar: typed instructions, a parser and renderer for
//! their canonical surface form, and diffing of longitudinal finding sets
//! into the instructions that transform one into the other.
//!
//! The surface grammar has three clause forms, joined by `" and then "`
//! (a `";"` separator is also accepted when parsing):
//!
//! ```text
//! add [severity] [location] <finding>
//! remove [severity] [location] <finding>
//! change the level of [location] <finding> to <severity>
//! ```
//!
//! Severity and location come from closed vocabularies; the finding is an
//! open-vocabulary token. Words that do not match the severity or location
//! vocabulary simply fold into the finding, so the parser is total on any
//! clause that starts with a known operation keyword and names a finding.
//! Multi-word tokens are spelled with spaces in the surface form
//! (`left lower lobe`) and stored snake_case (`left_lower_lobe`).

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// What an instruction does to a finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Operation {
    /// Introduce the finding.
    Add,
    /// Eliminate the finding.
    Remove,
    /// Keep the finding but set a new severity.
    ChangeLevel,
}

impl Operation {
    /// The keyword (or keyword phrase) that opens a clause.
    pub fn keyword(&self) -> &'static str {
        match self {
            Operation::Add => "add",
            Operation::Remove => "remove",
            Operation::ChangeLevel => "change the level of",
        }
    }
}

/// Closed severity vocabulary, ordered from least to most pronounced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Severity {
    /// Barely detectable.
    Minimal,
    /// Limited in extent.
    Small,
    /// Present but not pronounced.
    Mild,
    /// Clearly developed.
    Moderate,
    /// Strongly developed.
    Severe,
    /// Extensive.
    Large,
}

impl Severity {
    /// Every severity, in rank order.
    pub const ALL: [Severity; 6] = [
        Severity::Minimal,
        Severity::Small,
        Severity::Mild,
        Severity::Moderate,
        Severity::Severe,
        Severity::Large,
    ];

    /// Canonical lowercase token.
    pub fn as_str(&self) -> &'static str {
        match self {
            Severity::Minimal => "minimal",
            Severity::Small => "small",
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
            Severity::Large => "large",
        }
    }

    /// Looks a token up in the vocabulary.
    pub fn from_token(token: &str) -> Option<Severity> {
        Severity::ALL.iter().copied().find(|s| s.as_str() == token)
    }
}

/// Closed location vocabulary for anatomical regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Location {
    /// Left half.
    Left,
    /// Right half.
    Right,
    /// Both halves.
    Bilateral,
    /// Lower lobe on the left.
    LeftLowerLobe,
    /// Upper lobe on the left.
    LeftUpperLobe,
    /// Lower lobe on the right.
    RightLowerLobe,
    /// Upper lobe on the right.
    RightUpperLobe,
    /// Base on the right.
    RightBase,
    /// Base on the left.
    LeftBase,
    /// The cardiac region.
    CardiacRegion,
}

impl Location {
    /// Every location.
    pub const ALL: [Location; 10] = [
        Location::Left,
        Location::Right,
        Location::Bilateral,
        Location::LeftLowerLobe,
        Location::LeftUpperLobe,
        Location::RightLowerLobe,
        Location::RightUpperLobe,
        Location::RightBase,
        Location::LeftBase,
        Location::CardiacRegion,
    ];

    /// Canonical snake_case token used in stored data.
    pub fn token(&self) -> &'static str {
        match self {
            Location::Left => "left",
            Location::Right => "right",
            Location::Bilateral => "bilateral",
            Location::LeftLowerLobe => "left_lower_lobe",
            Location::LeftUpperLobe => "left_upper_lobe",
            Location::RightLowerLobe => "right_lower_lobe",
            Location::RightUpperLobe => "right_upper_lobe",
            Location::RightBase => "right_base",
            Location::LeftBase => "left_base",
            Location::CardiacRegion => "cardiac_region",
        }
    }

    /// Surface-form words (the token with underscores as spaces).
    pub fn phrase_words(&self) -> &'static [&'static str] {
        match self {
            Location::Left => &["left"],
            Location::Right => &["right"],
            Location::Bilateral => &["bilateral"],
            Location::LeftLowerLobe => &["left", "lower", "lobe"],
            Location::LeftUpperLobe => &["left", "upper", "lobe"],
            Location::RightLowerLobe => &["right", "lower", "lobe"],
            Location::RightUpperLobe => &["right", "upper", "lobe"],
            Location::RightBase => &["right", "base"],
            Location::LeftBase => &["left", "base"],
            Location::CardiacRegion => &["cardiac", "region"],
        }
    }

    /// Looks a snake_case token up in the vocabulary.
    pub fn from_token(token: &str) -> Option<Location> {
        Location::ALL.iter().copied().find(|l| l.token() == token)
    }
}

/// Open-vocabulary finding name, stored as a snake_case token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct Finding(String);

impl Finding {
    /// Validates and wraps a token: non-empty, characters in `[a-z0-9_]`,
    /// and not starting or ending with an underscore.
    pub fn new(token: &str) -> Result<Self> {
        let valid_chars = token
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        if token.is_empty()
            || !valid_chars
            || token.starts_with('_')
            || token.ends_with('_')
        {
            return Err(Error::InvalidFinding {
                token: token.to_owned(),
            });
        }
        Ok(Self(token.to_owned()))
    }

    /// The canonical snake_case token.
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Surface-form words (underscores split).
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.split('_')
    }
}

impl core::fmt::Display for Finding {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Finding {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Finding::new(&value)
    }
}

impl From<Finding> for String {
    fn from(value: Finding) -> String {
        value.0
    }
}

/// One edit clause: an operation applied to a finding, optionally pinned to
/// a location and severity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EditInstruction {
    /// What to do.
    pub op: Operation,
    /// Which finding to act on.
    pub finding: Finding,
    /// Optional anatomical restriction.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub location: Option<Location>,
    /// Optional (mandatory for [`Operation::ChangeLevel`]) severity.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub severity: Option<Severity>,
}

impl EditInstruction {
    /// Builds an instruction, enforcing that change-level clauses carry the
    /// severity they change to.
    pub fn new(
        op: Operation,
        finding: Finding,
        location: Option<Location>,
        severity: Option<Severity>,
    ) -> Result<Self> {
        if op == Operation::ChangeLevel && severity.is_none() {
            return Err(Error::InvalidParameter {
                name: "severity",
                reason: "change-level instructions require a target severity",
            });
        }
        Ok(Self {
            op,
            finding,
            location,
            severity,
        })
    }

    fn key(&self) -> (Operation, &str, Option<Location>) {
        (self.op, self.finding.as_str(), self.location)
    }
}

/// An ordered set of instructions with no duplicate
/// (operation, finding, location) triple.
///
/// The empty set is valid: it is the "no edit" text conditioning used for
/// classifier-free guidance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(try_from = "Vec<EditInstruction>", into = "Vec<EditInstruction>")
)]
pub struct InstructionSet {
    instructions: Vec<EditInstruction>,
}

impl InstructionSet {
    /// Wraps a clause list, rejecting duplicate triples.
    pub fn new(instructions: Vec<EditInstruction>) -> Result<Self> {
        for (i, a) in instructions.iter().enumerate() {
            if instructions[..i].iter().any(|b| b.key() == a.key()) {
                return Err(Error::DuplicateInstruction {
                    finding: a.finding.as_str().to_owned(),
                });
            }
        }
        Ok(Self { instructions })
    }

    /// The empty instruction set (null text conditioning).
    pub fn empty() -> Self {
        Self::default()
    }

    /// Number of clauses.
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    /// True when there are no clauses.
    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Iterates over clauses in order.
    pub fn iter(&self) -> core::slice::Iter<'_, EditInstruction> {
        self.instructions.iter()
    }

    /// Clause list as a slice.
    pub fn as_slice(&self) -> &[EditInstruction] {
        &self.instructions
    }
}

impl<'a> IntoIterator for &'a InstructionSet {
    type Item = &'a EditInstruction;
    type IntoIter = core::slice::Iter<'a, EditInstruction>;

    fn into_iter(self) -> Self::IntoIter {
        self.instructions.iter()
    }
}

impl TryFrom<Vec<EditInstruction>> for InstructionSet {
    type Error = Error;

    fn try_from(value: Vec<EditInstruction>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<InstructionSet> for Vec<EditInstruction> {
    fn from(value: InstructionSet) -> Self {
        value.instructions
    }
}

/// A finding present in one study: its name, optional location, and
/// optional severity.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FindingState {
    /// Which finding.
    pub finding: Finding,
    /// Where it was recorded, if localized.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub location: Option<Location>,
    /// How pronounced it was, if graded.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub severity: Option<Severity>,
}

/// The findings recorded for one study, keyed by (finding, location).
///
/// At most one state may exist per key; inserting a second is an error.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FindingSet {
    states: BTreeMap<(Finding, Option<Location>), Option<Severity>>,
}

impl FindingSet {
    /// An empty finding set.
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from a list of states, rejecting duplicate keys.
    pub fn from_states(states: impl IntoIterator<Item = FindingState>) -> Result<Self> {
        let mut set = Self::new();
        for state in states {
            set.insert(state)?;
        }
        Ok(set)
    }

    /// Records one finding state.
    pub fn insert(&mut self, state: FindingState) -> Result<()> {
        let key = (state.finding, state.location);
        if self.states.contains_key(&key) {
            return Err(Error::DuplicateFindingState {
                finding: key.0.as_str().to_owned(),
            });
        }
        self.states.insert(key, state.severity);
        Ok(())
    }

    /// Number of recorded states.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    /// True when no states are recorded.
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Iterates over states in key order.
    pub fn iter(&self) -> impl Iterator<Item = FindingState> + '_ {
        self.states.iter().map(|((finding, location), severity)| FindingState {
            finding: finding.clone(),
            location: *location,
            severity: *severity,
        })
    }

    /// Severity recorded under a key, if the key is present.
    pub fn get(&self, finding: &Finding, location: Option<Location>) -> Option<Option<Severity>> {
        self.states.get(&(finding.clone(), location)).copied()
    }
}

/// Diffs two finding sets into the instructions that edit `past` into
/// `current`.
///
/// Findings only in `current` become `Add` (carrying the current severity);
/// findings only in `past` become `Remove` (carrying the past severity);
/// findings in both with two known, different severities become
/// `ChangeLevel` to the current severity. A finding present in both whose
/// severities match, or where either severity is unrecorded, produces no
/// instruction. Output order is deterministic: adds, then removes, then
/// change-levels, each group sorted by finding and location.
///
/// Carrying the outgoing severity on `Remove` makes the diff antisymmetric:
/// swapping `past` and `current` yields exactly the inverse instructions.
pub fn generate_instructions(past: &FindingSet, current: &FindingSet) -> InstructionSet {
    let mut instructions = Vec::new();
    let mut keys: Vec<&(Finding, Option<Location>)> = past.states.keys().collect();
    for key in current.states.keys() {
        if !past.states.contains_key(key) {
            keys.push(key);
        }
    }

    for (finding, location) in keys.into_iter().cloned() {
        let before = past.states.get(&(finding.clone(), location)).copied();
        let after = current.states.get(&(finding.clone(), location)).copied();
        let instruction = match (before, after) {
            (None, Some(severity)) => Some((Operation::Add, severity)),
            (Some(severity), None) => Some((Operation::Remove, severity)),
            (Some(Some(a)), Some(Some(b))) if a != b => Some((Operation::ChangeLevel, Some(b))),
            _ => None,
        };
        if let Some((op, severity)) = instruction {
            instructions.push(EditInstruction {
                op,
                finding: finding.clone(),
                location,
                severity,
            });
        }
    }

    instructions.sort_by(|a, b| {
        let rank = |i: &EditInstruction| (i.op, i.finding.clone(), i.location.map(|l| l.token()));
        rank(a).cmp(&rank(b))
    });
    // Keys are unique by construction, so the duplicate check cannot fire.
    InstructionSet { instructions }
}

/// Errors produced while parsing an instruction string.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[non_exhaustive]
pub enum ParseError {
    /// The input contained no clauses at all.
    #[error("empty instruction text")]
    EmptyText,

    /// A clause did not start with `add`, `remove`, or
    /// `change the level of`.
    #[error("clause `{clause}` does not start with a known operation")]
    NoOperation {
        /// The offending clause.
        clause: String,
    },

    /// A clause named no finding.
    #[error("clause `{clause}` names no finding")]
    MissingFinding {
        /// The offending clause.
        clause: String,
    },

    /// A change-level clause lacked its trailing `to <severity>`.
    #[error("clause `{clause}` is missing `to <severity>`")]
    MissingSeverity {
        /// The offending clause.
        clause: String,
    },

    /// A change-level clause named a severity outside the vocabulary.
    #[error("clause `{clause}` names unknown severity `{word}`")]
    UnknownSeverity {
        /// The offending clause.
        clause: String,
        /// The word that failed severity lookup.
        word: String,
    },

    /// A finding contained characters outside `[a-z0-9_]`.
    #[error("clause `{clause}` names invalid finding `{token}`")]
    InvalidFinding {
        /// The offending clause.
        clause: String,
        /// The rejected finding token.
        token: String,
    },
}

/// Tries to read a location phrase at the start of `tokens`, longest match
/// first, returning the location and how many tokens it consumed.
fn match_location(tokens: &[&str]) -> Option<(Location, usize)> {
    for len in (1..=3.min(tokens.len())).rev() {
        for location in Location::ALL {
            if location.phrase_words() == &tokens[..len] {
                return Some((location, len));
            }
        }
    }
    None
}

fn finding_from_words(clause: &str, words: &[&str]) -> Result<Finding> {
    if words.is_empty() {
        return Err(ParseError::MissingFinding {
            clause: clause.to_owned(),
        }
        .into());
    }
    let token = words.join("_");
    Finding::new(&token).map_err(|_| {
        ParseError::InvalidFinding {
            clause: clause.to_owned(),
            token,
        }
        .into()
    })
}

fn parse_clause(clause: &str) -> Result<EditInstruction> {
    let tokens: Vec<&str> = clause.split_whitespace().collect();

    if tokens.first() == Some(&"change") {
        if tokens.len() < 4 || tokens[1] != "the" || tokens[2] != "level" || tokens[3] != "of" {
            return Err(ParseError::NoOperation {
                clause: clause.to_owned(),
            }
            .into());
        }
        let mut rest = &tokens[4..];
        let location = match_location(rest).map(|(location, consumed)| {
            rest = &rest[consumed..];
            location
        });
        // The finding itself may contain "to", so split at the last one.
        let split = rest.iter().rposition(|&t| t == "to").ok_or_else(|| {
            ParseError::MissingSeverity {
                clause: clause.to_owned(),
            }
        })?;
        let finding = finding_from_words(clause, &rest[..split])?;
        let severity_words = &rest[split + 1..];
        let severity = match severity_words {
            [word] => Severity::from_token(word),
            _ => None,
        }
        .ok_or_else(|| ParseError::UnknownSeverity {
            clause: clause.to_owned(),
            word: severity_words.join(" "),
        })?;
        return Ok(EditInstruction {
            op: Operation::ChangeLevel,
            finding,
            location: Some(location).flatten(),
            severity: Some(severity),
        });
    }

    let op = match tokens.first() {
        Some(&"add") => Operation::Add,
        Some(&"remove") => Operation::Remove,
        _ => {
            return Err(ParseError::NoOperation {
                clause: clause.to_owned(),
            }
            .into())
        }
    };

    let mut rest = &tokens[1..];
    let severity = rest
        .first()
        .and_then(|t| Severity::from_token(t))
        .inspect(|_| {
            rest = &rest[1..];
        });
    let location = match_location(rest).map(|(location, consumed)| {
        rest = &rest[consumed..];
        location
    });
    let finding = finding_from_words(clause, rest)?;
    Ok(EditInstruction {
        op,
        finding,
        location,
        severity,
    })
}

/// Parses an instruction string into a validated [`InstructionSet`].
///
/// Clauses are separated by `" and then "` or `";"`. Input is lowercased
/// before parsing, and empty clauses from trailing separators are skipped.
/// Parsing never panics: any input either yields a set or a descriptive
/// error naming the offending clause.
pub fn parse_instruction(text: &str) -> Result<InstructionSet> {
    let lowered = text.to_lowercase();
    let mut instructions = Vec::new();
    let mut any_clause = false;
    for piece in lowered.split(';') {
        for clause in piece.split(" and then ") {
            let clause = clause.trim();
            if clause.is_empty() {
                continue;
            }
            any_clause = true;
            instructions.push(parse_clause(clause)?);
        }
    }
    if !any_clause {
        return Err(ParseError::EmptyText.into());
    }
    InstructionSet::new(instructions)
}

/// Renders an instruction set in canonical surface form, clauses joined by
/// `" and then "`. Parsing the result reproduces the set exactly whenever
/// the finding vocabulary does not collide with severity or location words.
pub fn render_instruction(instructions: &InstructionSet) -> String {
    let mut out = String::new();
    for (i, instruction) in instructions.iter().enumerate() {
        if i > 0 {
            out.push_str(" and then ");
        }
        match instruction.op {
            Operation::Add | Operation::Remove => {
                out.push_str(instruction.op.keyword());
                if let Some(severity) = instruction.severity {
                    out.push(' ');
                    out.push_str(severity.as_str());
                }
                if let Some(location) = instruction.location {
                    out.push(' ');
                    out.push_str(&location.token().replace('_', " "));
                }
                out.push(' ');
                out.push_str(&instruction.finding.as_str().replace('_', " "));
            }
            Operation::ChangeLevel => {
                out.push_str("change the level of");
                if let Some(location) = instruction.location {
                    out.push(' ');
                    out.push_str(&location.token().replace('_', " "));
                }
                out.push(' ');
                out.push_str(&instruction.finding.as_str().replace('_', " "));
                out.push_str(" to ");
                // Constructors guarantee change-level carries a severity.
                out.push_str(instruction.severity.map(|s| s.as_str()).unwrap_or(""));
            }
        }
    }
    out
}
