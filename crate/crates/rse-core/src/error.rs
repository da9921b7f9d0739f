//! Crate-wide error type.
//!
//! All fallible operations in this crate return [`Result`]. Variants are
//! grouped loosely by the kind of contract they report: invalid parameters,
//! mismatched shapes, malformed data, and instruction-parse failures.

use alloc::string::String;

use crate::instruction::ParseError;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors produced by the core editing, registration, and metric routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A scalar or configuration parameter violated its documented range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        /// Name of the offending parameter.
        name: &'static str,
        /// Why the value was rejected.
        reason: &'static str,
    },

    /// Two grids that must share a shape did not.
    #[error("dimension mismatch: expected {expected_width}x{expected_height}, got {actual_width}x{actual_height}")]
    DimensionMismatch {
        /// Expected width in pixels.
        expected_width: usize,
        /// Expected height in pixels.
        expected_height: usize,
        /// Actual width in pixels.
        actual_width: usize,
        /// Actual height in pixels.
        actual_height: usize,
    },

    /// A buffer length did not match the width x height it claims to cover.
    #[error("buffer of length {len} cannot represent a {width}x{height} grid")]
    BufferSize {
        /// Claimed width in pixels.
        width: usize,
        /// Claimed height in pixels.
        height: usize,
        /// Actual buffer length.
        len: usize,
    },

    /// A grid value was NaN or infinite where a finite value is required.
    #[error("non-finite value {value} at index {index} in {context}")]
    NonFinite {
        /// Which input contained the value.
        context: &'static str,
        /// Flat index of the offending element.
        index: usize,
        /// The offending value.
        value: f64,
    },

    /// A pixel value fell outside the inclusive `[0, 1]` intensity range.
    #[error("pixel value {value} at index {index} outside [0, 1]")]
    PixelRange {
        /// Flat index of the offending pixel.
        index: usize,
        /// The offending value.
        value: f64,
    },

    /// A map that must be non-negative contained a negative value.
    #[error("negative value {value} at index {index}; map normalization requires non-negative input")]
    NegativeMapValue {
        /// Flat index of the offending element.
        index: usize,
        /// The offending value.
        value: f64,
    },

    /// A mask value was neither 0 nor 1.
    #[error("mask value {value} at index {index} is not binary")]
    NonBinaryMask {
        /// Flat index of the offending element.
        index: usize,
        /// The offending value.
        value: f64,
    },

    /// A bounding box was degenerate or exceeded its canvas.
    #[error("invalid bounding box [{x0}, {y0}, {x1}, {y1}]: {reason}")]
    InvalidBoundingBox {
        /// Left edge (inclusive).
        x0: usize,
        /// Top edge (inclusive).
        y0: usize,
        /// Right edge (exclusive).
        x1: usize,
        /// Bottom edge (exclusive).
        y1: usize,
        /// Why the box was rejected.
        reason: &'static str,
    },

    /// A diffusion timestep was outside the schedule it indexes into.
    #[error("timestep {t} outside schedule range {min}..={max}")]
    TimestepOutOfRange {
        /// The offending timestep.
        t: usize,
        /// Smallest admissible timestep.
        min: usize,
        /// Largest admissible timestep.
        max: usize,
    },

    /// An operation that needs at least one instruction received none.
    #[error("instruction set is empty")]
    EmptyInstructions,

    /// The same (operation, finding, location) triple appeared twice.
    #[error("duplicate instruction for finding `{finding}`")]
    DuplicateInstruction {
        /// Canonical token of the duplicated finding.
        finding: String,
    },

    /// Two states for the same (finding, location) key were recorded.
    #[error("duplicate finding state for `{finding}`")]
    DuplicateFindingState {
        /// Canonical token of the duplicated finding.
        finding: String,
    },

    /// A finding token contained characters outside `[a-z0-9_]` or was empty.
    #[error("invalid finding token `{token}`")]
    InvalidFinding {
        /// The rejected token.
        token: String,
    },

    /// An instruction string could not be parsed.
    #[error(transparent)]
    Parse(#[from] ParseError),

    /// Label/score collections disagreed in length.
    #[error("length mismatch: {left} labels vs {right} scores")]
    LengthMismatch {
        /// Length of the first collection.
        left: usize,
        /// Length of the second collection.
        right: usize,
    },

    /// A ranking metric needs both a positive and a negative example.
    #[error("scores contain only one class; need at least one positive and one negative")]
    SingleClass,

    /// A correlation was requested on a zero-variance input.
    #[error("zero variance in `{name}`; correlation undefined")]
    ZeroVariance {
        /// Which input had zero variance.
        name: &'static str,
    },

    /// Too few samples to estimate the requested statistic.
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples {
        /// Samples required.
        need: usize,
        /// Samples supplied.
        got: usize,
    },

    /// A metric input fell outside its documented range.
    #[error("{name} value {value} outside [0, 1]")]
    MetricOutOfRange {
        /// Which metric input was out of range.
        name: &'static str,
        /// The offending value.
        value: f64,
    },

    /// A covariance matrix was not symmetric within tolerance.
    #[error("covariance matrix is not symmetric (max asymmetry {max_asymmetry})")]
    AsymmetricCovariance {
        /// Largest absolute difference between mirrored entries.
        max_asymmetry: f64,
    },

    /// Two distributions did not share the same ordered class list.
    #[error("class lists do not match")]
    ClassMismatch,

    /// A probability fell outside the inclusive `[0, 1]` range.
    #[error("probability {value} for class `{class}` outside [0, 1]")]
    ProbabilityRange {
        /// Class whose probability was rejected.
        class: String,
        /// The offending value.
        value: f64,
    },
}
