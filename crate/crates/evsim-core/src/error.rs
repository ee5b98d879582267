//! Error type shared across the core modules.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong inside the simulation core.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    // road network
    UnknownNode(u32),
    NoPath { from: u32, to: u32 },
    EmptyPath,
    InvalidGraph(String),
    // scenario
    ZeroLengthPath,
    InvalidConfig(String),
    SamplingExhausted,
    // clustering
    TooFewPoints { k: usize, points: usize },
    TooFewValues { classes: usize, values: usize },
    // rl
    DimensionMismatch { expected: usize, got: usize },
    NoLegalAction,
    BufferTooSmall { requested: usize, available: usize },
    NonFiniteLoss,
    ArchitectureMismatch,
    // environment
    NoActiveTrip(u32),
    IllegalAction(String),
    InternalInconsistency(String),
    NonFiniteReward,
    // orchestration
    PortOverflow { charger: u32 },
    // analysis
    ZeroVariance,
    KeyMismatch,
    InsufficientOverlap,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use CoreError::*;
        match self {
            UnknownNode(id) => write!(f, "unknown node {id}"),
            NoPath { from, to } => write!(f, "no path from node {from} to node {to}"),
            EmptyPath => write!(f, "path has no nodes"),
            InvalidGraph(msg) => write!(f, "invalid graph: {msg}"),
            ZeroLengthPath => write!(f, "path has zero length"),
            InvalidConfig(field) => write!(f, "invalid config: {field}"),
            SamplingExhausted => write!(f, "rejection sampling exceeded retry cap"),
            TooFewPoints { k, points } => {
                write!(f, "k-means needs at least {k} points, got {points}")
            }
            TooFewValues { classes, values } => {
                write!(f, "natural breaks needs at least {classes} values, got {values}")
            }
            DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            NoLegalAction => write!(f, "no legal action available"),
            BufferTooSmall { requested, available } => {
                write!(f, "minibatch of {requested} requested, buffer holds {available}")
            }
            NonFiniteLoss => write!(f, "non-finite loss, update aborted"),
            ArchitectureMismatch => write!(f, "network architectures differ"),
            NoActiveTrip(agent) => write!(f, "agent {agent} has no active trip"),
            IllegalAction(msg) => write!(f, "illegal action: {msg}"),
            InternalInconsistency(msg) => write!(f, "internal inconsistency: {msg}"),
            NonFiniteReward => write!(f, "non-finite reward"),
            PortOverflow { charger } => {
                write!(f, "concurrent sessions exceed ports at charger {charger}")
            }
            ZeroVariance => write!(f, "series has zero variance"),
            KeyMismatch => write!(f, "usage maps cover different key sets"),
            InsufficientOverlap => write!(f, "series overlap too short after lag alignment"),
        }
    }
}

impl core::error::Error for CoreError {}
