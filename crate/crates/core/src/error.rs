//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spreading factor {0} outside 7..=12")]
    InvalidSpreadingFactor(u8),

    #[error("transmit power {0} dBm not one of {{2, 5, 8, 11, 14}}")]
    InvalidTxPower(i8),

    #[error("distance {distance_m} m below model reference distance {d0_m} m")]
    DistanceBelowReference { distance_m: f64, d0_m: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown device id {0}")]
    UnknownDevice(u32),

    #[error("unknown preset {0:?}; run `list-presets` for the available names")]
    UnknownPreset(String),

    #[error("cannot aggregate an empty sample")]
    EmptyAggregate,

    #[error("no injection anchors device {device} at t={anchor_s} s")]
    UnknownAnchor { device: u32, anchor_s: f64 },

    #[error("failed to parse scenario {path}: {source}")]
    ScenarioParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to write csv: {0}")]
    Csv(#[from] csv::Error),
}
