//! Dataset preparation: metadata merge, reverse geocoding, name
//! standardization, directory layout, augmentation and fold splits.

pub mod augment;
pub mod folds;
pub mod geocode;
pub mod metadata;
pub mod names;
pub mod restructure;

use std::path::{Path, PathBuf};

pub use augment::{
    augment, augment_encoded, doubling_plan, sample_params, AugmentParams, AugmentationSpec, PlannedItem, Range,
};
pub use folds::{make_folds, FoldAssignment};
pub use geocode::{resolve_country, CountryBoundaries};
pub use metadata::{geocode_records, merge_metadata, ImageMeta, ImageSourceKind};
pub use names::{sanitize_dirname, standardize_name};
pub use restructure::{restructure, ManifestRow, RestructureOptions, RestructureReport};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{file}: {message}")]
    Csv { file: PathBuf, message: String },
    #[error("{file}: missing column {column}")]
    MissingColumn { file: PathBuf, column: String },
    #[error("{file} line {line}: {message}")]
    Record { file: PathBuf, line: u64, message: String },
    #[error("duplicate image_id {0}")]
    DuplicateImage(String),
    #[error("image {image_id}: hotel {hotel_id} has no coordinates in any input")]
    MissingJoin { image_id: String, hotel_id: String },
    #[error("image {image_id}: coordinates ({lat}, {lon}) out of range")]
    CoordinateRange { image_id: String, lat: f64, lon: f64 },
    #[error("unknown country name {0:?}")]
    UnknownCountryName(String),
    #[error("directory name {0:?} is empty after sanitizing")]
    EmptyDirname(String),
    #[error("boundaries: {0}")]
    Boundaries(String),
    #[error("augmentation: {0}")]
    Augment(String),
    #[error("image {image_id}: crop stayed empty after {attempts} draws")]
    DegenerateCrop { image_id: String, attempts: usize },
    #[error("folds: {0}")]
    Folds(String),
    #[error("write: {0}")]
    Write(String),
}

impl IngestError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        IngestError::Csv {
            file: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}
