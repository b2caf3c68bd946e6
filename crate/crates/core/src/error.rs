use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no categories found under {0}")]
    NoCategories(PathBuf),

    #[error("category `{0}` has no readable images")]
    EmptyCategory(String),

    #[error("no readable background images under {0}")]
    NoBackgrounds(PathBuf),

    #[error("empty mask: no pixel reaches the alpha threshold ({0})")]
    EmptyMask(String),

    #[error("degenerate shape parameters: {0}")]
    DegenerateShape(String),

    #[error("degenerate placement: sprite `{0}` does not land on the canvas")]
    DegeneratePlacement(String),

    #[error("unknown sprite id `{0}`")]
    UnknownSprite(String),

    #[error("unknown background id `{0}`")]
    UnknownBackground(String),

    #[error("empty sprite library or background list")]
    EmptyInputs,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("retry budget exhausted on {skipped} of {count} scenes; the configuration is probably too crowded")]
    RetryExhausted { skipped: usize, count: usize },

    #[error("cycle detected in occlusion graph")]
    Cycle,

    #[error("cannot take {requested} points from an annotation with {available}")]
    NotEnoughPoints { requested: usize, available: usize },

    #[error("corrupt RLE{}: counts sum to {sum}, expected {expected}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    CorruptRle {
        sum: u64,
        expected: u64,
        context: Option<String>,
    },

    #[error("schema version mismatch: found `{found}`, expected `{expected}`")]
    SchemaVersion { found: String, expected: String },

    #[error("dataset validation failed for annotation ids {ids:?}: {details}")]
    Validation { ids: Vec<u64>, details: String },

    #[error("{} file(s) missing or changed since the manifest was written: {}", .0.len(), .0.join(", "))]
    ManifestMismatch(Vec<String>),

    #[error("failed writing scene {scene_id}: {source}")]
    SceneWrite {
        scene_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("mask size mismatch: {0:?} vs {1:?}")]
    MaskSize((usize, usize), (usize, usize)),

    #[error("detection for image {image_id} is missing a layer field")]
    MissingLayer { image_id: u64 },

    #[error("detection references unknown image id {0}")]
    UnknownImage(u64),

    #[error("nothing to evaluate: ground truth is empty")]
    NothingToEvaluate,

    #[error("invalid detection: {0}")]
    InvalidDetection(String),

    #[error("unknown image id {id}; valid ids are {valid}")]
    UnknownImageId { id: u64, valid: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
