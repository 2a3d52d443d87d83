use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty supercluster: k-means needs at least one point")]
    EmptySupercluster,

    #[error("need at least 2 points to estimate a point radius, got {0}")]
    TooFewPoints(usize),

    #[error("dataset failed validation: {}", .0.join("; "))]
    InvalidDataset(Vec<String>),

    #[error("scene layout impossible: {0}")]
    ImpossibleLayout(String),

    #[error("unknown merge variant `{0}`")]
    UnknownVariant(String),

    #[error("PLY header malformed: {0}")]
    PlyHeader(String),

    #[error("PLY is missing required property `{0}`")]
    PlyMissingProperty(String),

    #[error("PLY payload truncated: {0}")]
    PlyTruncated(String),

    #[error("camera file: missing field `{0}`")]
    CameraMissingField(String),

    #[error("camera file: view {view}: world_to_camera must hold 12 numbers, got {len}")]
    CameraPoseLength { view: usize, len: usize },

    #[error("camera file: view {view}: rotation is not orthonormal with det +1")]
    CameraNotOrthonormal { view: usize },

    #[error("camera file: view {view}: {reason}")]
    CameraInvalid { view: usize, reason: String },

    #[error("mask directory: missing {0}")]
    MaskMissing(PathBuf),

    #[error("mask {path}: expected 16-bit single-channel PNG, got {found}")]
    MaskBitDepth { path: PathBuf, found: String },

    #[error("mask {path}: size {found:?} does not match camera size {expected:?}")]
    MaskSize {
        path: PathBuf,
        found: (u32, u32),
        expected: (u32, u32),
    },

    #[error("mask {path}: instance id {id} does not fit in 16 bits")]
    MaskIdOverflow { path: PathBuf, id: u32 },

    #[error("PNG decoding: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("PNG encoding: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
