use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("zero-dimension image ({width}x{height})")]
    ZeroDimension { width: u32, height: u32 },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("expected a single-channel image, found {0} channels")]
    NotGrayscale(u8),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed annotation JSON: {0}")]
    MalformedAnnotation(String),

    #[error("negative box extent in region {index}: w={w}, h={h}")]
    NegativeExtent { index: usize, w: i64, h: i64 },

    #[error("empty region")]
    EmptyRegion,

    #[error("image too small: need at least {min_width}x{min_height}, got {width}x{height}")]
    ImageTooSmall {
        min_width: u32,
        min_height: u32,
        width: u32,
        height: u32,
    },

    #[error("image {width}x{height} exceeds the {cap}x{cap} cap of the exact solver")]
    ImageTooLarge { width: u32, height: u32, cap: u32 },

    #[error("keypoint ({x}, {y}) is closer than {margin} px to the border")]
    KeypointAtBorder { x: u32, y: u32, margin: u32 },

    #[error("need at least {needed} positive-weight features, found {found}")]
    InsufficientFeatures { needed: usize, found: usize },

    #[error("document has no features")]
    EmptyFeatures,

    #[error("missing grouping metadata `{key}` for document `{document}`")]
    MissingGroupKey { key: String, document: String },

    #[error("degenerate document-term matrix: {0}")]
    DegenerateMatrix(String),

    #[error("fit did not converge; bootstrap requires a converged fit")]
    UnconvergedFit,

    #[error("covariate schema violation: {0}")]
    CovariateSchema(String),

    #[error("rank-deficient design: {}", format_aliased(.aliased))]
    RankDeficient { aliased: Vec<AliasedColumn> },

    #[error("clustered standard errors need at least two clusters, found {0}")]
    SingleCluster(usize),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("empty table")]
    EmptyTable,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// A design-matrix column that is a linear combination of earlier columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasedColumn {
    pub column: String,
    pub collinear_with: Vec<String>,
}

fn format_aliased(cols: &[AliasedColumn]) -> String {
    cols.iter()
        .map(|c| {
            if c.collinear_with.is_empty() {
                format!("`{}` is constant zero", c.column)
            } else {
                format!(
                    "`{}` is collinear with {}",
                    c.column,
                    c.collinear_with
                        .iter()
                        .map(|n| format!("`{n}`"))
                        .collect::<Vec<_>>()
                        .join(", ")
                )
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
