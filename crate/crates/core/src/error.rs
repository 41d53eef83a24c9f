use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is {distance_mm:.3e} mm off the sphere")]
    OffSphere { distance_mm: f64 },

    /// The instrument line misses the eye sphere.
    #[error("instrument line does not intersect the eye sphere")]
    NoIntersection,

    #[error("fundus boundary not found: {0}")]
    BoundaryNotFound(String),

    #[error("target outside the imaged field (arcsin argument {ratio:.4})")]
    OutOfField { ratio: f64 },

    #[error("visual axis does not meet the eye: {0}")]
    NoSolution(String),

    #[error("target unreachable by eye tilt: {0}")]
    Unreachable(String),

    #[error("approach vector has no component in the YZ plane")]
    DegenerateApproach,

    #[error("joint target out of range: {0}")]
    OutOfJointRange(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("scene invalid: {0}")]
    SceneInvalid(String),

    #[error("image unreadable: {0}")]
    ImageUnreadable(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("version conflict on {id}: expected {expected}, found {found}")]
    VersionConflict { id: String, expected: u64, found: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used by the HTTP API and CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::OffSphere { .. } => "off_sphere",
            Error::NoIntersection => "no_intersection",
            Error::BoundaryNotFound(_) => "boundary_not_found",
            Error::OutOfField { .. } => "out_of_field",
            Error::NoSolution(_) => "no_solution",
            Error::Unreachable(_) => "unreachable",
            Error::DegenerateApproach => "degenerate_approach",
            Error::OutOfJointRange(_) => "out_of_joint_range",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::SceneInvalid(_) => "scene_invalid",
            Error::ImageUnreadable(_) => "image_unreadable",
            Error::NotFound(_) => "not_found",
            Error::VersionConflict { .. } => "version_conflict",
            Error::Io(_) => "io_error",
            Error::Json(_) => "invalid_json",
        }
    }
}
