use slicematch::align::AlignError;
use slicematch::autodiff::AutodiffError;
use slicematch::eval::EvalError;
use slicematch::fmap::FmapError;
use slicematch::formats::FormatError;
use slicematch::mesh::MeshError;
use slicematch::ot::OtError;
use slicematch::refine::RefineError;
use slicematch::spectral::SpectralError;
use thiserror::Error;

/// Failure classes, one per nonzero exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Prefixes the message with `context`, keeping the class.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{context}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{context}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{context}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        let m = e.to_string();
        match e {
            SpectralError::NonConvergence { .. } | SpectralError::NotPositiveDefinite { .. } | SpectralError::NonFinite { .. } => {
                CliError::Numerical(m)
            }
            _ => CliError::Data(m),
        }
    }
}

impl From<FmapError> for CliError {
    fn from(e: FmapError) -> Self {
        let m = e.to_string();
        match e {
            FmapError::Singular { .. } | FmapError::NonFinite(_) => CliError::Numerical(m),
            FmapError::InvalidConfig(_) => CliError::Usage(m),
            FmapError::DimensionMismatch(_) => CliError::Data(m),
        }
    }
}

impl From<OtError> for CliError {
    fn from(e: OtError) -> Self {
        let m = e.to_string();
        match e {
            OtError::NonFiniteCost { .. } => CliError::Numerical(m),
            OtError::InvalidParameter(_) => CliError::Usage(m),
            _ => CliError::Data(m),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        let m = e.to_string();
        match e {
            AutodiffError::ShapeMismatch { .. } => CliError::Data(m),
            _ => CliError::Numerical(m),
        }
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::Ot(e) => e.into(),
            AlignError::Fmap(e) => e.into(),
            AlignError::Spectral(e) => e.into(),
            AlignError::Autodiff(e) => e.into(),
            AlignError::InvalidConfig(m) => CliError::Usage(format!("invalid loss configuration: {m}")),
            e @ AlignError::NonFinite(_) => CliError::Numerical(e.to_string()),
            e @ AlignError::DimensionMismatch(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Align(e) => e.into(),
            RefineError::Ot(e) => e.into(),
            e @ RefineError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}
