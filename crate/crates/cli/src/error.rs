use licp::bench::BenchError;
use licp::codec::CodecError;
use licp::metrics::MetricsError;
use licp::nas::NasError;
use licp::quant::QuantError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("no configuration satisfies the constraints ({0} candidates checked)")]
    Infeasible(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Nas(#[from] NasError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    /// Stable token printed before the message.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
            CliError::Infeasible(_) => "infeasible",
            CliError::Codec(CodecError::ModelMismatch { .. }) => "model-mismatch",
            CliError::Codec(CodecError::Io(_)) => "io",
            CliError::Codec(_) => "codec",
            CliError::Nas(_) => "search",
            CliError::Quant(_) => "quant",
            CliError::Bench(_) => "bench",
            CliError::Metrics(_) => "metrics",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 3,
            _ => 1,
        }
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}
