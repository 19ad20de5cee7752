use std::fmt;

use clickseg::analytics::AnalyticsError;
use clickseg::campaign::CampaignError;
use clickseg::ranker::RankError;
use clickseg_server::{ServiceError, SetupError};

/// Exit code 1 for bad input, 2 for everything that went wrong while running.
#[derive(Debug)]
pub enum CliError {
    Validation(Vec<String>),
    Runtime(String),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(problems) if problems.len() == 1 => write!(f, "invalid input: {}", problems[0]),
            CliError::Validation(problems) => {
                write!(f, "invalid input ({} problems):", problems.len())?;
                for p in problems {
                    write!(f, "\n  - {p}")?;
                }
                Ok(())
            }
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl From<CampaignError> for CliError {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Invalid(_) | CampaignError::Manifest(_) | CampaignError::MissingGroundTruth(_) => {
                CliError::invalid(e.to_string())
            }
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<SetupError> for CliError {
    fn from(e: SetupError) -> Self {
        match e {
            SetupError::Invalid(m) => CliError::invalid(m),
            SetupError::Campaign(e) => e.into(),
            SetupError::Service(e) => e.into(),
            SetupError::Io(e) => e.into(),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Invalid(_) | ServiceError::BadRequest(_) => CliError::invalid(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<RankError> for CliError {
    fn from(e: RankError) -> Self {
        match e {
            RankError::Empty
            | RankError::InvalidTarget(_)
            | RankError::TooFewSamples { .. }
            | RankError::InvalidParams(_)
            | RankError::Format { .. } => CliError::invalid(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}
