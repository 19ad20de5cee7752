//! HTTP service for running annotation campaigns: annotators lease one
//! (instance, round) task at a time, submit corrective clicks, a zero-click
//! accept or a skip, and an operator advances rounds by batch refinement.
//!
//! [`CampaignService`] holds all the logic and is usable without HTTP;
//! [`api`] maps it onto `/api/v1` routes.

pub mod api;
pub mod config;
pub mod fuzz;
pub mod remote;
pub mod service;

pub use api::{router, serve, spawn, AppState, Clock, ManualClock, SystemClock};
pub use config::{create_campaign, open_campaign, CampaignConfig, CampaignFiles, ServerConfig, SetupError};
pub use remote::RemoteRefiner;
pub use service::{
    AnswerBody, AnswerResponse, CampaignService, RefinerSetup, ServiceError, ServiceSettings, StateSnapshot, TaskLease,
};
