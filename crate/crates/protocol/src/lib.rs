//! Commit/prove/verify protocol: model bundles, an append-only commitment
//! registry, a length-prefixed wire format, a proving server, a verifying
//! client, and the benchmark harness.

pub mod bench;
pub mod bundle;
pub mod client;
pub mod memory;
pub mod registry;
pub mod server;
pub mod wire;

use zkml_core::argument::ArgumentError;
use zkml_core::circuit::CircuitError;
use zkml_core::field::FieldError;
use zkml_core::graph::GraphError;
use zkml_core::zoo::ZooError;

pub use bundle::{Arch, ModelBundle, Prepared};
pub use client::{client_query, Client, ClientError, PublishedModel, QueryOutcome};
pub use registry::{CommitmentRecord, Published, Registry};
pub use server::{Server, ServerHandle};
pub use wire::{InferenceRequest, InferenceResponse, Input, Message};

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Argument(#[from] ArgumentError),
    #[error("registry: {0}")]
    Registry(String),
    #[error("model {0} is already published with a different commitment")]
    Immutable(String),
    #[error("model {0} is not published")]
    NotPublished(String),
    #[error("wire: {0}")]
    Wire(String),
    #[error("suite: {0}")]
    Suite(String),
}
