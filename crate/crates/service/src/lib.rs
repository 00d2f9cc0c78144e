//! Ingestion, HTTP API and analysis CLI around `mirror-core`.

pub mod analysis;
pub mod api;
pub mod audit;
pub mod auth;
pub mod config;
pub mod ingest;
