//! Command-line verbs and the HTTP session API over `ivos-core`.

pub mod api;
pub mod commands;
pub mod render;

pub use api::{router, AppState};
