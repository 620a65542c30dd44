//! Application support interface: the service-side observation store.
//!
//! Ingest is gated on the set of sources registered for service data. Reads
//! are history queries with optional windowed aggregates, push
//! subscriptions, and inverse-distance heatmaps.

mod error;
mod export;
mod filter;
mod heatmap;
mod store;

pub use error::AsiError;
pub use export::write_csv;
pub use filter::{Aggregate, Filter, HistoryQuery};
pub use heatmap::{idw, Grid, Heatmap, IDW_CUTOFF_M, IDW_POWER, STALENESS};
pub use store::{ObservationStore, Rejection, Series, WindowValue};
