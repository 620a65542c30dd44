//! Resource directory: the publication interface (register, update, delete)
//! and the lookup interface (queries and standing subscriptions) over
//! resource descriptions.

pub mod doc;
mod error;
mod query;
mod store;

pub use doc::{DocError, Update};
pub use error::RdError;
pub use query::{Predicate, Query, StateFilter};
pub use store::{resource_uri, Change, Notification, Registered, ResourceDirectory};
