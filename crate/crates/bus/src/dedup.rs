use std::collections::HashSet;

use crate::event::{CorrelationId, ManagementEvent};

/// Consumer-side duplicate filter keyed on (event type, correlation id).
/// Turns at-least-once delivery into exactly-once processing.
#[derive(Debug, Default)]
pub struct Dedup {
    seen: HashSet<(String, CorrelationId)>,
}

impl Dedup {
    pub fn new() -> Self {
        Dedup::default()
    }

    /// True the first time an event is offered.
    pub fn first_time(&mut self, event: &ManagementEvent) -> bool {
        self.seen
            .insert((event.event_type.clone(), event.correlation_id))
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}
