use serde::{Deserialize, Serialize};

use crate::description::{Position, ResourceDescription};
use crate::error::ValidationError;
use crate::geo::GeoPoint;
use crate::time::SimTime;
use crate::urn::Urn;

/// Speed and course reported by vehicle-mounted nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub speed_mps: f64,
    pub course_deg: f64,
}

/// One sensor reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub source: Urn,
    pub phenomenon: String,
    pub value: f64,
    pub unit: String,
    pub position: GeoPoint,
    pub timestamp: SimTime,
    pub motion: Option<Motion>,
}

impl Observation {
    /// Checks the observation against the description of its source.
    pub fn validate_against(&self, desc: &ResourceDescription) -> Result<(), ValidationError> {
        if !desc.has_phenomenon(&self.phenomenon) {
            return Err(ValidationError::UnknownPhenomenon {
                source_urn: self.source.to_string(),
                phenomenon: self.phenomenon.clone(),
            });
        }
        if desc.position == Position::Mobile && self.motion.is_none() {
            return Err(ValidationError::MissingMotion(self.source.to_string()));
        }
        Ok(())
    }
}
