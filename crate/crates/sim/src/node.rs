use std::time::Duration;

use citytb_core::{Capability, ConnectionKind, GeoPoint, Motion, NodeRole, SimTime, Urn};

/// Which radios a device carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Radios {
    pub experimentation: bool,
    pub management: bool,
    pub gprs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mobility {
    Fixed(GeoPoint),
    /// Closed waypoint loop driven at constant speed.
    Route {
        waypoints: Vec<GeoPoint>,
        speed_mps: f64,
    },
}

impl Mobility {
    /// Position and motion at `t`. Fixed nodes report no motion.
    pub fn at(&self, t: SimTime) -> (GeoPoint, Option<Motion>) {
        match self {
            Mobility::Fixed(p) => (*p, None),
            Mobility::Route {
                waypoints,
                speed_mps,
            } => {
                if waypoints.len() == 1 {
                    return (
                        waypoints[0],
                        Some(Motion {
                            speed_mps: 0.0,
                            course_deg: 0.0,
                        }),
                    );
                }
                let legs: Vec<(GeoPoint, GeoPoint, f64)> = waypoints
                    .iter()
                    .zip(waypoints.iter().cycle().skip(1))
                    .map(|(a, b)| (*a, *b, a.distance_m(b)))
                    .collect();
                let total: f64 = legs.iter().map(|l| l.2).sum();
                if total <= 0.0 {
                    return (waypoints[0], None);
                }
                let mut along = (speed_mps * t.as_millis() as f64 / 1000.0) % total;
                for (a, b, len) in &legs {
                    if along <= *len && *len > 0.0 {
                        let pos = a.lerp(b, along / len);
                        return (
                            pos,
                            Some(Motion {
                                speed_mps: *speed_mps,
                                course_deg: a.bearing_deg(b),
                            }),
                        );
                    }
                    along -= len;
                }
                let (a, b, _) = legs[legs.len() - 1];
                (
                    b,
                    Some(Motion {
                        speed_mps: *speed_mps,
                        course_deg: a.bearing_deg(&b),
                    }),
                )
            }
        }
    }

    pub fn is_mobile(&self) -> bool {
        matches!(self, Mobility::Route { .. })
    }
}

/// Image currently running on a node. `version` counts flashes on this node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstalledImage {
    pub image_id: String,
    pub behavior: String,
    pub version: u32,
}

impl InstalledImage {
    pub fn factory(behavior: &str) -> Self {
        InstalledImage {
            image_id: "factory".into(),
            behavior: behavior.into(),
            version: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimNode {
    pub urn: Urn,
    pub role: NodeRole,
    pub class: String,
    pub mobility: Mobility,
    pub radios: Radios,
    /// Gateway heading this node's cluster; `None` for mobile nodes.
    pub cluster: Option<Urn>,
    pub sensors: Vec<Capability>,
    pub feeds_services: bool,
    pub emission_period: Duration,
    pub battery: f64,
    pub free_memory: u64,
    pub cpu_load: f64,
    pub mac: String,
    pub installed: InstalledImage,
    pub alive: bool,
    pub(crate) next_emission: SimTime,
    pub(crate) boot_count: u32,
    pub(crate) behavior_state: u64,
}

impl SimNode {
    pub fn connection_kind(&self) -> ConnectionKind {
        if self.cluster.is_some() {
            ConnectionKind::Mesh
        } else {
            ConnectionKind::Gprs
        }
    }

    pub fn fixed_position(&self) -> Option<GeoPoint> {
        match &self.mobility {
            Mobility::Fixed(p) => Some(*p),
            Mobility::Route { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimGateway {
    pub urn: Urn,
    pub position: GeoPoint,
    pub uplink: ConnectionKind,
    pub alive: bool,
    pub mac: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_position_advances_with_speed() {
        let a = GeoPoint::new(43.46, -3.80);
        let b = a.offset_m(0.0, 1000.0);
        let m = Mobility::Route {
            waypoints: vec![a, b],
            speed_mps: 10.0,
        };
        let (p, motion) = m.at(SimTime::from_secs(50));
        assert!((a.distance_m(&p) - 500.0).abs() < 1.0);
        let motion = motion.unwrap();
        assert_eq!(motion.speed_mps, 10.0);
        assert!((motion.course_deg - 90.0).abs() < 0.1);
        // 150 s: 500 m back along the return leg.
        let (p, motion) = m.at(SimTime::from_secs(150));
        assert!((a.distance_m(&p) - 500.0).abs() < 1.0);
        assert!((motion.unwrap().course_deg - 270.0).abs() < 0.1);
    }
}
