use serde::{Deserialize, Serialize};

/// Mean Earth radius used for every great-circle distance in the testbed.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }

    /// Haversine distance in meters.
    pub fn distance_m(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }

    /// Initial bearing towards `other`, degrees clockwise from north in [0, 360).
    pub fn bearing_deg(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dl = (other.lon - self.lon).to_radians();
        let y = dl.sin() * p2.cos();
        let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
        (y.atan2(x).to_degrees() + 360.0) % 360.0
    }

    /// Point a fraction `f` of the way to `other`, linear in lat/lon.
    ///
    /// Good enough over city-block distances.
    pub fn lerp(&self, other: &GeoPoint, f: f64) -> GeoPoint {
        GeoPoint {
            lat: self.lat + (other.lat - self.lat) * f,
            lon: self.lon + (other.lon - self.lon) * f,
        }
    }

    /// Offset by meters north/east on a local tangent plane.
    pub fn offset_m(&self, north: f64, east: f64) -> GeoPoint {
        let dlat = north / EARTH_RADIUS_M;
        let dlon = east / (EARTH_RADIUS_M * self.lat.to_radians().cos());
        GeoPoint {
            lat: self.lat + dlat.to_degrees(),
            lon: self.lon + dlon.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCircle {
    pub center: GeoPoint,
    pub radius_m: f64,
}

impl GeoCircle {
    pub fn contains(&self, p: &GeoPoint) -> bool {
        self.center.distance_m(p) <= self.radius_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_degree_of_latitude() {
        let a = GeoPoint::new(43.0, -3.8);
        let b = GeoPoint::new(44.0, -3.8);
        let expected = EARTH_RADIUS_M * 1f64.to_radians();
        assert!((a.distance_m(&b) - expected).abs() < 1e-6);
    }

    #[test]
    fn offset_round_trips_distance() {
        let a = GeoPoint::new(43.4623, -3.80998);
        let b = a.offset_m(30.0, 40.0);
        assert!((a.distance_m(&b) - 50.0).abs() < 0.01);
        assert!((a.bearing_deg(&a.offset_m(0.0, 100.0)) - 90.0).abs() < 0.01);
    }
}
