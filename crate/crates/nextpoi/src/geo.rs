//! Great-circle distances between check-in locations.
//!
//! Distances are computed on a sphere with the mean Earth radius. The harness
//! always computes candidate distances itself; they are handed to the model as
//! text, never delegated to it.

use thiserror::Error;

/// Mean Earth radius in kilometers (IUGG mean radius).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("coordinates out of range: lat {lat}, lon {lon}")]
pub struct InvalidCoordinate {
    pub lat: f64,
    pub lon: f64,
}

/// A latitude/longitude pair in decimal degrees, validated at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, InvalidCoordinate> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(InvalidCoordinate { lat, lon });
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// A non-negative great-circle distance in kilometers.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DistanceKm(f64);

impl DistanceKm {
    pub fn km(self) -> f64 {
        self.0
    }
}

/// Haversine distance between two points on the mean-radius sphere.
///
/// Arguments are canonicalized internally so `haversine_distance(a, b)` and
/// `haversine_distance(b, a)` evaluate in the same floating-point order and
/// return bit-identical results.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> DistanceKm {
    let (p, q) = if (b.lat, b.lon) < (a.lat, a.lon) { (b, a) } else { (a, b) };
    let lat1 = p.lat.to_radians();
    let lat2 = q.lat.to_radians();
    let half_dlat = (q.lat - p.lat).to_radians() / 2.0;
    let half_dlon = (q.lon - p.lon).to_radians() / 2.0;
    let h = half_dlat.sin().powi(2) + lat1.cos() * lat2.cos() * half_dlon.sin().powi(2);
    // h can creep above 1.0 from rounding for near-antipodal points.
    DistanceKm(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

/// Distance from `origin` to each point, in input order.
pub fn distances_to_candidates(origin: GeoPoint, points: &[GeoPoint]) -> Vec<DistanceKm> {
    points.iter().map(|p| haversine_distance(origin, *p)).collect()
}
