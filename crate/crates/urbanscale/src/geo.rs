//! WGS84 coordinates, lat/lon bounding boxes and great-circle geometry.

use serde::Serialize;
use thiserror::Error;

/// Mean Earth radius in kilometers (IUGG R1).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Kilometers per degree of latitude on the mean-radius sphere.
pub const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, +90]")]
    LatitudeOutOfRange(f64),
    #[error("coordinate is not finite")]
    NotFinite,
    #[error("bounding box has min_lat {min_lat} > max_lat {max_lat}")]
    LatOrder { min_lat: f64, max_lat: f64 },
}

/// A point on the sphere. Latitude stays in [-90, +90]; longitude is
/// normalized into [-180, +180), so +180 maps to -180.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

fn normalize_lon(lon: f64) -> f64 {
    // already in range: keep the value bit-exact
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 just below -180
    if w >= 180.0 {
        -180.0
    } else {
        w
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NotFinite);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Cartesian unit vector with poles on the z axis and lon 0 on the x axis.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let lat = self.lat.to_radians();
        let lon = self.lon.to_radians();
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let lat = v[2].clamp(-1.0, 1.0).asin().to_degrees();
        let lon = if v[0] == 0.0 && v[1] == 0.0 {
            0.0
        } else {
            v[1].atan2(v[0]).to_degrees()
        };
        GeoPoint {
            lat: lat.clamp(-90.0, 90.0),
            lon: normalize_lon(lon),
        }
    }
}

/// Great-circle distance in kilometers (haversine form).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * s.sqrt().clamp(-1.0, 1.0).asin() * EARTH_RADIUS_KM
}

/// Normalized mean of the points' unit vectors. Falls back to the first
/// point if the vectors cancel out.
pub fn spherical_centroid<'a, I>(points: I) -> Option<GeoPoint>
where
    I: IntoIterator<Item = &'a GeoPoint>,
{
    let mut sum = [0.0f64; 3];
    let mut first = None;
    for p in points {
        if first.is_none() {
            first = Some(*p);
        }
        let v = p.to_unit_vector();
        sum[0] += v[0];
        sum[1] += v[1];
        sum[2] += v[2];
    }
    let first = first?;
    let norm = dot(sum, sum).sqrt();
    if norm < 1e-12 {
        return Some(first);
    }
    Some(GeoPoint::from_unit_vector([
        sum[0] / norm,
        sum[1] / norm,
        sum[2] / norm,
    ]))
}

/// A latitude/longitude rectangle. Longitude extent is stored as a west
/// edge plus an eastward span so boxes may cross the antimeridian; a span
/// of 360 covers every longitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    min_lat: f64,
    max_lat: f64,
    west: f64,
    span: f64,
}

impl BoundingBox {
    /// Builds from raw corner coordinates. `max_lon - min_lon >= 360`
    /// means the full longitude circle; `min_lon > max_lon` wraps east
    /// across the antimeridian.
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, GeoError> {
        for v in [min_lat, min_lon, max_lat, max_lon] {
            if !v.is_finite() {
                return Err(GeoError::NotFinite);
            }
        }
        if !(-90.0..=90.0).contains(&min_lat) {
            return Err(GeoError::LatitudeOutOfRange(min_lat));
        }
        if !(-90.0..=90.0).contains(&max_lat) {
            return Err(GeoError::LatitudeOutOfRange(max_lat));
        }
        if min_lat > max_lat {
            return Err(GeoError::LatOrder { min_lat, max_lat });
        }
        let raw = max_lon - min_lon;
        let span = if raw >= 360.0 {
            360.0
        } else if raw == 0.0 {
            0.0
        } else {
            raw.rem_euclid(360.0)
        };
        Ok(BoundingBox {
            min_lat,
            max_lat,
            west: normalize_lon(min_lon),
            span,
        })
    }

    pub fn min_lat(&self) -> f64 {
        self.min_lat
    }

    pub fn max_lat(&self) -> f64 {
        self.max_lat
    }

    /// West edge, normalized to [-180, 180).
    pub fn west(&self) -> f64 {
        self.west
    }

    /// East edge, normalized to [-180, 180).
    pub fn east(&self) -> f64 {
        normalize_lon(self.west + self.span)
    }

    /// Eastward longitude extent in degrees, in [0, 360].
    pub fn lon_span(&self) -> f64 {
        self.span
    }

    pub fn is_point(&self) -> bool {
        self.min_lat == self.max_lat && self.span == 0.0
    }

    fn lon_inside(&self, lon: f64, tol: f64) -> bool {
        if self.span >= 360.0 {
            return true;
        }
        let d = (lon - self.west).rem_euclid(360.0);
        d <= self.span + tol || d >= 360.0 - tol
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.contains_with_tolerance(p, 0.0)
    }

    /// Containment with a symmetric tolerance in degrees. The poles count
    /// as inside whenever the latitude band reaches them, regardless of
    /// the stored longitude.
    pub fn contains_with_tolerance(&self, p: GeoPoint, tol: f64) -> bool {
        if p.lat() < self.min_lat - tol || p.lat() > self.max_lat + tol {
            return false;
        }
        if p.lat().abs() >= 90.0 {
            return true;
        }
        self.lon_inside(p.lon(), tol)
    }

    /// Area of the box region on the unit sphere, in steradians.
    pub fn solid_area(&self) -> f64 {
        let band = self.max_lat.to_radians().sin() - self.min_lat.to_radians().sin();
        band * self.span.to_radians()
    }

    /// The four corner points (degenerate edges repeat corners).
    pub fn corners(&self) -> [GeoPoint; 4] {
        let e = self.east();
        [
            GeoPoint {
                lat: self.min_lat,
                lon: self.west,
            },
            GeoPoint {
                lat: self.max_lat,
                lon: self.west,
            },
            GeoPoint {
                lat: self.min_lat,
                lon: e,
            },
            GeoPoint {
                lat: self.max_lat,
                lon: e,
            },
        ]
    }
}

/// Smallest lat/lon box guaranteed to contain the great-circle disk of
/// `radius_km` around `p`. Near the poles the box widens to the full
/// longitude circle.
pub fn padded_bbox(p: GeoPoint, radius_km: f64) -> BoundingBox {
    let lat_pad = radius_km / KM_PER_DEG;
    let min_lat = (p.lat() - lat_pad).max(-90.0);
    let max_lat = (p.lat() + lat_pad).min(90.0);
    let ext = (p.lat().abs() + lat_pad).min(90.0).to_radians();
    let cos_ext = ext.cos();
    let half = (radius_km / (2.0 * EARTH_RADIUS_KM)).sin();
    let full = max_lat >= 90.0 || min_lat <= -90.0 || cos_ext <= half || cos_ext < 1e-9;
    if full {
        BoundingBox {
            min_lat,
            max_lat,
            west: -180.0,
            span: 360.0,
        }
    } else {
        let lon_pad = (2.0 * (half / cos_ext).min(1.0).asin()).to_degrees() + 1e-9;
        if lon_pad >= 180.0 {
            BoundingBox {
                min_lat,
                max_lat,
                west: -180.0,
                span: 360.0,
            }
        } else {
            BoundingBox {
                min_lat,
                max_lat,
                west: normalize_lon(p.lon() - lon_pad),
                span: 2.0 * lon_pad,
            }
        }
    }
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
