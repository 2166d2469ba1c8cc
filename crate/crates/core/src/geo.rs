//! Degree-space geometry.
//!
//! All distances here are Euclidean in raw latitude/longitude degrees. This
//! matches how the acquisition thresholds are expressed (5e-5, 1e-4, 2.5e-4
//! degrees) and is accurate enough at city scale. One degree of longitude
//! shrinks by `cos(lat)` away from the equator, so the thresholds are looser
//! east-west than north-south at high latitudes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A world coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }

    /// Builds a point, rejecting coordinates outside the valid ranges.
    pub fn try_new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Axis-aligned rectangle given by its bottom-left and top-right corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bottom_left: GeoPoint,
    pub top_right: GeoPoint,
}

impl Region {
    /// Builds a region, rejecting degenerate or inverted corners.
    pub fn new(bottom_left: GeoPoint, top_right: GeoPoint) -> Result<Self> {
        let r = Region {
            bottom_left,
            top_right,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn from_bounds(south: f64, west: f64, north: f64, east: f64) -> Result<Self> {
        Region::new(GeoPoint::new(south, west), GeoPoint::new(north, east))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bottom_left.is_valid() || !self.top_right.is_valid() {
            return Err(Error::InvalidRegion(format!(
                "corner out of range: {:?} / {:?}",
                self.bottom_left, self.top_right
            )));
        }
        if !(self.bottom_left.lat < self.top_right.lat && self.bottom_left.lon < self.top_right.lon)
        {
            return Err(Error::InvalidRegion(format!(
                "bottom-left ({}, {}) must be strictly below and left of top-right ({}, {})",
                self.bottom_left.lat, self.bottom_left.lon, self.top_right.lat, self.top_right.lon
            )));
        }
        Ok(())
    }

    pub fn south(&self) -> f64 {
        self.bottom_left.lat
    }
    pub fn west(&self) -> f64 {
        self.bottom_left.lon
    }
    pub fn north(&self) -> f64 {
        self.top_right.lat
    }
    pub fn east(&self) -> f64 {
        self.top_right.lon
    }

    /// Extent in longitude degrees.
    pub fn width(&self) -> f64 {
        self.top_right.lon - self.bottom_left.lon
    }

    /// Extent in latitude degrees.
    pub fn height(&self) -> f64 {
        self.top_right.lat - self.bottom_left.lat
    }

    /// Closed containment test.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.south() && p.lat <= self.north() && p.lon >= self.west() && p.lon <= self.east()
    }
}

/// A panorama position plus the camera heading in degrees, `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: GeoPoint,
    pub heading: f64,
}

impl CameraPose {
    pub fn new(position: GeoPoint, heading: f64) -> Self {
        CameraPose {
            position,
            heading: normalize_degrees(heading),
        }
    }
}

/// Maps any angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Compass bearing from `from` to `to`: 0 is north (increasing latitude), 90 is east.
pub fn bearing(from: &GeoPoint, to: &GeoPoint) -> Result<f64> {
    let dlat = to.lat - from.lat;
    let dlon = to.lon - from.lon;
    if dlat == 0.0 && dlon == 0.0 {
        return Err(Error::DegenerateBearing);
    }
    Ok(normalize_degrees(dlon.atan2(dlat).to_degrees()))
}

pub fn degree_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let dlat = a.lat - b.lat;
    let dlon = a.lon - b.lon;
    (dlat * dlat + dlon * dlon).sqrt()
}

/// Smallest absolute circular difference between two angles, in `[0, 180]`.
pub fn angular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Angular and radial limits of the labeling sector in front of a camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorSpec {
    /// Half of the labeling field of view; the boundary is inclusive.
    pub half_angle: f64,
    /// Exclusive lower distance bound, degrees.
    pub min_distance: f64,
    /// Exclusive upper distance bound, degrees.
    pub max_distance: f64,
}

impl Default for SectorSpec {
    fn default() -> Self {
        SectorSpec {
            half_angle: 35.0,
            min_distance: 5e-5,
            max_distance: 2.5e-4,
        }
    }
}

/// Slack on the inclusive angle bound so that a target constructed at
/// exactly `heading ± half_angle` survives the atan2 round trip.
const ANGLE_EPS: f64 = 1e-9;

impl SectorSpec {
    pub fn contains(&self, pose: &CameraPose, target: &GeoPoint) -> bool {
        let d = degree_distance(&pose.position, target);
        if !(d > self.min_distance && d < self.max_distance) {
            return false;
        }
        match bearing(&pose.position, target) {
            Ok(b) => angular_diff(b, pose.heading) <= self.half_angle + ANGLE_EPS,
            Err(_) => false,
        }
    }
}

/// Whether `target` falls in the default 70 degree labeling sector of `pose`.
pub fn in_annotation_sector(pose: &CameraPose, target: &GeoPoint) -> bool {
    SectorSpec::default().contains(pose, target)
}
