//! Encoded polyline format at 1e-5 degree precision.
//!
//! Each coordinate is scaled by 1e5, rounded half away from zero and
//! delta-encoded against the previous point. The signed delta is shifted left
//! one bit (inverted when negative), split into little-endian 5-bit chunks,
//! each chunk but the last flagged with 0x20, and offset by 63 into printable
//! ASCII. Latitude precedes longitude.

use std::fmt;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

const SCALE: f64 = 1e5;

/// Polyline text. Every character is in `'?'..='~'` (63..=126).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EncodedPolyline(String);

impl EncodedPolyline {
    /// Wraps text, checking the character range. Structure is checked by [`decode`].
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if let Some(position) = text.bytes().position(|b| !(63..=126).contains(&b)) {
            return Err(Error::MalformedPolyline {
                position,
                reason: "character outside the 63..=126 range",
            });
        }
        Ok(EncodedPolyline(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for EncodedPolyline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn scaled(deg: f64) -> i64 {
    (deg * SCALE).round() as i64
}

fn push_value(out: &mut String, value: i64) {
    let mut v = if value < 0 { !(value << 1) } else { value << 1 } as u64;
    while v >= 0x20 {
        out.push((((v & 0x1f) | 0x20) as u8 + 63) as char);
        v >>= 5;
    }
    out.push((v as u8 + 63) as char);
}

pub fn encode(points: &[GeoPoint]) -> EncodedPolyline {
    let mut out = String::with_capacity(points.len() * 8);
    let (mut prev_lat, mut prev_lon) = (0i64, 0i64);
    for p in points {
        let (lat, lon) = (scaled(p.lat), scaled(p.lon));
        push_value(&mut out, lat - prev_lat);
        push_value(&mut out, lon - prev_lon);
        prev_lat = lat;
        prev_lon = lon;
    }
    EncodedPolyline(out)
}

fn read_value(bytes: &[u8], pos: &mut usize) -> Result<i64> {
    let mut result: u64 = 0;
    let mut shift = 0u32;
    loop {
        let Some(&b) = bytes.get(*pos) else {
            return Err(Error::MalformedPolyline {
                position: *pos,
                reason: "truncated chunk sequence",
            });
        };
        if !(63..=126).contains(&b) {
            return Err(Error::MalformedPolyline {
                position: *pos,
                reason: "character outside the 63..=126 range",
            });
        }
        let chunk = (b - 63) as u64;
        *pos += 1;
        if shift > 30 {
            return Err(Error::MalformedPolyline {
                position: *pos - 1,
                reason: "value too long",
            });
        }
        result |= (chunk & 0x1f) << shift;
        shift += 5;
        if chunk & 0x20 == 0 {
            break;
        }
    }
    let v = (result >> 1) as i64;
    Ok(if result & 1 == 1 { !v } else { v })
}

/// Decodes polyline text, rejecting truncated or out-of-range input.
pub fn decode(polyline: &EncodedPolyline) -> Result<Vec<GeoPoint>> {
    decode_str(polyline.as_str())
}

pub fn decode_str(text: &str) -> Result<Vec<GeoPoint>> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let (mut lat, mut lon) = (0i64, 0i64);
    let mut out = Vec::new();
    while pos < bytes.len() {
        let start = pos;
        lat += read_value(bytes, &mut pos)?;
        if pos >= bytes.len() {
            return Err(Error::MalformedPolyline {
                position: pos,
                reason: "latitude without longitude",
            });
        }
        lon += read_value(bytes, &mut pos)?;
        let p = GeoPoint::new(lat as f64 / SCALE, lon as f64 / SCALE);
        if !p.is_valid() {
            return Err(Error::MalformedPolyline {
                position: start,
                reason: "decoded coordinate out of range",
            });
        }
        out.push(p);
    }
    Ok(out)
}
