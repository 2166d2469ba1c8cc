//! Live clients for the crowdsourced map and street-level imagery services.

use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::http::{DiskCache, HttpRequest, RetryPolicy, ServiceClient, Transport};
use super::quota::{QuotaLedger, Service};
use super::{
    check_waypoints, DirectionsProvider, ImageBlob, ImageRequest, ImageryProvider, PanoMeta, PanoProvider,
    Providers, SiteProvider, DEFAULT_SNAP_RADIUS,
};
use crate::error::{Error, Result};
use crate::geo::{degree_distance, GeoPoint, Region};
use crate::polyline::EncodedPolyline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveEndpoints {
    pub overpass: String,
    pub directions: String,
    pub metadata: String,
    pub imagery: String,
}

impl Default for LiveEndpoints {
    fn default() -> Self {
        LiveEndpoints {
            overpass: "https://overpass-api.de/api/interpreter".into(),
            directions: "https://maps.googleapis.com/maps/api/directions/json".into(),
            metadata: "https://maps.googleapis.com/maps/api/streetview/metadata".into(),
            imagery: "https://maps.googleapis.com/maps/api/streetview".into(),
        }
    }
}

/// Percent-encodes everything but RFC 3986 unreserved characters.
pub fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn latlon(p: &GeoPoint) -> String {
    format!("{:.6},{:.6}", p.lat, p.lon)
}

fn parse_error(service: Service, message: impl Into<String>) -> Error {
    Error::Provider {
        service: service.name(),
        message: message.into(),
        attempts: 1,
        retryable: false,
    }
}

fn json(service: Service, body: &[u8]) -> Result<Value> {
    serde_json::from_slice(body).map_err(|e| parse_error(service, format!("invalid JSON response: {e}")))
}

/// Crosswalk nodes (`highway=crossing`) from an Overpass endpoint.
pub struct OverpassSites {
    client: ServiceClient,
    url: String,
    max_span: f64,
}

impl OverpassSites {
    pub fn new(client: ServiceClient, url: impl Into<String>, max_span: f64) -> Self {
        OverpassSites {
            client,
            url: url.into(),
            max_span,
        }
    }

    pub fn query_text(region: &Region) -> String {
        format!(
            "[out:json][timeout:180];node[\"highway\"=\"crossing\"]({:.7},{:.7},{:.7},{:.7});out;",
            region.south(),
            region.west(),
            region.north(),
            region.east()
        )
    }
}

/// Parses an Overpass node list in either JSON or XML form.
pub fn parse_overpass(body: &[u8]) -> Result<Vec<GeoPoint>> {
    let text = std::str::from_utf8(body).map_err(|_| parse_error(Service::Sites, "response is not UTF-8"))?;
    let trimmed = text.trim_start();
    let mut out = Vec::new();
    if trimmed.starts_with('<') {
        let node = Regex::new(r"<node\b[^>]*>").expect("static regex");
        let attr = |tag: &str, name: &str| -> Option<f64> {
            let re = Regex::new(&format!(r#"\b{name}="([^"]+)""#)).ok()?;
            re.captures(tag)?.get(1)?.as_str().parse().ok()
        };
        for m in node.find_iter(trimmed) {
            let (Some(lat), Some(lon)) = (attr(m.as_str(), "lat"), attr(m.as_str(), "lon")) else {
                return Err(parse_error(Service::Sites, format!("node without coordinates: {}", m.as_str())));
            };
            out.push(GeoPoint::try_new(lat, lon)?);
        }
        return Ok(out);
    }
    let v = json(Service::Sites, body)?;
    let elements = v
        .get("elements")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_error(Service::Sites, "missing `elements` array"))?;
    for e in elements {
        if e.get("type").and_then(Value::as_str).is_some_and(|t| t != "node") {
            continue;
        }
        let (Some(lat), Some(lon)) = (e.get("lat").and_then(Value::as_f64), e.get("lon").and_then(Value::as_f64)) else {
            return Err(parse_error(Service::Sites, format!("node without coordinates: {e}")));
        };
        out.push(GeoPoint::try_new(lat, lon)?);
    }
    Ok(out)
}

impl SiteProvider for OverpassSites {
    fn query_sites(&self, region: &Region) -> Result<Vec<GeoPoint>> {
        region.validate()?;
        if region.width() > self.max_span + 1e-12 || region.height() > self.max_span + 1e-12 {
            return Err(Error::RegionTooLarge {
                width: region.width(),
                height: region.height(),
                cap: self.max_span,
            });
        }
        let body = format!("data={}", percent_encode(&Self::query_text(region)));
        let bytes = self.client.fetch(&HttpRequest::post_form(&self.url, body))?;
        Ok(parse_overpass(&bytes)?.into_iter().filter(|p| region.contains(p)).collect())
    }
}

fn keyed(url: String, key: &str) -> HttpRequest {
    let mut r = HttpRequest::get(format!("{url}&key={}", percent_encode(key)));
    r.secret_param = Some("key");
    r
}

pub struct GoogleDirections {
    client: ServiceClient,
    url: String,
    api_key: String,
}

impl GoogleDirections {
    pub fn new(client: ServiceClient, url: impl Into<String>, api_key: impl Into<String>) -> Self {
        GoogleDirections {
            client,
            url: url.into(),
            api_key: api_key.into(),
        }
    }
}

pub fn parse_directions(body: &[u8]) -> Result<EncodedPolyline> {
    let v = json(Service::Directions, body)?;
    match v.get("status").and_then(Value::as_str) {
        Some("OK") => {}
        Some(status @ ("ZERO_RESULTS" | "NOT_FOUND")) => {
            return Err(parse_error(Service::Directions, format!("no route ({status})")));
        }
        other => {
            let msg = v.get("error_message").and_then(Value::as_str).unwrap_or("");
            return Err(parse_error(Service::Directions, format!("status {other:?} {msg}")));
        }
    }
    let points = v
        .pointer("/routes/0/overview_polyline/points")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_error(Service::Directions, "missing routes[0].overview_polyline.points"))?;
    EncodedPolyline::new(points)
}

impl DirectionsProvider for GoogleDirections {
    fn route(&self, origin: &GeoPoint, waypoints: &[GeoPoint], destination: &GeoPoint) -> Result<EncodedPolyline> {
        check_waypoints(waypoints)?;
        let mut url = format!(
            "{}?origin={}&destination={}&mode=driving",
            self.url,
            latlon(origin),
            latlon(destination)
        );
        if !waypoints.is_empty() {
            let joined: Vec<String> = waypoints.iter().map(latlon).collect();
            url.push_str("&waypoints=");
            url.push_str(&percent_encode(&joined.join("|")));
        }
        let body = self.client.fetch(&keyed(url, &self.api_key))?;
        parse_directions(&body)
    }
}

pub struct StreetViewMetadata {
    client: ServiceClient,
    url: String,
    api_key: String,
    radius: f64,
}

impl StreetViewMetadata {
    pub fn new(client: ServiceClient, url: impl Into<String>, api_key: impl Into<String>, radius: f64) -> Self {
        StreetViewMetadata {
            client,
            url: url.into(),
            api_key: api_key.into(),
            radius,
        }
    }
}

pub fn parse_metadata(body: &[u8]) -> Result<Option<PanoMeta>> {
    let v = json(Service::Metadata, body)?;
    match v.get("status").and_then(Value::as_str) {
        Some("OK") => {}
        Some("ZERO_RESULTS" | "NOT_FOUND") => return Ok(None),
        other => return Err(parse_error(Service::Metadata, format!("status {other:?}"))),
    }
    let pano_id = v
        .get("pano_id")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| parse_error(Service::Metadata, "missing pano_id"))?;
    let lat = v.pointer("/location/lat").and_then(Value::as_f64);
    let lon = v.pointer("/location/lng").and_then(Value::as_f64);
    let (Some(lat), Some(lon)) = (lat, lon) else {
        return Err(parse_error(Service::Metadata, "missing location"));
    };
    Ok(Some(PanoMeta {
        pano_id: pano_id.to_string(),
        location: GeoPoint::try_new(lat, lon)?,
        capture_date: v.get("date").and_then(Value::as_str).map(str::to_string),
        copyright: v.get("copyright").and_then(Value::as_str).map(str::to_string),
    }))
}

impl PanoProvider for StreetViewMetadata {
    fn nearest_pano(&self, location: &GeoPoint) -> Result<Option<PanoMeta>> {
        let url = format!("{}?location={}&radius=50", self.url, latlon(location));
        let body = self.client.fetch(&keyed(url, &self.api_key))?;
        // The service measures its radius in meters; re-check in degree space.
        Ok(parse_metadata(&body)?.filter(|p| degree_distance(&p.location, location) <= self.radius))
    }
}

pub struct StreetViewImagery {
    client: ServiceClient,
    url: String,
    api_key: String,
}

impl StreetViewImagery {
    pub fn new(client: ServiceClient, url: impl Into<String>, api_key: impl Into<String>) -> Self {
        StreetViewImagery {
            client,
            url: url.into(),
            api_key: api_key.into(),
        }
    }
}

impl ImageryProvider for StreetViewImagery {
    fn fetch_image(&self, request: &ImageRequest) -> Result<ImageBlob> {
        let url = format!(
            "{}?size={}x{}&location={}&fov={}&pitch={}&heading={:.2}",
            self.url,
            request.width,
            request.height,
            latlon(&request.pose.position),
            request.fov,
            request.pitch,
            request.pose.heading
        );
        let body = self.client.fetch(&keyed(url, &self.api_key))?;
        image::guess_format(&body).map_err(|_| parse_error(Service::Imagery, "response is not an image"))?;
        Ok(ImageBlob(body))
    }
}

/// Options for assembling the live provider set.
pub struct LiveOptions {
    pub endpoints: LiveEndpoints,
    pub api_key: String,
    pub max_span: f64,
    pub snap_radius: f64,
    pub cache: Option<DiskCache>,
    pub retry: RetryPolicy,
    pub offline: bool,
}

impl Default for LiveOptions {
    fn default() -> Self {
        LiveOptions {
            endpoints: LiveEndpoints::default(),
            api_key: String::new(),
            max_span: 0.25,
            snap_radius: DEFAULT_SNAP_RADIUS,
            cache: None,
            retry: RetryPolicy::default(),
            offline: false,
        }
    }
}

pub fn live_providers(options: LiveOptions, transport: Arc<dyn Transport>, ledger: Arc<QuotaLedger>) -> Providers {
    let client = |service| ServiceClient {
        service,
        transport: transport.clone(),
        ledger: ledger.clone(),
        cache: options.cache.clone(),
        retry: options.retry,
        offline: options.offline,
    };
    let e = &options.endpoints;
    Providers {
        sites: Arc::new(OverpassSites::new(client(Service::Sites), &e.overpass, options.max_span)),
        directions: Arc::new(GoogleDirections::new(client(Service::Directions), &e.directions, &options.api_key)),
        panos: Arc::new(StreetViewMetadata::new(
            client(Service::Metadata),
            &e.metadata,
            &options.api_key,
            options.snap_radius,
        )),
        imagery: Arc::new(StreetViewImagery::new(client(Service::Imagery), &e.imagery, &options.api_key)),
        identity: format!("live(overpass={}, streetview={})", e.overpass, e.imagery),
        ledger,
    }
}
