//! Clients for the four external services the harvest depends on: crosswalk
//! sites, driving directions, panorama metadata and street-level imagery.
//!
//! Each service is a trait so the harvest can run against the live HTTP APIs
//! ([`live`]) or a deterministic synthetic city ([`sim`]).

pub mod http;
pub mod live;
pub mod quota;
pub mod sim;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{CameraPose, GeoPoint, Region};
use crate::polyline::EncodedPolyline;

pub use quota::{QuotaLedger, Service, ServiceLimits};

/// Intermediate stops allowed in one directions request.
pub const MAX_WAYPOINTS: usize = 23;

/// Default snapping radius: 50 m at roughly 11 m per 1e-4 degrees.
pub const DEFAULT_SNAP_RADIUS: f64 = 4.5e-4;

/// Metadata of one street-level panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoMeta {
    pub pano_id: String,
    pub location: GeoPoint,
    /// `YYYY-MM` when known.
    pub capture_date: Option<String>,
    pub copyright: Option<String>,
}

/// Parameters of a rendered view. Defaults match the acquisition settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub pose: CameraPose,
    pub width: u32,
    pub height: u32,
    pub fov: f64,
    pub pitch: f64,
}

impl ImageRequest {
    pub fn new(pose: CameraPose) -> Self {
        ImageRequest {
            pose,
            width: 640,
            height: 520,
            fov: 90.0,
            pitch: 0.0,
        }
    }
}

/// Encoded image bytes as returned by the imagery service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBlob(pub Vec<u8>);

impl ImageBlob {
    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    /// File extension matching the encoded format.
    pub fn extension(&self) -> &'static str {
        match image::guess_format(&self.0) {
            Ok(image::ImageFormat::Jpeg) => "jpg",
            _ => "png",
        }
    }
}

pub trait SiteProvider: Send + Sync {
    /// All crosswalk sites inside `region`.
    fn query_sites(&self, region: &Region) -> Result<Vec<GeoPoint>>;
}

pub trait DirectionsProvider: Send + Sync {
    /// A driving path through `origin`, `waypoints` in order, and `destination`.
    fn route(&self, origin: &GeoPoint, waypoints: &[GeoPoint], destination: &GeoPoint) -> Result<EncodedPolyline>;
}

pub trait PanoProvider: Send + Sync {
    /// The nearest panorama within the snapping radius, if any.
    fn nearest_pano(&self, location: &GeoPoint) -> Result<Option<PanoMeta>>;
}

pub trait ImageryProvider: Send + Sync {
    fn fetch_image(&self, request: &ImageRequest) -> Result<ImageBlob>;
}

/// The set of services a harvest talks to, sharing one quota ledger.
#[derive(Clone)]
pub struct Providers {
    pub sites: Arc<dyn SiteProvider>,
    pub directions: Arc<dyn DirectionsProvider>,
    pub panos: Arc<dyn PanoProvider>,
    pub imagery: Arc<dyn ImageryProvider>,
    pub ledger: Arc<QuotaLedger>,
    /// Human-readable provider identity echoed into the manifest.
    pub identity: String,
}

impl Providers {
    pub fn simulated(world: Arc<sim::SimWorld>) -> Self {
        let ledger = world.ledger().clone();
        Providers {
            identity: format!("sim(seed={})", world.spec().seed),
            sites: world.clone(),
            directions: world.clone(),
            panos: world.clone(),
            imagery: world,
            ledger,
        }
    }
}

pub(crate) fn check_waypoints(waypoints: &[GeoPoint]) -> Result<()> {
    if waypoints.len() > MAX_WAYPOINTS {
        return Err(Error::TooManyWaypoints(waypoints.len()));
    }
    Ok(())
}

/// One directions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub origin: GeoPoint,
    pub waypoints: Vec<GeoPoint>,
    pub destination: GeoPoint,
}

/// Greedy chunking of an ordered site list into directions requests of at most
/// 25 stops. Consecutive requests share their boundary site, so the joined
/// paths are continuous.
pub fn batch_waypoint_requests(sites: &[GeoPoint]) -> Result<Vec<RouteRequest>> {
    if sites.len() < 2 {
        return Err(Error::NotEnoughSites(sites.len()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < sites.len() {
        let end = (start + MAX_WAYPOINTS + 1).min(sites.len() - 1);
        out.push(RouteRequest {
            origin: sites[start],
            waypoints: sites[start + 1..end].to_vec(),
            destination: sites[end],
        });
        start = end;
    }
    Ok(out)
}

/// How sites within a tile are ordered before batching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "seed")]
pub enum SiteOrder {
    /// Ascending by latitude, then longitude.
    Sorted,
    /// Seeded random permutation.
    Shuffled(u64),
}

pub fn order_sites(sites: &mut [GeoPoint], order: SiteOrder) {
    sites.sort_by(|a, b| a.lat.total_cmp(&b.lat).then(a.lon.total_cmp(&b.lon)));
    if let SiteOrder::Shuffled(seed) = order {
        sites.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
}
