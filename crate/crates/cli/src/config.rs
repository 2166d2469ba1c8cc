//! The TOML run configuration.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crosswalk_core::baseline::TrainConfig;
use crosswalk_core::pipeline::{NamedRegion, Thresholds};
use crosswalk_core::providers::live::LiveEndpoints;
use crosswalk_core::providers::{Service, ServiceLimits};
use crosswalk_core::{Error, GeoPoint, Region, Result, SplitSpec};
use serde::Deserialize;
use toml::Spanned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Live,
    Sim,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub name: String,
    /// `[lat, lon]`
    pub bottom_left: [f64; 2],
    pub top_right: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// World seed; derived from the run seed when absent.
    pub seed: Option<u64>,
    /// `[south, west, north, east]`; the regions' bounding box when absent.
    pub bounds: Option<[f64; 4]>,
    pub block_size: f64,
    pub site_probability: f64,
    pub pano_spacing: f64,
    pub pano_jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let d = crosswalk_core::providers::sim::SimWorldSpec::default();
        SimConfig {
            seed: None,
            bounds: None,
            block_size: d.block_size,
            site_probability: d.site_probability,
            pano_spacing: d.pano_spacing,
            pano_jitter: d.pano_jitter,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitConfig {
    pub requests_per_second: Option<f64>,
    pub daily_cap: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    #[serde(flatten)]
    pub endpoints: LiveEndpoints,
    pub timeout_secs: Option<u64>,
    /// Keyed by service: `sites`, `directions`, `metadata`, `imagery`.
    pub limits: BTreeMap<String, LimitConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub sim: SimConfig,
    pub live: LiveConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Sim,
            sim: SimConfig::default(),
            live: LiveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    parallelism: Option<usize>,
    #[serde(default)]
    cache_dir: Option<PathBuf>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default = "default_key_env")]
    api_key_env: String,
    #[serde(default)]
    shuffle_sites: bool,
    #[serde(default)]
    provider: ProviderConfig,
    #[serde(default)]
    thresholds: Option<Spanned<Thresholds>>,
    #[serde(default)]
    split: Option<Spanned<SplitSpec>>,
    #[serde(default)]
    train: TrainConfig,
    regions: Spanned<Vec<Spanned<RegionConfig>>>,
}

fn default_key_env() -> String {
    "STREETVIEW_API_KEY".into()
}

#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    pub parallelism: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub api_key_env: String,
    pub shuffle_sites: bool,
    pub provider: ProviderConfig,
    pub thresholds: Thresholds,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub regions: Vec<NamedRegion>,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |span: Range<usize>, message: String| Error::Parse {
            path: origin.to_string(),
            line: line_of(text, span),
            message,
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s)).unwrap_or(1);
            Error::Parse {
                path: origin.to_string(),
                line,
                message: e.message().trim().to_string(),
            }
        })?;

        if raw.regions.get_ref().is_empty() {
            return Err(err(raw.regions.span(), "at least one region is required".into()));
        }
        let mut regions = Vec::new();
        let mut names = std::collections::HashSet::new();
        for r in raw.regions.get_ref() {
            let span = r.span();
            let r = r.get_ref();
            if r.name.is_empty() || r.name.contains(['/', '\t', '\n']) {
                return Err(err(span, format!("invalid region name `{}`", r.name)));
            }
            if !names.insert(r.name.clone()) {
                return Err(err(span, format!("duplicate region name `{}`", r.name)));
            }
            let bl = GeoPoint::new(r.bottom_left[0], r.bottom_left[1]);
            let tr = GeoPoint::new(r.top_right[0], r.top_right[1]);
            let bounds = Region::new(bl, tr).map_err(|e| err(span.clone(), format!("region `{}`: {e}", r.name)))?;
            regions.push(NamedRegion {
                name: r.name.clone(),
                bounds,
            });
        }

        let thresholds = match raw.thresholds {
            Some(t) => {
                t.get_ref().validate().map_err(|e| err(t.span(), e.to_string()))?;
                *t.get_ref()
            }
            None => Thresholds::default(),
        };
        let split = match raw.split {
            Some(s) => {
                s.get_ref().validate().map_err(|e| err(s.span(), e.to_string()))?;
                *s.get_ref()
            }
            None => SplitSpec::default(),
        };
        if raw.parallelism == Some(0) {
            return Err(Error::InvalidConfig(format!("{origin}: parallelism must be at least 1")));
        }
        for service in raw.provider.live.limits.keys() {
            if !Service::ALL.iter().any(|s| s.name() == service) {
                return Err(Error::InvalidConfig(format!("{origin}: unknown service `{service}` in limits")));
            }
        }
        Ok(Config {
            seed: raw.seed,
            parallelism: raw.parallelism,
            cache_dir: raw.cache_dir,
            out_dir: raw.out_dir,
            api_key_env: raw.api_key_env,
            shuffle_sites: raw.shuffle_sites,
            provider: raw.provider,
            thresholds,
            split,
            train: raw.train,
            regions,
        })
    }

    pub fn limits(&self) -> BTreeMap<Service, ServiceLimits> {
        Service::ALL
            .iter()
            .filter_map(|s| {
                self.provider.live.limits.get(s.name()).map(|l| {
                    (
                        *s,
                        ServiceLimits {
                            requests_per_second: l.requests_per_second,
                            daily_cap: l.daily_cap,
                        },
                    )
                })
            })
            .collect()
    }

    /// Smallest region enclosing every configured region.
    pub fn bounding_box(&self) -> Region {
        let mut it = self.regions.iter().map(|r| r.bounds);
        let first = it.next().expect("config has at least one region");
        it.fold(first, |acc, r| Region {
            bottom_left: GeoPoint::new(acc.south().min(r.south()), acc.west().min(r.west())),
            top_right: GeoPoint::new(acc.north().max(r.north()), acc.east().max(r.east())),
        })
    }
}
