//! Camera headings, the geometric weak-labeling rule, and manual overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{bearing, CameraPose, GeoPoint, SectorSpec};
use crate::providers::PanoMeta;
use crate::sampler::PanoLocation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelValue {
    Positive,
    Negative,
}

impl LabelValue {
    pub fn is_positive(self) -> bool {
        self == LabelValue::Positive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelValue::Positive => "positive",
            LabelValue::Negative => "negative",
        }
    }
}

impl fmt::Display for LabelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelValue {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "positive" => Ok(LabelValue::Positive),
            "negative" => Ok(LabelValue::Negative),
            other => Err(format!("expected `positive` or `negative`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Auto,
    Manual,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Auto => "auto",
            LabelSource::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub value: LabelValue,
    pub source: LabelSource,
}

impl Label {
    pub fn auto(value: LabelValue) -> Self {
        Label {
            value,
            source: LabelSource::Auto,
        }
    }
}

/// One image record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub pose: CameraPose,
    pub pano: PanoMeta,
    pub image_ref: String,
    pub label: Label,
    pub region_id: String,
    /// Position within the region's acquisition sequence.
    pub frame_index: Option<u64>,
}

/// Stable id for the view of `pano_id` at `heading`.
pub fn sample_id(pano_id: &str, heading: f64) -> String {
    format!("{pano_id}@{heading:07.3}")
}

/// Heading of each location towards the next distinct one.
///
/// The last location has no successor and yields no pose. Locations that
/// coincide with their successor look further ahead for a distinct one.
pub fn assign_headings(locations: &[PanoLocation]) -> Result<Vec<(CameraPose, usize)>> {
    if locations.len() < 2 {
        return Err(Error::NotEnoughPoints(locations.len()));
    }
    let mut out = Vec::with_capacity(locations.len() - 1);
    for (i, here) in locations[..locations.len() - 1].iter().enumerate() {
        let from = here.meta.location;
        let heading = locations[i + 1..]
            .iter()
            .find_map(|next| bearing(&from, &next.meta.location).ok());
        match heading {
            Some(h) => out.push((CameraPose::new(from, h), i)),
            // Every remaining location coincides with this one.
            None => break,
        }
    }
    if out.is_empty() {
        return Err(Error::NoHeadingsDerivable);
    }
    Ok(out)
}

/// Positive iff some site lies inside the labeling sector of `pose`.
pub fn auto_label(pose: &CameraPose, sites: &[GeoPoint], sector: &SectorSpec) -> Label {
    let hit = sites.iter().any(|s| sector.contains(pose, s));
    Label::auto(if hit { LabelValue::Positive } else { LabelValue::Negative })
}

/// Manual label corrections keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverrideSet(pub BTreeMap<String, LabelValue>);

impl OverrideSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses `sample_id<TAB>positive|negative` lines. Blank lines and `#`
    /// comments are skipped; a repeated id keeps its last value.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((id, value)) = line.split_once('\t') else {
                return Err(Error::parse(origin, n + 1, "expected `sample_id<TAB>label`"));
            };
            let value: LabelValue = value.trim().parse().map_err(|e: String| Error::parse(origin, n + 1, e))?;
            if id.is_empty() {
                return Err(Error::parse(origin, n + 1, "empty sample id"));
            }
            if map.insert(id.to_string(), value).is_some() {
                log::warn!("{origin}:{}: sample `{id}` overridden more than once; last value wins", n + 1);
            }
        }
        Ok(OverrideSet(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(id, v)| format!("{id}\t{v}\n")).collect()
    }
}

/// Applies every override or none. Overridden samples become `manual` even
/// when the value is unchanged, so reviewed samples stay countable.
pub fn apply_overrides(samples: &[Sample], overrides: &OverrideSet) -> Result<Vec<Sample>> {
    let known: std::collections::HashSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    if let Some(missing) = overrides.0.keys().find(|k| !known.contains(k.as_str())) {
        return Err(Error::UnknownSample(missing.clone()));
    }
    Ok(samples
        .iter()
        .map(|s| match overrides.0.get(&s.sample_id) {
            Some(&value) => Sample {
                label: Label {
                    value,
                    source: LabelSource::Manual,
                },
                ..s.clone()
            },
            None => s.clone(),
        })
        .collect())
}
