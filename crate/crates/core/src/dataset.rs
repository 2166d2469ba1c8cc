//! The persisted dataset manifest, region-disjoint splits and negative
//! subsampling.
//!
//! A manifest file is UTF-8 JSON lines: one header record
//! `{"format_version":1,"generation_params":{...}}` followed by one record per
//! sample. Keys are written in sorted order and degrees with exactly six
//! fractional digits, so equal manifests serialize to identical bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotate::{Label, LabelSource, LabelValue, Sample};
use crate::error::{Error, Result};
use crate::geo::{CameraPose, GeoPoint};
use crate::providers::PanoMeta;
use crate::seed::derive_seed;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Rounds to the 1e-6 degree grid the manifest stores.
pub fn quantize(deg: f64) -> f64 {
    (deg * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u64,
    pub generation_params: Value,
    pub samples: Vec<Sample>,
    pub splits: BTreeMap<String, Split>,
}

impl DatasetManifest {
    /// A manifest with every sample unassigned.
    pub fn new(generation_params: Value, samples: Vec<Sample>) -> Result<Self> {
        let splits = samples.iter().map(|s| (s.sample_id.clone(), Split::Unassigned)).collect();
        let m = DatasetManifest {
            format_version: FORMAT_VERSION,
            generation_params,
            samples,
            splits,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::CorruptManifest(format!("duplicate sample_id `{}`", s.sample_id)));
            }
            if !self.splits.contains_key(&s.sample_id) {
                return Err(Error::CorruptManifest(format!("sample `{}` has no split", s.sample_id)));
            }
            if !(0.0..360.0).contains(&s.pose.heading) {
                return Err(Error::CorruptManifest(format!("sample `{}` heading {}", s.sample_id, s.pose.heading)));
            }
            if !s.pose.position.is_valid() {
                return Err(Error::CorruptManifest(format!("sample `{}` position out of range", s.sample_id)));
            }
        }
        if self.splits.len() != self.samples.len() {
            return Err(Error::CorruptManifest("split map references unknown samples".into()));
        }
        Ok(())
    }

    pub fn split_of(&self, sample_id: &str) -> Split {
        self.splits.get(sample_id).copied().unwrap_or(Split::Unassigned)
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| self.split_of(&s.sample_id) == split)
    }

    pub fn region_ids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.region_id.as_str()).collect()
    }

    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        out.push_str("{\"format_version\":");
        out.push_str(&self.format_version.to_string());
        out.push_str(",\"generation_params\":");
        write_canonical(&mut out, &self.generation_params);
        out.push_str("}\n");
        for s in &self.samples {
            write_record(&mut out, s, self.split_of(&s.sample_id));
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, header)) = lines.next() else {
            return Err(Error::CorruptManifest(format!("{origin}: empty file")));
        };
        let header: Value = serde_json::from_str(header)
            .map_err(|e| Error::CorruptManifest(format!("{origin}:1: bad header: {e}")))?;
        let version = header
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::CorruptManifest(format!("{origin}:1: missing format_version")))?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let generation_params = header.get("generation_params").cloned().unwrap_or(Value::Null);
        let mut samples = Vec::new();
        let mut splits = BTreeMap::new();
        for (n, line) in lines {
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| Error::CorruptManifest(format!("{origin}:{}: {e}", n + 1)))?;
            let (sample, split) = rec
                .into_sample()
                .map_err(|e| Error::CorruptManifest(format!("{origin}:{}: {e}", n + 1)))?;
            if splits.insert(sample.sample_id.clone(), split).is_some() {
                return Err(Error::CorruptManifest(format!(
                    "{origin}:{}: duplicate sample_id `{}`",
                    n + 1,
                    sample.sample_id
                )));
            }
            samples.push(sample);
        }
        let m = DatasetManifest {
            format_version: version,
            generation_params,
            samples,
            splits,
        };
        m.validate()?;
        Ok(m)
    }
}

fn write_canonical(out: &mut String, v: &Value) {
    match v {
        Value::Object(map) => {
            out.push('{');
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            for (i, (k, v)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(out, v);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(out, v);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

fn json_str(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

fn opt_str(s: &Option<String>) -> String {
    s.as_deref().map(json_str).unwrap_or_else(|| "null".into())
}

fn write_record(out: &mut String, s: &Sample, split: Split) {
    let frame = s.frame_index.map(|f| f.to_string()).unwrap_or_else(|| "null".into());
    let _ = writeln!(
        out,
        "{{\"capture_date\":{},\"copyright\":{},\"frame_index\":{},\"heading\":{:.6},\"image_ref\":{},\"label\":\"{}\",\"label_source\":\"{}\",\"lat\":{:.6},\"lon\":{:.6},\"pano_id\":{},\"region_id\":{},\"sample_id\":{},\"split\":\"{}\"}}",
        opt_str(&s.pano.capture_date),
        opt_str(&s.pano.copyright),
        frame,
        s.pose.heading,
        json_str(&s.image_ref),
        s.label.value.as_str(),
        s.label.source.as_str(),
        s.pose.position.lat,
        s.pose.position.lon,
        json_str(&s.pano.pano_id),
        json_str(&s.region_id),
        json_str(&s.sample_id),
        split.as_str(),
    );
}

#[derive(Debug, Deserialize)]
struct Record {
    sample_id: String,
    lat: f64,
    lon: f64,
    heading: f64,
    pano_id: String,
    capture_date: Option<String>,
    #[serde(default)]
    copyright: Option<String>,
    image_ref: String,
    label: LabelValue,
    label_source: LabelSource,
    region_id: String,
    split: Split,
    frame_index: Option<u64>,
}

impl Record {
    fn into_sample(self) -> std::result::Result<(Sample, Split), String> {
        if self.sample_id.is_empty() {
            return Err("empty sample_id".into());
        }
        if self.pano_id.is_empty() {
            return Err("empty pano_id".into());
        }
        let position = GeoPoint::try_new(self.lat, self.lon).map_err(|e| e.to_string())?;
        if !(0.0..360.0).contains(&self.heading) {
            return Err(format!("heading {} outside [0, 360)", self.heading));
        }
        let sample = Sample {
            sample_id: self.sample_id,
            pose: CameraPose {
                position,
                heading: self.heading,
            },
            pano: PanoMeta {
                pano_id: self.pano_id,
                location: position,
                capture_date: self.capture_date,
                copyright: self.copyright,
            },
            image_ref: self.image_ref,
            label: Label {
                value: self.label,
                source: self.label_source,
            },
            region_id: self.region_id,
            frame_index: self.frame_index,
        };
        Ok((sample, self.split))
    }
}

/// Exclusive-writer guard backed by a `.lock` file next to the target.
struct WriteLock(PathBuf);

impl WriteLock {
    fn acquire(target: &Path) -> Result<Self> {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".lock");
        let lock = target.with_file_name(name);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(WriteLock(lock)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(target.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.validate()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let _lock = WriteLock::acquire(path)?;
    crate::providers::http::write_atomic(path, m.to_canonical_string().as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    DatasetManifest::parse(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction_of_trainval: f64,
    pub negative_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.25,
            val_fraction_of_trainval: 0.10,
            negative_ratio: 2.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.test_fraction) || !unit(self.val_fraction_of_trainval) {
            return Err(Error::InvalidConfig("split fractions must lie in (0, 1)".into()));
        }
        if !(self.negative_ratio > 0.0) {
            return Err(Error::InvalidConfig("negative ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Assigns whole regions to test until at least `test_fraction` of the samples
/// are held out, then splits the rest per sample into train and validation.
///
/// Regions are visited in seeded random order. At least one region always
/// stays in train/validation.
pub fn split_by_region(m: &DatasetManifest, spec: &SplitSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut regions: Vec<&str> = m.region_ids().into_iter().collect();
    if regions.len() < 2 {
        return Err(Error::CannotSplit(regions.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "split/regions"));
    regions.shuffle(&mut rng);

    let mut per_region: HashMap<&str, usize> = HashMap::new();
    for s in &m.samples {
        *per_region.entry(s.region_id.as_str()).or_default() += 1;
    }
    let total = m.samples.len();
    let target = spec.test_fraction * total as f64;
    let mut test_regions = HashSet::new();
    let mut held_out = 0usize;
    for r in &regions[..regions.len() - 1] {
        if held_out as f64 >= target {
            break;
        }
        test_regions.insert(*r);
        held_out += per_region[r];
    }

    let mut splits = BTreeMap::new();
    let mut rest: Vec<&str> = Vec::new();
    for s in &m.samples {
        if test_regions.contains(s.region_id.as_str()) {
            splits.insert(s.sample_id.clone(), Split::Test);
        } else {
            rest.push(&s.sample_id);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "split/trainval"));
    rest.shuffle(&mut rng);
    let n_val = (spec.val_fraction_of_trainval * rest.len() as f64).round() as usize;
    for (k, id) in rest.into_iter().enumerate() {
        splits.insert(id.to_string(), if k < n_val { Split::Val } else { Split::Train });
    }

    let mut params = m.generation_params.clone();
    if let Value::Object(map) = &mut params {
        map.insert("split".into(), serde_json::to_value(spec)?);
    }
    Ok(DatasetManifest {
        format_version: m.format_version,
        generation_params: params,
        samples: m.samples.clone(),
        splits,
    })
}

/// All positives of `split` plus a seeded random subset of its negatives,
/// `round(negative_ratio * positives)` of them, in shuffled order.
pub fn sample_negatives(m: &DatasetManifest, split: Split, spec: &SplitSpec) -> Result<Vec<Sample>> {
    let (pos, neg): (Vec<&Sample>, Vec<&Sample>) = m.samples_in(split).partition(|s| s.label.value.is_positive());
    let needed = (spec.negative_ratio * pos.len() as f64).round() as usize;
    if neg.len() < needed {
        return Err(Error::InsufficientNegatives {
            needed,
            available: neg.len(),
            shortfall: needed - neg.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("negatives/{}", split.as_str())));
    let mut chosen: Vec<Sample> = neg
        .choose_multiple(&mut rng, needed)
        .map(|s| (*s).clone())
        .collect();
    chosen.extend(pos.into_iter().cloned());
    chosen.shuffle(&mut rng);
    Ok(chosen)
}

/// Marks train and validation negatives left out by [`sample_negatives`] as
/// unassigned.
pub fn apply_negative_sampling(m: &DatasetManifest, spec: &SplitSpec) -> Result<DatasetManifest> {
    let mut out = m.clone();
    for split in [Split::Train, Split::Val] {
        let keep: HashSet<String> = sample_negatives(m, split, spec)?.into_iter().map(|s| s.sample_id).collect();
        for s in m.samples_in(split) {
            if !keep.contains(&s.sample_id) {
                out.splits.insert(s.sample_id.clone(), Split::Unassigned);
            }
        }
    }
    Ok(out)
}
