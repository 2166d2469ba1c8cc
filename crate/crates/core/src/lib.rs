//! Automatic acquisition and weak labeling of street-level crosswalk imagery,
//! with a reference classifier and evaluation tools.

pub mod annotate;
pub mod baseline;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geo;
pub mod polyline;
pub mod providers;
pub mod pipeline;
pub mod region;
pub mod sampler;
pub mod seed;

pub use annotate::{Label, LabelSource, LabelValue, Sample};
pub use dataset::{DatasetManifest, Split, SplitSpec};
pub use error::{Error, Result};
pub use eval::{ConfusionCounts, EvalReport, InstanceSpan};
pub use geo::{CameraPose, GeoPoint, Region, SectorSpec};
pub use polyline::EncodedPolyline;
pub use providers::{PanoMeta, Providers};
pub use region::SubRegion;
