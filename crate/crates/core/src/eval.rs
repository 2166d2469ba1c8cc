//! Frame metrics, the per-instance temporal metric, and paired comparison of
//! runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::annotate::LabelValue;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const SIGNIFICANCE_LEVEL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample_id: String,
    pub prob_positive: f64,
}

/// Positive iff `prob > threshold`.
pub fn is_positive(prob: f64, threshold: f64) -> bool {
    prob > threshold
}

pub fn confusion(preds: &[Prediction], truth: &[(String, LabelValue)], threshold: f64) -> Result<ConfusionCounts> {
    let mut by_id: HashMap<&str, f64> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(&p.sample_id, p.prob_positive).is_some() {
            return Err(Error::MismatchedPredictions(format!("duplicate prediction for `{}`", p.sample_id)));
        }
    }
    if by_id.len() != truth.len() {
        return Err(Error::MismatchedPredictions(format!(
            "{} predictions for {} labeled samples",
            by_id.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (id, label) in truth {
        let prob = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::MismatchedPredictions(format!("no prediction for `{id}`")))?;
        c.record(is_positive(*prob, threshold), label.is_positive());
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision or recall has a zero denominator.
    pub degenerate: bool,
}

pub fn f1(c: &ConfusionCounts) -> F1Score {
    let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    match (precision, recall) {
        (Some(p), Some(r)) => F1Score {
            precision: p,
            recall: r,
            f1: if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) },
            degenerate: false,
        },
        (p, r) => F1Score {
            precision: p.unwrap_or(0.0),
            recall: r.unwrap_or(0.0),
            f1: 0.0,
            degenerate: true,
        },
    }
}

/// Accuracy on positive samples (recall) and on negative samples.
pub fn per_class_accuracy(c: &ConfusionCounts) -> (Option<f64>, Option<f64>) {
    let pos = (c.positives() > 0).then(|| c.tp as f64 / c.positives() as f64);
    let neg = (c.negatives() > 0).then(|| c.tn as f64 / c.negatives() as f64);
    (pos, neg)
}

/// An inclusive frame range holding one crosswalk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpan {
    pub sequence_id: String,
    pub start_frame: u64,
    pub end_frame: u64,
}

impl InstanceSpan {
    pub fn len(&self) -> u64 {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MajorityRule {
    /// More than half the frames.
    #[default]
    Strict,
    /// At least half the frames.
    Inclusive,
}

impl MajorityRule {
    pub fn is_hit(self, correct: u64, len: u64) -> bool {
        match self {
            MajorityRule::Strict => 2 * correct > len,
            MajorityRule::Inclusive => 2 * correct >= len,
        }
    }
}

/// Per-frame positive predictions keyed by sequence id.
pub type FramePredictions = HashMap<String, BTreeMap<u64, bool>>;

/// Fraction of spans with a majority of frames predicted positive.
pub fn instance_accuracy(preds: &FramePredictions, spans: &[InstanceSpan], rule: MajorityRule) -> Result<f64> {
    if spans.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut hits = 0usize;
    for span in spans {
        if span.start_frame > span.end_frame {
            return Err(Error::InvalidConfig(format!(
                "span {}:{}-{} ends before it starts",
                span.sequence_id, span.start_frame, span.end_frame
            )));
        }
        let frames = preds.get(&span.sequence_id);
        let mut correct = 0u64;
        for frame in span.start_frame..=span.end_frame {
            match frames.and_then(|f| f.get(&frame)) {
                Some(true) => correct += 1,
                Some(false) => {}
                None => {
                    return Err(Error::IncompleteSequence {
                        sequence: span.sequence_id.clone(),
                        frame,
                    })
                }
            }
        }
        if rule.is_hit(correct, span.len()) {
            hits += 1;
        }
    }
    Ok(hits as f64 / spans.len() as f64)
}

/// Maximal runs of consecutive positive-labeled frames per sequence.
pub fn spans_from_labels(frames: &[(String, u64, bool)]) -> Vec<InstanceSpan> {
    let mut by_seq: BTreeMap<&str, BTreeMap<u64, bool>> = BTreeMap::new();
    for (seq, frame, positive) in frames {
        by_seq.entry(seq).or_default().insert(*frame, *positive);
    }
    let mut out = Vec::new();
    for (seq, frames) in by_seq {
        let mut open: Option<(u64, u64)> = None;
        for (&f, &pos) in &frames {
            open = match (open, pos) {
                (Some((s, e)), true) if f == e + 1 => Some((s, f)),
                (prev, true) => {
                    if let Some((s, e)) = prev {
                        out.push(span(seq, s, e));
                    }
                    Some((f, f))
                }
                (prev, false) => {
                    if let Some((s, e)) = prev {
                        out.push(span(seq, s, e));
                    }
                    None
                }
            };
        }
        if let Some((s, e)) = open {
            out.push(span(seq, s, e));
        }
    }
    out
}

fn span(seq: &str, start: u64, end: u64) -> InstanceSpan {
    InstanceSpan {
        sequence_id: seq.to_string(),
        start_frame: start,
        end_frame: end,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_two_sided: f64,
    pub significant: bool,
    pub degenerate: bool,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // Differences equal up to rounding count as constant.
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if var.sqrt() <= 1e-12 * scale.max(f64::MIN_POSITIVE) || var == 0.0 {
        let (t, p) = if mean == 0.0 || scale == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(TTest {
            t,
            p_two_sided: p,
            significant: p < SIGNIFICANCE_LEVEL,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof is positive");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p_two_sided: p,
        significant: p < SIGNIFICANCE_LEVEL,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_degenerate: bool,
    pub positive_accuracy: Option<f64>,
    pub negative_accuracy: Option<f64>,
    pub instance_accuracy: Option<f64>,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_counts(counts: ConfusionCounts, threshold: f64, instance_accuracy: Option<f64>) -> Result<Self> {
        let acc = accuracy(&counts)?;
        let f = f1(&counts);
        let (positive_accuracy, negative_accuracy) = per_class_accuracy(&counts);
        Ok(EvalReport {
            counts,
            accuracy: acc,
            precision: f.precision,
            recall: f.recall,
            f1: f.f1,
            f1_degenerate: f.degenerate,
            positive_accuracy,
            negative_accuracy,
            instance_accuracy,
            threshold,
        })
    }

    pub fn to_text(&self) -> String {
        let pct = |x: Option<f64>| x.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "n/a".into());
        let c = &self.counts;
        let mut s = String::new();
        let _ = writeln!(s, "samples      {} (positive {}, negative {})", c.total(), c.positives(), c.negatives());
        let _ = writeln!(s, "confusion    tp={} tn={} fp={} fn={}", c.tp, c.tn, c.fp, c.fn_);
        let _ = writeln!(
            s,
            "accuracy     overall {}  negative {}  positive {}",
            pct(Some(self.accuracy)),
            pct(self.negative_accuracy),
            pct(self.positive_accuracy)
        );
        let degenerate = if self.f1_degenerate { " (degenerate)" } else { "" };
        let _ = writeln!(
            s,
            "f1           {:.4}{degenerate}  precision {:.4}  recall {:.4}",
            self.f1, self.precision, self.recall
        );
        if let Some(ia) = self.instance_accuracy {
            let _ = writeln!(s, "instances    {}", pct(Some(ia)));
        }
        s
    }
}

/// `sample_id<TAB>prob` lines with six fractional digits.
pub fn write_predictions(preds: &[Prediction]) -> String {
    preds.iter().map(|p| format!("{}\t{:.6}\n", p.sample_id, p.prob_positive)).collect()
}

pub fn parse_predictions(text: &str, origin: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(id), Some(prob), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(origin, n + 1, "expected `sample_id<TAB>prob_positive`"));
        };
        if id.is_empty() {
            return Err(Error::parse(origin, n + 1, "empty sample id"));
        }
        let prob: f64 = prob
            .parse()
            .map_err(|_| Error::parse(origin, n + 1, format!("`{prob}` is not a number")))?;
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::parse(origin, n + 1, format!("probability {prob} outside [0, 1]")));
        }
        out.push(Prediction {
            sample_id: id.to_string(),
            prob_positive: prob,
        });
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    parse_predictions(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn write_spans(spans: &[InstanceSpan]) -> String {
    spans
        .iter()
        .map(|s| format!("{}\t{}\t{}\n", s.sequence_id, s.start_frame, s.end_frame))
        .collect()
}

pub fn parse_spans(text: &str, origin: &str) -> Result<Vec<InstanceSpan>> {
    let mut out: Vec<InstanceSpan> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [seq, start, end] = fields[..] else {
            return Err(Error::parse(origin, n + 1, "expected `sequence_id<TAB>start_frame<TAB>end_frame`"));
        };
        let num = |s: &str| s.parse::<u64>().map_err(|_| Error::parse(origin, n + 1, format!("`{s}` is not a frame index")));
        let (start, end) = (num(start)?, num(end)?);
        if start > end {
            return Err(Error::parse(origin, n + 1, "span ends before it starts"));
        }
        let overlaps = out
            .iter()
            .any(|s| s.sequence_id == seq && s.start_frame <= end && start <= s.end_frame);
        if overlaps {
            return Err(Error::parse(origin, n + 1, "span overlaps an earlier span"));
        }
        out.push(span(seq, start, end));
    }
    Ok(out)
}

pub fn read_spans(path: &Path) -> Result<Vec<InstanceSpan>> {
    parse_spans(&std::fs::read_to_string(path)?, &path.display().to_string())
}

/// One number per line; blank lines and `#` comments are skipped.
pub fn parse_metric_file(text: &str, origin: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|_| Error::parse(origin, n + 1, format!("`{line}` is not a number")))?,
        );
    }
    Ok(out)
}
