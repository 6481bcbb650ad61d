//! Neuron coverage metrics.
//!
//! A neuron is one output channel of a post-nonlinearity layer and its
//! activation on an input is the spatial mean of that channel.
//!
//! - NC thresholds per-layer min-max scaled activations: `|{n : scaled > t}| / |N|`.
//! - NBC counts raw activations outside the profiled `[low, high]` range:
//!   `(|Upper| + |Lower|) / (2 |N|)`.
//! - SNAC counts only the upper corner: `|Upper| / |N|`.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{forward_with_trace, ActivationTrace, ModelGraph};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer_index: usize,
    pub channel_index: usize,
}

/// Per-neuron activations of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSummary {
    pub neurons: Vec<NeuronId>,
    /// `act(n, x)`, the raw channel mean.
    pub raw: Vec<f32>,
    /// Raw means min-max scaled within their layer, in `[0, 1]`.
    pub scaled: Vec<f32>,
}

impl ActivationSummary {
    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }
}

/// Builds the activation summary of one trace.
///
/// A layer whose means are all equal scales to 0.
pub fn summarize_trace(trace: &ActivationTrace) -> Result<ActivationSummary> {
    let n = trace.neuron_count();
    let mut s = ActivationSummary {
        neurons: Vec::with_capacity(n),
        raw: Vec::with_capacity(n),
        scaled: Vec::with_capacity(n),
    };
    for layer in &trace.layers {
        if layer.channel_means.iter().any(|v| !v.is_finite()) {
            bail!(Numeric, "non-finite activation in layer {}", layer.layer_index);
        }
        let lo = layer.channel_means.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = layer.channel_means.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi as f64 - lo as f64;
        for (c, &m) in layer.channel_means.iter().enumerate() {
            s.neurons.push(NeuronId {
                layer_index: layer.layer_index,
                channel_index: c,
            });
            s.raw.push(m);
            let scaled = if span > 0.0 {
                ((m as f64 - lo as f64) / span) as f32
            } else {
                0.0
            };
            s.scaled.push(scaled);
        }
    }
    Ok(s)
}

/// Runs the model and summarizes its trace.
pub fn summarize(graph: &ModelGraph, image: &Tensor) -> Result<ActivationSummary> {
    summarize_trace(&forward_with_trace(graph, image)?.1)
}

/// Per-neuron `[low, high]` raw activation ranges over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronProfile {
    pub neurons: Vec<NeuronId>,
    pub low: Vec<f32>,
    pub high: Vec<f32>,
    pub source: String,
    pub count: usize,
}

impl NeuronProfile {
    /// Min / max over the given summaries.
    pub fn from_summaries<'a>(
        summaries: impl IntoIterator<Item = &'a ActivationSummary>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let mut it = summaries.into_iter();
        let Some(first) = it.next() else {
            bail!(Argument, "cannot profile an empty dataset");
        };
        let mut p = Self {
            neurons: first.neurons.clone(),
            low: first.raw.clone(),
            high: first.raw.clone(),
            source: source.into(),
            count: 1,
        };
        for s in it {
            p.observe(s)?;
        }
        Ok(p)
    }

    fn observe(&mut self, s: &ActivationSummary) -> Result<()> {
        if s.neurons != self.neurons {
            bail!(Argument, "summary neurons do not match the profile");
        }
        for ((lo, hi), &v) in self.low.iter_mut().zip(&mut self.high).zip(&s.raw) {
            if v < *lo {
                *lo = v;
            }
            if v > *hi {
                *hi = v;
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }
}

/// Profiles the model over a dataset.
pub fn profile_dataset<'a>(
    graph: &ModelGraph,
    images: impl IntoIterator<Item = &'a Tensor>,
    source: impl Into<String>,
) -> Result<NeuronProfile> {
    let mut profile: Option<NeuronProfile> = None;
    let source = source.into();
    for img in images {
        let s = summarize(graph, img)?;
        match profile.as_mut() {
            None => profile = Some(NeuronProfile::from_summaries([&s], source.clone())?),
            Some(p) => p.observe(&s)?,
        }
    }
    profile.ok_or_else(|| crate::Error::Argument("cannot profile an empty dataset".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageKind {
    Nc,
    Nbc,
    Snac,
}

/// Coverage of one input (or, via [`CoverageState`], of a set).
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    pub kind: CoverageKind,
    /// NC activation threshold; `None` for NBC / SNAC.
    pub threshold: Option<f32>,
    pub total: usize,
    /// Activated neurons (NC) or upper-corner neurons (NBC, SNAC).
    pub upper: BTreeSet<NeuronId>,
    /// Lower-corner neurons; always empty except for NBC.
    pub lower: BTreeSet<NeuronId>,
}

fn ratio_of(kind: CoverageKind, total: usize, upper: usize, lower: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    match kind {
        CoverageKind::Nc | CoverageKind::Snac => upper as f64 / total as f64,
        CoverageKind::Nbc => (upper + lower) as f64 / (2 * total) as f64,
    }
}

impl CoverageResult {
    pub fn ratio(&self) -> f64 {
        ratio_of(self.kind, self.total, self.upper.len(), self.lower.len())
    }
}

/// Coverage of a single input.
///
/// NC needs `t` and thresholds the scaled means; NBC and SNAC need the
/// profile and compare raw means against `(low, high)`.
pub fn single_input_coverage(
    kind: CoverageKind,
    summary: &ActivationSummary,
    profile: Option<&NeuronProfile>,
    t: Option<f32>,
) -> Result<CoverageResult> {
    let mut r = CoverageResult {
        kind,
        threshold: None,
        total: summary.len(),
        upper: BTreeSet::new(),
        lower: BTreeSet::new(),
    };
    match kind {
        CoverageKind::Nc => {
            let Some(t) = t else {
                bail!(Argument, "NC requires a threshold");
            };
            if !t.is_finite() {
                bail!(Argument, "NC threshold must be finite");
            }
            r.threshold = Some(t);
            r.upper = summary
                .neurons
                .iter()
                .zip(&summary.scaled)
                .filter(|(_, &v)| v > t)
                .map(|(n, _)| *n)
                .collect();
        }
        CoverageKind::Nbc | CoverageKind::Snac => {
            let Some(p) = profile else {
                bail!(Argument, "{kind:?} requires a neuron profile");
            };
            if p.neurons != summary.neurons {
                bail!(Argument, "profile neurons do not match the summary");
            }
            for (i, n) in summary.neurons.iter().enumerate() {
                let v = summary.raw[i];
                if v > p.high[i] {
                    r.upper.insert(*n);
                } else if kind == CoverageKind::Nbc && v < p.low[i] {
                    r.lower.insert(*n);
                }
            }
        }
    }
    Ok(r)
}

/// Coverage accumulated over a collection of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    pub kind: CoverageKind,
    pub threshold: Option<f32>,
    pub total: usize,
    pub upper: BTreeSet<NeuronId>,
    pub lower: BTreeSet<NeuronId>,
    pub inputs: usize,
}

impl CoverageState {
    pub fn new(kind: CoverageKind, threshold: Option<f32>, total: usize) -> Self {
        Self {
            kind,
            threshold,
            total,
            upper: BTreeSet::new(),
            lower: BTreeSet::new(),
            inputs: 0,
        }
    }

    fn compatible(&self, kind: CoverageKind, threshold: Option<f32>, total: usize) -> Result<()> {
        if kind != self.kind
            || threshold.map(f32::to_bits) != self.threshold.map(f32::to_bits)
            || total != self.total
        {
            bail!(
                Argument,
                "coverage kind mismatch: {:?}/{:?} vs {kind:?}/{threshold:?}",
                self.kind,
                self.threshold
            );
        }
        Ok(())
    }

    /// Unions a single-input result into the state.
    pub fn accumulate(mut self, result: &CoverageResult) -> Result<Self> {
        self.compatible(result.kind, result.threshold, result.total)?;
        self.upper.extend(result.upper.iter().copied());
        self.lower.extend(result.lower.iter().copied());
        self.inputs += 1;
        Ok(self)
    }

    /// Order-independent combine of two states.
    pub fn merge(mut self, other: &Self) -> Result<Self> {
        self.compatible(other.kind, other.threshold, other.total)?;
        self.upper.extend(other.upper.iter().copied());
        self.lower.extend(other.lower.iter().copied());
        self.inputs += other.inputs;
        Ok(self)
    }

    pub fn ratio(&self) -> f64 {
        ratio_of(self.kind, self.total, self.upper.len(), self.lower.len())
    }
}

/// Which coverage condition gates the bug predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricSelection {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "nc")]
    Nc,
    #[serde(rename = "snac")]
    Snac,
    #[serde(rename = "nbc")]
    Nbc,
    #[serde(rename = "nbc+snac")]
    NbcSnac,
}

impl MetricSelection {
    pub const ALL: [Self; 5] = [Self::None, Self::Nc, Self::Snac, Self::Nbc, Self::NbcSnac];

    pub fn kinds(self) -> &'static [CoverageKind] {
        match self {
            Self::None => &[],
            Self::Nc => &[CoverageKind::Nc],
            Self::Snac => &[CoverageKind::Snac],
            Self::Nbc => &[CoverageKind::Nbc],
            Self::NbcSnac => &[CoverageKind::Nbc, CoverageKind::Snac],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Nc => "nc",
            Self::Snac => "snac",
            Self::Nbc => "nbc",
            Self::NbcSnac => "nbc+snac",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }

    pub fn uses_coverage(self) -> bool {
        self != Self::None
    }

    pub fn needs_profile(self) -> bool {
        self.kinds().iter().any(|k| *k != CoverageKind::Nc)
    }
}

/// How a multi-metric selection combines its component increases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    /// Every component must strictly increase.
    #[default]
    All,
    /// At least one component must strictly increase.
    Any,
}

/// Coverage of the original and mutated input for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageDelta {
    pub kind: CoverageKind,
    pub before: f64,
    pub after: f64,
}

impl CoverageDelta {
    pub fn increased(&self) -> bool {
        self.before < self.after
    }
}

/// Per-metric coverage before and after mutation for the selection.
pub fn coverage_deltas(
    selection: MetricSelection,
    orig: &ActivationSummary,
    mutated: &ActivationSummary,
    profile: Option<&NeuronProfile>,
    t_single: f32,
) -> Result<Vec<CoverageDelta>> {
    selection
        .kinds()
        .iter()
        .map(|&kind| {
            let t = (kind == CoverageKind::Nc).then_some(t_single);
            let before = single_input_coverage(kind, orig, profile, t)?.ratio();
            let after = single_input_coverage(kind, mutated, profile, t)?.ratio();
            Ok(CoverageDelta { kind, before, after })
        })
        .collect()
}

/// Decides the coverage half of the extended bug predicate from deltas.
pub fn increase_holds(selection: MetricSelection, combine: CombineRule, deltas: &[CoverageDelta]) -> bool {
    if selection == MetricSelection::None {
        return true;
    }
    match combine {
        CombineRule::All => deltas.iter().all(CoverageDelta::increased),
        CombineRule::Any => deltas.iter().any(CoverageDelta::increased),
    }
}

/// `Cov(x_orig) < Cov(x_mut)` for the selected metric(s). `None` always
/// holds; ties never count as an increase.
pub fn coverage_increase(
    selection: MetricSelection,
    combine: CombineRule,
    orig: &ActivationSummary,
    mutated: &ActivationSummary,
    profile: Option<&NeuronProfile>,
    t_single: f32,
) -> Result<bool> {
    let deltas = coverage_deltas(selection, orig, mutated, profile, t_single)?;
    Ok(increase_holds(selection, combine, &deltas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerTrace;
    use alloc::vec;

    fn summary(raw: &[f32], scaled: &[f32]) -> ActivationSummary {
        ActivationSummary {
            neurons: (0..raw.len())
                .map(|c| NeuronId {
                    layer_index: 0,
                    channel_index: c,
                })
                .collect(),
            raw: raw.to_vec(),
            scaled: scaled.to_vec(),
        }
    }

    fn profile(low: &[f32], high: &[f32]) -> NeuronProfile {
        NeuronProfile {
            neurons: summary(low, low).neurons,
            low: low.to_vec(),
            high: high.to_vec(),
            source: "test".into(),
            count: 1,
        }
    }

    fn trace(layers: &[&[f32]]) -> ActivationTrace {
        ActivationTrace {
            layers: layers
                .iter()
                .enumerate()
                .map(|(i, m)| LayerTrace {
                    layer_index: i * 2 + 1,
                    channel_means: m.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn scaling_examples() {
        let s = summarize_trace(&trace(&[&[2.0, 4.0, 6.0], &[3.0, 3.0]])).unwrap();
        assert_eq!(s.scaled, [0.0, 0.5, 1.0, 0.0, 0.0]);
        assert_eq!(s.raw, [2.0, 4.0, 6.0, 3.0, 3.0]);
        assert_eq!(s.neurons[3], NeuronId { layer_index: 3, channel_index: 0 });
        assert!(summarize_trace(&trace(&[&[f32::NAN]])).is_err());
    }

    #[test]
    fn nc_example() {
        let s = summary(&[0.0; 4], &[0.3, 0.6, 0.1, 0.9]);
        let r = single_input_coverage(CoverageKind::Nc, &s, None, Some(0.5)).unwrap();
        assert_eq!(r.ratio(), 0.5);
        assert!(single_input_coverage(CoverageKind::Nc, &s, None, None).is_err());
    }

    #[test]
    fn nbc_snac_example() {
        let p = profile(&[0.0, 0.0], &[1.0, 1.0]);
        let s = summary(&[1.5, -0.2], &[1.0, 0.0]);
        let nbc = single_input_coverage(CoverageKind::Nbc, &s, Some(&p), None).unwrap();
        let snac = single_input_coverage(CoverageKind::Snac, &s, Some(&p), None).unwrap();
        assert_eq!(nbc.ratio(), 0.5);
        assert_eq!(snac.ratio(), 0.5);
        assert!(single_input_coverage(CoverageKind::Nbc, &s, None, None).is_err());
    }

    #[test]
    fn profile_examples() {
        let a = summary(&[1.0], &[0.0]);
        let b = summary(&[3.0], &[0.0]);
        let p = NeuronProfile::from_summaries([&a], "x").unwrap();
        assert_eq!((p.low[0], p.high[0]), (1.0, 1.0));
        let p = NeuronProfile::from_summaries([&a, &b], "x").unwrap();
        assert_eq!((p.low[0], p.high[0], p.count), (1.0, 3.0, 2));
        assert!(NeuronProfile::from_summaries(core::iter::empty(), "x").is_err());
    }

    #[test]
    fn accumulate_examples() {
        let s = summary(&[0.0; 4], &[0.9, 0.0, 0.0, 0.0]);
        let t = summary(&[0.0; 4], &[0.0, 0.9, 0.0, 0.0]);
        let ra = single_input_coverage(CoverageKind::Nc, &s, None, Some(0.5)).unwrap();
        let rb = single_input_coverage(CoverageKind::Nc, &t, None, Some(0.5)).unwrap();
        let st = CoverageState::new(CoverageKind::Nc, Some(0.5), 4);
        let once = st.clone().accumulate(&ra).unwrap();
        let twice = once.clone().accumulate(&ra).unwrap();
        assert_eq!(once.upper, twice.upper);
        assert_eq!(once.ratio(), twice.ratio());
        let both = once.accumulate(&rb).unwrap();
        assert_eq!(both.ratio(), 0.5);
        let other = CoverageState::new(CoverageKind::Nc, Some(0.25), 4);
        assert!(other.accumulate(&ra).is_err());
    }

    #[test]
    fn increase_rules() {
        let p = profile(&[0.0, 0.0, 0.0, 0.0, 0.0], &[1.0; 5]);
        let a = summary(&[0.5; 5], &[0.3, 0.6, 0.1, 0.9, 0.0]);
        let b = summary(&[0.5; 5], &[0.6, 0.3, 0.1, 0.9, 0.0]);
        // None always holds
        assert!(coverage_increase(MetricSelection::None, CombineRule::All, &a, &b, None, 0.5).unwrap());
        // equal NC is not an increase
        assert!(!coverage_increase(MetricSelection::Nc, CombineRule::All, &a, &b, None, 0.5).unwrap());
        // NBC up, SNAC flat: conjunction fails, disjunction holds
        let lower = summary(&[-1.0, 0.5, 0.5, 0.5, 0.5], &[0.0; 5]);
        let up_and_low = summary(&[-1.0, -1.0, 0.5, 0.5, 0.5], &[0.0; 5]);
        assert!(!coverage_increase(MetricSelection::NbcSnac, CombineRule::All, &lower, &up_and_low, Some(&p), 0.5).unwrap());
        assert!(coverage_increase(MetricSelection::NbcSnac, CombineRule::Any, &lower, &up_and_low, Some(&p), 0.5).unwrap());
        let both = summary(&[-1.0, -1.0, 2.0, 0.5, 0.5], &[0.0; 5]);
        assert!(coverage_increase(MetricSelection::NbcSnac, CombineRule::All, &lower, &both, Some(&p), 0.5).unwrap());
    }

    #[test]
    fn selection_labels_roundtrip() {
        for m in MetricSelection::ALL {
            assert_eq!(MetricSelection::parse(m.label()), Some(m));
        }
        assert_eq!(MetricSelection::parse("bogus"), None);
        let _ = vec![0u8];
    }
}
