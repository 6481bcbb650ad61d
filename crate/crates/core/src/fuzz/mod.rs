//! Bug predicate, bug store, dataset split and the fuzzing stages.

mod split;
mod stages;
mod store;

use serde::{Deserialize, Serialize};

use crate::coverage::{summarize_trace, ActivationSummary, CombineRule, MetricSelection, NeuronProfile};
use crate::error::{bail, Result};
use crate::eval::{average_precision, BBox};
use crate::mutation::NaturalParams;
use crate::nn::{decode_and_nms, forward_with_trace, DecodeConfig, ModelGraph};
use crate::tensor::Tensor;

pub use split::{check_pairing, split_indices};
pub use stages::{build_retrain_set, run_adversarial, run_stage1, run_stage2, RoundReport, StageReport};
pub use store::{image_hash, mutant_id, Bug, BugSource, BugStore, Stage};

/// IoU at which AP is evaluated.
pub const AP_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzConfig {
    pub alpha_map: f64,
    pub metric: MetricSelection,
    pub combine: CombineRule,
    pub t_single: f32,
    pub n_rounds_stage1: usize,
    pub n_samples: usize,
    pub n_rounds_stage2: usize,
    pub adv_rounds: usize,
    pub adv_samples: usize,
    /// Mutation ranges, acceptance bounds and retry limit.
    pub natural: NaturalParams,
    pub decode: DecodeConfig,
    pub seed: u64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            alpha_map: 0.6,
            metric: MetricSelection::None,
            combine: CombineRule::All,
            t_single: 0.5,
            n_rounds_stage1: 3,
            n_samples: 200,
            n_rounds_stage2: 5,
            adv_rounds: 3,
            adv_samples: 100,
            natural: NaturalParams::default(),
            decode: DecodeConfig::default(),
            seed: 1,
        }
    }
}

impl FuzzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_map > 0.0 && self.alpha_map <= 1.0) {
            bail!(Argument, "alpha_map {} outside (0, 1]", self.alpha_map);
        }
        if !(0.0..=1.0).contains(&self.t_single) {
            bail!(Argument, "t_single {} outside [0, 1]", self.t_single);
        }
        let counts = [
            self.n_rounds_stage1,
            self.n_samples,
            self.n_rounds_stage2,
            self.adv_rounds,
            self.adv_samples,
        ];
        if counts.contains(&0) {
            bail!(Argument, "round and sample counts must be positive");
        }
        self.natural.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Bug,
    NotBug,
    /// The model already scores 0 on the original; no ratio exists.
    Skipped,
}

/// `AP_mut / AP_orig <= alpha` and the coverage check.
pub fn is_bug(ap_orig: f64, ap_mut: f64, cov_check: bool, alpha_map: f64) -> Verdict {
    if !(ap_orig > 0.0) {
        return Verdict::Skipped;
    }
    if ap_mut / ap_orig <= alpha_map && cov_check {
        Verdict::Bug
    } else {
        Verdict::NotBug
    }
}

/// AP and activation summary of one image under the model.
#[derive(Debug, Clone)]
pub struct Observation {
    pub ap: f64,
    pub summary: ActivationSummary,
}

/// A model plus everything needed to score images against it.
pub struct Evaluator<'a> {
    pub graph: &'a ModelGraph,
    pub profile: Option<&'a NeuronProfile>,
    pub decode: DecodeConfig,
}

impl<'a> Evaluator<'a> {
    pub fn observe(&self, image: &Tensor, boxes: &[BBox]) -> Result<Observation> {
        let (raw, trace) = forward_with_trace(self.graph, image)?;
        let dets = decode_and_nms(&raw, self.graph, self.decode)?;
        Ok(Observation {
            ap: average_precision(&dets, boxes, AP_IOU),
            summary: summarize_trace(&trace)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicate_examples() {
        assert_eq!(is_bug(0.8, 0.2, true, 0.3), Verdict::Bug);
        assert_eq!(is_bug(0.8, 0.2, false, 0.3), Verdict::NotBug);
        assert_eq!(is_bug(0.8, 0.6, true, 0.6), Verdict::NotBug);
        assert_eq!(is_bug(0.0, 0.0, true, 0.6), Verdict::Skipped);
        assert_eq!(is_bug(0.5, 0.5, true, 1.0), Verdict::Bug);
    }

    #[test]
    fn predicate_monotone_in_alpha() {
        for i in 1..=20 {
            for j in 0..=20 {
                let (o, m) = (i as f64 / 20.0, j as f64 / 20.0);
                if is_bug(o, m, true, 0.3) == Verdict::Bug {
                    assert_eq!(is_bug(o, m, true, 0.6), Verdict::Bug);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(FuzzConfig::default().validate().is_ok());
        let bad = FuzzConfig { alpha_map: 0.0, ..FuzzConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FuzzConfig { n_samples: 0, ..FuzzConfig::default() };
        assert!(bad.validate().is_err());
    }
}
