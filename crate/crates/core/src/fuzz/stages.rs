use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::split::check_pairing;
use super::store::{image_hash, mutant_id, Bug, BugSource, BugStore, Stage};
use super::{is_bug, Evaluator, FuzzConfig, Observation, Verdict};
use crate::coverage::{coverage_deltas, increase_holds, CoverageDelta};
use crate::error::{bail, Result};
use crate::eval::BBox;
use crate::mutation::{mutate_natural, MutationRecord};
use crate::rng;
use crate::sample::Sample;
use crate::tensor::Tensor;

const STAGE1_SAMPLING: u64 = 0x51;
const ADV_SAMPLING: u64 = 0xad;

/// Counts for one fuzzing round.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundReport {
    pub stage: Option<Stage>,
    pub round: usize,
    /// Inputs drawn this round.
    pub sampled: usize,
    /// Inputs whose mutation passed the acceptance test.
    pub accepted: usize,
    /// Inputs discarded after exhausting retries.
    pub rejected: usize,
    /// Candidates skipped because the original scored AP 0.
    pub skipped: usize,
    pub bugs: usize,
    /// Bugs whose mutant hash was already stored.
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageReport {
    pub rounds: Vec<RoundReport>,
    pub warning: Option<String>,
}

impl StageReport {
    pub fn total_bugs(&self) -> usize {
        self.rounds.iter().map(|r| r.bugs).sum()
    }
}

/// Evaluates the bug predicate of a candidate against its clean original.
fn judge(
    ev: &Evaluator,
    cfg: &FuzzConfig,
    orig: &Observation,
    mutant: &Observation,
) -> Result<(Verdict, Vec<CoverageDelta>)> {
    if !(orig.ap > 0.0) {
        return Ok((Verdict::Skipped, Vec::new()));
    }
    let deltas = if cfg.metric.uses_coverage() {
        coverage_deltas(cfg.metric, &orig.summary, &mutant.summary, ev.profile, cfg.t_single)?
    } else {
        Vec::new()
    };
    let cov = increase_holds(cfg.metric, cfg.combine, &deltas);
    Ok((is_bug(orig.ap, mutant.ap, cov, cfg.alpha_map), deltas))
}

fn preflight(ev: &Evaluator, cfg: &FuzzConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.metric.needs_profile() && ev.profile.is_none() {
        bail!(Argument, "metric {} needs a neuron profile", cfg.metric.label());
    }
    Ok(())
}

struct Candidate<'a> {
    original_id: &'a str,
    parent_id: Option<&'a str>,
    image: Tensor,
    boxes: Vec<BBox>,
    source: BugSource,
}

/// Scores a candidate and stores it when it is a bug.
fn consider(
    ev: &Evaluator,
    cfg: &FuzzConfig,
    store: &mut BugStore,
    report: &mut RoundReport,
    orig: &Observation,
    cand: Candidate,
) -> Result<()> {
    let obs = ev.observe(&cand.image, &cand.boxes)?;
    let (verdict, coverage) = judge(ev, cfg, orig, &obs)?;
    match verdict {
        Verdict::Skipped => report.skipped += 1,
        Verdict::NotBug => {}
        Verdict::Bug => {
            let stage = report.stage.unwrap_or(Stage::One);
            let hash = image_hash(&cand.image);
            let bug = Bug {
                original_id: cand.original_id.into(),
                mutant_id: mutant_id(cand.original_id, stage, report.round, &hash),
                parent_id: cand.parent_id.map(Into::into),
                boxes: cand.boxes,
                ap_orig: orig.ap,
                ap_mut: obs.ap,
                ratio: obs.ap / orig.ap,
                coverage,
                stage,
                round: report.round,
                source: cand.source,
                hash,
            };
            if store.insert(bug, cand.image) {
                report.bugs += 1;
            } else {
                report.duplicates += 1;
            }
        }
    }
    Ok(())
}

fn mutate(
    image: &Tensor,
    boxes: &[BBox],
    seed: u64,
    cfg: &FuzzConfig,
) -> Result<Option<(Tensor, Vec<BBox>, MutationRecord)>> {
    Ok(mutate_natural(image, boxes, image, seed, &cfg.natural)?
        .map(|(img, b, r)| (img.quantize_u8(), b, r)))
}

/// Indices drawn without replacement for one round.
fn draw(n: usize, k: usize, seed: u64, tag: u64, round: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag, round as u64]));
    idx.truncate(k.min(n));
    idx
}

/// First stage: rounds of sampled natural mutations of the fuzzing pool.
///
/// Every random choice is keyed by `(seed, image id, stage, round)`, never
/// by metric or threshold, so two configurations differing only in those
/// see identical mutants.
pub fn run_stage1(ev: &Evaluator, cgt: &[Sample], cfg: &FuzzConfig, store: &mut BugStore) -> Result<StageReport> {
    preflight(ev, cfg)?;
    if cgt.is_empty() {
        bail!(Argument, "fuzzing pool is empty");
    }
    let mut cache: Vec<Option<Observation>> = alloc::vec![None; cgt.len()];
    let mut out = StageReport::default();
    for round in 0..cfg.n_rounds_stage1 {
        let mut report = RoundReport {
            stage: Some(Stage::One),
            round,
            ..RoundReport::default()
        };
        for i in draw(cgt.len(), cfg.n_samples, cfg.seed, STAGE1_SAMPLING, round) {
            let s = &cgt[i];
            report.sampled += 1;
            let seed = rng::derive(cfg.seed, &[rng::hash_str(&s.id), 1, round as u64]);
            let Some((image, boxes, record)) = mutate(&s.image, &s.boxes, seed, cfg)? else {
                report.rejected += 1;
                continue;
            };
            report.accepted += 1;
            if cache[i].is_none() {
                cache[i] = Some(ev.observe(&s.image, &s.boxes)?);
            }
            let orig = cache[i].as_ref().expect("cached above");
            let cand = Candidate {
                original_id: &s.id,
                parent_id: None,
                image,
                boxes,
                source: BugSource::Natural { record },
            };
            consider(ev, cfg, store, &mut report, orig, cand)?;
        }
        out.rounds.push(report);
    }
    Ok(out)
}

/// Second stage: every round re-mutates the complete set of stage-1 bugs.
///
/// The acceptance reference is the stage-1 mutant; AP and coverage are
/// compared against the clean original.
pub fn run_stage2(ev: &Evaluator, cgt: &[Sample], cfg: &FuzzConfig, store: &mut BugStore) -> Result<StageReport> {
    preflight(ev, cfg)?;
    let parents: Vec<usize> = (0..store.len())
        .filter(|&i| store.bugs()[i].stage == Stage::One)
        .collect();
    let mut out = StageReport::default();
    if parents.is_empty() {
        out.warning = Some("no stage-1 bugs; stage 2 skipped".into());
        return Ok(out);
    }
    let by_id: BTreeMap<&str, &Sample> = cgt.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut originals: BTreeMap<String, Observation> = BTreeMap::new();
    for &p in &parents {
        let id = &store.bugs()[p].original_id;
        if !originals.contains_key(id) {
            let Some(s) = by_id.get(id.as_str()) else {
                bail!(Integrity, "stage-1 bug refers to unknown original {id:?}");
            };
            originals.insert(id.clone(), ev.observe(&s.image, &s.boxes)?);
        }
    }
    for round in 0..cfg.n_rounds_stage2 {
        let mut report = RoundReport {
            stage: Some(Stage::Two),
            round,
            ..RoundReport::default()
        };
        for &p in &parents {
            let parent = store.bugs()[p].clone();
            let parent_img = store.image(p).clone();
            report.sampled += 1;
            let seed = rng::derive(cfg.seed, &[rng::hash_str(&parent.mutant_id), 2, round as u64]);
            let Some((image, boxes, record)) = mutate(&parent_img, &parent.boxes, seed, cfg)? else {
                report.rejected += 1;
                continue;
            };
            report.accepted += 1;
            let cand = Candidate {
                original_id: &parent.original_id,
                parent_id: Some(&parent.mutant_id),
                image,
                boxes,
                source: BugSource::Natural { record },
            };
            consider(ev, cfg, store, &mut report, &originals[&parent.original_id], cand)?;
        }
        out.rounds.push(report);
    }
    Ok(out)
}

/// Single-stage run over precomputed adversarial counterparts of the
/// fuzzing pool, keyed by id. No mutation and no acceptance test.
pub fn run_adversarial(
    ev: &Evaluator,
    cgt: &[Sample],
    adversarial: &BTreeMap<String, Tensor>,
    cfg: &FuzzConfig,
    store: &mut BugStore,
) -> Result<StageReport> {
    preflight(ev, cfg)?;
    if cgt.is_empty() {
        bail!(Argument, "fuzzing pool is empty");
    }
    let available: BTreeSet<String> = adversarial.keys().cloned().collect();
    check_pairing(cgt.iter().map(|s| s.id.as_str()), &available)?;
    let mut cache: Vec<Option<Observation>> = alloc::vec![None; cgt.len()];
    let mut out = StageReport::default();
    for round in 0..cfg.adv_rounds {
        let mut report = RoundReport {
            stage: Some(Stage::Adversarial),
            round,
            ..RoundReport::default()
        };
        for i in draw(cgt.len(), cfg.adv_samples, cfg.seed, ADV_SAMPLING, round) {
            let s = &cgt[i];
            report.sampled += 1;
            let adv = &adversarial[&s.id];
            if adv.shape() != s.image.shape() {
                bail!(Integrity, "adversarial image for {:?} has shape {:?}", s.id, adv.shape());
            }
            report.accepted += 1;
            if cache[i].is_none() {
                cache[i] = Some(ev.observe(&s.image, &s.boxes)?);
            }
            let cand = Candidate {
                original_id: &s.id,
                parent_id: None,
                image: adv.quantize_u8(),
                boxes: s.boxes.clone(),
                source: BugSource::Adversarial {
                    tag: format!("adv/{}", s.id),
                },
            };
            consider(ev, cfg, store, &mut report, cache[i].as_ref().expect("cached above"), cand)?;
        }
        out.rounds.push(report);
    }
    Ok(out)
}

/// Retraining set: the retraining pool, then for every bug its original
/// (once per id) and its mutant with transformed annotations.
pub fn build_retrain_set(new_train_val: &[Sample], originals: &[Sample], store: &BugStore) -> Result<Vec<Sample>> {
    let by_id: BTreeMap<&str, &Sample> = originals.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::with_capacity(new_train_val.len() + 2 * store.len());
    for s in new_train_val {
        if seen.insert(s.id.clone()) {
            out.push(s.clone());
        }
    }
    for (bug, img) in store.iter() {
        if !seen.contains(&bug.original_id) {
            let Some(o) = by_id.get(bug.original_id.as_str()) else {
                bail!(Integrity, "bug {:?} refers to unknown original", bug.mutant_id);
            };
            seen.insert(bug.original_id.clone());
            out.push((*o).clone());
        }
        if seen.insert(bug.mutant_id.clone()) {
            out.push(Sample::new(bug.mutant_id.clone(), img.clone(), bug.boxes.clone()));
        }
    }
    Ok(out)
}
