//! The individual steps of a run, one per CLI subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use cgt_core::adversarial::pseudo_adversarial;
use cgt_core::coverage::{CombineRule, MetricSelection, NeuronProfile};
use cgt_core::eval::{corruption_scores, dataset_map};
use cgt_core::fuzz::{self, BugStore, Evaluator, StageReport};
use cgt_core::mutation::{mutate_natural, Corruption};
use cgt_core::nn::{person_mini, ModelGraph, PERSON_MINI_INPUT};
use cgt_core::rng::{derive, hash_str};
use cgt_core::train::{train, EpochLog, RetrainInit};
use cgt_core::{synth, Sample, Tensor};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{train_fingerprint, RunConfig};
use crate::error::{create_parent, Error, IoContext, Result};
use crate::image_io::{read_png, write_png};
use crate::journal::{read_journal, write_journal};
use crate::manifest::{self, box_array, load_samples, read_manifest, rebase, write_manifest, write_samples, Record};
use crate::model_file::{load_model, save_model};
use crate::profile_file::{load_profile, save_profile};
use crate::run::{require, RunDir};

// Seed domains of the run-level seed.
const SEED_TRAIN_VAL: u64 = 1;
const SEED_TEST: u64 = 2;
const SEED_SPLIT: u64 = 3;
const SEED_CORRUPT: u64 = 4;
const SEED_NATURAL_TEST: u64 = 5;
const SEED_ADV: u64 = 6;

pub const TRAIN_VAL: &str = "train_val";
pub const TEST: &str = "test";
pub const NEW_TRAIN_VAL: &str = "new_train_val";
pub const CGT_DATA: &str = "cgt_data";
pub const CLEAN_TEST: &str = "clean_test";
pub const NATURAL_TEST: &str = "natural_test";
pub const ADV_TEST: &str = "adv_test";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Natural,
    Adversarial,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Natural => "natural",
            Self::Adversarial => "adversarial",
        }
    }
}

/// Directory name of one experiment cell.
pub fn cell_name(mode: Mode, metric: MetricSelection, alpha: f64) -> String {
    format!("{}_{}_a{alpha}", mode.name(), metric.label().replace('+', "-"))
}

pub fn gen_data(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    for (name, domain, n, prefix) in [
        (TRAIN_VAL, SEED_TRAIN_VAL, cfg.data.n_train_val, "tv"),
        (TEST, SEED_TEST, cfg.data.n_test, "te"),
    ] {
        let samples = synth::generate(derive(cfg.seed, &[domain]), n, PERSON_MINI_INPUT, prefix);
        write_samples(&run.data_manifest(name), &run.data_images(name), &samples)?;
        info!("wrote {n} {name} scenes");
    }
    Ok(())
}

/// Splits train_val 2:1, copies the test manifest, builds the corruption
/// grid and the naturally mutated test set, and links adversarial
/// counterparts when a directory of them is given.
pub fn split(run: &RunDir, cfg: &RunConfig, adv_dir: Option<&Path>) -> Result<()> {
    let tv_path = run.data_manifest(TRAIN_VAL);
    let test_path = run.data_manifest(TEST);
    require(&tv_path, "gen-data")?;
    require(&test_path, "gen-data")?;
    let tv = read_manifest(&tv_path)?;
    if tv.is_empty() {
        return Err(Error::data(&tv_path, "train_val manifest is empty"));
    }
    let (train_idx, cgt_idx) = fuzz::split_indices(tv.len(), derive(cfg.seed, &[SEED_SPLIT]));
    for (name, idx) in [(NEW_TRAIN_VAL, &train_idx), (CGT_DATA, &cgt_idx)] {
        let recs: Vec<Record> = idx.iter().map(|&i| tv[i].clone()).collect();
        let out = run.split_manifest(name);
        write_manifest(&out, &rebase(&tv_path, &out, &recs))?;
    }
    let test = read_manifest(&test_path)?;
    let clean = run.split_manifest(CLEAN_TEST);
    write_manifest(&clean, &rebase(&test_path, &clean, &test))?;
    info!("split {} -> {} / {}", tv.len(), train_idx.len(), cgt_idx.len());
    corrupt(run, cfg)?;
    natural_test(run, cfg)?;
    if let Some(dir) = adv_dir {
        link_adversarial(run, dir)?;
    }
    Ok(())
}

/// Builds the corruption grid from the clean test set.
pub fn corrupt(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let clean = run.split_manifest(CLEAN_TEST);
    require(&clean, "split")?;
    let test = load_samples(&clean)?;
    for &kind in &cfg.eval.corruptions {
        for &sev in &cfg.eval.severities {
            let out = test
                .iter()
                .map(|s| {
                    let seed = derive(cfg.seed, &[SEED_CORRUPT, hash_str(&s.id)]);
                    let img = cfg.corruption.apply(&s.image, kind, sev, seed)?;
                    Ok(Sample::new(s.id.clone(), img, s.boxes.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            write_samples(&run.corruption_manifest(kind, sev), &run.corruption_images(kind, sev), &out)?;
        }
    }
    info!(
        "corruption grid: {} operators x {} severities",
        cfg.eval.corruptions.len(),
        cfg.eval.severities.len()
    );
    Ok(())
}

/// Mutates every clean test image once; images whose mutation is rejected
/// after all retries are left out.
pub fn natural_test(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let test = load_samples(&run.split_manifest(CLEAN_TEST))?;
    let mut out = Vec::with_capacity(test.len());
    for s in &test {
        let seed = derive(cfg.seed, &[SEED_NATURAL_TEST, hash_str(&s.id)]);
        if let Some((img, boxes, _)) = mutate_natural(&s.image, &s.boxes, &s.image, seed, &cfg.eval.natural_test)? {
            out.push(Sample::new(format!("{}__nat", s.id), img.quantize_u8(), boxes));
        }
    }
    info!("natural test set: {} of {} images", out.len(), test.len());
    write_samples(&run.split_manifest(NATURAL_TEST), &run.split_images(NATURAL_TEST), &out)?;
    Ok(())
}

fn adversarial_images(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let p = entry.at(dir)?.path();
        if p.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = p.file_stem() {
                ids.insert(stem.to_string_lossy().into_owned());
            }
        }
    }
    Ok(ids)
}

/// Pairs every clean test image with `<dir>/<id>.png`.
pub fn link_adversarial(run: &RunDir, dir: &Path) -> Result<()> {
    let clean = run.split_manifest(CLEAN_TEST);
    let test = read_manifest(&clean)?;
    let available = adversarial_images(dir)?;
    fuzz::check_pairing(test.iter().map(|r| r.id.as_str()), &available)?;
    let out = run.split_manifest(ADV_TEST);
    let recs: Vec<Record> = test
        .iter()
        .map(|r| Record {
            image_path: manifest::relative(&out, &dir.join(format!("{}.png", r.id))),
            ..r.clone()
        })
        .collect();
    write_manifest(&out, &recs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub fingerprint: String,
    pub config: cgt_core::train::TrainConfig,
    pub train_manifest: String,
    pub samples: usize,
}

fn write_train_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e))?;
    w.write_record(["epoch", "loss", "val_map"]).map_err(|e| Error::data(path, e))?;
    for l in logs {
        let val = l.val_map.map(|v| format!("{v:.6}")).unwrap_or_default();
        w.write_record([l.epoch.to_string(), format!("{:.6}", l.loss), val])
            .map_err(|e| Error::data(path, e))?;
    }
    w.flush().at(path)
}

fn fit(cfg: &RunConfig, init: &ModelGraph, samples: &[Sample], val: &[Sample]) -> Result<(ModelGraph, Vec<EpochLog>)> {
    let decode = cfg.eval.decode;
    Ok(train(init, samples, &cfg.train, |epoch, model| {
        let m = dataset_map(model, val, decode)?;
        info!("epoch {epoch}: val mAP {m:.4}");
        Ok(Some(m))
    })?)
}

pub fn train_baseline(run: &RunDir, cfg: &RunConfig) -> Result<ModelGraph> {
    let path = run.split_manifest(NEW_TRAIN_VAL);
    require(&path, "split")?;
    let samples = load_samples(&path)?;
    let val = load_samples(&run.split_manifest(CLEAN_TEST))?;
    let init = person_mini(cfg.train.init_seed);
    let (model, logs) = fit(cfg, &init, &samples, &val)?;
    save_model(&model, &run.baseline_model())?;
    write_train_log(&run.baseline_log(), &logs)?;
    let meta = TrainMeta {
        fingerprint: train_fingerprint(&cfg.train),
        config: cfg.train.clone(),
        train_manifest: NEW_TRAIN_VAL.into(),
        samples: samples.len(),
    };
    let meta_path = run.baseline_meta();
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n").at(&meta_path)?;
    Ok(model)
}

pub fn load_baseline(run: &RunDir) -> Result<ModelGraph> {
    let p = run.baseline_model();
    require(&p, "train-baseline")?;
    load_model(&p)
}

pub fn profile(run: &RunDir) -> Result<NeuronProfile> {
    let model = load_baseline(run)?;
    let samples = load_samples(&run.split_manifest(NEW_TRAIN_VAL))?;
    let p = cgt_core::coverage::profile_dataset(&model, samples.iter().map(|s| &s.image), NEW_TRAIN_VAL)?;
    save_profile(&p, &run.profile())?;
    Ok(p)
}

/// Writes pseudo-adversarial counterparts of the fuzzing pool and the
/// clean test set to `adv/`, then links the test pairs.
pub fn gen_adv(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let model = load_baseline(run)?;
    let dir = run.adv_dir();
    for name in [CGT_DATA, CLEAN_TEST] {
        for s in load_samples(&run.split_manifest(name))? {
            let seed = derive(cfg.seed, &[SEED_ADV, hash_str(&s.id)]);
            let adv = pseudo_adversarial(&model, &s.image, &s.boxes, &cfg.pseudo_adv, seed)?;
            write_png(&dir.join(format!("{}.png", s.id)), &adv)?;
        }
    }
    link_adversarial(run, &dir)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub cell: String,
    pub mode: Mode,
    pub metric: MetricSelection,
    pub alpha_map: f64,
    pub combine: CombineRule,
    pub stages: Vec<StageReport>,
    pub bugs: usize,
}

/// Runs one fuzzing campaign and journals its bugs under `cells/<cell>/`.
pub fn fuzz(run: &RunDir, cfg: &RunConfig, mode: Mode) -> Result<(FuzzSummary, BugStore)> {
    let f = &cfg.fuzz;
    let cell = cell_name(mode, f.metric, f.alpha_map);
    let model = load_baseline(run)?;
    let profile = if f.metric.needs_profile() {
        require(&run.profile(), "profile")?;
        Some(load_profile(&run.profile(), &model)?)
    } else {
        None
    };
    let ev = Evaluator {
        graph: &model,
        profile: profile.as_ref(),
        decode: f.decode,
    };
    let cgt_path = run.split_manifest(CGT_DATA);
    require(&cgt_path, "split")?;
    let cgt = load_samples(&cgt_path)?;
    let mut store = BugStore::new();
    let stages = match mode {
        Mode::Natural => {
            let s1 = fuzz::run_stage1(&ev, &cgt, f, &mut store)?;
            info!("{cell}: stage 1 found {} bugs", s1.total_bugs());
            let s2 = fuzz::run_stage2(&ev, &cgt, f, &mut store)?;
            if let Some(w) = &s2.warning {
                warn!("{cell}: {w}");
            }
            info!("{cell}: stage 2 found {} bugs", s2.total_bugs());
            vec![s1, s2]
        }
        Mode::Adversarial => {
            let dir = run.adv_dir();
            let available = if dir.exists() { adversarial_images(&dir)? } else { BTreeSet::new() };
            fuzz::check_pairing(cgt.iter().map(|s| s.id.as_str()), &available)?;
            let mut adv = BTreeMap::new();
            for s in &cgt {
                adv.insert(s.id.clone(), read_png(&dir.join(format!("{}.png", s.id)))?);
            }
            let s = fuzz::run_adversarial(&ev, &cgt, &adv, f, &mut store)?;
            info!("{cell}: adversarial run found {} bugs", s.total_bugs());
            vec![s]
        }
    };
    let dir = run.cell_dir(&cell);
    if dir.exists() {
        fs::remove_dir_all(&dir).at(&dir)?;
    }
    write_journal(&dir.join("journal.jsonl"), &store)?;
    let summary = FuzzSummary {
        cell,
        mode,
        metric: f.metric,
        alpha_map: f.alpha_map,
        combine: f.combine,
        stages,
        bugs: store.len(),
    };
    let p = dir.join("rounds.json");
    fs::write(&p, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n").at(&p)?;
    Ok((summary, store))
}

/// Retraining manifest of a cell: the retraining pool plus every bug's
/// original and mutant. Images are referenced in place.
pub fn build_retrain_set(run: &RunDir, cell: &str) -> Result<Vec<Record>> {
    let dir = run.cell_dir(cell);
    let journal = dir.join("journal.jsonl");
    require(&journal, "fuzz")?;
    let store = read_journal(&journal)?;
    let out = dir.join("retrain.jsonl");
    let mut paths: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut load = |name: &str| -> Result<Vec<Sample>> {
        let p = run.split_manifest(name);
        for r in read_manifest(&p)? {
            paths.insert(r.id.clone(), manifest::resolve(&p, &r));
        }
        load_samples(&p)
    };
    let ntv = load(NEW_TRAIN_VAL)?;
    let cgt = load(CGT_DATA)?;
    for b in store.bugs() {
        paths.insert(b.mutant_id.clone(), dir.join(format!("mutants/{}.png", b.mutant_id)));
    }
    let set = fuzz::build_retrain_set(&ntv, &cgt, &store)?;
    let recs: Vec<Record> = set
        .iter()
        .map(|s| Record {
            id: s.id.clone(),
            image_path: manifest::relative(&out, &paths[&s.id]),
            boxes: s.boxes.iter().map(box_array).collect(),
        })
        .collect();
    write_manifest(&out, &recs)?;
    Ok(recs)
}

/// Retrains with the baseline's exact training config.
pub fn retrain(run: &RunDir, cfg: &RunConfig, cell: &str) -> Result<ModelGraph> {
    let meta_path = run.baseline_meta();
    require(&meta_path, "train-baseline")?;
    let meta: TrainMeta = serde_json::from_str(&fs::read_to_string(&meta_path).at(&meta_path)?)
        .map_err(|e| Error::data(&meta_path, e))?;
    if meta.fingerprint != train_fingerprint(&cfg.train) {
        return Err(cgt_core::Error::Integrity(
            "training config differs from the one the baseline was trained with".into(),
        )
        .into());
    }
    let dir = run.cell_dir(cell);
    let manifest = dir.join("retrain.jsonl");
    require(&manifest, "build-retrain-set")?;
    let samples = load_samples(&manifest)?;
    let val = load_samples(&run.split_manifest(CLEAN_TEST))?;
    let init = match cfg.train.retrain_init {
        RetrainInit::FineTune => load_baseline(run)?,
        RetrainInit::Scratch => person_mini(cfg.train.init_seed),
    };
    let (model, logs) = fit(cfg, &init, &samples, &val)?;
    save_model(&model, &dir.join("model.sdnm"))?;
    write_train_log(&dir.join("train.csv"), &logs)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionScore {
    pub corruption: Corruption,
    pub severity: u8,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub map_clean: f64,
    pub map_natural: f64,
    pub map_adv: Option<f64>,
    pub mpc: f64,
    /// Undefined when the clean mAP is 0.
    pub rpc: Option<f64>,
    pub corruption: Vec<CorruptionScore>,
}

/// Clean, naturally mutated, adversarial and corruption-grid scores.
pub fn evaluate(run: &RunDir, cfg: &RunConfig, model: &ModelGraph) -> Result<Scores> {
    let d = cfg.eval.decode;
    let map_on = |p: &Path| -> Result<f64> { Ok(dataset_map(model, &load_samples(p)?, d)?) };
    let clean = run.split_manifest(CLEAN_TEST);
    require(&clean, "split")?;
    let map_clean = map_on(&clean)?;
    let map_natural = map_on(&run.split_manifest(NATURAL_TEST))?;
    let adv = run.split_manifest(ADV_TEST);
    let map_adv = if adv.exists() { Some(map_on(&adv)?) } else { None };
    let mut corruption = Vec::new();
    for &kind in &cfg.eval.corruptions {
        for &severity in &cfg.eval.severities {
            let p = run.corruption_manifest(kind, severity);
            require(&p, "corrupt")?;
            corruption.push(CorruptionScore {
                corruption: kind,
                severity,
                map: map_on(&p)?,
            });
        }
    }
    let maps: Vec<f64> = corruption.iter().map(|c| c.map).collect();
    let (mpc, rpc) = if map_clean > 0.0 {
        let (mpc, rpc) = corruption_scores(&maps, map_clean)?;
        (mpc, Some(rpc))
    } else {
        (maps.iter().sum::<f64>() / maps.len().max(1) as f64, None)
    };
    Ok(Scores {
        map_clean,
        map_natural,
        map_adv,
        mpc,
        rpc,
        corruption,
    })
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    create_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(v).expect("value serializes") + "\n").at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&fs::read_to_string(path).at(path)?).map_err(|e| Error::data(path, e))
}

pub fn images_of(path: &Path) -> Result<Vec<Tensor>> {
    Ok(load_samples(path)?.into_iter().map(|s| s.image).collect())
}
