//! Experiment plans over (metric, alpha) cells and their results.

use std::collections::BTreeSet;

use cgt_core::coverage::{single_input_coverage, summarize, CoverageKind, CoverageState, MetricSelection};
use cgt_core::eval::relative_change;
use cgt_core::nn::ModelGraph;
use cgt_core::Tensor;
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{
    self, build_retrain_set, cell_name, evaluate, images_of, Mode, Scores, ADV_TEST, CGT_DATA, CLEAN_TEST,
};
use crate::report::write_report;
use crate::run::{require, RunDir};

pub const NC_THRESHOLDS: [f32; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub metric: MetricSelection,
    pub alpha_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub mode: Mode,
    pub cells: Vec<Cell>,
    /// Overrides the fuzzing seed of the run config when set.
    pub seed: Option<u64>,
}

impl Default for ExperimentPlan {
    /// Every metric selection at alpha 0.6 and 0.3.
    fn default() -> Self {
        let cells = MetricSelection::ALL
            .into_iter()
            .flat_map(|metric| [0.6, 0.3].map(|alpha_map| Cell { metric, alpha_map }))
            .collect();
        Self {
            mode: Mode::Natural,
            cells,
            seed: None,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Usage("experiment plan has no cells".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.cells {
            if !seen.insert((c.metric, c.alpha_map.to_bits())) {
                return Err(Error::Usage(format!(
                    "duplicate cell ({}, {})",
                    c.metric.label(),
                    c.alpha_map
                )));
            }
        }
        Ok(())
    }
}

/// Percent change of each score relative to the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Changes {
    pub map_clean: Option<f64>,
    pub map_natural: Option<f64>,
    pub map_adv: Option<f64>,
    pub mpc: Option<f64>,
    pub rpc: Option<f64>,
}

impl Changes {
    pub fn between(new: &Scores, base: &Scores) -> Self {
        let rel = |n: Option<f64>, b: Option<f64>| relative_change(n?, b?).ok();
        Self {
            map_clean: rel(Some(new.map_clean), Some(base.map_clean)),
            map_natural: rel(Some(new.map_natural), Some(base.map_natural)),
            map_adv: rel(new.map_adv, base.map_adv),
            mpc: rel(Some(new.mpc), Some(base.mpc)),
            rpc: rel(new.rpc, base.rpc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub metric: MetricSelection,
    pub alpha_map: f64,
    pub bugs: usize,
    pub scores: Scores,
    pub change: Changes,
}

/// Accumulated NC of the baseline over one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcRow {
    pub set: String,
    pub inputs: usize,
    /// NC at each of [`NC_THRESHOLDS`], as a fraction.
    pub nc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub mode: Mode,
    pub baseline: Scores,
    pub baseline_nc: Vec<NcRow>,
    pub cells: Vec<CellResult>,
}

pub fn accumulated_nc<'a>(model: &ModelGraph, set: &str, images: impl IntoIterator<Item = &'a Tensor>) -> Result<NcRow> {
    let total = model.neuron_count();
    let mut states: Vec<CoverageState> = NC_THRESHOLDS
        .iter()
        .map(|&t| CoverageState::new(CoverageKind::Nc, Some(t), total))
        .collect();
    let mut inputs = 0;
    for img in images {
        let s = summarize(model, img)?;
        for st in &mut states {
            let r = single_input_coverage(CoverageKind::Nc, &s, None, st.threshold)?;
            *st = st.clone().accumulate(&r)?;
        }
        inputs += 1;
    }
    Ok(NcRow {
        set: set.into(),
        inputs,
        nc: states.iter().map(CoverageState::ratio).collect(),
    })
}

fn baseline_nc(run: &RunDir, cfg: &RunConfig, model: &ModelGraph) -> Result<Vec<NcRow>> {
    let mut rows = vec![accumulated_nc(
        model,
        "clean",
        &images_of(&run.split_manifest(CLEAN_TEST))?,
    )?];
    let adv = run.split_manifest(ADV_TEST);
    if adv.exists() {
        rows.push(accumulated_nc(model, "adversarial", &images_of(&adv)?)?);
    }
    let mut grid = Vec::new();
    for &kind in &cfg.eval.corruptions {
        for &sev in &cfg.eval.severities {
            grid.extend(images_of(&run.corruption_manifest(kind, sev))?);
        }
    }
    rows.push(accumulated_nc(model, "corruption", &grid)?);
    Ok(rows)
}

/// Runs every cell of the plan against one shared baseline and writes
/// `experiment/results.json` plus the report.
pub fn run_experiment(run: &RunDir, cfg: &RunConfig, plan: &ExperimentPlan) -> Result<ExperimentResults> {
    plan.validate()?;
    require(&run.split_manifest(CGT_DATA), "split")?;
    let model = if run.baseline_model().exists() {
        pipeline::load_baseline(run)?
    } else {
        info!("no baseline model; training one");
        pipeline::train_baseline(run, cfg)?
    };
    if plan.cells.iter().any(|c| c.metric.needs_profile()) && !run.profile().exists() {
        pipeline::profile(run)?;
    }
    if plan.mode == Mode::Adversarial {
        require(&run.split_manifest(ADV_TEST), "gen-adv")?;
    }
    let baseline = evaluate(run, cfg, &model)?;
    let baseline_nc = baseline_nc(run, cfg, &model)?;
    let mut cells = Vec::with_capacity(plan.cells.len());
    for c in &plan.cells {
        let mut cc = cfg.clone();
        cc.fuzz.metric = c.metric;
        cc.fuzz.alpha_map = c.alpha_map;
        if let Some(seed) = plan.seed {
            cc.fuzz.seed = seed;
        }
        let name = cell_name(plan.mode, c.metric, c.alpha_map);
        let (summary, _) = pipeline::fuzz(run, &cc, plan.mode)?;
        build_retrain_set(run, &name)?;
        let retrained = pipeline::retrain(run, &cc, &name)?;
        let scores = evaluate(run, &cc, &retrained)?;
        pipeline::write_json(&run.cell_dir(&name).join("scores.json"), &scores)?;
        info!(
            "{name}: {} bugs, clean {:.4}, natural {:.4}",
            summary.bugs, scores.map_clean, scores.map_natural
        );
        cells.push(CellResult {
            cell: name,
            metric: c.metric,
            alpha_map: c.alpha_map,
            bugs: summary.bugs,
            change: Changes::between(&scores, &baseline),
            scores,
        });
    }
    let results = ExperimentResults {
        mode: plan.mode,
        baseline,
        baseline_nc,
        cells,
    };
    pipeline::write_json(&run.results(), &results)?;
    write_report(run, &results)?;
    Ok(results)
}
