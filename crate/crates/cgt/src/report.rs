//! CSV and Markdown rendering of experiment results.

use std::fmt::Write as _;
use std::fs;

use cgt_core::coverage::MetricSelection;

use crate::error::{IoContext, Result};
use crate::experiment::{CellResult, Changes, ExperimentResults, NC_THRESHOLDS};
use crate::pipeline::Scores;
use crate::run::RunDir;

/// Score columns shared by every table, with their extractors.
type ChangeFn = fn(&Changes) -> Option<f64>;
const COLUMNS: [(&str, ChangeFn); 5] = [
    ("mAP_clean", |c| c.map_clean),
    ("mAP_natural", |c| c.map_natural),
    ("mAP_adv", |c| c.map_adv),
    ("mPC", |c| c.mpc),
    ("rPC", |c| c.rpc),
];

pub fn metric_title(m: MetricSelection) -> &'static str {
    match m {
        MetricSelection::None => "None",
        MetricSelection::Nc => "NC",
        MetricSelection::Snac => "SNAC",
        MetricSelection::Nbc => "NBC",
        MetricSelection::NbcSnac => "NBC+SNAC",
    }
}

/// Arithmetic mean of the present values, `None` if there are none.
pub fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn num(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => "n/a".into(),
    }
}

fn alphas(cells: &[CellResult]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for c in cells {
        if !out.iter().any(|a| a.to_bits() == c.alpha_map.to_bits()) {
            out.push(c.alpha_map);
        }
    }
    out
}

fn metrics(cells: &[CellResult]) -> Vec<MetricSelection> {
    let mut out = Vec::new();
    for c in cells {
        if !out.contains(&c.metric) {
            out.push(c.metric);
        }
    }
    out
}

fn score_row(s: &Scores) -> [Option<f64>; 5] {
    [Some(s.map_clean), Some(s.map_natural), s.map_adv, Some(s.mpc), s.rpc]
}

pub fn render_csv(r: &ExperimentResults) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["mode", "metric", "alpha_map", "bugs"];
    header.extend(["map_clean", "map_natural", "map_adv", "mpc", "rpc"]);
    header.extend(["rel_map_clean", "rel_map_natural", "rel_map_adv", "rel_mpc", "rel_rpc"]);
    w.write_record(&header).expect("in-memory write");
    let mut row = |metric: &str, alpha: String, bugs: String, s: &Scores, ch: Option<&Changes>| {
        let mut rec = vec![r.mode.name().to_string(), metric.to_string(), alpha, bugs];
        rec.extend(score_row(s).iter().map(|v| num(*v, 6)));
        rec.extend(COLUMNS.iter().map(|(_, f)| num(ch.and_then(f), 4)));
        w.write_record(&rec).expect("in-memory write");
    };
    row("baseline", String::new(), String::new(), &r.baseline, None);
    for c in &r.cells {
        row(c.metric.label(), c.alpha_map.to_string(), c.bugs.to_string(), &c.scores, Some(&c.change));
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn render_markdown(r: &ExperimentResults) -> String {
    let mut md = String::new();
    let mode = r.mode.name();
    let _ = writeln!(md, "# Experiment report ({mode} mutations)\n");

    let _ = writeln!(md, "## Baseline accumulated neuron coverage (NC, %)\n");
    let th: Vec<String> = NC_THRESHOLDS.iter().map(|t| format!("t={t}")).collect();
    let _ = writeln!(md, "| set | inputs | {} |", th.join(" | "));
    let _ = writeln!(md, "|---|---:|{}", "---:|".repeat(th.len()));
    for row in &r.baseline_nc {
        let v: Vec<String> = row.nc.iter().map(|x| format!("{:.2}", 100.0 * x)).collect();
        let _ = writeln!(md, "| {} | {} | {} |", row.set, row.inputs, v.join(" | "));
    }

    let _ = writeln!(md, "\n## Scores\n");
    let names: Vec<&str> = COLUMNS.iter().map(|c| c.0).collect();
    let _ = writeln!(md, "| bug definition | alpha_mAP | bugs | {} |", names.join(" | "));
    let _ = writeln!(md, "|---|---:|---:|{}", "---:|".repeat(names.len()));
    let fmt_scores = |s: &Scores| score_row(s).iter().map(|v| num(*v, 4)).collect::<Vec<_>>().join(" | ");
    let _ = writeln!(md, "| baseline | | | {} |", fmt_scores(&r.baseline));
    for c in &r.cells {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            metric_title(c.metric),
            c.alpha_map,
            c.bugs,
            fmt_scores(&c.scores)
        );
    }

    let alphas = alphas(&r.cells);
    let metrics = metrics(&r.cells);
    let alpha_head: Vec<String> = alphas.iter().map(|a| format!("alpha_mAP={a}")).collect();
    for (name, f) in COLUMNS {
        let _ = writeln!(md, "\n## Relative change in {name} compared to the baseline (%)\n");
        let _ = writeln!(md, "| bug definition | {} |", alpha_head.join(" | "));
        let _ = writeln!(md, "|---|{}", "---:|".repeat(alphas.len()));
        for m in &metrics {
            let vals: Vec<String> = alphas
                .iter()
                .map(|a| {
                    let v = r
                        .cells
                        .iter()
                        .find(|c| c.metric == *m && c.alpha_map.to_bits() == a.to_bits())
                        .and_then(|c| f(&c.change));
                    num(v, 2)
                })
                .collect();
            let _ = writeln!(md, "| {} | {} |", metric_title(*m), vals.join(" | "));
        }
    }

    let _ = writeln!(md, "\n## Mean relative change with and without coverage in the bug definition (%)\n");
    let _ = writeln!(md, "| bug definition | cells | {} |", names.join(" | "));
    let _ = writeln!(md, "|---|---:|{}", "---:|".repeat(names.len()));
    for (label, with) in [("without coverage", false), ("with coverage", true)] {
        let group: Vec<&CellResult> = r.cells.iter().filter(|c| c.metric.uses_coverage() == with).collect();
        let vals: Vec<String> = COLUMNS
            .iter()
            .map(|(_, f)| num(mean(group.iter().map(|c| f(&c.change))), 2))
            .collect();
        let _ = writeln!(md, "| {label} | {} | {} |", group.len(), vals.join(" | "));
    }

    let _ = writeln!(md, "\n## Mean relative change per robustness type (%)\n");
    let _ = writeln!(md, "| robustness type | {} | all |", alpha_head.join(" | "));
    let _ = writeln!(md, "|---|{}---:|", "---:|".repeat(alphas.len()));
    for (name, f) in COLUMNS {
        let mut vals: Vec<String> = alphas
            .iter()
            .map(|a| {
                let v = r
                    .cells
                    .iter()
                    .filter(|c| c.alpha_map.to_bits() == a.to_bits())
                    .map(|c| f(&c.change));
                num(mean(v), 2)
            })
            .collect();
        vals.push(num(mean(r.cells.iter().map(|c| f(&c.change))), 2));
        let _ = writeln!(md, "| {name} | {} |", vals.join(" | "));
    }
    md
}

pub fn write_report(run: &RunDir, r: &ExperimentResults) -> Result<()> {
    let dir = run.report_dir();
    fs::create_dir_all(&dir).at(&dir)?;
    let csv = dir.join("report.csv");
    fs::write(&csv, render_csv(r)).at(&csv)?;
    let md = dir.join("report.md");
    fs::write(&md, render_markdown(r)).at(&md)
}
