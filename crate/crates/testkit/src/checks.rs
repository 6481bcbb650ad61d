//! One function per library-level acceptance criterion. Each runs the full
//! case count and reports instead of panicking, so the acceptance target can
//! print every line before failing.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use cgt_core::coverage::{
    profile_dataset, single_input_coverage, summarize_trace, CoverageKind, CoverageState, MetricSelection,
    NeuronProfile,
};
use cgt_core::eval::{average_precision, corruption_scores, dataset_map};
use cgt_core::fuzz::{is_bug, run_stage1, run_stage2, BugStore, Evaluator, FuzzConfig, Verdict};
use cgt_core::mutation::{
    acceptance_test, apply_corruption, apply_enhancement, apply_geometric, flip_horizontal, mutate_natural, scaled_len,
    AcceptanceParams, Corruption, Enhancement, GeometricParams, NaturalParams,
};
use cgt_core::nn::forward_with_trace;
use cgt_core::rng;
use cgt_core::synth::{render, SceneSpec};
use cgt_core::train::{backward_gradients, batch_loss_grad, LossWeights};
use cgt_core::{BBox, Sample, Shape, Tensor};
use rand::Rng;

use crate::gen::{self, Fixture, FIXTURE_DECODE};
use crate::oracle;
use crate::Outcome;

pub const NC_THRESHOLDS: [f32; 3] = [0.25, 0.5, 0.75];

fn finish(start: Instant, limit: Option<Duration>, failures: Vec<String>, summary: String) -> Outcome {
    let elapsed = start.elapsed();
    let mut failures = failures;
    if let Some(limit) = limit {
        if elapsed > limit {
            failures.push(format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()));
        }
    }
    let detail = if failures.is_empty() {
        summary
    } else {
        let shown: Vec<&str> = failures.iter().take(3).map(String::as_str).collect();
        format!("{} failure(s): {}", failures.len(), shown.join("; "))
    };
    Outcome {
        passed: failures.is_empty(),
        detail,
        elapsed,
    }
}

/// Library coverage of one trace in the oracle's shape.
fn library_coverage(
    kind: CoverageKind,
    trace: &cgt_core::nn::ActivationTrace,
    profile: Option<&NeuronProfile>,
    t: f32,
) -> oracle::OracleCoverage {
    let s = summarize_trace(trace).expect("finite trace");
    let t = (kind == CoverageKind::Nc).then_some(t);
    let r = single_input_coverage(kind, &s, profile, t).expect("valid coverage call");
    oracle::OracleCoverage {
        ratio: r.ratio(),
        upper: r.upper,
        lower: r.lower,
    }
}

/// A profile whose ranges straddle the observed means so every corner case
/// (above, below, inside, equal to a bound) occurs.
fn straddling_profile(r: &mut rng::ChaCha8Rng, summary: &cgt_core::coverage::ActivationSummary) -> NeuronProfile {
    let mut low = Vec::new();
    let mut high = Vec::new();
    for &m in &summary.raw {
        let spread = 0.1 + m.abs() * 0.5;
        let (lo, hi) = match r.random_range(0..5) {
            0 => (m, m),
            1 => (m - spread, m - spread * 0.5),
            2 => (m + spread * 0.5, m + spread),
            3 => (m - spread, m + spread),
            _ => (m - spread * r.random::<f32>(), m + spread * (r.random::<f32>() - 0.5)),
        };
        low.push(lo.min(hi));
        high.push(lo.max(hi));
    }
    NeuronProfile {
        neurons: summary.neurons.clone(),
        low,
        high,
        source: "straddle".into(),
        count: 1,
    }
}

/// Library NC / NBC / SNAC against the per-neuron oracle on 100 random
/// graphs, five inputs each, single-input and accumulated. Zero tolerance.
pub fn coverage_oracle() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut comparisons = 0usize;
    for case in 0..100u64 {
        let mut r = rng::stream(0xc0fe, &[case]);
        let g = gen::tiny_graph(&mut r, 200);
        if g.neuron_count() > 200 {
            failures.push(format!("case {case}: generator produced {} neurons", g.neuron_count()));
        }
        let total = g.neuron_count();
        let mut runs: Vec<(CoverageKind, f32)> = NC_THRESHOLDS.iter().map(|&t| (CoverageKind::Nc, t)).collect();
        runs.extend([(CoverageKind::Nbc, 0.0), (CoverageKind::Snac, 0.0)]);
        let mut states: Vec<(CoverageKind, f32, CoverageState, oracle::OracleCoverage)> = runs
            .iter()
            .map(|&(kind, t)| {
                let thr = (kind == CoverageKind::Nc).then_some(t);
                let empty = oracle::OracleCoverage {
                    upper: BTreeSet::new(),
                    lower: BTreeSet::new(),
                    ratio: 0.0,
                };
                (kind, t, CoverageState::new(kind, thr, total), empty)
            })
            .collect();
        let mut profile = None;
        for input in 0..5 {
            let img = gen::image(&mut r, g.input_shape());
            let (_, trace) = forward_with_trace(&g, &img).expect("forward");
            for (layer, naive) in trace.layers.iter().zip(oracle::naive_channel_means(&g, &img)) {
                for (&m, n) in layer.channel_means.iter().zip(naive) {
                    if (m as f64 - n).abs() > 1e-4 * (1.0 + n.abs()) {
                        failures.push(format!("case {case}: channel mean {m} vs direct convolution {n}"));
                    }
                }
            }
            let summary = summarize_trace(&trace).expect("finite");
            let p = profile.get_or_insert_with(|| straddling_profile(&mut r, &summary)).clone();
            let random_t = r.random_range(0.0..1.0);
            let lib = library_coverage(CoverageKind::Nc, &trace, None, random_t);
            let ora = oracle::coverage(CoverageKind::Nc, &trace, None, random_t);
            comparisons += 1;
            if lib != ora {
                failures.push(format!("case {case} input {input} NC t={random_t}: {lib:?} vs {ora:?}"));
            }
            for (kind, t, state, acc) in &mut states {
                let prof = (*kind != CoverageKind::Nc).then_some(&p);
                let lib = library_coverage(*kind, &trace, prof, *t);
                let ora = oracle::coverage(*kind, &trace, prof, *t);
                comparisons += 1;
                if lib != ora {
                    failures.push(format!("case {case} input {input} {kind:?} t={t}: {lib:?} vs {ora:?}"));
                }
                let thr = (*kind == CoverageKind::Nc).then_some(*t);
                let single = single_input_coverage(*kind, &summary, prof, thr).expect("coverage");
                *state = state.clone().accumulate(&single).expect("compatible");
                acc.upper.extend(ora.upper.iter().copied());
                acc.lower.extend(ora.lower.iter().copied());
            }
        }
        for (kind, t, state, acc) in &states {
            let expect = match kind {
                CoverageKind::Nbc => (acc.upper.len() + acc.lower.len()) as f64 / (2 * total) as f64,
                _ => acc.upper.len() as f64 / total as f64,
            };
            comparisons += 1;
            if state.upper != acc.upper || state.lower != acc.lower || state.ratio() != expect {
                failures.push(format!("case {case} accumulated {kind:?} t={t} differs"));
            }
        }
    }
    finish(
        start,
        Some(Duration::from_secs(60)),
        failures,
        format!("{comparisons} set/ratio comparisons on 100 graphs, all exact"),
    )
}

/// Structural identities of the coverage metrics on 1000 random cases.
pub fn coverage_identities() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for case in 0..1000u64 {
        let mut r = rng::stream(0x1de7, &[case]);
        let g = gen::tiny_graph(&mut r, 60);
        let profiling: Vec<Tensor> = (0..r.random_range(1..5)).map(|_| gen::image(&mut r, g.input_shape())).collect();
        let fresh: Vec<Tensor> = (0..r.random_range(1..5)).map(|_| gen::image(&mut r, g.input_shape())).collect();
        let profile = profile_dataset(&g, &profiling, "case").expect("profile");
        let total = g.neuron_count();
        let mut acc: Vec<CoverageState> = [CoverageKind::Nbc, CoverageKind::Snac]
            .into_iter()
            .map(|k| CoverageState::new(k, None, total))
            .chain(NC_THRESHOLDS.iter().map(|&t| CoverageState::new(CoverageKind::Nc, Some(t), total)))
            .collect();
        let mut prev = vec![0.0f64; acc.len()];
        for (i, img) in profiling.iter().chain(&fresh).enumerate() {
            let in_profile = i < profiling.len();
            let s = cgt_core::coverage::summarize(&g, img).expect("summary");
            let results: Vec<_> = acc
                .iter()
                .map(|st| single_input_coverage(st.kind, &s, Some(&profile), st.threshold).expect("coverage"))
                .collect();
            let (nbc, snac) = (results[0].ratio(), results[1].ratio());
            let lower_part = 2.0 * nbc - snac;
            if !(0.0..=1.0).contains(&lower_part) {
                failures.push(format!("case {case}: 2*NBC - SNAC = {lower_part}"));
            }
            let nc: Vec<f64> = results[2..].iter().map(|c| c.ratio()).collect();
            if !(nc[0] >= nc[1] && nc[1] >= nc[2]) {
                failures.push(format!("case {case}: NC not monotone in t: {nc:?}"));
            }
            if in_profile && (nbc != 0.0 || snac != 0.0) {
                failures.push(format!("case {case}: profiling input has NBC {nbc}, SNAC {snac}"));
            }
            for (k, (st, res)) in acc.iter_mut().zip(&results).enumerate() {
                *st = st.clone().accumulate(res).expect("compatible");
                let now = st.ratio();
                if now < prev[k] {
                    failures.push(format!("case {case}: accumulated {:?} fell {} -> {now}", st.kind, prev[k]));
                }
                prev[k] = now;
            }
            if in_profile && i + 1 == profiling.len() && (acc[0].ratio() != 0.0 || acc[1].ratio() != 0.0) {
                failures.push(format!("case {case}: profiling set accumulates nonzero NBC/SNAC"));
            }
            let acc_nc: Vec<f64> = acc[2..].iter().map(CoverageState::ratio).collect();
            if !(acc_nc[0] >= acc_nc[1] && acc_nc[1] >= acc_nc[2]) {
                failures.push(format!("case {case}: accumulated NC not monotone in t: {acc_nc:?}"));
            }
            let acc_lower = 2.0 * acc[0].ratio() - acc[1].ratio();
            if !(0.0..=1.0).contains(&acc_lower) {
                failures.push(format!("case {case}: accumulated 2*NBC - SNAC = {acc_lower}"));
            }
        }
    }
    finish(start, None, failures, "1000 cases, all identities hold".into())
}

/// Per-image AP against the prefix-rematching oracle on 1000 instances with
/// at most five predictions and five ground truths.
pub fn ap_oracle() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut nontrivial = 0;
    for case in 0..1000u64 {
        let mut r = rng::stream(0xa9, &[case]);
        let n_gt = r.random_range(0..=5);
        let n_pred = r.random_range(0..=5);
        let gts: Vec<BBox> = (0..n_gt).map(|_| gen::bbox(&mut r, 64.0, 64.0, 2.0)).collect();
        let preds = gen::detections(&mut r, &gts, n_pred, 64.0, 64.0);
        let lib = average_precision(&preds, &gts, 0.5);
        let ora = oracle::average_precision(&preds, &gts, 0.5);
        if lib > 0.0 && lib < 1.0 {
            nontrivial += 1;
        }
        let err = (lib - ora).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            failures.push(format!("case {case}: AP {lib} vs oracle {ora}"));
        }
    }
    finish(
        start,
        None,
        failures,
        format!("1000 cases ({nontrivial} with 0 < AP < 1), max error {worst:.1e}"),
    )
}

/// Reverse-mode gradients against central differences of the 64-bit loss on
/// 20 random small nets and batches.
pub fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let lw = LossWeights::default();
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    let mut params = 0;
    for case in 0..20u64 {
        let mut r = rng::stream(0x96ad, &[case]);
        let g = gen::tiny_graph(&mut r, 24);
        params += g.param_count();
        let n = r.random_range(1..4);
        let samples = gen::samples(&mut r, g.input_shape(), n);
        let batch: Vec<&Sample> = samples.iter().collect();
        let w64: Vec<f64> = g.weights().iter().map(|&v| v as f64).collect();
        let loss = |w: &[f64]| batch_loss_grad::<f64>(&g, w, &batch, lw).expect("loss").0;
        let fd = oracle::central_differences(&w64, 1e-6, loss);
        let (_, g64) = batch_loss_grad::<f64>(&g, &w64, &batch, lw).expect("grad");
        let (_, g32) = backward_gradients(&g, &batch, lw).expect("grad");
        let g32: Vec<f64> = g32.iter().map(|&v| v as f64).collect();
        let (e64, e32) = (oracle::relative_error(&g64, &fd), oracle::relative_error(&g32, &fd));
        worst64 = worst64.max(e64);
        worst32 = worst32.max(e32);
        if e64 >= 1e-5 {
            failures.push(format!("case {case}: 64-bit relative error {e64:.2e}"));
        }
        if e32 >= 1e-3 {
            failures.push(format!("case {case}: 32-bit relative error {e32:.2e}"));
        }
    }
    finish(
        start,
        Some(Duration::from_secs(120)),
        failures,
        format!("20 nets, {params} weights; worst relative error 32-bit {worst32:.1e}, 64-bit {worst64:.1e}"),
    )
}

/// Identity, involution, determinism and annotation soundness of the
/// mutation operators.
pub fn mutation_suite() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let shape = Shape::new(24, 32, 3);
    for case in 0..50u64 {
        let mut r = rng::stream(0x3a7, &[case]);
        let mut img = gen::image(&mut r, shape);
        if case % 2 == 0 {
            img = img.quantize_u8();
        }
        for op in Enhancement::ALL {
            if apply_enhancement(&img, op, 1.0).expect("valid factor") != img {
                failures.push(format!("case {case}: {op:?} at factor 1.0 changed the image"));
            }
        }
        let boxes: Vec<BBox> = (0..3).map(|_| gen::bbox(&mut r, 32.0, 24.0, 1.0)).collect();
        let (once, b1) = flip_horizontal(&img, &boxes);
        let (twice, b2) = flip_horizontal(&once, &b1);
        if twice != img || once == img {
            failures.push(format!("case {case}: flip is not a pixel involution"));
        }
        for (a, b) in boxes.iter().zip(&b2) {
            let d = (a.x_min - b.x_min).abs().max((a.x_max - b.x_max).abs());
            if d > 1e-4 || a.y_min != b.y_min || a.y_max != b.y_max {
                failures.push(format!("case {case}: double flip moved box {a:?} to {b:?}"));
            }
        }
        let params = AcceptanceParams {
            alpha: r.random_range(0.0..1.0),
            beta: r.random_range(0.0..1.0),
        };
        if !acceptance_test(&img, &img, &params).expect("same shape") {
            failures.push(format!("case {case}: acceptance_test(x, x) rejected under {params:?}"));
        }
        let id = mutate_natural(&img, &boxes, &img, case, &NaturalParams::identity()).expect("valid params");
        match id {
            Some((out, ob, _)) if out == img && ob == boxes => {}
            _ => failures.push(format!("case {case}: identity mutation changed its input")),
        }
    }
    let img = gen::image(&mut rng::stream(0x3a8, &[]), shape).quantize_u8();
    for kind in Corruption::ALL {
        for sev in 1..=5 {
            let a = apply_corruption(&img, kind, sev, 42).expect("valid severity");
            let b = apply_corruption(&img, kind, sev, 42).expect("valid severity");
            if a != b {
                failures.push(format!("{kind:?} severity {sev} is not deterministic"));
            }
        }
    }
    // synthetic re-render: transform the scene description, render again,
    // and compare to the operator's annotation transform
    let canvas = Shape::new(96, 96, 3);
    let mut max_err = 0.0f32;
    for case in 0..100u64 {
        let mut r = rng::stream(0x3a9, &[case]);
        let spec = SceneSpec::sample(case, canvas);
        let scene = render(&spec);
        let scale = r.random_range(0.5..=1.0f32);
        let side = scaled_len(96, scale);
        let g = GeometricParams {
            flip: r.random_bool(0.5),
            dx: r.random_range(-2..=2),
            dy: r.random_range(-2..=2),
            scale,
            offset: (r.random_range(0..=96 - side), r.random_range(0..=96 - side)),
        };
        let (_, tb) = apply_geometric(&scene.image, &scene.boxes, &g).expect("valid params");
        let (ox, oy, sf) = (g.offset.0 as f32, g.offset.1 as f32, side as f32);
        let rb: Vec<BBox> = render(&spec.transformed(&g))
            .boxes
            .iter()
            .map(|b| BBox::raw(b.x_min.max(ox), b.y_min.max(oy), b.x_max.min(ox + sf), b.y_max.min(oy + sf)))
            .collect();
        if tb.len() != rb.len() {
            failures.push(format!("scene {case}: {} transformed boxes vs {} re-rendered", tb.len(), rb.len()));
            continue;
        }
        for (a, b) in tb.iter().zip(&rb) {
            for (u, v) in [(a.x_min, b.x_min), (a.y_min, b.y_min), (a.x_max, b.x_max), (a.y_max, b.y_max)] {
                max_err = max_err.max((u - v).abs());
            }
        }
    }
    if max_err > 1.0 {
        failures.push(format!("re-render annotation error {max_err:.3} px"));
    }
    finish(
        start,
        None,
        failures,
        format!("50 images, 40 corruption cells, 100 re-rendered scenes (max box error {max_err:.3} px)"),
    )
}

/// Mutant hashes of the stage 1 + 2 bug store for one predicate setting.
pub fn bug_hashes(fx: &Fixture, profile: &NeuronProfile, metric: MetricSelection, alpha: f64) -> BTreeSet<String> {
    let cfg = FuzzConfig {
        metric,
        alpha_map: alpha,
        n_samples: 40,
        n_rounds_stage1: 2,
        n_rounds_stage2: 2,
        decode: FIXTURE_DECODE,
        seed: 5,
        ..FuzzConfig::default()
    };
    let ev = Evaluator {
        graph: &fx.model,
        profile: Some(profile),
        decode: cfg.decode,
    };
    let mut store = BugStore::new();
    run_stage1(&ev, &fx.held_out, &cfg, &mut store).expect("stage 1");
    run_stage2(&ev, &fx.held_out, &cfg, &mut store).expect("stage 2");
    store.hashes().clone()
}

/// Coverage-gated bug sets are subsets of the ungated set, and the
/// α = 0.3 set is a subset of the α = 0.6 set, for every metric.
pub fn bug_predicate_structure(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    // predicate level, exhaustively over a grid of AP pairs
    for i in 0..=20 {
        for j in 0..=20 {
            let (o, m) = (i as f64 / 20.0, j as f64 / 20.0);
            let gated = is_bug(o, m, false, 0.6);
            let ungated = is_bug(o, m, true, 0.6);
            if gated == Verdict::Bug && ungated != Verdict::Bug {
                failures.push(format!("is_bug({o}, {m}): gated bug without ungated bug"));
            }
            if is_bug(o, m, true, 0.3) == Verdict::Bug && ungated != Verdict::Bug {
                failures.push(format!("is_bug({o}, {m}): alpha 0.3 bug but not alpha 0.6"));
            }
        }
    }
    let images: Vec<&Tensor> = fx.train.iter().map(|s| &s.image).collect();
    let profile = profile_dataset(&fx.model, images, "fixture").expect("profile");
    let mut counts = Vec::new();
    let mut by: Vec<(MetricSelection, f64, BTreeSet<String>)> = Vec::new();
    for metric in MetricSelection::ALL {
        for alpha in [0.6, 0.3] {
            let h = bug_hashes(fx, &profile, metric, alpha);
            counts.push(format!("{}@{alpha}={}", metric.label(), h.len()));
            by.push((metric, alpha, h));
        }
    }
    let get = |m: MetricSelection, a: f64| &by.iter().find(|(mm, aa, _)| *mm == m && *aa == a).expect("ran").2;
    if get(MetricSelection::None, 0.6).is_empty() {
        failures.push("ungated alpha 0.6 run found no bugs; the subset checks would be vacuous".into());
    }
    for (metric, alpha, set) in &by {
        if !set.is_subset(get(MetricSelection::None, *alpha)) {
            failures.push(format!("{} at alpha {alpha} is not a subset of the ungated set", metric.label()));
        }
        if *alpha == 0.3 && !set.is_subset(get(*metric, 0.6)) {
            failures.push(format!("{} alpha 0.3 set is not a subset of alpha 0.6", metric.label()));
        }
    }
    finish(start, None, failures, format!("bug counts {}", counts.join(", ")))
}

/// mPC / rPC identities on random grids and on the fixture's real 8x5 grid.
pub fn corruption_score_identities(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for case in 0..1000u64 {
        let mut r = rng::stream(0xc0a, &[case]);
        let clean: f64 = r.random_range(0.01..1.0);
        let capped = case % 2 == 0;
        let grid: Vec<f64> = (0..40)
            .map(|_| if capped { clean * r.random::<f64>() } else { r.random::<f64>() })
            .collect();
        let (mpc, rpc) = corruption_scores(&grid, clean).expect("valid grid");
        let mean = grid.iter().sum::<f64>() / 40.0;
        if rpc != mpc / clean || (mpc - mean).abs() > 1e-12 {
            failures.push(format!("case {case}: mpc {mpc} rpc {rpc} clean {clean}"));
        }
        if capped && rpc > 1.0 {
            failures.push(format!("case {case}: rpc {rpc} > 1 with every cell below clean"));
        }
    }
    let subset: Vec<Sample> = fx.held_out.iter().take(30).cloned().collect();
    let clean = dataset_map(&fx.model, &subset, FIXTURE_DECODE).expect("map");
    let mut grid = Vec::new();
    for kind in Corruption::ALL {
        for sev in 1..=5u8 {
            let corrupted: Vec<Sample> = subset
                .iter()
                .map(|s| {
                    let img = apply_corruption(&s.image, kind, sev, rng::hash_str(&s.id)).expect("valid");
                    Sample::new(s.id.clone(), img.quantize_u8(), s.boxes.clone())
                })
                .collect();
            grid.push(dataset_map(&fx.model, &corrupted, FIXTURE_DECODE).expect("map"));
        }
    }
    let real = match corruption_scores(&grid, clean) {
        Ok((mpc, rpc)) => {
            if rpc != mpc / clean {
                failures.push(format!("real grid: rpc {rpc} != {mpc} / {clean}"));
            }
            if grid.iter().all(|&m| m <= clean) && rpc > 1.0 {
                failures.push(format!("real grid: rpc {rpc} > 1"));
            }
            format!("real grid clean {clean:.3}, mPC {mpc:.3}, rPC {rpc:.3}")
        }
        Err(e) => {
            failures.push(format!("real grid: {e}"));
            String::new()
        }
    };
    finish(start, None, failures, format!("1000 random grids; {real}"))
}
