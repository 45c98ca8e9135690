//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line each. A criterion that panics fails the target; a criterion that
//! runs to completion but misses its threshold only fails it when
//! `ACCEPTANCE_STRICT=1`. Artifacts go under `$CARGO_TARGET_TMPDIR/acceptance`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tabstruct::checkpoint;
use tabstruct::cli::{cmd_visualize, InferArgs};
use tabstruct::core::datagen::{generate, GenConfig, Sample, VerticalAlign};
use tabstruct::core::metrics::grits::{align_2d, grits, GritsVariant};
use tabstruct::core::metrics::teds::{teds, tree_edit_distance};
use tabstruct::core::metrics::{car_relations, weighted_f1, TableTree};
use tabstruct::core::quant::{dequantize_coord, quantize_coord};
use tabstruct::core::tokens::{detokenize, tokenize};
use tabstruct::core::TableGrid;
use tabstruct::eval::{evaluate_predictions, predict_all, MetricSelection};
use tabstruct::infer::{attention_mass_inside, DecodeOptions};
use tabstruct::losses::{
    coordinate_loss, per_image_weights, structure_loss, visual_alignment_loss,
};
use tabstruct::model::{ModelConfig, TableModel};
use tabstruct::train::{held_out, Ablation, ExperimentConfig, Trainer};

/// Step budget of criterion 1 and its loss-based early exit.
const OVERFIT_STEPS: u64 = 2000;
const OVERFIT_EXIT_LOSS: f64 = 0.05;
/// Identical step budget of every ablation run in criterion 2.
const ABLATION_STEPS: u64 = 600;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn artifacts() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn main() {
    let criteria: Vec<(u8, &str, fn() -> Outcome)> = vec![
        (3, "gradient suite", criterion_3),
        (4, "loss closed forms", criterion_4),
        (5, "parallel decoding equivalence", criterion_5),
        (6, "tokenizer and quantizer", criterion_6),
        (7, "metric oracles", criterion_7),
        (1, "overfit fidelity", criterion_1),
        (2, "ablation direction", criterion_2),
        (8, "attention comparison artifact", criterion_8),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut lines = Vec::new();
    let mut failed = 0;
    let mut panicked = 0;
    for (n, name, run) in criteria {
        let id = format!("criterion_{n}");
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            panicked += 1;
            outcome(false, format!("panicked: {msg}"))
        });
        let line = format!(
            "criterion {n} ({name}): {} [{:.0}s] {}",
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
        println!("{line}");
        failed += usize::from(!result.pass);
        lines.push(line);
    }
    std::fs::write(artifacts().join("summary.txt"), lines.join("\n") + "\n").unwrap();
    if failed > 0 {
        println!("{failed} criteria failed ({panicked} panicked)");
    }
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if panicked > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rand_t = |rng: &mut ChaCha8Rng, shape: &[usize], scale: f64| {
        (common::random_tensor(shape, rng, DType::F64) * scale).unwrap()
    };
    let mut worst = [0f64; 3];
    for _ in 0..20 {
        let (b, t, v) = (
            rng.random_range(1..=3),
            rng.random_range(1..=6),
            rng.random_range(2..=16),
        );
        let logits = rand_t(&mut rng, &[b, t, v], 2.0);
        let targets: Vec<u32> = (0..b * t).map(|_| rng.random_range(0..v as u32)).collect();
        let targets = Tensor::from_vec(targets, (b, t), &Device::Cpu).unwrap();
        let mut mask: Vec<f64> = (0..b * t).map(|_| rng.random_range(0..2) as f64).collect();
        mask[0] = 1.0;
        let mask = Tensor::from_vec(mask, (b, t), &Device::Cpu).unwrap();
        let f = |x: &Tensor| structure_loss(x, &targets, &mask).unwrap();
        worst[0] = worst[0].max(common::finite_difference_error(&f, &logits, 1e-5));
    }
    for _ in 0..20 {
        let (k, n) = (rng.random_range(1..=5), rng.random_range(2..=17));
        let logits = rand_t(&mut rng, &[k, 4, n], 2.0);
        let targets: Vec<u32> = (0..4 * k).map(|_| rng.random_range(0..n as u32)).collect();
        let targets = Tensor::from_vec(targets, (k, 4), &Device::Cpu).unwrap();
        let images: Vec<usize> = (0..k).map(|_| rng.random_range(0..2)).collect();
        let w = per_image_weights(&images, 2);
        let f = |x: &Tensor| coordinate_loss(x, &targets, Some(&w)).unwrap().value;
        worst[1] = worst[1].max(common::finite_difference_error(&f, &logits, 1e-5));
    }
    for _ in 0..20 {
        let (k, d) = (rng.random_range(1..=5), rng.random_range(2..=16));
        let tau = rng.random_range(0.05..1.0);
        let a = rand_t(&mut rng, &[k, d], 1.0);
        let g = rand_t(&mut rng, &[k, d], 1.0);
        let fa = |x: &Tensor| visual_alignment_loss(x, &g, tau).unwrap().value;
        let fg = |x: &Tensor| visual_alignment_loss(&a, x, tau).unwrap().value;
        worst[2] = worst[2]
            .max(common::finite_difference_error(&fa, &a, 1e-5))
            .max(common::finite_difference_error(&fg, &g, 1e-5));
    }
    outcome(
        worst.iter().all(|&e| e <= 1e-3),
        format!(
            "max relative error: structure {:.2e}, coordinate {:.2e}, alignment {:.2e} (limit 1e-3)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn criterion_4() -> Outcome {
    let scalar = |t: &Tensor| t.to_scalar::<f64>().unwrap();
    let mut worst = [0f64; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let desk = ModelConfig::desk();
    let v = desk.vocab().len();
    for n in [2usize, 10, 57, 128] {
        let logits = Tensor::zeros((1, n - 1, v), DType::F64, &Device::Cpu).unwrap();
        let targets: Vec<u32> = (0..n - 1).map(|_| rng.random_range(0..v as u32)).collect();
        let targets = Tensor::from_vec(targets, (1, n - 1), &Device::Cpu).unwrap();
        let mask = Tensor::ones((1, n - 1), DType::F64, &Device::Cpu).unwrap();
        let got = scalar(&structure_loss(&logits, &targets, &mask).unwrap());
        worst[0] = worst[0].max((got - (n - 1) as f64 * (v as f64).ln()).abs());
    }
    for (k, n_bins) in [(1usize, desk.n_bins), (5, desk.n_bins), (3, 608)] {
        let n = n_bins as usize + 1;
        let logits = Tensor::zeros((k, 4, n), DType::F64, &Device::Cpu).unwrap();
        let targets: Vec<u32> = (0..4 * k).map(|_| rng.random_range(0..n as u32)).collect();
        let targets = Tensor::from_vec(targets, (k, 4), &Device::Cpu).unwrap();
        let got = scalar(&coordinate_loss(&logits, &targets, None).unwrap().value);
        worst[1] = worst[1].max((got - 4.0 * (n as f64).ln()).abs());
    }
    for k in [1usize, 2, 5, 16] {
        let row = common::random_tensor(&[1, 16], &mut rng, DType::F64);
        let f = row.repeat((k, 1)).unwrap();
        let got = scalar(&visual_alignment_loss(&f, &f, 0.04).unwrap().value);
        worst[2] = worst[2].max((got - k as f64 * (k as f64).ln()).abs());
    }
    outcome(
        worst.iter().all(|&e| e <= 1e-6),
        format!(
            "max absolute deviation: L_s {:.1e}, L_c {:.1e}, L_va {:.1e} (limit 1e-6)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn criterion_5() -> Outcome {
    let model = TableModel::new(ModelConfig::desk(), 5, DType::F32, &Device::Cpu).unwrap();
    let (worst, mismatches) = common::batched_vs_sequential(&model, 4, 100, 5);
    outcome(
        mismatches == 0,
        format!("{mismatches} of 100 cells differ; largest logit difference {worst:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad_grids = 0;
    for _ in 0..10_000 {
        let grid = support::random_grid(&mut rng, 6, 5);
        let seq = tokenize(&grid, 5).unwrap();
        let back = detokenize(&seq);
        if back.is_repaired() || !back.grid.same_structure(&grid) {
            bad_grids += 1;
        }
    }
    let mut violations = 0;
    let mut worst_ratio = 0f64;
    for _ in 0..100_000 {
        let (side, n_bins) = [(160.0, 160), (608.0, 608), (160.0, 37)][rng.random_range(0..3)];
        let x = rng.random_range(0.0..=side);
        let (q, _) = quantize_coord(x, side, n_bins);
        let err = (dequantize_coord(q, side, n_bins) - x).abs();
        let bound = side / (2.0 * n_bins as f64);
        worst_ratio = worst_ratio.max(err / bound);
        violations += usize::from(err > bound * (1.0 + 1e-12));
    }
    outcome(
        bad_grids == 0 && violations == 0,
        format!(
            "{bad_grids} of 10000 grids fail the round trip; {violations} of 100000 coordinates exceed the bound (worst error {worst_ratio:.4} of bound)"
        ),
    )
}

fn with_random_text(mut grid: TableGrid, rng: &mut impl Rng) -> TableGrid {
    for cell in grid.cells_mut().filter(|c| !c.is_empty) {
        let len = rng.random_range(1..4);
        cell.content = (0..len).map(|_| rng.random_range('a'..='c')).collect();
    }
    grid
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let one = TableTree::from_html("<table><tr><td>x</td></tr></table>").unwrap();
    let empty = TableTree::from_html("<table></table>").unwrap();
    let two = TableTree::from_html("<table><tr><td>x</td><td>y</td></tr></table>").unwrap();
    let hand = [
        (teds(&empty, &one, true), 1.0 - 2.0 / 3.0),
        (teds(&one, &one, false), 1.0),
        (tree_edit_distance(&one, &two, true), 1.0),
        (teds(&one, &two, true), 1.0 - 1.0 / 4.0),
    ];
    let teds_ok = hand.iter().all(|(got, want)| got == want);
    ok &= teds_ok;
    notes.push(format!(
        "TEDS hand cases {}",
        if teds_ok { "exact" } else { "wrong" }
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let car_bad = (0..1000)
        .filter(|_| {
            let grid = support::random_grid(&mut rng, 5, 5);
            car_relations(&grid) != support::brute_force_relations(&grid)
        })
        .count();
    ok &= car_bad == 0;
    notes.push(format!("CAR {car_bad}/1000 differ from neighbour scan"));

    let mut grits_worst = 0f64;
    for case in 0..500 {
        let a = (rng.random_range(1..=3), rng.random_range(1..=4));
        let b = (rng.random_range(1..=3), rng.random_range(1..=4));
        let sims: Vec<f64> = if case % 2 == 0 {
            let ea: Vec<u8> = (0..a.0 * a.1).map(|_| rng.random_range(0..3)).collect();
            let eb: Vec<u8> = (0..b.0 * b.1).map(|_| rng.random_range(0..3)).collect();
            ea.iter()
                .flat_map(|x| eb.iter().map(move |y| (x == y) as u8 as f64))
                .collect()
        } else {
            (0..a.0 * a.1 * b.0 * b.1)
                .map(|_| rng.random::<f64>())
                .collect()
        };
        let nb = b.0 * b.1;
        let sim = |i: usize, j: usize, k: usize, l: usize| sims[(i * a.1 + j) * nb + k * b.1 + l];
        let got = align_2d(a, b, sim).score;
        grits_worst = grits_worst.max((got - support::exhaustive_alignment(a, b, &sim)).abs());
    }
    let missing = grits(
        &TableGrid::simple(2, 2),
        &TableGrid::simple(2, 3),
        GritsVariant::Top,
    )
    .unwrap();
    ok &= grits_worst <= 1e-9 && (missing - 0.8).abs() < 1e-12;
    notes.push(format!(
        "GriTS max deviation {grits_worst:.1e} over 500 cases"
    ));

    let ted_bad = (0..100)
        .filter(|_| {
            let a = TableTree::from_grid(
                &with_random_text(support::random_grid(&mut rng, 3, 3), &mut rng),
                true,
            );
            let b = TableTree::from_grid(
                &with_random_text(support::random_grid(&mut rng, 3, 3), &mut rng),
                true,
            );
            (tree_edit_distance(&a, &b, false) - support::forest_distance(&a, &b, false)).abs()
                > 1e-9
        })
        .count();
    ok &= ted_bad == 0;
    notes.push(format!(
        "tree edit distance {ted_bad}/100 differ from recursive oracle"
    ));

    let wavg = weighted_f1(&[(0.5, 66.8), (0.6, 51.7)]);
    let wavg_ok = (wavg * 10.0).round() / 10.0 == 58.6;
    ok &= wavg_ok;
    notes.push(format!("WAvg.F1(66.8, 51.7) = {wavg:.3}"));
    outcome(ok, notes.join("; "))
}

fn overfit_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.train.n_train = 50;
    c.train.max_steps = Some(OVERFIT_STEPS);
    c.train.epochs = 10_000;
    c.train.early_exit_loss = Some(OVERFIT_EXIT_LOSS);
    // Decay once, after 70% of the budget: 50 tables are 7 steps per epoch.
    c.optim.milestones = vec![200];
    c
}

fn criterion_1() -> Outcome {
    let config = overfit_config();
    let samples = generate(&config.data, config.train.n_train).unwrap();
    let mut trainer = Trainer::new(config, &samples, &Device::Cpu).unwrap();
    let dir = artifacts().join("criterion1");
    std::fs::create_dir_all(&dir).unwrap();
    let mut log = std::io::BufWriter::new(std::fs::File::create(dir.join("train.jsonl")).unwrap());
    let summary = trainer
        .run(&mut log, Some(&dir.join("checkpoint.safetensors")))
        .unwrap();
    drop(log);
    let preds = predict_all(&trainer.model, &samples, DecodeOptions::default()).unwrap();
    let report = evaluate_predictions(&preds, &samples, &MetricSelection::default()).unwrap();
    report.write(&dir).unwrap();
    let a = &report.aggregate;
    let (s_teds, ap50) = (a.s_teds.unwrap(), a.ap50.unwrap());
    outcome(
        s_teds >= 0.99 && ap50 >= 0.90,
        format!(
            "S-TEDS {s_teds:.4} (>= 0.99), AP50 {ap50:.4} (>= 0.90) after {} steps{}; exact sequences {:.2}",
            summary.steps,
            if summary.early_exit { " (early exit)" } else { "" },
            a.structure_accuracy
        ),
    )
}

#[derive(Serialize)]
struct AblationRun {
    row: u8,
    label: &'static str,
    seed: u64,
    steps: u64,
    s_teds: f64,
    ap: f64,
    ap50: f64,
}

fn ablation_config(row: u8, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.seed = seed;
    c.ablation = Ablation::row(row);
    c.train.max_steps = Some(ABLATION_STEPS);
    // 500 tables are 63 steps per epoch; decay after about 70% of the budget.
    c.optim.milestones = vec![7];
    c
}

fn ablation_checkpoint(row: u8, seed: u64) -> PathBuf {
    artifacts().join(format!("criterion2/row{row}_seed{seed}.safetensors"))
}

fn criterion_2() -> Outcome {
    let base = ExperimentConfig::desk();
    let train = generate(&base.data, base.train.n_train).unwrap();
    let eval = generate(&held_out(&base.data), 100).unwrap();
    let mut runs = Vec::new();
    for row in 1..=3u8 {
        for seed in ABLATION_SEEDS {
            let config = ablation_config(row, seed);
            let label = config.ablation.label();
            let path = ablation_checkpoint(row, seed);
            let mut trainer = Trainer::new(config, &train, &Device::Cpu).unwrap();
            let mut log = std::io::BufWriter::new(
                std::fs::File::create(path.with_extension("jsonl")).unwrap_or_else(|_| {
                    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
                    std::fs::File::create(path.with_extension("jsonl")).unwrap()
                }),
            );
            let summary = trainer.run(&mut log, Some(&path)).unwrap();
            let preds = predict_all(&trainer.model, &eval, DecodeOptions::default()).unwrap();
            let sel = MetricSelection {
                car: false,
                grits: false,
                ..MetricSelection::default()
            };
            let a = evaluate_predictions(&preds, &eval, &sel).unwrap().aggregate;
            runs.push(AblationRun {
                row,
                label,
                seed,
                steps: summary.steps,
                s_teds: a.s_teds.unwrap(),
                ap: a.ap.unwrap(),
                ap50: a.ap50.unwrap(),
            });
        }
    }
    std::fs::write(
        artifacts().join("criterion2/runs.json"),
        serde_json::to_string_pretty(&runs).unwrap(),
    )
    .unwrap();
    let mean = |row: u8, f: fn(&AblationRun) -> f64| {
        let v: Vec<f64> = runs.iter().filter(|r| r.row == row).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let ap = [mean(1, |r| r.ap), mean(2, |r| r.ap), mean(3, |r| r.ap)];
    let st = [
        mean(1, |r| r.s_teds),
        mean(2, |r| r.s_teds),
        mean(3, |r| r.s_teds),
    ];
    let band = 0.005;
    let pass = ap[1] > ap[0] && ap[2] >= ap[1] && st[2] >= st[1] - band && st[1] >= st[0] - band;
    outcome(
        pass,
        format!(
            "mean over 3 seeds, {ABLATION_STEPS} steps each: AP #1 {:.4}, #2 {:.4}, #3 {:.4}; S-TEDS #1 {:.4}, #2 {:.4}, #3 {:.4}",
            ap[0], ap[1], ap[2], st[0], st[1], st[2]
        ),
    )
}

/// A held-out table rendered with per-cell random vertical alignment, so
/// content within a row sits at different heights.
fn misaligned_sample() -> Sample {
    let data = GenConfig {
        vertical_align: VerticalAlign::Random,
        rows: tabstruct::core::datagen::IntRange::new(3, 5),
        ..held_out(&GenConfig::desk())
    };
    generate(&data, 20)
        .unwrap()
        .into_iter()
        .find(|s| s.grid.non_empty_cells().count() >= 6)
        .expect("a table with at least six non-empty cells")
}

#[derive(Serialize)]
struct CellMass {
    cell: usize,
    va: Option<f64>,
    no_va: Option<f64>,
}

fn criterion_8() -> Outcome {
    let sample = misaligned_sample();
    let dir = artifacts().join("criterion8");
    std::fs::create_dir_all(&dir).unwrap();
    let image_path = dir.join("sample.png");
    sample.image.save(&image_path).unwrap();
    let gt_boxes: Vec<_> = sample
        .grid
        .non_empty_cells()
        .filter_map(|c| c.content_bbox)
        .collect();
    let mut per_model = Vec::new();
    let mut invariants = true;
    let mut notes = Vec::new();
    for (row, name) in [(3u8, "va"), (2u8, "no_va")] {
        let mut ckpt = ablation_checkpoint(row, ABLATION_SEEDS[0]);
        if !ckpt.exists() {
            // Criterion 2 was filtered out; train a short stand-in.
            let mut config = ablation_config(row, ABLATION_SEEDS[0]);
            config.train.max_steps = Some(50);
            let train = generate(&config.data, 50).unwrap();
            let mut t = Trainer::new(config, &train, &Device::Cpu).unwrap();
            ckpt = dir.join(format!("{name}_standin.safetensors"));
            t.run(&mut std::io::sink(), Some(&ckpt)).unwrap();
        }
        let out = dir.join(name);
        let _ = std::fs::remove_dir_all(&out);
        let args = InferArgs {
            checkpoint: ckpt.clone(),
            image: image_path.clone(),
            out: out.clone(),
        };
        let n_overlays = cmd_visualize(&args).unwrap();
        let pred: tabstruct::infer::Prediction =
            serde_json::from_str(&std::fs::read_to_string(out.join("prediction.json")).unwrap())
                .unwrap();
        let triggers = pred.tokens.trigger_positions().len();
        let files = std::fs::read_dir(out.join("attention")).unwrap().count();
        let maps = pred.attention_maps.clone().unwrap_or_default();
        let ok = triggers == n_overlays
            && files == triggers
            && maps.len() == triggers
            && pred.boxes.len() == triggers;
        invariants &= ok;
        notes.push(format!("{name}: {triggers} triggers, {files} overlays"));
        let side = checkpoint::load(&ckpt, None, &Device::Cpu)
            .unwrap()
            .model
            .config
            .image_side as f32;
        let masses: Vec<f64> = maps
            .iter()
            .zip(&gt_boxes)
            .map(|(m, b)| attention_mass_inside(&m.weights, side, b))
            .collect();
        per_model.push(masses);
    }
    let n = gt_boxes.len();
    let cells: Vec<CellMass> = (0..n)
        .map(|i| CellMass {
            cell: i,
            va: per_model[0].get(i).copied(),
            no_va: per_model[1].get(i).copied(),
        })
        .collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let summary = serde_json::json!({
        "image": "sample.png",
        "gt_non_empty_cells": n,
        "mean_mass_inside_va": mean(&per_model[0]),
        "mean_mass_inside_no_va": mean(&per_model[1]),
        "cells": cells,
    });
    let report = dir.join("attention_comparison.json");
    std::fs::write(&report, serde_json::to_string_pretty(&summary).unwrap()).unwrap();
    let produced = report.exists();
    outcome(
        produced && invariants,
        format!(
            "{}; mean attention mass inside the cell: VA {:.3}, no VA {:.3}; report {}",
            notes.join(", "),
            mean(&per_model[0]),
            mean(&per_model[1]),
            report.display()
        ),
    )
}
