mod common;

use std::path::Path;

use clap::Parser;
use common::tiny_experiment;
use tabstruct::cli::{
    apply_overrides, cmd_eval, cmd_generate, cmd_infer, cmd_train, cmd_visualize, Cli, Command,
    ConfigArgs, EvalArgs, GenerateArgs, InferArgs, Preset, TrainArgs,
};
use tabstruct::Error;

fn config_args(dir: &Path, overrides: &[&str]) -> ConfigArgs {
    let path = dir.join("config.toml");
    std::fs::write(&path, tiny_experiment().to_toml()).unwrap();
    ConfigArgs {
        config: Some(path),
        preset: Preset::Desk,
        seed: None,
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
    }
}

#[test]
fn overrides_reach_nested_and_optional_keys() {
    let base = tiny_experiment();
    let sets = [
        "train.batch_size=3",
        "train.max_steps=7",
        "optim.lr=0.01",
        "ablation.head=\"rd\"",
        "data.rows={min = 2, max = 2}",
    ];
    let c = apply_overrides(&base, &sets.map(String::from)).unwrap();
    assert_eq!(c.train.batch_size, 3);
    assert_eq!(c.train.max_steps, Some(7));
    assert_eq!(c.optim.lr, 0.01);
    assert_eq!(c.ablation.head, tabstruct::model::CoordHead::Rd);
    assert_eq!(c.data.rows.max, 2);
    for bad in [
        "train.nope=1",
        "nope.x=1",
        "train.batch_size",
        "train.batch_size=\"x\"",
    ] {
        assert!(apply_overrides(&base, &[bad.to_string()]).is_err(), "{bad}");
    }
}

#[test]
fn arguments_parse() {
    let cli = Cli::try_parse_from([
        "tabstruct",
        "train",
        "--out",
        "o",
        "--ablation",
        "2",
        "--set",
        "train.epochs=1",
    ])
    .unwrap();
    assert!(matches!(
        cli.command,
        Command::Train(TrainArgs {
            ablation: Some(2),
            ..
        })
    ));
    assert!(Cli::try_parse_from(["tabstruct", "train", "--out", "o", "--ablation", "4"]).is_err());
    assert!(Cli::try_parse_from([
        "tabstruct",
        "visualize",
        "--checkpoint",
        "c",
        "--image",
        "i",
        "--out",
        "o"
    ])
    .is_ok());
}

#[test]
fn generate_is_deterministic_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, force: bool| {
        cmd_generate(&GenerateArgs {
            config: config_args(dir.path(), &["data.seed=7", "data.p_span=0.2"]),
            out: dir.path().join(out),
            n: Some(12),
            held_out: false,
            force,
        })
    };
    let stats = run("a", false).unwrap();
    assert_eq!(stats.tables, 12);
    assert!(stats.spanning_cells > 0);
    run("b", false).unwrap();
    let read = |d: &str| std::fs::read(dir.path().join(d).join("dataset.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(
        std::fs::read_dir(dir.path().join("a/images"))
            .unwrap()
            .count(),
        12
    );
    assert!(matches!(run("a", false), Err(Error::Config(_))));
    run("a", true).unwrap();
}

#[test]
fn train_eval_infer_visualize_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cmd_generate(&GenerateArgs {
        config: config_args(d, &[]),
        out: d.join("data"),
        n: Some(4),
        held_out: false,
        force: false,
    })
    .unwrap();
    let summary = cmd_train(&TrainArgs {
        config: config_args(d, &["train.checkpoint_every=1"]),
        data: Some(d.join("data")),
        out: d.join("run"),
        ablation: Some(3),
        max_steps: Some(3),
        resume: None,
    })
    .unwrap();
    assert_eq!(summary.steps, 3);
    let log = std::fs::read_to_string(d.join("run/train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.contains("\"l_va\"")));
    let ckpt = d.join("run/checkpoint.safetensors");

    let resumed = cmd_train(&TrainArgs {
        config: config_args(d, &[]),
        data: Some(d.join("data")),
        out: d.join("run"),
        ablation: Some(3),
        max_steps: Some(4),
        resume: Some(ckpt.clone()),
    })
    .unwrap();
    assert_eq!(resumed.steps, 4);
    assert_eq!(
        std::fs::read_to_string(d.join("run/train.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let wrong = cmd_train(&TrainArgs {
        config: config_args(d, &["model.n_layers=2"]),
        data: Some(d.join("data")),
        out: d.join("run2"),
        ablation: None,
        max_steps: Some(1),
        resume: Some(ckpt.clone()),
    });
    assert!(matches!(wrong, Err(Error::Checkpoint { .. })));

    let report = cmd_eval(&EvalArgs {
        checkpoint: ckpt.clone(),
        data: Some(d.join("data")),
        n: None,
        out: d.join("eval"),
        metrics: vec!["teds".into(), "ap".into()],
    })
    .unwrap();
    assert_eq!(report.samples.len(), 4);
    assert!(report.aggregate.s_teds.is_some() && report.aggregate.car_f1.is_none());
    let csv = std::fs::read_to_string(d.join("eval/report.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("all,"));
    let held = cmd_eval(&EvalArgs {
        checkpoint: ckpt.clone(),
        data: None,
        n: Some(2),
        out: d.join("eval2"),
        metrics: vec!["grits".into()],
    })
    .unwrap();
    assert_eq!(held.samples.len(), 2);
    assert!(cmd_eval(&EvalArgs {
        checkpoint: ckpt.clone(),
        data: None,
        n: Some(1),
        out: d.join("eval3"),
        metrics: vec!["bleu".into()],
    })
    .is_err());

    let image = d.join("data/images/00000.png");
    let args = InferArgs {
        checkpoint: ckpt,
        image,
        out: d.join("vis"),
    };
    let pred = cmd_infer(&args).unwrap();
    let n = cmd_visualize(&args).unwrap();
    let triggers = pred.tokens.trigger_positions().len();
    assert_eq!(n, triggers);
    assert_eq!(
        std::fs::read_dir(d.join("vis/attention")).unwrap().count(),
        triggers
    );
    assert!(d.join("vis/boxes.png").exists());
    let stored: tabstruct::infer::Prediction =
        serde_json::from_str(&std::fs::read_to_string(d.join("vis/prediction.json")).unwrap())
            .unwrap();
    assert_eq!(stored.boxes, pred.boxes);
}
