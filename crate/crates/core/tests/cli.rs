mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aquavis::datagen::stats::DatasetStats;
use aquavis::datagen::{generate, QaRecord};
use aquavis::imaging::io::{read_png_rgb, write_depth_raw, write_png_rgb, BitDepth};
use aquavis::imaging::{psnr, DepthMap, RgbImage};
use aquavis::jsonl;
use aquavis::tensors::TensorManifest;
use aquavis::vfe::{VfeDims, VfeParameters};
use common::{random_annotations, random_depth, rng, scripted_predictions};
use rand::Rng;
use serde_json::Value;

fn aquavis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aquavis")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Clean PNG plus raw depth map in `dir`.
fn scene(dir: &Path, bits: BitDepth, levels: f64) -> (PathBuf, PathBuf, RgbImage) {
    let mut r = rng(61);
    let img = RgbImage::from_fn(24, 32, |_, _, _| (r.gen_range(0.0..0.8f64) * levels).round() / levels).unwrap();
    let image = dir.join("clean.png");
    write_png_rgb(&image, &img, bits).unwrap();
    let depth = dir.join("depth.uwdm");
    write_depth_raw(&depth, &random_depth(24, 32, 0.0, 2.0, &mut r)).unwrap();
    (image, depth, img)
}

fn write_gold(dir: &Path) -> (PathBuf, Vec<QaRecord>) {
    let gold = generate(&random_annotations(62, 25), 4).unwrap().records;
    let path = dir.join("gold.jsonl");
    jsonl::write(&path, &gold).unwrap();
    (path, gold)
}

#[test]
fn identity_degrade_reproduces_the_input_bits() {
    let dir = tempfile::tempdir().unwrap();
    let (image, depth, img) = scene(dir.path(), BitDepth::Eight, 255.0);
    let out = dir.path().join("out");
    let o = aquavis(&[
        "degrade", "--image", s(&image), "--depth", s(&depth), "--beta", "0,0,0", "--backscatter", "0,0,0", "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (back, bits) = read_png_rgb(&out.join("degraded.png")).unwrap();
    assert_eq!(bits, BitDepth::Eight);
    assert_eq!(back, img);
    assert_eq!(std::fs::read(&image).unwrap(), std::fs::read(out.join("degraded.png")).unwrap());
    assert_eq!(read_json(&out.join("degrade_summary.json"))["clamped"], 0);
}

#[test]
fn sixteen_bit_degrade_restore_round_trip_is_near_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let (image, depth, img) = scene(dir.path(), BitDepth::Sixteen, 65535.0);
    let physics = ["--beta", "0.2,0.1,0.05", "--backscatter", "0.1,0.12,0.15"];
    let a = dir.path().join("a");
    let mut args = vec!["degrade", "--image", s(&image), "--depth", s(&depth), "--out", s(&a)];
    args.extend(physics);
    assert!(aquavis(&args).status.success());
    let degraded = a.join("degraded.png");
    let b = dir.path().join("b");
    let mut args = vec!["restore", "--image", s(&degraded), "--depth", s(&depth), "--out", s(&b)];
    args.extend(physics);
    let o = aquavis(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let (restored, bits) = read_png_rgb(&b.join("restored.png")).unwrap();
    assert_eq!(bits, BitDepth::Sixteen);
    let db = psnr(&img, &restored).unwrap();
    assert!(db > 60.0, "PSNR {db}");
}

#[test]
fn restore_estimates_backscatter_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let (image, depth, _) = scene(dir.path(), BitDepth::Eight, 255.0);
    let out = dir.path().join("out");
    let o = aquavis(&[
        "restore", "--image", s(&image), "--depth", s(&depth), "--beta", "0.1,0.1,0.1", "--patch-size", "4", "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read_json(&out.join("restore_summary.json"));
    assert_eq!(summary["backscatter_estimated"], true);
    assert_eq!(summary["patch_size"], 4);
    assert!(summary["dark_patch"].as_u64().unwrap() < 48);
}

#[test]
fn missing_depth_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (image, _, _) = scene(dir.path(), BitDepth::Eight, 255.0);
    let missing = dir.path().join("nope.uwdm");
    let o = aquavis(&[
        "degrade", "--image", s(&image), "--depth", s(&missing), "--beta", "0,0,0", "--backscatter", "0,0,0", "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn mismatched_raster_sizes_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (image, _, _) = scene(dir.path(), BitDepth::Eight, 255.0);
    let depth = dir.path().join("small.uwdm");
    write_depth_raw(&depth, &DepthMap::filled(4, 4, 1.0).unwrap()).unwrap();
    let o = aquavis(&[
        "degrade", "--image", s(&image), "--depth", s(&depth), "--beta", "0,0,0", "--backscatter", "0,0,0", "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

#[test]
fn empty_annotations_give_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.jsonl");
    std::fs::write(&ann, "").unwrap();
    let out = dir.path().join("out");
    let o = aquavis(&["genqa", "--seed", "1", "--annotations", s(&ann), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("qa.jsonl")).unwrap(), "");
    assert_eq!(read_json(&out.join("stats.json"))["total"], 0);
}

#[test]
fn genqa_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.jsonl");
    std::fs::write(&ann, "").unwrap();
    let o = aquavis(&["genqa", "--annotations", s(&ann), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn genqa_output_is_deterministic_and_stats_agree() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.jsonl");
    jsonl::write(&ann, &random_annotations(63, 30)).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = aquavis(&["genqa", "--seed", "77", "--annotations", s(&ann), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let qa = std::fs::read(a.join("qa.jsonl")).unwrap();
    assert_eq!(qa, std::fs::read(b.join("qa.jsonl")).unwrap());

    let records: Vec<QaRecord> = jsonl::read(&a.join("qa.jsonl")).unwrap();
    let from_genqa: DatasetStats = serde_json::from_value(read_json(&a.join("stats.json"))).unwrap();
    let stats_out = dir.path().join("stats");
    let o = aquavis(&["stats", "--dataset", s(&a.join("qa.jsonl")), "--out", s(&stats_out)]);
    assert!(o.status.success());
    let from_stats: DatasetStats = serde_json::from_value(read_json(&stats_out.join("stats.json"))).unwrap();
    assert_eq!(from_genqa, from_stats);
    assert_eq!(from_stats.total, records.len());
    for (task, share) in &from_stats.by_task {
        assert_eq!(share.count, records.iter().filter(|r| r.task.as_str() == task).count());
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("total"));
}

#[test]
fn eval_writes_reports_and_honours_subset_and_format() {
    let dir = tempfile::tempdir().unwrap();
    let (gold_path, gold) = write_gold(dir.path());
    let preds = dir.path().join("preds.jsonl");
    jsonl::write(&preds, &scripted_predictions(&gold, 0.05)).unwrap();
    let out = dir.path().join("out");
    let o = aquavis(&[
        "eval", "--predictions", s(&preds), "--gold", s(&gold_path), "--subset", "clear", "--format", "csv", "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    let clear = gold.iter().filter(|g| g.conditions.iter().any(|c| c == "clear")).count();
    assert_eq!(report["overall"]["records"], clear);
    assert_eq!(report["subset_filter"], "clear");
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("scope,task,metric,value\n"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), csv);

    let o = aquavis(&["eval", "--predictions", s(&preds), "--gold", s(&gold_path), "--subset", "murky", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("murky"));
}

#[test]
fn eval_fails_when_prediction_ids_do_not_match() {
    let dir = tempfile::tempdir().unwrap();
    let (gold_path, gold) = write_gold(dir.path());
    let mut preds = scripted_predictions(&gold, 0.0);
    for p in &mut preds {
        p.id = format!("other-{}", p.id);
    }
    let pred_path = dir.path().join("preds.jsonl");
    jsonl::write(&pred_path, &preds).unwrap();
    let o = aquavis(&["eval", "--predictions", s(&pred_path), "--gold", s(&gold_path), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no prediction"));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["diagnostics"]["unmatched_predictions"].as_array().unwrap().len(), gold.len());
}

#[test]
fn selfcheck_passes_and_skips_monotonicity_without_a_clamp_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = aquavis(&["vfe-selfcheck", "--seed", "5", "--d", "6", "--e", "3", "--out", s(dir.path())]);
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(o.status.success(), "{stdout}");
    assert!(!stdout.contains("FAIL"));
    assert!(stdout.contains("max gradient relative error"));
    let report = read_json(&dir.path().join("selfcheck.json"));
    assert_eq!(report["h"], 6);

    let o = aquavis(&["vfe-selfcheck", "--seed", "5", "--d", "6", "--e", "3", "--w-max", "0", "--out", s(dir.path())]);
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(o.status.success(), "{stdout}");
    let skip = stdout.lines().find(|l| l.contains("single_weight_monotonicity")).unwrap();
    assert!(skip.starts_with("SKIP") && skip.contains("w_max = 0"), "{skip}");
}

#[test]
fn selfcheck_loads_checkpoints_and_names_corrupt_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let p = VfeParameters::random(VfeDims { d: 4, e: 2, h: 3 }, 2.0, 1.0, &mut rng(64));
    let good = dir.path().join("good.json");
    p.to_manifest().write(&good).unwrap();
    let o = aquavis(&["vfe-selfcheck", "--seed", "1", "--checkpoint", s(&good), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report = read_json(&dir.path().join("selfcheck.json"));
    assert_eq!((report["d"].as_u64(), report["w_max"].as_f64()), (Some(4), Some(2.0)));

    let mut m: TensorManifest = p.to_manifest();
    m.tensors.iter_mut().find(|t| t.name == "mlp_b1").unwrap().values.push(0.5);
    let bad = dir.path().join("bad.json");
    m.write(&bad).unwrap();
    let o = aquavis(&["vfe-selfcheck", "--seed", "1", "--checkpoint", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mlp_b1"), "{}", stderr(&o));

    std::fs::write(&bad, "{not json").unwrap();
    let o = aquavis(&["vfe-selfcheck", "--seed", "1", "--checkpoint", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.jsonl");
    jsonl::write(&ann, &random_annotations(65, 5)).unwrap();
    let cfg = dir.path().join("cfg.json");
    let cfg_out = dir.path().join("from_config");
    std::fs::write(
        &cfg,
        serde_json::json!({"seed": 3, "paths": {"annotations": ann, "out": cfg_out}}).to_string(),
    )
    .unwrap();
    let o = aquavis(&["--config", s(&cfg), "genqa"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_json(&cfg_out.join("genqa_summary.json"))["seed"], 3);

    let flag_out = dir.path().join("from_flags");
    let o = aquavis(&["--config", s(&cfg), "genqa", "--seed", "4", "--out", s(&flag_out)]);
    assert!(o.status.success());
    assert_eq!(read_json(&flag_out.join("genqa_summary.json"))["seed"], 4);

    std::fs::write(&cfg, r#"{"sed": 3}"#).unwrap();
    assert_eq!(aquavis(&["--config", s(&cfg), "genqa"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(aquavis(&[]).status.code(), Some(2));
    assert_eq!(aquavis(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(aquavis(&["degrade", "--beta", "1,2"]).status.code(), Some(2));
    let help = aquavis(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("vfe-selfcheck"));
}
