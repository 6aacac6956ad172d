mod common;

use std::fs;

use airwaytopo::volume::{load_volume, save_volume};
use airwaytopo::{Dims, VolumeKind, VoxelGrid};
use common::*;
use serde_json::{json, Value};
use tempfile::tempdir;

fn first_segmental(tree: &Value) -> usize {
    tree["branches"]
        .as_array()
        .unwrap()
        .iter()
        .find(|b| b["label"] == "Segmental")
        .map(|b| b["id"].as_u64().unwrap() as usize)
        .unwrap()
}

#[test]
fn postprocess_recovers_unblurred_source() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &["--probability", "--blur", "0"]);
    let out = t.path().join("pp.nii.gz");
    ok(["postprocess", &p(&s.join("probability.nii.gz")), &p(&out)]);
    let got = load_volume(&out).unwrap();
    let want = load_volume(s.join("mask.nii.gz")).unwrap();
    assert_eq!(got.values(), want.values());
    assert_eq!(got.kind(), VolumeKind::Binary);
}

#[test]
fn postprocess_defaults() {
    let out = ok(["postprocess", "--help"]);
    let help = String::from_utf8_lossy(&out.stdout);
    let help = help.split_whitespace().collect::<Vec<_>>().join(" ");
    assert!(help.contains("--t-high <T_HIGH> [default: 0.5]"), "{help}");
    assert!(help.contains("--t-low <T_LOW> [default: 0.35]"), "{help}");
}

#[test]
fn postprocess_empty_is_degenerate() {
    let t = tempdir().unwrap();
    let input = t.path().join("flat.nii");
    let g = VoxelGrid::new(Dims::cube(6), [1.0; 3], vec![0.2; 216], VolumeKind::Probability).unwrap();
    save_volume(&g, &input).unwrap();
    let out = t.path().join("o.nii");
    let (code, o) = run(["postprocess", &p(&input), &p(&out)]);
    assert_eq!(code, 2);
    let e = stderr_json(&o);
    check_schema("error", &e);
    assert_eq!(e["warning"], "EmptyMask");
    assert_eq!(load_volume(&out).unwrap().foreground_count(), 0);
}

#[test]
fn missing_input_is_usage_error() {
    let t = tempdir().unwrap();
    let (code, o) = run(["postprocess", "/no/such.nii", &p(&t.path().join("o.nii"))]);
    assert_eq!(code, 1);
    let e = stderr_json(&o);
    check_schema("error", &e);
    assert_eq!(e["error"], "IoFailure");
    assert!(!t.path().join("o.nii").exists());

    let (code, o) = run(["parse", "--no-such-flag", "a", "b"]);
    assert_eq!(code, 1);
    check_schema("error", &stderr_json(&o));
}

#[test]
fn output_directory_must_exist() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &[]);
    let (code, _) = run(["parse", &p(&s.join("mask.nii.gz")), &p(&t.path().join("no/dir/t.json"))]);
    assert_eq!(code, 1);
}

#[test]
fn synth_then_parse_gives_fifteen_branches() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &["--generations", "3"]);
    check_schema("tree", &read_json(&s.join("tree.json")));
    check_schema("skeleton", &read_json(&s.join("centerline.json")));
    check_schema("tree_spec", &read_json(&s.join("spec.json")));

    let tree = t.path().join("tree.json");
    let sk = t.path().join("sk.json");
    ok(["parse", &p(&s.join("mask.nii.gz")), &p(&tree), "--emit-skeleton", &p(&sk)]);
    let parsed = read_json(&tree);
    check_schema("tree", &parsed);
    check_schema("skeleton", &read_json(&sk));
    assert_eq!(parsed["branches"].as_array().unwrap().len(), 15);
    let mut gens: Vec<u64> = parsed["branches"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["generation"].as_u64().unwrap())
        .collect();
    gens.sort();
    assert_eq!(gens, [0, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3]);
}

#[test]
fn raw_format_round_trip() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &["--format", "json", "--generations", "1"]);
    assert!(s.join("mask.bin").exists());
    let tree = t.path().join("tree.json");
    ok(["parse", &p(&s.join("mask.json")), &p(&tree)]);
    assert_eq!(read_json(&tree)["branches"].as_array().unwrap().len(), 3);
}

#[test]
fn cylinder_parses_to_one_branch() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &["--generations", "0"]);
    let tree = t.path().join("tree.json");
    ok(["parse", &p(&s.join("mask.nii.gz")), &p(&tree)]);
    let tree = read_json(&tree);
    assert_eq!(tree["branches"].as_array().unwrap().len(), 1);
    assert_eq!(tree["branches"][0]["label"], "Trachea");
}

#[test]
fn empty_mask_parse_fails_with_1() {
    let t = tempdir().unwrap();
    let m = t.path().join("e.nii");
    save_volume(&VoxelGrid::zeros(Dims::cube(5), [1.0; 3], VolumeKind::Binary), &m).unwrap();
    let (code, o) = run(["parse", &p(&m), &p(&t.path().join("t.json"))]);
    assert_eq!(code, 1);
    assert_eq!(stderr_json(&o)["error"], "EmptyMask");
}

#[test]
fn evaluate_identical_volumes() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &[]);
    let m = p(&s.join("mask.nii.gz"));
    let out = t.path().join("r.json");
    ok(["evaluate", &m, &m, &p(&out)]);
    let r = read_json(&out);
    check_schema("report", &r);
    for k in ["td", "bd", "dsc", "pre", "td_large", "bd_large", "td_small", "bd_small", "wms"] {
        assert_eq!(r[k], json!(1.0), "{k}");
    }
}

#[test]
fn evaluate_ablation_drops_one_branch() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &[]);
    let tree = read_json(&s.join("tree.json"));
    let id = first_segmental(&tree);
    let s2 = t.path().join("s2");
    synth(&s2, &["--ablate-branch", &id.to_string()]);

    let out = t.path().join("r.json");
    ok([
        "evaluate",
        &p(&s2.join("ablated.nii.gz")),
        &p(&s.join("mask.nii.gz")),
        &p(&out),
        "--tree",
        &p(&s.join("tree.json")),
    ]);
    let r = read_json(&out);
    check_schema("report", &r);
    assert!((r["bd"].as_f64().unwrap() - 14.0 / 15.0).abs() < 1e-12);
    assert_eq!(r["td_large"], json!(1.0));
    let branches = tree["branches"].as_array().unwrap();
    let total: f64 = branches.iter().map(|b| b["length_mm"].as_f64().unwrap()).sum();
    let want = branches[id]["length_mm"].as_f64().unwrap() / total;
    let drop = 1.0 - r["td"].as_f64().unwrap();
    assert!((drop - want).abs() <= 0.02 * want, "drop {drop} vs {want}");
    let b = &r["per_branch"][id];
    assert_eq!(b["detected"], json!(false));
}

#[test]
fn wms_only_mode() {
    let out = ok(["evaluate", "--wms-only", "--td", "90", "--bd", "80", "--dsc", "95", "--pre", "85"]);
    let v = stdout_json(&out);
    check_schema("wms", &v);
    assert!((v["wms"].as_f64().unwrap() - 87.0).abs() < 1e-9);
    let (code, _) = run(["evaluate", "--wms-only", "--td", "190", "--bd", "80", "--dsc", "95", "--pre", "85"]);
    assert_eq!(code, 1);
    let (code, _) = run(["evaluate", "--wms-only", "--td", "90"]);
    assert_eq!(code, 1);
}

fn batch_fixture(root: &std::path::Path, with_orphan: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let (pred, gt) = (root.join("pred"), root.join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    for (i, extra) in [vec![], vec!["--ablate-branch", "9"], vec!["--ablation", "tip", "--ablate-branch", "12", "--ablate-len", "6"]]
        .into_iter()
        .enumerate()
    {
        let s = root.join(format!("s{i}"));
        let seed = (10 + i).to_string();
        let mut args = vec!["--seed", &seed, "--generations", "3"];
        args.extend(extra.iter().copied());
        synth(&s, &args);
        let name = format!("case{i}.nii.gz");
        let src = if extra.is_empty() { "mask.nii.gz" } else { "ablated.nii.gz" };
        fs::copy(s.join(src), pred.join(&name)).unwrap();
        fs::copy(s.join("mask.nii.gz"), gt.join(&name)).unwrap();
    }
    if with_orphan {
        fs::copy(pred.join("case0.nii.gz"), pred.join("orphan.nii.gz")).unwrap();
    }
    (pred, gt)
}

#[test]
fn batch_evaluation_and_summary() {
    let t = tempdir().unwrap();
    let (pred, gt) = batch_fixture(t.path(), false);
    let out = t.path().join("out");
    ok(["evaluate", "--pred-dir", &p(&pred), "--gt-dir", &p(&gt), "--out-dir", &p(&out)]);
    let summary = read_json(&out.join("summary.json"));
    check_schema("summary", &summary);
    assert_eq!(summary["cases"], 3);
    assert_eq!(summary["metrics"]["td"]["n"], 3);
    for i in 0..3 {
        check_schema("report", &read_json(&out.join(format!("case{i}.report.json"))));
    }
    let bd0 = read_json(&out.join("case0.report.json"))["bd"].as_f64().unwrap();
    assert_eq!(bd0, 1.0);
}

#[test]
fn batch_failure_exits_3() {
    let t = tempdir().unwrap();
    let (pred, gt) = batch_fixture(t.path(), true);
    let out = t.path().join("out");
    let (code, o) = run(["evaluate", "--pred-dir", &p(&pred), "--gt-dir", &p(&gt), "--out-dir", &p(&out)]);
    assert_eq!(code, 3);
    assert_eq!(stderr_json(&o)["error"], "CaseFailures");
    let summary = read_json(&out.join("summary.json"));
    check_schema("summary", &summary);
    assert_eq!(summary["failed"][0]["case"], "orphan");
    assert_eq!(summary["failed"][0]["error"], "IoFailure");
    assert_eq!(summary["succeeded"].as_array().unwrap().len(), 3);
}

#[test]
fn sample_stage_one_is_all_random() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &[]);
    let out = ok(["sample", "--gt", &p(&s.join("mask.nii.gz")), "--count", "50", "--patch-size", "48"]);
    let v = stdout_json(&out);
    check_schema("patches", &v);
    let items = v.as_array().unwrap();
    assert_eq!(items.len(), 50);
    assert!(items.iter().all(|x| x["strategy"] == "Random" && x["size"] == 48));
}

#[test]
fn sample_stage_three_targets_breakages() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &["--ablate-branch", "4", "--ablation", "gap", "--ablate-start", "6", "--ablate-len", "8"]);
    let state = t.path().join("state.json");
    let out = ok([
        "sample",
        "--gt",
        &p(&s.join("mask.nii.gz")),
        "--pred",
        &p(&s.join("ablated.nii.gz")),
        "--centerline",
        &p(&s.join("centerline.json")),
        "--stage",
        "3",
        "--count",
        "200",
        "--patch-size",
        "32",
        "--seed",
        "3",
        "--state-out",
        &p(&state),
    ]);
    let v = stdout_json(&out);
    check_schema("patches", &v);
    let st = read_json(&state);
    check_schema("scheduler_state", &st);
    assert!(st["n_breakage"].as_u64().unwrap() > 0);
    let items = v.as_array().unwrap();
    let n_b = items.iter().filter(|x| x["strategy"] == "Breakage").count();
    assert!(n_b > 0);
    for x in items.iter().filter(|x| x["strategy"] != "Random") {
        let (o, a) = (&x["origin"], &x["anchor"]);
        for k in 0..3 {
            let (o, a) = (o[k].as_u64().unwrap(), a[k].as_u64().unwrap());
            assert!(o <= a && a < o + 32);
        }
    }
}

#[test]
fn sample_without_missed_points_falls_back() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &[]);
    let m = p(&s.join("mask.nii.gz"));
    let (code, o) = run(["sample", "--gt", &m, "--pred", &m, "--stage", "2", "--count", "40", "--patch-size", "32"]);
    assert_eq!(code, 2);
    assert_eq!(stderr_json(&o)["warning"], "EmptySet");
    let v = stdout_json(&o);
    check_schema("patches", &v);
    assert!(v.as_array().unwrap().iter().all(|x| x["strategy"] == "Random"));

    let (code, _) = run(["sample", "--gt", &m, "--stage", "2"]);
    assert_eq!(code, 1);
    let (code, _) = run(["sample", "--gt", &m, "--stage", "4"]);
    assert_eq!(code, 1);
}

#[test]
fn loss_on_perfect_prediction() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &[]);
    let m = p(&s.join("mask.nii.gz"));
    for extra in [
        vec![],
        vec!["--tree".to_owned(), p(&s.join("tree.json")), "--centerline".into(), p(&s.join("centerline.json"))],
    ] {
        let mut args = vec!["loss".to_owned(), m.clone(), m.clone()];
        args.extend(extra);
        let v = stdout_json(&ok(args));
        check_schema("loss", &v);
        assert!(v["dice"].as_f64().unwrap().abs() < 1e-9);
        assert!(v["gul"].as_f64().unwrap().abs() < 1e-9);
        assert!((v["atrl"].as_f64().unwrap() - 0.5).abs() < 1e-9);
        assert!((v["stage3"].as_f64().unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(v["params"]["gul"]["gamma"], json!(0.7));
    }
}

#[test]
fn loss_rejects_bad_params() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &["--generations", "1"]);
    let m = p(&s.join("mask.nii.gz"));
    let (code, o) = run(["loss", &m, &m, "--gamma", "1.5"]);
    assert_eq!(code, 1);
    assert_eq!(stderr_json(&o)["error"], "InvalidParams");
}

#[test]
fn netshape_default_and_mismatch() {
    let v = stdout_json(&ok(["netshape"]));
    check_schema("netshape", &v);
    let layers = v["layers"].as_array().unwrap();
    let concat = layers.iter().find(|l| l["stage"] == "enc1.die.concat").unwrap();
    assert_eq!(concat["channels"], 56);
    assert_eq!(concat["spatial"], json!([128, 128, 128]));
    let p_ = &v["params"];
    let parts: u64 = ["encoder", "residual", "decoder", "supervision"]
        .iter()
        .map(|k| p_[k].as_u64().unwrap())
        .sum();
    assert_eq!(p_["total"].as_u64().unwrap(), parts);

    let (code, o) = run(["netshape", "--residual-channels", "64,100,256"]);
    assert_eq!(code, 3);
    assert_eq!(stderr_json(&o)["error"], "ShapeMismatch");
    let (code, _) = run(["netshape", "--input-size", "100"]);
    assert_eq!(code, 1);
}

#[test]
fn config_file_merges_and_flags_win() {
    let t = tempdir().unwrap();
    let cfg = t.path().join("net.json");
    let net = json!({
        "input_size": 64,
        "input_channels": 2,
        "encoder_dies": [[8, 16, 32], [16, 32, 64], [32, 64, 128], [64, 128, 256]],
        "decoder_dies": [[128, 64], [64, 32], [32, 16]],
        "die_out_channels": null,
        "residual_channels": null,
    });
    fs::write(&cfg, net.to_string()).unwrap();
    let v = stdout_json(&ok(["netshape", "--config", &p(&cfg)]));
    assert_eq!(v["layers"][0], json!({"stage": "input", "spatial": [64, 64, 64], "channels": 2}));
    let v = stdout_json(&ok(["--config", &p(&cfg), "netshape", "--input-size", "32"]));
    assert_eq!(v["layers"][0]["spatial"], json!([32, 32, 32]));

    // sections apply to their own subcommand only
    let cfg2 = t.path().join("c2.json");
    fs::write(&cfg2, json!({"netshape": {"input_size": 16}, "postprocess": {"t_high": 0.9}}).to_string()).unwrap();
    let v = stdout_json(&ok(["netshape", "--config", &p(&cfg2)]));
    assert_eq!(v["layers"][0]["spatial"], json!([16, 16, 16]));

    let bad = t.path().join("bad.json");
    fs::write(&bad, json!({"no_such_flag": 1}).to_string()).unwrap();
    let (code, o) = run(["netshape", "--config", &p(&bad)]);
    assert_eq!(code, 1);
    check_schema("error", &stderr_json(&o));
    let (code, _) = run(["netshape", "--config", &p(&t.path().join("missing.json"))]);
    assert_eq!(code, 1);
}

#[test]
fn config_drives_postprocess_thresholds() {
    let t = tempdir().unwrap();
    let input = t.path().join("p.nii");
    // one voxel at 0.7 touching one at 0.45
    let mut v = vec![0.0f32; 27];
    v[13] = 0.7;
    v[14] = 0.45;
    save_volume(&VoxelGrid::new(Dims::cube(3), [1.0; 3], v, VolumeKind::Probability).unwrap(), &input).unwrap();
    let cfg = t.path().join("c.json");
    fs::write(&cfg, json!({"postprocess": {"t_high": 0.6, "t_low": 0.5}}).to_string()).unwrap();
    let out = t.path().join("o.nii");
    ok(["postprocess", &p(&input), &p(&out), "--config", &p(&cfg)]);
    assert_eq!(load_volume(&out).unwrap().foreground_count(), 1);
    ok(["postprocess", &p(&input), &p(&out), "--config", &p(&cfg), "--t-low", "0.4"]);
    assert_eq!(load_volume(&out).unwrap().foreground_count(), 2);
}

#[test]
fn normalize_windows() {
    let t = tempdir().unwrap();
    let input = t.path().join("ct.nii");
    let ct = VoxelGrid::new(Dims::new(1, 1, 4), [1.0; 3], vec![-2000.0, -1000.0, 500.0, 1024.0], VolumeKind::Intensity).unwrap();
    save_volume(&ct, &input).unwrap();
    let out = t.path().join("n.nii");
    ok(["normalize", &p(&input), &p(&out)]);
    assert_eq!(load_volume(&out).unwrap().values(), &[0.0, 0.0, 1.0, 1.0]);
    ok(["normalize", &p(&input), &p(&out), "--window-lo", "-1024", "--window-hi", "1024"]);
    let v = load_volume(&out).unwrap();
    assert_eq!(v.values()[0], 0.0);
    assert_eq!(v.values()[3], 1.0);
    let (code, _) = run(["normalize", &p(&input), &p(&out), "--window-lo", "5", "--window-hi", "5"]);
    assert_eq!(code, 1);
}

#[test]
fn threads_env_and_flag() {
    let t = tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, &["--generations", "1"]);
    let m = p(&s.join("mask.nii.gz"));
    let a = bin().env("AIRWAYTOPO_THREADS", "1").args(["evaluate", &m, &m]).output().unwrap();
    let b = bin().args(["--threads", "4", "evaluate", &m, &m]).output().unwrap();
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    let (code, _) = run(["--threads", "0", "netshape"]);
    assert_eq!(code, 1);
}
