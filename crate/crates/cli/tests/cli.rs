use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use otsurv::bagdata::{load_bag, BagFormat, Modality};
use otsurv::ot::{build_cost, solve_exact_emd, Marginals, Metric};

fn otsurv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otsurv"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OTSURV_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let line = String::from_utf8_lossy(&out.stderr)
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("json error line")
        .to_string();
    serde_json::from_str(&line).unwrap()
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

/// Every file under `dir`, relative path -> bytes.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small_dataset(dir: &Path) -> PathBuf {
    ok(&otsurv(&["gen-synth", "--out", "data", "--n-cases", "40", "--m-p", "40"], dir));
    dir.join("data/manifest.json")
}

const FAST: &str = "epochs = 1\ngrad_accum_steps = 4\nparallel_folds = false\n[model]\nd = 8\n[ot]\nmax_iters = 200\n";

#[test]
fn gen_synth_default_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&otsurv(&["gen-synth", "--out", "a"], dir.path()));
    assert!(stdout.trim().ends_with("manifest.json"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cases"].as_array().unwrap().len(), 50);
    ok(&otsurv(&["gen-synth", "--out", "b"], dir.path()));
    assert_eq!(tree(&dir.path().join("a")), tree(&dir.path().join("b")));
}

#[test]
fn gen_synth_unwritable_dir_names_path() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("blocker"), "not a directory");
    let out = otsurv(&["gen-synth", "--out", "blocker/data"], dir.path());
    assert!(!out.status.success());
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "io");
    assert!(err["error"]["message"].as_str().unwrap().contains("blocker"));
}

#[test]
fn out_root_env_var_redirects_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_otsurv"))
        .args(["gen-synth", "--out", "ds", "--n-cases", "10", "--m-p", "10"])
        .current_dir(dir.path())
        .env("OTSURV_OUT_ROOT", &root)
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join("ds/manifest.json").exists());
    assert!(!dir.path().join("ds").exists());
}

fn read_coupling(path: &Path) -> Vec<Vec<f64>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn solve_zero_cost_gives_product_measure() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("s.csv"), "f0,f1\n0,0\n0,0\n");
    write(&dir.path().join("t.csv"), "f0,f1\n0,0\n0,0\n");
    // Zero cost leaves every coupling optimal for the exact solver; only the
    // entropic ones single out the product measure.
    for solver in ["sinkhorn", "uot"] {
        let prefix = format!("plan_{solver}");
        ok(&otsurv(
            &["solve", "--source", "s.csv", "--target", "t.csv", "--solver", solver, "--out", &prefix],
            dir.path(),
        ));
        for row in read_coupling(&dir.path().join(format!("{prefix}.csv"))) {
            for v in row {
                assert!((v - 0.25).abs() < 1e-6, "{solver}: {v}");
            }
        }
        let diag: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(format!("{prefix}.json"))).unwrap()).unwrap();
        assert!(diag.is_object());
    }
}

#[test]
fn solve_uot_tau_zero_is_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("s.csv"), "f0,f1\n0,0\n1,0\n0,2\n");
    write(&dir.path().join("t.csv"), "f0,f1\n1,1\n0,0\n");
    ok(&otsurv(
        &["solve", "--source", "s.csv", "--target", "t.csv", "--solver", "uot", "--tau", "0", "--epsilon", "0.5", "--out", "p"],
        dir.path(),
    ));
    let src: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]];
    let tgt: [[f64; 2]; 2] = [[1.0, 1.0], [0.0, 0.0]];
    let p = read_coupling(&dir.path().join("p.csv"));
    for i in 0..3 {
        for j in 0..2 {
            let c = ((src[i][0] - tgt[j][0]).powi(2) + (src[i][1] - tgt[j][1]).powi(2)).sqrt();
            let closed = (1.0 / 3.0) * 0.5 * (-c / 0.5f64).exp();
            assert!((p[i][j] - closed).abs() < 1e-12, "{i},{j}: {} vs {closed}", p[i][j]);
        }
    }
}

#[test]
fn solve_emd_objective_matches_library_solver() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("s.csv"), "f0,f1\n0,0\n1,0\n0,1\n2,2\n");
    write(&dir.path().join("t.csv"), "f0,f1\n0.5,0\n1,2\n-1,0\n");
    let stdout = ok(&otsurv(
        &["solve", "--source", "s.csv", "--target", "t.csv", "--solver", "emd", "--out", "e"],
        dir.path(),
    ));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let s = load_bag(&dir.path().join("s.csv"), BagFormat::Csv, Modality::Pathology).unwrap();
    let t = load_bag(&dir.path().join("t.csv"), BagFormat::Csv, Modality::Genomic).unwrap();
    let cost = build_cost(s.features().view(), t.features().view(), Metric::L2).unwrap();
    let plan = solve_exact_emd(&cost, &Marginals::uniform(4, 3)).unwrap();
    assert!((summary["objective"].as_f64().unwrap() - plan.objective_value).abs() < 1e-12);
}

#[test]
fn solve_shape_mismatch_is_data_class_exit() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("s.csv"), "f0,f1\n0,0\n");
    write(&dir.path().join("t.csv"), "f0,f1,f2\n0,0,0\n");
    let out = otsurv(&["solve", "--source", "s.csv", "--target", "t.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["kind"], "shape");
}

#[test]
fn bad_config_is_parse_exit_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    write(&dir.path().join("bad.toml"), "epochz = 2\n");
    let out = otsurv(
        &["train", "--manifest", manifest.to_str().unwrap(), "--config", "bad.toml"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("epochz"));
    let out = otsurv(&["train", "--bogus-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_reports_share_schema_across_modes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    write(&dir.path().join("fast.toml"), FAST);
    let m = manifest.to_str().unwrap();
    let mut keys = Vec::new();
    for (mode, out) in [("umbot", "t_umbot"), ("dense", "t_dense")] {
        ok(&otsurv(
            &["train", "--manifest", m, "--config", "fast.toml", "--mode", mode, "--micro-batch", "16", "--out", out],
            dir.path(),
        ));
        let report: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(out).join("report.json")).unwrap()).unwrap();
        assert_eq!(report["mode"], mode);
        assert_eq!(report["folds"].as_array().unwrap().len(), 5);
        let mut k: Vec<String> = report.as_object().unwrap().keys().cloned().collect();
        k.sort();
        keys.push(k);
        let risks = fs::read_to_string(dir.path().join(out).join("risks.csv")).unwrap();
        assert_eq!(risks.lines().next().unwrap(), "case_id,risk,fold");
        assert_eq!(risks.lines().count(), 41);
        for f in 0..5 {
            assert!(dir.path().join(out).join(format!("fold_{f}/best/checkpoint.json")).exists());
        }
    }
    assert_eq!(keys[0], keys[1]);
}

#[test]
fn untrained_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&otsurv(&["gen-synth", "--out", "data", "--n-cases", "100", "--m-p", "40"], dir.path()));
    write(&dir.path().join("fast.toml"), FAST);
    let stdout = ok(&otsurv(
        &["train", "--manifest", "data/manifest.json", "--config", "fast.toml", "--epochs", "0", "--out", "t0"],
        dir.path(),
    ));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let c = summary["mean_c_index"].as_f64().unwrap();
    assert!((c - 0.5).abs() <= 0.1, "untrained mean c-index {c}");
}

#[test]
fn ablate_counts_rows_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    write(&dir.path().join("fast.toml"), FAST);
    let m = manifest.to_str().unwrap();
    let run = |out: &str, modes: &str| {
        ok(&otsurv(
            &["ablate", "--manifest", m, "--config", "fast.toml", "--m-values", "8,16,32", "--modes", modes, "--out", out],
            dir.path(),
        ));
        fs::read_to_string(dir.path().join(out).join("ablation.csv")).unwrap()
    };
    let a = run("a1", "umbot");
    assert_eq!(a.lines().next().unwrap(), "mode,m,fold,c_index");
    assert_eq!(a.lines().count() - 1, 15);
    assert_eq!(run("a2", "umbot"), a);
    let all = run("a3", "umbot,emd,dense");
    assert_eq!(all.lines().count() - 1, 45);
}

#[test]
fn km_identical_risks_fall_back_and_mismatch_names_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    let ids: Vec<String> = m["cases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["case_id"].as_str().unwrap().to_string())
        .collect();
    let mut csv = String::from("case_id,risk\n");
    for id in &ids {
        csv.push_str(&format!("{id},1.5\n"));
    }
    write(&dir.path().join("flat.csv"), &csv);
    let stdout = ok(&otsurv(
        &["km", "--risks", "flat.csv", "--manifest", manifest.to_str().unwrap(), "--out", "km/flat"],
        dir.path(),
    ));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["degenerate_split"], true);
    assert!(summary["p_value"].as_f64().unwrap() > 0.05);
    assert!(dir.path().join("km/flat_km.csv").exists());
    assert!(dir.path().join("km/flat_logrank.json").exists());

    let mut partial = String::from("case_id,risk\n");
    for id in &ids[1..] {
        partial.push_str(&format!("{id},0.1\n"));
    }
    partial.push_str("ghost_case,0.3\n");
    write(&dir.path().join("partial.csv"), &partial);
    let out = otsurv(
        &["km", "--risks", "partial.csv", "--manifest", manifest.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains(&ids[0]) && msg.contains("ghost_case"), "{msg}");
}

#[test]
fn bench_emits_three_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&otsurv(
        &["bench", "--m-values", "256,512", "--m", "128", "--d", "8", "--repeats", "1", "--out", "b.csv"],
        dir.path(),
    ));
    let text = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "M,seconds,instances_per_second");
    for l in lines {
        assert_eq!(l.split(',').count(), 3);
    }
}
