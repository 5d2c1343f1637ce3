use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use imc_harness::HarnessError;

const TINY: &[&str] = &[
    "--set",
    "training.n_seeds=1",
    "--set",
    "training.train.epochs=1",
    "--set",
    "training.retrain_epochs=1",
    "--set",
    "training.arch={conv1 = 2, conv2 = 4, hidden = 8}",
    "--set",
    "training.vat.pool_size=4",
    "--set",
    "training.vat.heldout=3",
];

fn imcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imcsim"))
        .args(args)
        .output()
        .expect("imcsim runs")
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    let out = out.to_str().unwrap();
    all.extend(["--out", out]);
    imcsim(&all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_config_key_exits_with_one() {
    let o = imcsim(&["characterize", "--set", "adc.no_such_field=3"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("no_such_field"));
}

#[test]
fn calibration_rejects_a_non_cco_topology() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(tmp.path(), &["calibrate", "--set", "adc.topology=sar"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_two_and_keeps_the_last_good_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec![
        "train",
        "--recipe",
        "adc-retrain",
        "--set",
        "training.train.lr=1e9",
    ];
    args.extend(TINY);
    let o = run_in(tmp.path(), &args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let kept: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with("_last_good.json"))
        .collect();
    assert_eq!(kept.len(), 1);
}

#[test]
fn exit_codes_by_error_kind() {
    assert_eq!(HarnessError::Config("x".into()).exit_code(), 1);
    assert_eq!(HarnessError::Numerical("x".into()).exit_code(), 2);
    assert_eq!(HarnessError::OracleMismatch("x".into()).exit_code(), 3);
}

#[test]
fn every_run_directory_records_its_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("mvm");
    let o = run_in(
        &dir,
        &["mvm-check", "--set", "mvm_check.cases=20", "--seed", "4"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(dir.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 4"));
    assert!(resolved.contains("cases = 20"));
    let version = fs::read_to_string(dir.join("version.txt")).unwrap();
    assert!(version.starts_with(&format!("imcsim {}", env!("CARGO_PKG_VERSION"))));
    assert!(version.contains("command mvm-check"));
    assert!(dir.join("summary.csv").exists() && dir.join("trace_case0.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: &[&[&str]] = &[
        &["characterize", "--set", "characterize.mc_count=6"],
        &["calibrate", "--set", "calibrate.population=30"],
        &["train", "--recipe", "vat"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let mut args = args.to_vec();
        args.extend(TINY);
        let a = tmp.path().join(format!("{k}_a"));
        let b = tmp.path().join(format!("{k}_b"));
        assert!(run_in(&a, &args).status.success());
        assert!(run_in(&b, &args).status.success());
        let (fa, fb) = (csv_bytes(&a), csv_bytes(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{args:?}");
    }
}

#[test]
fn fetched_data_trains_and_checkpoints_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = run_in(&data, &["fetch-data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gz = data.join("digits.csv.gz");
    assert!(gz.exists());

    let set_data = format!("data.path={:?}", gz.to_str().unwrap());
    let train_dir = tmp.path().join("train");
    let mut args = vec!["train", "--recipe", "adc-retrain", "--set", &set_data];
    args.extend(TINY);
    let o = run_in(&train_dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = train_dir.join("seed_0/ideal_quantized.json");
    assert!(ck.exists());

    let eval_dir = tmp.path().join("eval");
    let o = run_in(
        &eval_dir,
        &[
            "evaluate",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--mode",
            "ideal_quantized",
            "--set",
            &set_data,
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(eval_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("mode,gamma,accuracy"));
}
