use std::fs;
use std::path::Path;

use mcte_core::runner::{load_config, resolve_config, Overrides};
use mcte_core::*;
use serde_json::json;

fn config_for(s: Scenario, out: &Path) -> ScenarioConfig {
    let mut v = json!({ "scenario": s.name(), "seed": 9 });
    let ov = Overrides {
        output_dir: Some(out.to_path_buf()),
        set: if s == Scenario::FluctuationCheck {
            vec![
                "fluctuation.n_samples=100000".into(),
                "fluctuation.dump_samples=true".into(),
            ]
        } else {
            vec![]
        },
        ..Overrides::default()
    };
    resolve_config(&mut v, &ov).unwrap()
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn every_scenario_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for s in Scenario::ALL {
        let a = tmp.path().join(format!("{}-a", s.name()));
        let b = tmp.path().join(format!("{}-b", s.name()));
        let ra = run(&config_for(s, &a), Some(2)).unwrap();
        let rb = run(&config_for(s, &b), Some(3)).unwrap();
        assert_eq!(ra.status, "ok");
        assert_ne!(ra.config_hash, rb.config_hash);
        assert_eq!(ra.metrics, rb.metrics, "{}", s.name());
        let (ca, cb) = (csv_bytes(&a), csv_bytes(&b));
        assert!(
            !ca.is_empty() || s == Scenario::Holonomy,
            "{} wrote no csv",
            s.name()
        );
        assert_eq!(ca, cb, "{}", s.name());
        assert!(a.join("summary.json").exists());
        assert!(fs::read_dir(&a).unwrap().all(|e| !e
            .unwrap()
            .path()
            .to_string_lossy()
            .ends_with(".partial")));
    }
}

#[test]
fn failed_computation_keeps_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = json!({
        "scenario": "invariant",
        "invariant": { "q0": [0.78, 0.1], "target": 1.5 },
    });
    let ov = Overrides {
        output_dir: Some(tmp.path().to_path_buf()),
        ..Overrides::default()
    };
    let cfg = resolve_config(&mut v, &ov).unwrap();
    let err = run(&cfg, None).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let RunError::Computation { partial, .. } = err else {
        panic!("expected a computation error")
    };
    assert!(partial.iter().any(|p| p.ends_with("path.csv.partial")));
    assert!(tmp.path().join("summary.json.partial").exists());
    assert!(!tmp.path().join("path.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("summary.json.partial")).unwrap())
            .unwrap();
    assert_eq!(summary["status"], "error");
}

#[test]
fn config_errors_name_the_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("cfg.json");
    fs::write(
        &file,
        r#"{"scenario": "holonomy", "holonomy": {"samples_per_egde": 4}}"#,
    )
    .unwrap();
    let err = load_config(&file, &Overrides::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("samples_per_egde"), "{err}");

    fs::write(&file, r#"{"scenario": "holonomy"}"#).unwrap();
    let ov = Overrides {
        set: vec!["holonomy.bogus=1".into()],
        ..Overrides::default()
    };
    let err = load_config(&file, &ov).unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");

    let ov = Overrides {
        set: vec![
            "holonomy.v_range=[0.70, 0.82]".into(),
            format!("output_dir={}", tmp.path().display()),
        ],
        ..Overrides::default()
    };
    let cfg = load_config(&file, &ov).unwrap();
    assert_eq!(run(&cfg, None).unwrap_err().exit_code(), 2);
}

#[test]
fn seed_changes_sampled_output_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = config_for(Scenario::FluctuationCheck, &tmp.path().join("a"));
    let mut b = config_for(Scenario::FluctuationCheck, &tmp.path().join("b"));
    a.fluctuation.dump_samples = false;
    b.fluctuation.dump_samples = false;
    b.seed = 10;
    assert_ne!(a.hash(), b.hash());
    let ra = run(&a, None).unwrap();
    let rb = run(&b, None).unwrap();
    assert_ne!(ra.metrics, rb.metrics);
}
