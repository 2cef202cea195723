use std::path::Path;

use morphdet::pipeline::*;

fn tiny(out: &Path, seed: u64) -> RunConfig {
    let text = format!(
        r#"
seed = {seed}
output_dir = "{}"

[testbed]
identities = 12
probes_per_identity = 2
families = 4
images_per_family_member = 3

[backbone]
channels = [3, 4, 8, 8, 8]
embedding_dim = 16

[pretrain]
epochs = 1
lr_initial = 0.01

[finetune]
epochs = 1

[heads.grid]
c = [1.0, 10.0]
gamma_exponents = [0]

[explain]
pairs_per_class = 4
overlays = 2
"#,
        out.display()
    );
    RunConfig::from_toml(&text, out).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn run_is_reproducible_and_cached() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_experiment(&tiny(a.path(), 5), None).unwrap();
    let mb = run_experiment(&tiny(b.path(), 5), None).unwrap();
    for f in ["scores.csv", "report.json", "cam_distances.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f} differs");
    }
    assert!(ma.stages.iter().all(|s| !s.cache_hit));
    assert_eq!(ma.config_hash, mb.config_hash);

    let report = load_report(a.path()).unwrap();
    let methods: Vec<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, METHOD_ORDER.to_vec());
    assert!(report.cam.is_some());
    assert_eq!(report.training.len(), 2);

    // every file but the manifest itself is indexed with its digest
    let manifest: RunManifest = serde_json::from_slice(&read(&a.path().join(RUN_MANIFEST_FILE))).unwrap();
    for (rel, digest) in &manifest.artifacts {
        assert_eq!(&sha256_file(&a.path().join(rel)).unwrap(), digest, "{rel}");
    }
    assert!(manifest.artifacts.contains_key("report.json") && manifest.artifacts.contains_key("det.png"));

    let again = run_experiment(&tiny(a.path(), 5), None).unwrap();
    assert!(again.stages.iter().all(|s| s.cache_hit), "{:?}", again.stages);

    // a tampered artifact invalidates its stage and everything downstream re-keys
    let emb = std::fs::read_dir(a.path().join("stages/embed")).unwrap().map(|e| e.unwrap().path()).find(|p| p.extension().is_some_and(|x| x != "json")).unwrap();
    let mut bytes = read(&emb);
    bytes[0] ^= 1;
    std::fs::write(&emb, bytes).unwrap();
    let third = run_experiment(&tiny(a.path(), 5), None).unwrap();
    let hit = |n: &str| third.stages.iter().find(|s| s.name == n).unwrap().cache_hit;
    assert!(hit("finetune"));
    assert!(!hit("embed"));
    assert_eq!(read(&a.path().join("report.json")), read(&b.path().join("report.json")));
}

#[test]
fn until_stops_early() {
    let d = tempfile::tempdir().unwrap();
    let m = run_experiment(&tiny(d.path(), 1), Some(Stage::Morph)).unwrap();
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["testbed", "split", "morph"]);
    assert!(!d.path().join("report.json").exists());
}

#[test]
fn seeds_are_named_substreams() {
    assert_eq!(substream(3, "split"), substream(3, "split"));
    assert_ne!(substream(3, "split"), substream(3, "morph"));
    assert_ne!(substream(3, "split"), substream(4, "split"));
    let c = tiny(Path::new("/tmp"), 9);
    assert_ne!(c.pretrain_config().seed, c.finetune_config().seed);
}

#[test]
fn missing_filter_bank_is_named() {
    let d = tempfile::tempdir().unwrap();
    let mut c = tiny(d.path(), 1);
    c.baselines.bsif_bank = Some("no/such/bank.txt".into());
    let findings = validate_config(&c);
    assert!(has_errors(&findings));
    let f = findings.iter().find(|f| f.key == "baselines.bsif_bank").unwrap();
    assert!(f.message.contains("bank.txt"), "{}", f.message);
    assert!(matches!(run_experiment(&c, None), Err(morphdet::Error::Config(_))));
}

#[test]
fn config_problems_are_reported() {
    let d = tempfile::tempdir().unwrap();
    let mut c = tiny(d.path(), 1);
    c.split.train_fraction = 1.5;
    c.explain.layer = "block9".into();
    c.heads.euclidean = false;
    c.heads.svm_concat = false;
    c.heads.svm_difference = false;
    let keys: Vec<String> = validate_config(&c).into_iter().map(|f| f.key).collect();
    for k in ["split.train_fraction", "explain.layer", "heads"] {
        assert!(keys.iter().any(|x| x == k), "{k} not in {keys:?}");
    }
    assert!(RunConfig::from_toml("output_dir = \"x\"\nbogus = 1\n", d.path()).is_err());
}

#[test]
fn trend_flags_name_the_failing_order() {
    let row = |m: &str, d: f64| morphdet::metrics::EvalReport {
        method: m.into(),
        split: "test".into(),
        n_morph: 1,
        n_bona_fide: 1,
        d_eer: d,
        threshold_at_eer: 0.0,
        apcer_at_bpcer: Default::default(),
        bpcer_at_apcer: Default::default(),
        det_samples: vec![],
        warnings: vec![],
    };
    let rows = vec![row("SIFT", 0.2), row("SURF", 0.3), row("LBP", 0.1), row("BSIF", 0.25), row(METHOD_FROZEN, 0.1), row(METHOD_OURS, 0.105), row(METHOD_SVM_CONCAT, 0.2), row(METHOD_SVM_DIFF, 0.11)];
    let flags = trend_flags(&rows, None);
    assert_eq!(flags.len(), 2, "{flags:?}");
    assert!(flags[0].contains(METHOD_SVM_CONCAT));
    assert!(flags[1].contains("BSIF") && flags[1].contains("SIFT"));
}
