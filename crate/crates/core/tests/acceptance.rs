//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! The desk-scale run is cached under the target directory, so only the
//! first invocation pays for training. Failing criteria are reported, not
//! hidden; set MORPHDET_ACCEPTANCE_STRICT=1 to turn them into a non-zero
//! exit status.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use morphdet::dataset::{Gender, Label};
use morphdet::imaging::mean_abs_diff;
use morphdet::metrics::*;
use morphdet::morph::{splice_mask, splice_morph, warp_blend, ChromaLandmarker, LandmarkSet, Landmarker};
use morphdet::pipeline::*;
use morphdet::synth::{reference_pose, render_face, Capture, Expression, Identity, CANVAS};
use morphdet::train::{contrastive_loss, loss_gradient};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for seed in 0..100 {
        let s = random_set(1000, 10_000 + seed);
        if d_eer(&s).unwrap() != brute_deer(&s) {
            mismatches.push(format!("d_eer seed {seed}"));
        }
        for kind in [FixedKind::Apcer, FixedKind::Bpcer] {
            for v in OPERATING_POINTS {
                let got = rate_at_fixed(&s, kind, v).unwrap();
                let (rate, t) = brute_fixed(&s, kind, v);
                if got.threshold != t || (got.rate - rate).abs() > 1e-12 {
                    mismatches.push(format!("{kind:?}@{v} seed {seed}"));
                }
            }
        }
        let full = brute_det(&s);
        let det = det_curve(&s, full.len()).unwrap();
        if det.len() != full.len() || det.iter().zip(&full).any(|(a, b)| (a.0 - b.0).abs() > 1e-12 || (a.1 - b.1).abs() > 1e-12) {
            mismatches.push(format!("det seed {seed}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches.is_empty() && secs < 30.0,
        format!("100 sets of 1000, {} mismatches {:?}, {secs:.2}s (limit 30s)", mismatches.len(), mismatches.iter().take(3).collect::<Vec<_>>()),
    )
}

fn loss_correctness() -> Outcome {
    let start = Instant::now();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for y in [Label::Genuine, Label::Imposter] {
        for mi in 1..=10 {
            let m = mi as f64 * 0.25;
            for di in 1..=60 {
                let d = di as f64 * 0.05;
                if (d - m).abs() < 1e-3 {
                    continue;
                }
                let num = (contrastive_loss(d + h, y, m).unwrap() - contrastive_loss(d - h, y, m).unwrap()) / (2.0 * h);
                let ana = loss_gradient(d, y, m);
                worst = worst.max((num - ana).abs() / ana.abs().max(1.0));
                points += 1;
            }
        }
    }
    let hand = [
        ((0.4, Label::Imposter, 1.0), 0.36),
        ((0.4, Label::Genuine, 1.0), 0.16),
        ((1.5, Label::Imposter, 1.0), 0.0),
        ((0.5, Label::Imposter, 2.0), 2.25),
    ];
    let hand_ok = hand.iter().all(|((d, y, m), want)| (contrastive_loss(*d, *y, *m).unwrap() - want).abs() < 1e-12);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && hand_ok && secs < 1.0,
        format!("{points} grid points, worst relative error {worst:.2e}, hand values ok {hand_ok}, {secs:.3}s (limit 1s)"),
    )
}

fn reference(seed: u64, gender: Gender) -> morphdet::Result<(image::RgbImage, LandmarkSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = Identity::random(format!("a{seed}"), gender, &mut rng);
    let cap = Capture::reference(&mut rng);
    let pose = reference_pose(&mut rng);
    let img = render_face(&id, pose, Expression::default(), &cap, CANVAS, CANVAS).image;
    let lm = ChromaLandmarker.locate(&img, "ref")?;
    Ok((img, lm))
}

fn morph_properties() -> Outcome {
    let start = Instant::now();
    let pairs = 20;
    let (mut worst_identity, mut worst_sym, mut background_diffs, mut errors) = (0.0f64, 0.0f64, 0usize, Vec::new());
    for k in 0..pairs {
        let gender = if k % 2 == 0 { Gender::Female } else { Gender::Male };
        let check = || -> morphdet::Result<(f64, f64, usize)> {
            let (a, la) = reference(500 + 2 * k, gender)?;
            let (b, lb) = reference(501 + 2 * k, gender)?;
            let same = warp_blend(&a, &la, &a, &la, 0.5)?;
            let ab = warp_blend(&a, &la, &b, &lb, 0.5)?;
            let ba = warp_blend(&b, &lb, &a, &la, 0.5)?;
            let spliced = splice_morph(&ab, &a, &la)?;
            let mask = splice_mask(&la)?;
            let diffs = spliced.pixels().zip(a.pixels()).zip(&mask).filter(|((s, r), m)| **m == 0.0 && s != r).count();
            Ok((mean_abs_diff(&same, &a), mean_abs_diff(&ab, &ba), diffs))
        };
        match check() {
            Ok((i, s, d)) => {
                worst_identity = worst_identity.max(i);
                worst_sym = worst_sym.max(s);
                background_diffs += d;
            }
            Err(e) => errors.push(format!("pair {k}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        errors.is_empty() && worst_identity <= 1.0 && worst_sym <= 2.0 && background_diffs == 0 && secs < 120.0,
        format!(
            "{pairs} pairs, identity max {worst_identity:.3}/255, symmetry max {worst_sym:.3}/255, background pixels changed {background_diffs}, errors {errors:?}, {secs:.1}s (limit 120s)"
        ),
    )
}

/// Wall time of the last run that actually computed the desk stages.
#[derive(Serialize, Deserialize)]
struct Timing {
    config_hash: String,
    seconds: f64,
}

const TIMING_FILE: &str = "acceptance_timing.json";

fn desk_run(dir: &Path) -> morphdet::Result<(RunReport, f64, bool)> {
    let manifest_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut config = RunConfig::load(&manifest_dir.join("configs/desk.toml"))?;
    config.output_dir = dir.to_path_buf();
    let start = Instant::now();
    let manifest = run_experiment(&config, None)?;
    let secs = start.elapsed().as_secs_f64();
    let cached = manifest.stages.iter().all(|s| s.cache_hit);
    let timing_path = dir.join(TIMING_FILE);
    let recorded = std::fs::read(&timing_path).ok().and_then(|b| serde_json::from_slice::<Timing>(&b).ok()).filter(|t| t.config_hash == manifest.config_hash);
    let seconds = match (cached, recorded) {
        (true, Some(t)) => t.seconds,
        _ => {
            let t = Timing { config_hash: manifest.config_hash.clone(), seconds: secs };
            std::fs::write(&timing_path, serde_json::to_vec_pretty(&t).unwrap()).map_err(|e| morphdet::Error::io(&timing_path, e))?;
            secs
        }
    };
    Ok((load_report(dir)?, seconds, cached))
}

fn trend(report: &RunReport, seconds: f64, cached: bool) -> Outcome {
    let get = |m: &str| report.d_eer(m).unwrap_or(f64::NAN);
    let (frozen, ours, concat, diff) = (get(METHOD_FROZEN), get(METHOD_OURS), get(METHOD_SVM_CONCAT), get(METHOD_SVM_DIFF));
    let checks = [
        ("fine-tuned <= frozen", ours <= frozen + TREND_SLACK),
        ("concat SVM <= Euclidean", concat <= ours + TREND_SLACK),
        ("difference SVM <= Euclidean", diff <= ours + TREND_SLACK),
        ("runtime <= 3h CPU", seconds <= 3.0 * 3600.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "frozen {frozen:.4} fine-tuned {ours:.4} svm-concat {concat:.4} svm-difference {diff:.4}, runtime {seconds:.0}s{}, failed {failed:?}",
            if cached { " (recorded)" } else { "" }
        ),
    )
}

fn baselines(report: &RunReport) -> Outcome {
    let get = |m: &str| report.d_eer(m).unwrap_or(f64::NAN);
    let texture = ["LBP", "BSIF"].map(get);
    let keypoint = ["SIFT", "SURF"].map(get);
    let pass = texture.iter().all(|t| keypoint.iter().all(|k| *t <= k + TREND_SLACK));
    let flagged = report.flags.iter().any(|f| f.contains("LBP") || f.contains("BSIF"));
    outcome(
        pass && !flagged,
        format!("LBP {:.4} BSIF {:.4} SIFT {:.4} SURF {:.4}, report flags {}", texture[0], texture[1], keypoint[0], keypoint[1], report.flags.len()),
    )
}

fn cam_separation(report: &RunReport) -> Outcome {
    match &report.cam {
        None => outcome(false, "no CAM summary in the report".into()),
        Some(c) => outcome(
            c.n_genuine >= 50 && c.n_imposter >= 50 && c.mean_genuine < c.mean_imposter,
            format!(
                "layer {} genuine {:.4} over {} pairs, imposter {:.4} over {} pairs",
                c.layer, c.mean_genuine, c.n_genuine, c.mean_imposter, c.n_imposter
            ),
        ),
    }
}

/// Two fresh runs of a reduced desk configuration.
fn reproducibility(root: &Path) -> Outcome {
    let text = r#"
seed = 11
output_dir = "."

[testbed]
identities = 24
probes_per_identity = 2
families = 8
images_per_family_member = 3

[pretrain]
epochs = 2

[finetune]
epochs = 2

[explain]
pairs_per_class = 8
overlays = 2
"#;
    let run = |name: &str| -> morphdet::Result<PathBuf> {
        let dir = root.join(name);
        let _ = std::fs::remove_dir_all(&dir);
        let mut config = RunConfig::from_toml(text, root)?;
        config.output_dir = dir.clone();
        run_experiment(&config, None)?;
        Ok(dir)
    };
    let dirs = match (run("repro_a"), run("repro_b")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("run failed: {e}")),
    };
    let mut differing = Vec::new();
    for f in ["scores.csv", "report.json"] {
        if std::fs::read(dirs.0.join(f)).ok() != std::fs::read(dirs.1.join(f)).ok() {
            differing.push(f);
        }
    }
    outcome(differing.is_empty(), format!("scores.csv and report.json compared byte-wise, differing {differing:?}"))
}

fn main() {
    // libtest flags such as --nocapture may be forwarded; only a filter of "--list" matters.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&root).unwrap();
    let mut results = vec![
        ("1 metric oracle equivalence", metric_oracle()),
        ("2 contrastive loss correctness", loss_correctness()),
        ("3 morph synthesis properties", morph_properties()),
    ];
    match desk_run(&root.join("desk")) {
        Ok((report, seconds, cached)) => {
            results.push(("4 end-to-end trend", trend(&report, seconds, cached)));
            results.push(("5 baseline sanity", baselines(&report)));
            results.push(("6 CAM separation", cam_separation(&report)));
        }
        Err(e) => {
            for name in ["4 end-to-end trend", "5 baseline sanity", "6 CAM separation"] {
                results.push((name, outcome(false, format!("desk run failed: {e}"))));
            }
        }
    }
    results.push(("7 reproducibility", reproducibility(&root)));
    let passed = results.iter().filter(|r| r.1.pass).count();
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed < results.len() && std::env::var_os("MORPHDET_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
