//! Command-line front end. Exit codes: 0 success, 2 validation failure,
//! 3 stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use morphdet::dataset::{ImageKind, ImageRef};
use morphdet::face_prep::{align_face, detect_face, ChromaFaceDetector};
use morphdet::imaging::{load_rgb, save_rgb};
use morphdet::metrics::{evaluate, read_scores_csv, render_det_png, write_det_csv};
use morphdet::pipeline::{has_errors, run_experiment, validate_config, RunConfig, Severity, Stage, MODEL_CACHE_ENV};
use morphdet::Error;

#[derive(Parser)]
#[command(name = "morphdet", version, about = "Differential face-morph detection")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Verb {
    /// Check a configuration without running anything.
    Validate(ConfigArg),
    /// Run the whole experiment.
    Run(ConfigArg),
    /// Align every image of the run, or one image with --image/--out.
    Align {
        #[arg(long, short, conflicts_with_all = ["image", "out"])]
        config: Option<PathBuf>,
        #[arg(long, requires = "out")]
        image: Option<PathBuf>,
        #[arg(long, requires = "image")]
        out: Option<PathBuf>,
    },
    /// Synthesize the configured morphs.
    Morph(ConfigArg),
    /// Write the subject-disjoint split.
    Split(ConfigArg),
    /// Pretrain and fine-tune the Siamese backbone.
    Train(ConfigArg),
    /// Embed every aligned face with the frozen and fine-tuned backbones.
    Embed(ConfigArg),
    /// Fit the decision heads and score the test pairs.
    Score(ConfigArg),
    /// Fit and score the classical baselines.
    Baseline(ConfigArg),
    /// Compute class activation maps and their distances.
    Explain(ConfigArg),
    /// Evaluate the run, or a score file with --scores/--out.
    Evaluate {
        #[arg(long, short, conflicts_with_all = ["scores", "out"])]
        config: Option<PathBuf>,
        #[arg(long, requires = "out")]
        scores: Option<PathBuf>,
        #[arg(long, requires = "scores")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 101)]
        det_points: usize,
    },
}

enum Failure {
    Validation(String),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Validation(m),
            other => Failure::Stage(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| Failure::Validation(e.to_string()))
}

fn validate(path: &Path) -> Result<(), Failure> {
    let config = load(path)?;
    let findings = validate_config(&config);
    for f in &findings {
        match f.severity {
            Severity::Error => eprintln!("{f}"),
            Severity::Warning => println!("{f}"),
        }
    }
    if has_errors(&findings) {
        return Err(Failure::Validation(format!("{} has errors", path.display())));
    }
    println!("{}: ok", path.display());
    Ok(())
}

fn run_until(path: &Path, until: Option<Stage>) -> Result<(), Failure> {
    let config = load(path)?;
    let findings = validate_config(&config);
    for f in &findings {
        eprintln!("{f}");
    }
    if has_errors(&findings) {
        return Err(Failure::Validation(format!("{} has errors", path.display())));
    }
    let manifest = run_experiment(&config, until)?;
    for s in &manifest.stages {
        println!("{:<10} {:>9.1}s{}", s.name, s.seconds, if s.cache_hit { "  (cached)" } else { "" });
    }
    println!("outputs in {}", config.output().display());
    Ok(())
}

fn align_one(image: &Path, out: &Path) -> Result<(), Failure> {
    let img = load_rgb(image)?;
    let name = image.to_string_lossy().into_owned();
    let det = detect_face(&ChromaFaceDetector, &img, &name)?;
    let source = ImageRef::bona_fide(name, ImageKind::BonaFideProbe, "cli");
    let face = align_face(&img, &det, source)?;
    save_rgb(&face.pixels, out)?;
    println!("{} -> {} (confidence {:.3})", image.display(), out.display(), det.confidence);
    Ok(())
}

fn evaluate_file(scores: &Path, out: &Path, det_points: usize) -> Result<(), Failure> {
    let sets = read_scores_csv(scores)?;
    let mut rows = Vec::new();
    for s in &sets {
        let r = evaluate(s, det_points)?;
        let name: String = format!("{}_{}", s.method_tag, s.split_tag)
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect();
        write_det_csv(&out.join("det").join(format!("{name}.csv")), &r.det_samples)?;
        println!("{:<22} {:<6} D-EER {:.4}", r.method, r.split, r.d_eer);
        rows.push(r);
    }
    let curves: Vec<(&str, &[(f64, f64)])> = rows.iter().map(|r| (r.method.as_str(), r.det_samples.as_slice())).collect();
    render_det_png(&out.join("det.png"), &curves)?;
    let text = serde_json::to_string_pretty(&rows).map_err(Error::from)?;
    let path = out.join("report.json");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn dispatch(verb: Verb) -> Result<(), Failure> {
    match verb {
        Verb::Validate(c) => validate(&c.config),
        Verb::Run(c) => run_until(&c.config, None),
        Verb::Align { config: Some(c), .. } => run_until(&c, Some(Stage::Align)),
        Verb::Align {
            image: Some(i), out: Some(o), ..
        } => align_one(&i, &o),
        Verb::Align { .. } => Err(Failure::Validation("align needs --config or --image with --out".into())),
        Verb::Morph(c) => run_until(&c.config, Some(Stage::Morph)),
        Verb::Split(c) => run_until(&c.config, Some(Stage::Split)),
        Verb::Train(c) => run_until(&c.config, Some(Stage::Finetune)),
        Verb::Embed(c) => run_until(&c.config, Some(Stage::Embed)),
        Verb::Score(c) => run_until(&c.config, Some(Stage::Score)),
        Verb::Baseline(c) => run_until(&c.config, Some(Stage::Baseline)),
        Verb::Explain(c) => run_until(&c.config, Some(Stage::Explain)),
        Verb::Evaluate { config: Some(c), .. } => run_until(&c, Some(Stage::Evaluate)),
        Verb::Evaluate {
            scores: Some(s),
            out: Some(o),
            det_points,
            ..
        } => evaluate_file(&s, &o, det_points),
        Verb::Evaluate { .. } => Err(Failure::Validation("evaluate needs --config or --scores with --out".into())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    log::debug!("model cache: {:?}", std::env::var_os(MODEL_CACHE_ENV));
    let cli = Cli::parse();
    match dispatch(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("validation failed: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("stage failed: {m}");
            ExitCode::from(3)
        }
    }
}
