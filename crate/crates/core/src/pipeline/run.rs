//! Stage graph of a run with content-addressed caching and the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use image::RgbImage;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{has_errors, substream, validate_config, RunConfig, MODEL_CACHE_ENV};
use crate::baselines::{self, FilterBank};
use crate::cam::{explain_pairs, mean_by_label, CamPair};
use crate::dataset::{build_family_pairs, build_pairs, make_split, ImageKind, ImageRef, Label, Manifest, PairSample, SplitName, SplitSpec};
use crate::embedding::{Backbone, EmbeddingStore};
use crate::error::{Error, Result};
use crate::face_prep::{align_face, detect_face, AlignRecord, ChromaFaceDetector};
use crate::heads::{euclidean_score, fit_svm_head, svm_score, EmbeddingPair, InputMode};
use crate::imaging::{load_rgb, save_rgb, to_gray};
use crate::metrics::{evaluate, read_scores_csv, render_det_png, write_det_csv, write_scores_csv, EvalReport, Polarity, ScoreSet};
use crate::morph::{run_recipe, ChromaLandmarker, MorphMode, MorphRecipe, SpliceRecipient};
use crate::nn::Network;
use crate::svm::FeatureSvm;
use crate::testbed::{generate_testbed, FAMILY_MANIFEST_FILE, MANIFEST_FILE};
use crate::train::{finetune_on_morphs, load_pretrained, train_stage, PairData, TrainState};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
const STAGE_FILE: &str = "stage.json";

pub const METHOD_FROZEN: &str = "frozen-embedding";
pub const METHOD_OURS: &str = "Ours";
pub const METHOD_SVM_CONCAT: &str = "Ours+SVM(concat)";
pub const METHOD_SVM_DIFF: &str = "Ours+SVM(difference)";
/// Report row order.
pub const METHOD_ORDER: [&str; 8] = ["SIFT", "SURF", "LBP", "BSIF", METHOD_FROZEN, METHOD_OURS, METHOD_SVM_CONCAT, METHOD_SVM_DIFF];
/// Absolute D-EER slack of the trend checks.
pub const TREND_SLACK: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Testbed,
    Split,
    Morph,
    Align,
    Pretrain,
    Finetune,
    Embed,
    Score,
    Baseline,
    Explain,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Testbed => "testbed",
            Stage::Split => "split",
            Stage::Morph => "morph",
            Stage::Align => "align",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Embed => "embed",
            Stage::Score => "score",
            Stage::Baseline => "baseline",
            Stage::Explain => "explain",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    /// Output-relative path → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl StageRecord {
    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.key.as_bytes());
        for (p, d) in &self.artifacts {
            h.update(p.as_bytes());
            h.update(d.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRun {
    pub name: String,
    pub key: String,
    pub cache_hit: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    /// Weights, filter bank and backbone fingerprints.
    pub components: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub stages: Vec<StageRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Every file under the output directory except this manifest.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamSummary {
    pub layer: String,
    pub exclude_lower: f64,
    pub n_genuine: usize,
    pub n_imposter: usize,
    pub mean_genuine: f64,
    pub mean_imposter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stage: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_deer: Option<f64>,
    pub weights: String,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<EvalReport>,
    pub cam: Option<CamSummary>,
    pub training: Vec<TrainSummary>,
    /// Trend checks that did not hold.
    pub flags: Vec<String>,
}

impl RunReport {
    pub fn d_eer(&self, method: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method).map(|r| r.d_eer)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn rel(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

struct Runner {
    out: PathBuf,
    stages: Vec<StageRun>,
}

impl Runner {
    fn stage_dir(&self, s: Stage) -> PathBuf {
        self.out.join("stages").join(s.name())
    }

    fn cached(&self, dir: &Path, key: &str) -> Option<StageRecord> {
        let rec: StageRecord = read_json(&dir.join(STAGE_FILE)).ok()?;
        if rec.key != key {
            return None;
        }
        for (p, d) in &rec.artifacts {
            if sha256_file(&self.out.join(p)).ok()? != *d {
                return None;
            }
        }
        Some(rec)
    }

    /// Runs `body` in a fresh stage directory unless a record with the same
    /// key and intact artifacts exists.
    fn run<C: Serialize>(&mut self, s: Stage, config: &C, inputs: &[&StageRecord], body: impl FnOnce(&Path, &str) -> Result<()>) -> Result<StageRecord> {
        let mut h = Sha256::new();
        h.update(s.name().as_bytes());
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.update(serde_json::to_string(config)?.as_bytes());
        for i in inputs {
            h.update(i.digest().as_bytes());
        }
        let key = hex::encode(h.finalize());
        let dir = self.stage_dir(s);
        let t0 = Instant::now();
        if let Some(rec) = self.cached(&dir, &key) {
            info!("stage {}: cache hit", s.name());
            self.stages.push(StageRun {
                name: s.name().into(),
                key,
                cache_hit: true,
                seconds: t0.elapsed().as_secs_f64(),
            });
            return Ok(rec);
        }
        info!("stage {}: running", s.name());
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let wrap = |e: Error| Error::Stage {
            stage: s.name().into(),
            source: Box::new(e),
        };
        body(&dir, &key).map_err(wrap)?;
        let mut files = Vec::new();
        walk(&dir, &mut files).map_err(wrap)?;
        let mut artifacts = BTreeMap::new();
        for f in files {
            artifacts.insert(rel(&self.out, &f), sha256_file(&f).map_err(wrap)?);
        }
        let rec = StageRecord {
            name: s.name().into(),
            key: key.clone(),
            artifacts,
        };
        crate::dataset::write_json(&dir.join(STAGE_FILE), &rec).map_err(wrap)?;
        self.stages.push(StageRun {
            name: s.name().into(),
            key,
            cache_hit: false,
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(rec)
    }
}

/// Where the crop of an image lives inside the align stage.
pub fn crop_key(r: &ImageRef) -> String {
    match r.kind {
        ImageKind::Morph => format!("morph/{}", r.path),
        _ => format!("bona/{}", r.path),
    }
}

/// Same-gender couples inside each split, one complete morph each plus
/// optional splices into both contributors. Sources are reference images.
pub fn auto_recipes(manifest: &Manifest, split: &SplitSpec, alpha: f64, splice: bool, seed: u64) -> Result<Vec<MorphRecipe>> {
    let mut out = Vec::new();
    for which in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let mut by_gender: BTreeMap<_, Vec<&str>> = BTreeMap::new();
        for id in split.subjects(which) {
            let s = manifest.subject(id).ok_or_else(|| Error::Split(format!("unknown subject `{id}`")))?;
            by_gender.entry(s.gender).or_default().push(id.as_str());
        }
        for (gender, mut ids) in by_gender {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, &format!("couples-{which}-{gender}")));
            ids.shuffle(&mut rng);
            for c in ids.chunks_exact(2) {
                let source = |id: &str| -> Result<ImageRef> {
                    let s = manifest.subject(id).expect("checked");
                    s.bona_fide()
                        .find(|i| i.kind == ImageKind::BonaFideReference)
                        .or_else(|| s.bona_fide().next())
                        .cloned()
                        .ok_or_else(|| Error::Manifest(format!("subject `{id}` has no bona fide image")))
                };
                let (a, b) = (source(c[0])?, source(c[1])?);
                let stem = format!("morphs/{}_{}", c[0], c[1]);
                let mut push = |mode: MorphMode, recipient: Option<SpliceRecipient>, suffix: String| {
                    out.push(MorphRecipe {
                        source_a: a.clone(),
                        source_b: b.clone(),
                        alpha,
                        mode,
                        splice_recipient: recipient,
                        seed: substream(seed, &format!("{stem}{suffix}")),
                        output: format!("{stem}{suffix}.png"),
                    })
                };
                push(MorphMode::Complete, None, "_complete".into());
                if splice {
                    push(MorphMode::Splicing, Some(SpliceRecipient::A), format!("_splice_{}", c[0]));
                    push(MorphMode::Splicing, Some(SpliceRecipient::B), format!("_splice_{}", c[1]));
                }
            }
        }
    }
    Ok(out)
}

/// Loaded crops keyed by [`crop_key`].
struct Crops {
    dir: PathBuf,
    images: BTreeMap<String, RgbImage>,
}

impl Crops {
    fn new(align_dir: &Path) -> Self {
        Crops {
            dir: align_dir.join("crops"),
            images: BTreeMap::new(),
        }
    }

    fn load<'a>(&mut self, refs: impl IntoIterator<Item = &'a ImageRef>) -> Result<()> {
        for r in refs {
            let k = crop_key(r);
            if !self.images.contains_key(&k) {
                let img = load_rgb(&self.dir.join(&k))?;
                self.images.insert(k, img);
            }
        }
        Ok(())
    }

    fn get(&self, r: &ImageRef) -> &RgbImage {
        &self.images[&crop_key(r)]
    }

    /// Images and index pairs for training.
    fn pair_data(&mut self, pairs: &[PairSample]) -> Result<(Vec<RgbImage>, Vec<(usize, usize, Label)>)> {
        self.load(pairs.iter().flat_map(|p| [&p.trusted, &p.questioned]))?;
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut images = Vec::new();
        let mut slot = |r: &ImageRef| -> usize {
            let k = crop_key(r);
            *index.entry(k.clone()).or_insert_with(|| {
                images.push(self.images[&k].clone());
                images.len() - 1
            })
        };
        let idx = pairs.iter().map(|p| (slot(&p.trusted), slot(&p.questioned), p.label)).collect();
        Ok((images, idx))
    }
}

/// Family split: a seeded share of the families (at least one) is held out
/// for validation.
fn family_subjects(fam: &Manifest, val_fraction: f64, seed: u64) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut families: Vec<String> = fam.subjects.iter().map(|s| s.family.clone().unwrap_or_else(|| s.subject_id.clone())).collect();
    families.sort();
    families.dedup();
    families.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((val_fraction * families.len() as f64).round() as usize).clamp(1, families.len().saturating_sub(1).max(1));
    let val: BTreeSet<&String> = families[..n_val].iter().collect();
    let (mut tr, mut va) = (BTreeSet::new(), BTreeSet::new());
    for s in &fam.subjects {
        let f = s.family.clone().unwrap_or_else(|| s.subject_id.clone());
        if val.contains(&f) {
            va.insert(s.subject_id.clone());
        } else {
            tr.insert(s.subject_id.clone());
        }
    }
    (tr, va)
}

fn summary(state: &TrainState) -> TrainSummary {
    TrainSummary {
        stage: format!("{:?}", state.stage).to_lowercase(),
        epochs: state.epoch,
        best_epoch: state.best_epoch,
        best_val_deer: state.best_val_deer,
        weights: state.checkpoint.clone(),
    }
}

fn embedding_pairs(store: &EmbeddingStore, pairs: &[PairSample]) -> Result<Vec<EmbeddingPair>> {
    pairs.iter().map(|p| Ok((store.get(&crop_key(&p.trusted))?, store.get(&crop_key(&p.questioned))?))).collect()
}

/// Validation data is only usable with both classes present.
fn has_both(pairs: &[PairSample]) -> bool {
    pairs.iter().any(|p| p.label == Label::Genuine) && pairs.iter().any(|p| p.label == Label::Imposter)
}

fn labels(pairs: &[PairSample]) -> Vec<Label> {
    pairs.iter().map(|p| p.label).collect()
}

fn score_set(method: &str, pairs: &[PairSample], scores: Vec<f64>) -> Result<ScoreSet> {
    let ids = pairs.iter().map(|p| p.pair_id()).collect();
    ScoreSet::from_raw(method, "test", ids, &scores, &labels(pairs), Polarity::LargerIsMorph)
}

fn slug(method: &str) -> String {
    method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Trend checks on the report rows; each failure becomes a flag.
pub fn trend_flags(rows: &[EvalReport], cam: Option<&CamSummary>) -> Vec<String> {
    let get = |m: &str| rows.iter().find(|r| r.method == m).map(|r| r.d_eer);
    let mut flags = Vec::new();
    if let (Some(ours), Some(frozen)) = (get(METHOD_OURS), get(METHOD_FROZEN)) {
        if ours > frozen + TREND_SLACK {
            flags.push(format!("fine-tuned D-EER {ours:.4} exceeds frozen-embedding {frozen:.4} + {TREND_SLACK}"));
        }
    }
    if let Some(eu) = get(METHOD_OURS) {
        for m in [METHOD_SVM_CONCAT, METHOD_SVM_DIFF] {
            if let Some(v) = get(m).filter(|v| *v > eu + TREND_SLACK) {
                flags.push(format!("{m} D-EER {v:.4} exceeds Euclidean head {eu:.4} + {TREND_SLACK}"));
            }
        }
    }
    for tex in ["LBP", "BSIF"] {
        for kp in ["SIFT", "SURF"] {
            if let (Some(t), Some(k)) = (get(tex), get(kp)) {
                if t > k + TREND_SLACK {
                    flags.push(format!("texture baseline {tex} D-EER {t:.4} exceeds keypoint baseline {kp} {k:.4} + {TREND_SLACK}"));
                }
            }
        }
    }
    if let Some(c) = cam {
        if !(c.mean_genuine < c.mean_imposter) {
            flags.push(format!("mean CAM distance of genuine pairs {:.4} is not below imposter pairs {:.4}", c.mean_genuine, c.mean_imposter));
        }
    }
    flags
}

/// Files written to the top of the output directory.
pub const PUBLISHED: [&str; 4] = ["report.json", "scores.csv", "det.png", "cam_distances.csv"];

/// Runs every stage up to and including `until` (all when `None`).
pub fn run_experiment(config: &RunConfig, until: Option<Stage>) -> Result<RunManifest> {
    let findings = validate_config(config);
    if has_errors(&findings) {
        let msg: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        return Err(Error::Config(msg.join("; ")));
    }
    let out = config.output();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let started = unix_now();
    // where the run is written is not part of what it computes
    let mut keyed = config.clone();
    keyed.output_dir = PathBuf::new();
    let config_hash = hex::encode(Sha256::digest(serde_json::to_string(&keyed)?.as_bytes()));
    let mut runner = Runner {
        out: out.clone(),
        stages: Vec::new(),
    };
    let mut components = BTreeMap::new();
    let result = stages(config, until, &mut runner, &mut components);
    let (failed_stage, error) = match &result {
        Ok(()) => (None, None),
        Err(Error::Stage { stage, source }) => (Some(stage.clone()), Some(source.to_string())),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut files = Vec::new();
    walk(&out, &mut files)?;
    let mut artifacts = BTreeMap::new();
    for f in files {
        let r = rel(&out, &f);
        if r != RUN_MANIFEST_FILE {
            artifacts.insert(r, sha256_file(&f)?);
        }
    }
    let manifest = RunManifest {
        config_hash,
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        components,
        started_unix: started,
        finished_unix: unix_now(),
        stages: runner.stages,
        failed_stage,
        error,
        artifacts,
    };
    crate::dataset::write_json(&out.join(RUN_MANIFEST_FILE), &manifest)?;
    result.map(|_| manifest)
}

fn stages(config: &RunConfig, until: Option<Stage>, runner: &mut Runner, components: &mut BTreeMap<String, String>) -> Result<()> {
    let reached = |s: Stage| until.is_some_and(|u| s >= u);
    let seed = config.seed;

    // dataset
    let (dataset_root, dataset_rec, main_name, family_name) = match (&config.testbed, &config.dataset) {
        (Some(t), _) => {
            let mut t = t.clone();
            t.seed = substream(seed, "testbed") ^ t.seed;
            let rec = runner.run(Stage::Testbed, &t, &[], |dir, _| generate_testbed(&t, dir).map(|_| ()))?;
            let fam = (t.families > 0).then(|| PathBuf::from(FAMILY_MANIFEST_FILE));
            (runner.stage_dir(Stage::Testbed), rec, PathBuf::from(MANIFEST_FILE), fam)
        }
        (None, Some(d)) => {
            let root = config.resolve(&d.root);
            let main = Manifest::load(&root.join(&d.manifest))?;
            let mut artifacts = BTreeMap::new();
            let mut files = vec![d.manifest.clone()];
            files.extend(d.family_manifest.clone());
            for f in &files {
                artifacts.insert(f.to_string_lossy().into_owned(), sha256_file(&root.join(f))?);
            }
            let mut all: Vec<&ImageRef> = main.all_images();
            let fam = match &d.family_manifest {
                Some(f) => Some(Manifest::load(&root.join(f))?),
                None => None,
            };
            if let Some(f) = &fam {
                all.extend(f.all_images());
            }
            for r in all {
                artifacts.insert(r.path.clone(), sha256_file(&root.join(&r.path))?);
            }
            let rec = StageRecord {
                name: "dataset".into(),
                key: "external".into(),
                artifacts,
            };
            (root, rec, d.manifest.clone(), d.family_manifest.clone())
        }
        (None, None) => return Err(Error::Config("no dataset configured".into())),
    };
    if reached(Stage::Testbed) {
        return Ok(());
    }
    let main = Manifest::load(&dataset_root.join(&main_name))?;
    let families = match &family_name {
        Some(f) => Some(Manifest::load(&dataset_root.join(f))?),
        None => None,
    };

    // split
    let split_rec = runner.run(Stage::Split, &config.split, &[&dataset_rec], |dir, _| {
        let s = make_split(&main, config.split.train_fraction, config.split.val_fraction_of_train, substream(seed, "split"))?;
        s.save(&dir.join("split.json"))
    })?;
    let split = SplitSpec::load(&runner.stage_dir(Stage::Split).join("split.json"))?;
    if reached(Stage::Split) {
        return Ok(());
    }

    // morph
    let morph_dir = runner.stage_dir(Stage::Morph);
    let morph_rec = runner.run(Stage::Morph, &config.morph, &[&dataset_rec, &split_rec], |dir, _| {
        let mut recipes = if config.morph.auto {
            auto_recipes(&main, &split, config.morph.alpha, config.morph.splice, substream(seed, "morph"))?
        } else {
            Vec::new()
        };
        recipes.extend(config.morph.recipes.iter().cloned());
        let landmarker = ChromaLandmarker;
        let mut full = main.clone();
        for r in &recipes {
            let img = run_recipe(r, &dataset_root, &landmarker)?;
            save_rgb(&img, &dir.join(&r.output))?;
            full.morphs.push(r.image_ref());
        }
        full.validate()?;
        crate::dataset::write_json(&dir.join("recipes.json"), &recipes)?;
        full.save(&dir.join("manifest_with_morphs.json"))
    })?;
    let full = Manifest::load(&morph_dir.join("manifest_with_morphs.json"))?;
    if reached(Stage::Morph) {
        return Ok(());
    }

    // align
    let align_dir = runner.stage_dir(Stage::Align);
    let align_rec = runner.run(Stage::Align, &"chroma-detector/similarity-160", &[&dataset_rec, &morph_rec], |dir, _| {
        let detector = ChromaFaceDetector;
        let mut records: BTreeMap<String, AlignRecord> = BTreeMap::new();
        let mut todo: Vec<&ImageRef> = full.all_images();
        if let Some(f) = &families {
            todo.extend(f.all_images());
        }
        for r in todo {
            let src = match r.kind {
                ImageKind::Morph => morph_dir.join(&r.path),
                _ => dataset_root.join(&r.path),
            };
            let img = load_rgb(&src)?;
            let det = detect_face(&detector, &img, &r.path)?;
            let face = align_face(&img, &det, r.clone())?;
            let k = crop_key(r);
            save_rgb(&face.pixels, &dir.join("crops").join(&k))?;
            records.insert(
                k,
                AlignRecord {
                    detection: det,
                    transform: face.transform.matrix(),
                },
            );
        }
        crate::dataset::write_json(&dir.join("transforms.json"), &records)
    })?;
    if reached(Stage::Align) {
        return Ok(());
    }
    let mut crops = Crops::new(&align_dir);

    // pretrain
    let arch = config.backbone.arch();
    let pre_cfg = config.pretrain_config();
    let pre_key_cfg = (&config.backbone, &pre_cfg, config.split.val_fraction_of_train);
    let pre_dir = runner.stage_dir(Stage::Pretrain);
    let pre_rec = runner.run(Stage::Pretrain, &pre_key_cfg, &[&align_rec], |dir, key| {
        let ckpt = dir.join("backbone.mdck");
        if let Some(name) = &config.backbone.pretrained {
            let b = load_pretrained(&config.pretrained_path(name), &arch)?;
            return b.save(&ckpt);
        }
        let cache = std::env::var_os(MODEL_CACHE_ENV).map(PathBuf::from);
        let cached = cache.as_ref().map(|c| c.join(format!("pretrain-{}.mdck", &key[..16])));
        if let Some(c) = cached.as_ref().filter(|c| c.is_file()) {
            info!("pretrained backbone from model cache {}", c.display());
            let b = load_pretrained(c, &arch)?;
            return b.save(&ckpt);
        }
        let fam = families.as_ref().ok_or_else(|| Error::Config("no family manifest to pretrain on".into()))?;
        let (tr, va) = family_subjects(fam, config.split.val_fraction_of_train, substream(seed, "family-split"));
        let train_pairs = build_family_pairs(fam, &tr)?;
        let val_pairs = build_family_pairs(fam, &va)?;
        let (ti, tp) = crops.pair_data(&train_pairs.pairs)?;
        let (vi, vp) = crops.pair_data(&val_pairs.pairs)?;
        let mut net = Network::new(arch.clone(), substream(seed, "init"))?;
        let state = train_stage(
            &mut net,
            &PairData { images: &ti, pairs: &tp },
            has_both(&val_pairs.pairs).then_some(&PairData { images: &vi, pairs: &vp }),
            &pre_cfg,
        )?;
        let b = Backbone::with_provenance(format!("{}-pretrained", config.backbone.id), net, state.provenance.clone());
        b.save(&ckpt)?;
        crate::dataset::write_json(&dir.join("train_state.json"), &state)?;
        if let Some(c) = cached {
            if let Some(parent) = c.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::copy(&ckpt, &c).map_err(|e| Error::io(&c, e))?;
        }
        Ok(())
    })?;
    let pretrained = Backbone::load(&pre_dir.join("backbone.mdck"))?;
    components.insert("pretrained_weights".into(), pretrained.weights_fingerprint().into());
    components.insert("backbone_id".into(), config.backbone.id.clone());
    if reached(Stage::Pretrain) {
        return Ok(());
    }

    let train_pairs = build_pairs(&full, &split, SplitName::Train)?.pairs;
    let val_pairs = build_pairs(&full, &split, SplitName::Val)?.pairs;
    let test_pairs = build_pairs(&full, &split, SplitName::Test)?.pairs;

    // finetune
    let ft_cfg = config.finetune_config();
    let ft_dir = runner.stage_dir(Stage::Finetune);
    let ft_rec = runner.run(Stage::Finetune, &ft_cfg, &[&pre_rec, &align_rec, &split_rec, &morph_rec], |dir, _| {
        let (ti, tp) = crops.pair_data(&train_pairs)?;
        let (vi, vp) = crops.pair_data(&val_pairs)?;
        let val = has_both(&val_pairs).then_some(PairData { images: &vi, pairs: &vp });
        let (b, state) = finetune_on_morphs(&pretrained, &PairData { images: &ti, pairs: &tp }, val.as_ref(), &ft_cfg)?;
        b.save(&dir.join("backbone.mdck"))?;
        crate::dataset::write_json(&dir.join("train_state.json"), &state)
    })?;
    let finetuned = Backbone::load(&ft_dir.join("backbone.mdck"))?;
    components.insert("finetuned_weights".into(), finetuned.weights_fingerprint().into());
    if reached(Stage::Finetune) {
        return Ok(());
    }

    // embed
    let embed_dir = runner.stage_dir(Stage::Embed);
    let embed_rec = runner.run(Stage::Embed, &ft_cfg.normalize, &[&pre_rec, &ft_rec, &align_rec, &morph_rec], |dir, _| {
        let refs: Vec<&ImageRef> = full.all_images();
        crops.load(refs.iter().copied())?;
        let faces: Vec<&RgbImage> = refs.iter().map(|r| crops.get(r)).collect();
        for (stem, b) in [("frozen", &pretrained), ("finetuned", &finetuned)] {
            let emb = b.flip_concat_batch(&faces, ft_cfg.normalize)?;
            let mut store = EmbeddingStore::new(2 * b.embedding_dim(), ft_cfg.normalize, b.weights_fingerprint());
            for (r, e) in refs.iter().zip(emb) {
                store.insert(crop_key(r), e)?;
            }
            store.save(dir, stem)?;
        }
        Ok(())
    })?;
    if reached(Stage::Embed) {
        return Ok(());
    }

    // score
    let score_dir = runner.stage_dir(Stage::Score);
    let score_rec = runner.run(Stage::Score, &config.heads, &[&embed_rec, &split_rec, &morph_rec], |dir, _| {
        let frozen = EmbeddingStore::load(&embed_dir, "frozen")?;
        let tuned = EmbeddingStore::load(&embed_dir, "finetuned")?;
        let euclid = |store: &EmbeddingStore| -> Result<Vec<f64>> {
            embedding_pairs(store, &test_pairs)?.iter().map(|(a, b)| euclidean_score(a, b)).collect()
        };
        let mut sets = vec![score_set(METHOD_FROZEN, &test_pairs, euclid(&frozen)?)?];
        if config.heads.euclidean {
            sets.push(score_set(METHOD_OURS, &test_pairs, euclid(&tuned)?)?);
        }
        let tr = embedding_pairs(&tuned, &train_pairs)?;
        let va = embedding_pairs(&tuned, &val_pairs)?;
        let te = embedding_pairs(&tuned, &test_pairs)?;
        let (ty, vy) = (labels(&train_pairs), labels(&val_pairs));
        let val = has_both(&val_pairs).then_some((va.as_slice(), vy.as_slice()));
        for (on, mode, method) in [
            (config.heads.svm_concat, InputMode::Concatenation, METHOD_SVM_CONCAT),
            (config.heads.svm_difference, InputMode::Difference, METHOD_SVM_DIFF),
        ] {
            if !on {
                continue;
            }
            let head = fit_svm_head(&tr, &ty, val, mode, &config.heads.grid, substream(seed, method))?;
            head.save(&dir.join("heads"), mode.tag())?;
            let s: Vec<f64> = te.iter().map(|(a, b)| svm_score(&head, a, b)).collect::<Result<_>>()?;
            sets.push(score_set(method, &test_pairs, s)?);
        }
        let refs: Vec<&ScoreSet> = sets.iter().collect();
        write_scores_csv(&dir.join("scores.csv"), &refs)
    })?;
    if reached(Stage::Score) {
        return Ok(());
    }

    // baselines
    let bank = match &config.baselines.bsif_bank {
        Some(p) => FilterBank::load(&config.resolve(p))?,
        None => FilterBank::builtin(),
    };
    components.insert("bsif_bank_sha256".into(), bank.sha256.clone());
    let base_dir = runner.stage_dir(Stage::Baseline);
    let base_rec = runner.run(Stage::Baseline, &(&config.baselines.kinds, &bank.sha256, &config.heads.grid), &[&align_rec, &split_rec, &morph_rec], |dir, _| {
        let refs = full.all_images();
        crops.load(refs.iter().copied())?;
        let grays: BTreeMap<String, crate::imaging::Plane> = refs.iter().map(|r| (crop_key(r), to_gray(crops.get(r)))).collect();
        let mut sets = Vec::new();
        for &kind in &config.baselines.kinds {
            let feats: BTreeMap<&String, Vec<f64>> = grays.iter().map(|(k, g)| Ok((k, baselines::extract(kind, g, &bank)?))).collect::<Result<_>>()?;
            let diff = |pairs: &[PairSample]| -> Result<Vec<Vec<f64>>> {
                pairs.iter().map(|p| baselines::difference(&feats[&crop_key(&p.trusted)], &feats[&crop_key(&p.questioned)])).collect()
            };
            let (tx, vx, sx) = (diff(&train_pairs)?, diff(&val_pairs)?, diff(&test_pairs)?);
            let vy = labels(&val_pairs);
            let val = has_both(&val_pairs).then_some((vx.as_slice(), vy.as_slice()));
            let svm = FeatureSvm::fit(&tx, &labels(&train_pairs), val, &config.heads.grid, substream(seed, kind.tag()))?;
            crate::dataset::write_json(&dir.join(format!("svm_{}.json", kind.tag().to_lowercase())), &svm)?;
            let s: Vec<f64> = sx.iter().map(|x| svm.decision(x)).collect::<Result<_>>()?;
            sets.push(score_set(kind.tag(), &test_pairs, s)?);
        }
        let refs: Vec<&ScoreSet> = sets.iter().collect();
        write_scores_csv(&dir.join("scores.csv"), &refs)
    })?;
    if reached(Stage::Baseline) {
        return Ok(());
    }

    // explain
    let explain_dir = runner.stage_dir(Stage::Explain);
    let explain_rec = if config.explain.enabled {
        Some(runner.run(Stage::Explain, &config.explain, &[&ft_rec, &align_rec, &split_rec, &morph_rec], |dir, _| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, "explain"));
            let mut chosen: Vec<&PairSample> = Vec::new();
            for label in [Label::Genuine, Label::Imposter] {
                let mut of: Vec<&PairSample> = test_pairs.iter().filter(|p| p.label == label).collect();
                of.shuffle(&mut rng);
                chosen.extend(of.into_iter().take(config.explain.pairs_per_class));
            }
            crops.load(chosen.iter().flat_map(|p| [&p.trusted, &p.questioned]))?;
            let ids: Vec<String> = chosen.iter().map(|p| p.pair_id()).collect();
            let cam_pairs: Vec<CamPair<'_>> = chosen
                .iter()
                .zip(&ids)
                .map(|(p, id)| CamPair {
                    pair_id: id.clone(),
                    label: p.label,
                    trusted: (crops.get(&p.trusted), p.trusted.path.as_str()),
                    questioned: (crops.get(&p.questioned), p.questioned.path.as_str()),
                })
                .collect();
            let records = explain_pairs(&finetuned, &cam_pairs, &config.explain.layer, config.explain.exclude_lower, Some(dir), config.explain.overlays)?;
            let (g, i) = mean_by_label(&records);
            let summary = CamSummary {
                layer: config.explain.layer.clone(),
                exclude_lower: config.explain.exclude_lower,
                n_genuine: records.iter().filter(|r| r.label == 0).count(),
                n_imposter: records.iter().filter(|r| r.label == 1).count(),
                mean_genuine: g,
                mean_imposter: i,
            };
            crate::dataset::write_json(&dir.join("cam_summary.json"), &summary)
        })?)
    } else {
        None
    };
    if reached(Stage::Explain) {
        return Ok(());
    }

    // evaluate
    let mut inputs = vec![&score_rec, &base_rec, &pre_rec, &ft_rec];
    if let Some(r) = &explain_rec {
        inputs.push(r);
    }
    runner.run(Stage::Evaluate, &config.evaluate, &inputs, |dir, _| {
        let mut sets = read_scores_csv(&base_dir.join("scores.csv"))?;
        sets.extend(read_scores_csv(&score_dir.join("scores.csv"))?);
        sets.sort_by_key(|s| METHOD_ORDER.iter().position(|m| *m == s.method_tag).unwrap_or(usize::MAX));
        let mut rows = Vec::new();
        for s in &sets {
            let r = evaluate(s, config.evaluate.det_points)?;
            write_det_csv(&dir.join("det").join(format!("{}.csv", slug(&s.method_tag))), &r.det_samples)?;
            rows.push(r);
        }
        let curves: Vec<(&str, &[(f64, f64)])> = rows.iter().map(|r| (r.method.as_str(), r.det_samples.as_slice())).collect();
        render_det_png(&dir.join("det.png"), &curves)?;
        let refs: Vec<&ScoreSet> = sets.iter().collect();
        write_scores_csv(&dir.join("scores.csv"), &refs)?;
        let cam: Option<CamSummary> = match &explain_rec {
            Some(_) => {
                std::fs::copy(explain_dir.join("cam_distances.csv"), dir.join("cam_distances.csv")).map_err(|e| Error::io(dir, e))?;
                Some(read_json(&explain_dir.join("cam_summary.json"))?)
            }
            None => None,
        };
        let mut training = Vec::new();
        for d in [&pre_dir, &ft_dir] {
            let p = d.join("train_state.json");
            if p.is_file() {
                training.push(summary(&read_json::<TrainState>(&p)?));
            }
        }
        let flags = trend_flags(&rows, cam.as_ref());
        let report = RunReport { rows, cam, training, flags };
        crate::dataset::write_json(&dir.join("report.json"), &report)
    })?;
    // publish
    let eval_dir = runner.stage_dir(Stage::Evaluate);
    for name in PUBLISHED {
        let src = eval_dir.join(name);
        let dst = runner.out.join(name);
        if src.is_file() {
            std::fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
        } else if dst.is_file() {
            std::fs::remove_file(&dst).map_err(|e| Error::io(&dst, e))?;
        }
    }
    let det_out = runner.out.join("det");
    if det_out.exists() {
        std::fs::remove_dir_all(&det_out).map_err(|e| Error::io(&det_out, e))?;
    }
    let mut det_files = Vec::new();
    walk(&eval_dir.join("det"), &mut det_files)?;
    for f in det_files {
        let dst = det_out.join(f.file_name().unwrap());
        std::fs::create_dir_all(&det_out).map_err(|e| Error::io(&det_out, e))?;
        std::fs::copy(&f, &dst).map_err(|e| Error::io(&dst, e))?;
    }
    Ok(())
}

/// Loads the published report of a finished run.
pub fn load_report(output_dir: &Path) -> Result<RunReport> {
    read_json(&output_dir.join("report.json"))
}

/// Scores each pair of embeddings with the Euclidean head.
pub fn euclidean_scores(pairs: &[EmbeddingPair]) -> Result<Vec<f64>> {
    pairs.iter().map(|(a, b)| euclidean_score(a, b)).collect()
}
