//! Declarative run configuration (TOML) and its validation findings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, FilterBank};
use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::morph::MorphRecipe;
use crate::nn::Arch;
use crate::svm::HyperGrid;
use crate::testbed::TestbedConfig;
use crate::train::{Augment, TrainConfig};

/// Environment variable naming the directory of cached backbone checkpoints.
pub const MODEL_CACHE_ENV: &str = "MORPHDET_MODEL_CACHE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    #[serde(default = "default_manifest")]
    pub manifest: PathBuf,
    /// Look-alike families used for pretraining.
    #[serde(default)]
    pub family_manifest: Option<PathBuf>,
}

fn default_manifest() -> PathBuf {
    PathBuf::from(crate::testbed::MANIFEST_FILE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub val_fraction_of_train: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.6,
            val_fraction_of_train: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorphConfig {
    /// Pair subjects of the same gender inside each split automatically.
    pub auto: bool,
    pub alpha: f64,
    /// Also splice each complete morph into both contributors.
    pub splice: bool,
    /// Extra recipes; sources are relative to the dataset root and outputs
    /// relative to the morph stage directory.
    pub recipes: Vec<MorphRecipe>,
}

impl Default for MorphConfig {
    fn default() -> Self {
        MorphConfig {
            auto: true,
            alpha: 0.5,
            splice: true,
            recipes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub id: String,
    pub channels: Vec<usize>,
    pub embedding_dim: usize,
    /// Checkpoint to use instead of pretraining: a path, or a file name
    /// looked up in the model cache directory.
    pub pretrained: Option<String>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let a = Arch::default();
        BackboneConfig {
            id: "desk-cnn".into(),
            channels: a.channels,
            embedding_dim: a.embedding_dim,
            pretrained: None,
        }
    }
}

impl BackboneConfig {
    pub fn arch(&self) -> Arch {
        Arch {
            channels: self.channels.clone(),
            embedding_dim: self.embedding_dim,
            ..Arch::default()
        }
    }
}

/// Per-stage changes to the built-in training defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageOverrides {
    pub margin: Option<f64>,
    pub batch_pairs: Option<usize>,
    pub epochs: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_decay: Option<f64>,
    pub decay_every_epochs: Option<usize>,
    pub lr_floor: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub horizontal_flip: Option<bool>,
    pub vertical_flip: Option<bool>,
}

impl StageOverrides {
    pub fn apply(&self, mut c: TrainConfig, seed: u64) -> TrainConfig {
        c.seed = seed;
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(margin, batch_pairs, epochs, lr_initial, lr_decay, decay_every_epochs, lr_floor, momentum, weight_decay);
        c.augment = Augment {
            horizontal_flip: self.horizontal_flip.unwrap_or(c.augment.horizontal_flip),
            vertical_flip: self.vertical_flip.unwrap_or(c.augment.vertical_flip),
        };
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadsConfig {
    pub euclidean: bool,
    pub svm_difference: bool,
    pub svm_concat: bool,
    pub grid: HyperGrid,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        HeadsConfig {
            euclidean: true,
            svm_difference: true,
            svm_concat: true,
            grid: HyperGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinesConfig {
    pub kinds: Vec<BaselineKind>,
    /// Alternative BSIF filter bank file; must match the pinned hash.
    pub bsif_bank: Option<PathBuf>,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        BaselinesConfig {
            kinds: BaselineKind::ALL.to_vec(),
            bsif_bank: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub enabled: bool,
    pub layer: String,
    pub exclude_lower: f64,
    /// Test pairs per class to explain (the first ones in pair order after a seeded shuffle).
    pub pairs_per_class: usize,
    pub overlays: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            enabled: true,
            layer: crate::cam::DEFAULT_LAYER.into(),
            exclude_lower: crate::cam::DEFAULT_EXCLUDE_LOWER,
            pairs_per_class: 60,
            overlays: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub det_points: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { det_points: 101 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Generate a synthetic dataset inside the run instead of reading one.
    #[serde(default)]
    pub testbed: Option<TestbedConfig>,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub morph: MorphConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub pretrain: StageOverrides,
    #[serde(default)]
    pub finetune: StageOverrides,
    #[serde(default)]
    pub heads: HeadsConfig,
    #[serde(default)]
    pub baselines: BaselinesConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::from_toml(&text, &base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        self.pretrain.apply(TrainConfig::pretrain(), substream(self.seed, "pretrain"))
    }

    pub fn finetune_config(&self) -> TrainConfig {
        self.finetune.apply(TrainConfig::finetune(), substream(self.seed, "finetune"))
    }

    /// Candidate location of a named pretrained checkpoint.
    pub fn pretrained_path(&self, name: &str) -> PathBuf {
        let direct = self.resolve(Path::new(name));
        if direct.is_file() {
            return direct;
        }
        match std::env::var_os(MODEL_CACHE_ENV) {
            Some(dir) => PathBuf::from(dir).join(name),
            None => direct,
        }
    }
}

/// Named child seed of the run seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    /// Dotted config key the finding is about.
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{s}: {}: {}", self.key, self.message)
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

/// Checks a parsed config without side effects.
pub fn validate_config(c: &RunConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut err = |key: &str, message: String| {
        out.push(Finding {
            severity: Severity::Error,
            key: key.into(),
            message,
        })
    };
    if !(c.split.train_fraction > 0.0 && c.split.train_fraction < 1.0) {
        err("split.train_fraction", format!("must be in (0, 1), got {}", c.split.train_fraction));
    }
    if !(0.0..1.0).contains(&c.split.val_fraction_of_train) {
        err("split.val_fraction_of_train", format!("must be in [0, 1), got {}", c.split.val_fraction_of_train));
    }
    if !(0.0..=1.0).contains(&c.morph.alpha) {
        err("morph.alpha", format!("must be in [0, 1], got {}", c.morph.alpha));
    }
    match (&c.testbed, &c.dataset) {
        (Some(_), Some(_)) => err("dataset", "give either [testbed] or [dataset], not both".into()),
        (None, None) => err("dataset", "missing: give a [dataset] section or a [testbed] to generate one".into()),
        (Some(t), None) => {
            if let Err(e) = t.validate() {
                err("testbed", e.to_string());
            }
            if t.families == 0 && c.backbone.pretrained.is_none() {
                err("testbed.families", "no look-alike families and no backbone.pretrained: nothing to pretrain on".into());
            }
        }
        (None, Some(d)) => {
            let root = c.resolve(&d.root);
            let mpath = root.join(&d.manifest);
            match Manifest::load(&mpath) {
                Err(e) => err("dataset.manifest", format!("{}: {e}", mpath.display())),
                Ok(m) => {
                    if let Err(e) = m.validate_files(&root) {
                        err("dataset.root", e.to_string());
                    }
                    for (i, r) in c.morph.recipes.iter().enumerate() {
                        let key = format!("morph.recipes[{i}]");
                        if let Err(e) = r.validate() {
                            err(&key, e.to_string());
                        }
                        for s in [&r.source_a, &r.source_b] {
                            for id in &s.contributors {
                                if m.subject(id).is_none() {
                                    err(&key, format!("unknown subject `{id}`"));
                                }
                            }
                            if !root.join(&s.path).is_file() {
                                err(&key, format!("source image `{}` not found", s.path));
                            }
                        }
                    }
                }
            }
            match &d.family_manifest {
                Some(f) => {
                    let p = root.join(f);
                    if let Err(e) = Manifest::load(&p) {
                        err("dataset.family_manifest", format!("{}: {e}", p.display()));
                    }
                }
                None if c.backbone.pretrained.is_none() => {
                    err("dataset.family_manifest", "no look-alike families and no backbone.pretrained: nothing to pretrain on".into())
                }
                None => {}
            }
        }
    }
    if c.testbed.is_some() {
        for (i, r) in c.morph.recipes.iter().enumerate() {
            let key = format!("morph.recipes[{i}]");
            if let Err(e) = r.validate() {
                err(&key, e.to_string());
            }
            let n = c.testbed.as_ref().map_or(0, |t| t.identities);
            for s in [&r.source_a, &r.source_b] {
                for id in &s.contributors {
                    let known = id.strip_prefix('s').and_then(|v| v.parse::<usize>().ok()).is_some_and(|v| v < n && id.len() == 4);
                    if !known {
                        err(&key, format!("unknown subject `{id}`"));
                    }
                }
            }
        }
    }
    let arch = c.backbone.arch();
    if let Err(e) = arch.validate() {
        err("backbone", e.to_string());
    }
    if let Some(p) = &c.backbone.pretrained {
        let path = c.pretrained_path(p);
        if !path.is_file() {
            err("backbone.pretrained", format!("checkpoint `{}` not found (also looked in ${MODEL_CACHE_ENV})", path.display()));
        }
    }
    for (key, t) in [("pretrain", c.pretrain_config()), ("finetune", c.finetune_config())] {
        if let Err(e) = t.validate() {
            err(key, e.to_string());
        }
    }
    if !(c.heads.euclidean || c.heads.svm_difference || c.heads.svm_concat) {
        err("heads", "at least one head must be enabled".into());
    }
    if c.heads.grid.c.is_empty() || c.heads.grid.gamma_exponents.is_empty() || c.heads.grid.c.iter().any(|v| !(*v > 0.0)) {
        err("heads.grid", "C values must be positive and both grid axes non-empty".into());
    }
    if let Some(bank) = &c.baselines.bsif_bank {
        let p = c.resolve(bank);
        if let Err(e) = FilterBank::load(&p) {
            err("baselines.bsif_bank", format!("BSIF filter bank `{}` unusable: {e}", p.display()));
        }
    }
    if c.explain.enabled {
        if let Err(e) = arch.layer_index(&c.explain.layer) {
            err("explain.layer", e.to_string());
        }
        if !(0.0..1.0).contains(&c.explain.exclude_lower) {
            err("explain.exclude_lower", format!("must be in [0, 1), got {}", c.explain.exclude_lower));
        }
    }
    if c.evaluate.det_points < 2 {
        err("evaluate.det_points", "need at least 2 points".into());
    }
    if c.testbed.as_ref().is_some_and(|t| t.identities < 60) {
        out.push(Finding {
            severity: Severity::Warning,
            key: "testbed.identities".into(),
            message: "fewer than 60 identities; trend comparisons will be noisy".into(),
        });
    }
    out
}
