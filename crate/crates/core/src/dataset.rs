//! Dataset manifests, subject-disjoint splits and pair construction.
//!
//! A manifest lists subjects with their bona fide images plus a flat list of
//! morphs, each morph naming every subject that contributed to it. Splits are
//! drawn per gender stratum so male and female subjects are divided at the
//! same fraction; pairs are then formed strictly inside one split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    BonaFideReference,
    BonaFideProbe,
    Morph,
}

impl ImageKind {
    pub fn is_bona_fide(self) -> bool {
        !matches!(self, ImageKind::Morph)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    /// Relative to the dataset root.
    pub path: String,
    pub kind: ImageKind,
    pub contributors: Vec<String>,
}

impl ImageRef {
    pub fn bona_fide(path: impl Into<String>, kind: ImageKind, subject: impl Into<String>) -> Self {
        ImageRef {
            path: path.into(),
            kind,
            contributors: vec![subject.into()],
        }
    }

    pub fn morph(path: impl Into<String>, contributors: Vec<String>) -> Self {
        ImageRef {
            path: path.into(),
            kind: ImageKind::Morph,
            contributors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub gender: Gender,
    pub images: Vec<ImageRef>,
    /// Look-alike group (for example twins); used to form hard imposter pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
}

impl SubjectRecord {
    pub fn bona_fide(&self) -> impl Iterator<Item = &ImageRef> {
        self.images.iter().filter(|i| i.kind.is_bona_fide())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub name: String,
    pub subjects: Vec<SubjectRecord>,
    #[serde(default)]
    pub morphs: Vec<ImageRef>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.subjects {
            if !ids.insert(s.subject_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate subject_id `{}`", s.subject_id)));
            }
        }
        for s in &self.subjects {
            for img in &s.images {
                if !img.kind.is_bona_fide() {
                    return Err(Error::Manifest(format!(
                        "morph `{}` listed under subject `{}`; morphs belong in the top-level list",
                        img.path, s.subject_id
                    )));
                }
                if img.contributors.len() != 1 || img.contributors[0] != s.subject_id {
                    return Err(Error::Manifest(format!(
                        "bona fide image `{}` must list exactly its own subject `{}`",
                        img.path, s.subject_id
                    )));
                }
            }
        }
        for m in &self.morphs {
            if m.kind != ImageKind::Morph {
                return Err(Error::Manifest(format!("`{}` in morph list is not a morph", m.path)));
            }
            let distinct: HashSet<&String> = m.contributors.iter().collect();
            if distinct.len() < 2 || distinct.len() != m.contributors.len() {
                return Err(Error::Manifest(format!(
                    "morph `{}` needs at least two distinct contributors",
                    m.path
                )));
            }
            for c in &m.contributors {
                if !ids.contains(c.as_str()) {
                    return Err(Error::Manifest(format!("morph `{}` names unknown subject `{c}`", m.path)));
                }
            }
        }
        Ok(())
    }

    /// Checks that every referenced image exists below `root`.
    pub fn validate_files(&self, root: &Path) -> Result<()> {
        let all = self.subjects.iter().flat_map(|s| s.images.iter()).chain(self.morphs.iter());
        for img in all {
            let p = root.join(&img.path);
            if !p.is_file() {
                return Err(Error::Manifest(format!("image `{}` is not readable", p.display())));
            }
        }
        Ok(())
    }

    pub fn all_images(&self) -> Vec<&ImageRef> {
        self.subjects
            .iter()
            .flat_map(|s| s.images.iter())
            .chain(self.morphs.iter())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Genuine,
    Imposter,
}

impl Label {
    pub fn y(self) -> u8 {
        match self {
            Label::Genuine => 0,
            Label::Imposter => 1,
        }
    }

    pub fn is_morph(self) -> bool {
        self == Label::Imposter
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.y()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Genuine),
            1 => Ok(Label::Imposter),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub trusted: ImageRef,
    pub questioned: ImageRef,
    pub label: Label,
}

impl PairSample {
    pub fn pair_id(&self) -> String {
        format!("{}|{}", self.trusted.path, self.questioned.path)
    }

    /// Re-derives the label from image provenance; `None` if the pair is illegal.
    pub fn derived_label(&self) -> Option<Label> {
        if !self.trusted.kind.is_bona_fide() || self.trusted.contributors.len() != 1 {
            return None;
        }
        let s = &self.trusted.contributors[0];
        if self.questioned.kind.is_bona_fide() {
            (self.questioned.contributors.len() == 1
                && &self.questioned.contributors[0] == s
                && self.questioned.path != self.trusted.path)
                .then_some(Label::Genuine)
        } else {
            self.questioned.contributors.contains(s).then_some(Label::Imposter)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_subjects: BTreeSet<String>,
    pub val_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn subjects(&self, which: SplitName) -> &BTreeSet<String> {
        match which {
            SplitName::Train => &self.train_subjects,
            SplitName::Val => &self.val_subjects,
            SplitName::Test => &self.test_subjects,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.train_subjects.is_disjoint(&self.val_subjects)
            && self.train_subjects.is_disjoint(&self.test_subjects)
            && self.val_subjects.is_disjoint(&self.test_subjects)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: SplitSpec = serde_json::from_str(&text)?;
        if !s.is_disjoint() {
            return Err(Error::Split("split subject sets overlap".into()));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Gender-stratified, subject-disjoint train/val/test split.
///
/// Each stratum (male, female, unknown) is shuffled with its own seeded
/// stream and cut at the same fractions. Validation subjects are carved out
/// of the training portion of each stratum.
pub fn make_split(manifest: &Manifest, train_fraction: f64, val_fraction_of_train: f64, seed: u64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train_fraction must be in (0, 1), got {train_fraction}")));
    }
    if !(0.0..1.0).contains(&val_fraction_of_train) {
        return Err(Error::Split(format!(
            "val_fraction_of_train must be in [0, 1), got {val_fraction_of_train}"
        )));
    }
    let mut strata: BTreeMap<Gender, Vec<String>> = BTreeMap::new();
    for s in &manifest.subjects {
        strata.entry(s.gender).or_default().push(s.subject_id.clone());
    }
    let small: Vec<String> = strata
        .iter()
        .filter(|(_, ids)| ids.len() < 2)
        .map(|(g, _)| g.to_string())
        .collect();
    if !small.is_empty() {
        return Err(Error::Split(format!(
            "fewer than 2 subjects for gender stratum: {}",
            small.join(", ")
        )));
    }
    let mut spec = SplitSpec {
        train_subjects: BTreeSet::new(),
        val_subjects: BTreeSet::new(),
        test_subjects: BTreeSet::new(),
        seed,
    };
    for (gender, mut ids) in strata {
        ids.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5eed_0000 + gender as u64));
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = round_half_up(train_fraction * n as f64).clamp(1, n - 1);
        let n_val = round_half_up(val_fraction_of_train * n_train as f64).min(n_train - 1);
        for (i, id) in ids.into_iter().enumerate() {
            if i < n_val {
                spec.val_subjects.insert(id);
            } else if i < n_train {
                spec.train_subjects.insert(id);
            } else {
                spec.test_subjects.insert(id);
            }
        }
    }
    Ok(spec)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairList {
    pub pairs: Vec<PairSample>,
    pub warnings: Vec<String>,
    /// Morphs in this split whose contributor set repeats an earlier morph's.
    pub repeated_contributor_sets: usize,
}

impl PairList {
    pub fn count(&self, label: Label) -> usize {
        self.pairs.iter().filter(|p| p.label == label).count()
    }
}

/// All legal genuine and imposter pairs inside one split.
///
/// Order: subjects by id; per subject, genuine pairs (i < j over bona fide
/// images in manifest order) followed by imposter pairs (morphs in manifest
/// order, then the subject's bona fide images).
pub fn build_pairs(manifest: &Manifest, split: &SplitSpec, which: SplitName) -> Result<PairList> {
    let members = split.subjects(which);
    for id in members {
        if manifest.subject(id).is_none() {
            return Err(Error::Split(format!("split `{which}` names unknown subject `{id}`")));
        }
    }
    let mut out = PairList::default();
    let mut usable_morphs: Vec<&ImageRef> = Vec::new();
    let mut seen_sets: HashSet<BTreeSet<&String>> = HashSet::new();
    for m in &manifest.morphs {
        let inside = m.contributors.iter().filter(|c| members.contains(*c)).count();
        if inside == m.contributors.len() {
            if !seen_sets.insert(m.contributors.iter().collect()) {
                out.repeated_contributor_sets += 1;
            }
            usable_morphs.push(m);
        } else if inside > 0 {
            let msg = format!("morph `{}` excluded from `{which}`: contributor outside split", m.path);
            warn!("{msg}");
            out.warnings.push(msg);
        }
    }
    for id in members {
        let subject = manifest.subject(id).expect("checked above");
        let bona: Vec<&ImageRef> = subject.bona_fide().collect();
        if bona.len() < 2 {
            let msg = format!("subject `{id}` has fewer than 2 bona fide images; no genuine pairs");
            warn!("{msg}");
            out.warnings.push(msg);
        }
        for i in 0..bona.len() {
            for j in (i + 1)..bona.len() {
                out.pairs.push(PairSample {
                    trusted: bona[i].clone(),
                    questioned: bona[j].clone(),
                    label: Label::Genuine,
                });
            }
        }
        for m in usable_morphs.iter().filter(|m| m.contributors.contains(id)) {
            for b in &bona {
                out.pairs.push(PairSample {
                    trusted: (*b).clone(),
                    questioned: (*m).clone(),
                    label: Label::Imposter,
                });
            }
        }
    }
    Ok(out)
}

/// Hard pairs among look-alike subjects: genuine pairs inside each subject
/// of `subjects` plus imposter pairs between bona fide images of different
/// subjects sharing a family. Subjects without a family give genuine pairs only.
///
/// Order: subjects by id; per subject, genuine pairs (i < j) then imposter
/// pairs against family members with a larger id.
pub fn build_family_pairs(manifest: &Manifest, subjects: &BTreeSet<String>) -> Result<PairList> {
    let mut out = PairList::default();
    for id in subjects {
        let s = manifest
            .subject(id)
            .ok_or_else(|| Error::Split(format!("unknown subject `{id}`")))?;
        let bona: Vec<&ImageRef> = s.bona_fide().collect();
        for i in 0..bona.len() {
            for j in (i + 1)..bona.len() {
                out.pairs.push(PairSample {
                    trusted: bona[i].clone(),
                    questioned: bona[j].clone(),
                    label: Label::Genuine,
                });
            }
        }
        let Some(fam) = &s.family else { continue };
        for other in subjects.range::<String, _>((std::ops::Bound::Excluded(id), std::ops::Bound::Unbounded)) {
            let o = manifest
                .subject(other)
                .ok_or_else(|| Error::Split(format!("unknown subject `{other}`")))?;
            if o.family.as_ref() != Some(fam) {
                continue;
            }
            for a in &bona {
                for b in o.bona_fide() {
                    out.pairs.push(PairSample {
                        trusted: (*a).clone(),
                        questioned: b.clone(),
                        label: Label::Imposter,
                    });
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, gender: Gender, n: usize) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.into(),
            gender,
            family: None,
            images: (0..n)
                .map(|i| ImageRef::bona_fide(format!("{id}/{i}.png"), ImageKind::BonaFideProbe, id))
                .collect(),
        }
    }

    fn all_in(ids: &[&str]) -> SplitSpec {
        SplitSpec {
            train_subjects: ids.iter().map(|s| s.to_string()).collect(),
            val_subjects: BTreeSet::new(),
            test_subjects: BTreeSet::new(),
            seed: 0,
        }
    }

    #[test]
    fn two_images_and_one_morph_give_three_pairs() {
        let mut t = subject("T", Gender::Male, 0);
        t.images.clear();
        let m = Manifest {
            name: "t".into(),
            subjects: vec![subject("S", Gender::Male, 2), t],
            morphs: vec![ImageRef::morph("m.png", vec!["S".into(), "T".into()])],
        };
        m.validate().unwrap();
        let pairs = build_pairs(&m, &all_in(&["S", "T"]), SplitName::Train).unwrap();
        let got: Vec<(String, String, u8)> = pairs
            .pairs
            .iter()
            .map(|p| (p.trusted.path.clone(), p.questioned.path.clone(), p.label.y()))
            .collect();
        assert_eq!(
            got,
            vec![
                ("S/0.png".into(), "S/1.png".into(), 0),
                ("S/0.png".into(), "m.png".into(), 1),
                ("S/1.png".into(), "m.png".into(), 1),
            ]
        );
    }

    #[test]
    fn family_pairs_join_look_alikes_only() {
        let mut a = subject("fa", Gender::Female, 2);
        let mut b = subject("fb", Gender::Female, 3);
        let mut c = subject("ga", Gender::Female, 2);
        a.family = Some("f".into());
        b.family = Some("f".into());
        c.family = Some("g".into());
        let m = Manifest {
            name: "fam".into(),
            subjects: vec![a, b, c],
            morphs: vec![],
        };
        let ids: BTreeSet<String> = ["fa", "fb", "ga"].iter().map(|s| s.to_string()).collect();
        let pairs = build_family_pairs(&m, &ids).unwrap().pairs;
        let genuine = pairs.iter().filter(|p| p.label == Label::Genuine).count();
        let imposter: Vec<&PairSample> = pairs.iter().filter(|p| p.label == Label::Imposter).collect();
        // C(2,2) + C(3,2) + C(2,2) within subjects, 2·3 across the one family
        assert_eq!(genuine, 1 + 3 + 1);
        assert_eq!(imposter.len(), 6);
        assert!(imposter.iter().all(|p| p.trusted.contributors == vec!["fa".to_string()] && p.questioned.contributors == vec!["fb".to_string()]));
        let only_a: BTreeSet<String> = ["fa".to_string()].into();
        assert!(build_family_pairs(&m, &only_a).unwrap().pairs.iter().all(|p| p.label == Label::Genuine));
    }

    #[test]
    fn single_image_subject_yields_nothing() {
        let m = Manifest {
            name: "t".into(),
            subjects: vec![subject("S", Gender::Male, 1)],
            morphs: vec![],
        };
        let pairs = build_pairs(&m, &all_in(&["S"]), SplitName::Train).unwrap();
        assert!(pairs.pairs.is_empty());
        assert_eq!(pairs.warnings.len(), 1);
    }

    #[test]
    fn straddling_morph_is_dropped_with_warning() {
        let m = Manifest {
            name: "t".into(),
            subjects: vec![subject("S", Gender::Male, 2), subject("T", Gender::Male, 2)],
            morphs: vec![ImageRef::morph("m.png", vec!["S".into(), "T".into()])],
        };
        let pairs = build_pairs(&m, &all_in(&["S"]), SplitName::Train).unwrap();
        assert_eq!(pairs.count(Label::Imposter), 0);
        assert_eq!(pairs.count(Label::Genuine), 1);
        assert!(pairs.warnings[0].contains("excluded"));
    }

    #[test]
    fn manifest_rejects_bad_morph() {
        let m = Manifest {
            name: "t".into(),
            subjects: vec![subject("S", Gender::Male, 2)],
            morphs: vec![ImageRef::morph("m.png", vec!["S".into(), "S".into()])],
        };
        assert!(m.validate().is_err());
        let dup = Manifest {
            name: "t".into(),
            subjects: vec![subject("S", Gender::Male, 2), subject("S", Gender::Female, 2)],
            morphs: vec![],
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn split_fractions_follow_strata() {
        let mut subjects = Vec::new();
        for i in 0..50 {
            subjects.push(subject(&format!("m{i:02}"), Gender::Male, 2));
            subjects.push(subject(&format!("f{i:02}"), Gender::Female, 2));
        }
        let m = Manifest {
            name: "t".into(),
            subjects,
            morphs: vec![],
        };
        let s = make_split(&m, 0.5, 0.0, 1).unwrap();
        let males = |set: &BTreeSet<String>| set.iter().filter(|s| s.starts_with('m')).count();
        assert_eq!(s.train_subjects.len(), 50);
        assert_eq!(s.test_subjects.len(), 50);
        assert_eq!(males(&s.train_subjects), 25);
        assert_eq!(males(&s.test_subjects), 25);
        assert!(s.is_disjoint());
    }

    #[test]
    fn validation_is_carved_from_training() {
        let mut subjects = Vec::new();
        for i in 0..40 {
            subjects.push(subject(&format!("m{i:02}"), Gender::Male, 2));
            subjects.push(subject(&format!("f{i:02}"), Gender::Female, 2));
        }
        let m = Manifest {
            name: "t".into(),
            subjects,
            morphs: vec![],
        };
        let s = make_split(&m, 0.5, 0.2, 9).unwrap();
        assert_eq!(s.train_subjects.len() + s.val_subjects.len(), 40);
        assert_eq!(s.val_subjects.len(), 8);
        assert_eq!(s, make_split(&m, 0.5, 0.2, 9).unwrap());
        assert_ne!(s, make_split(&m, 0.5, 0.2, 10).unwrap());
    }

    #[test]
    fn tiny_stratum_is_an_error_naming_the_gender() {
        let m = Manifest {
            name: "t".into(),
            subjects: vec![
                subject("a", Gender::Male, 2),
                subject("b", Gender::Male, 2),
                subject("c", Gender::Female, 2),
            ],
            morphs: vec![],
        };
        let err = make_split(&m, 0.5, 0.0, 0).unwrap_err().to_string();
        assert!(err.contains("female"), "{err}");
        assert!(make_split(&m, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn label_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Label::Imposter).unwrap(), "1");
        let l: Label = serde_json::from_str("0").unwrap();
        assert_eq!(l, Label::Genuine);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }
}
