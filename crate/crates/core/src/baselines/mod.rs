//! Classical differential baselines: LBP and BSIF texture histograms, SIFT
//! and SURF descriptor averages, each scored by an RBF-SVM on the feature
//! difference (trusted minus questioned).

mod sift;
mod surf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::Plane;
use crate::svm::FeatureSvm;

pub use sift::{sift_descriptors, SiftParams, SIFT_LEN};
pub use surf::{surf_descriptors, SurfParams, SURF_LEN};

pub const HIST_BINS: usize = 256;

const BSIF_BANK: &str = include_str!("../../data/bsif_3x3_8bit.txt");
pub const BSIF_BANK_SHA256: &str = "6a1c6798bab6eef905411ac8c7f0f6773722e37e2c6efbdbbb420c81fbc9e5aa";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Sift,
    Surf,
    Lbp,
    Bsif,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::Sift, BaselineKind::Surf, BaselineKind::Lbp, BaselineKind::Bsif];

    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::Sift => "SIFT",
            BaselineKind::Surf => "SURF",
            BaselineKind::Lbp => "LBP",
            BaselineKind::Bsif => "BSIF",
        }
    }

    pub fn feature_len(self) -> usize {
        match self {
            BaselineKind::Sift => SIFT_LEN,
            BaselineKind::Surf => SURF_LEN,
            BaselineKind::Lbp | BaselineKind::Bsif => HIST_BINS,
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sift" => Ok(BaselineKind::Sift),
            "surf" => Ok(BaselineKind::Surf),
            "lbp" => Ok(BaselineKind::Lbp),
            "bsif" => Ok(BaselineKind::Bsif),
            other => Err(Error::Config(format!("unknown baseline `{other}` (expected sift, surf, lbp or bsif)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    Lbp,
    Bsif,
}

/// L1-normalized 256-bin code histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureDescriptor {
    pub kind: TextureKind,
    pub histogram: Vec<f64>,
}

fn normalized_histogram(kind: TextureKind, counts: &[u64; HIST_BINS]) -> TextureDescriptor {
    let total: u64 = counts.iter().sum();
    let histogram = counts.iter().map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 }).collect();
    TextureDescriptor { kind, histogram }
}

/// Clockwise from top-left, as (dx, dy).
const LBP_NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];

/// 8-neighbor code of an interior pixel; bit 7 is the top-left neighbor and
/// a bit is set when the neighbor is at least the center.
pub fn lbp_code(gray: &Plane, x: usize, y: usize) -> u8 {
    let c = gray.get(x, y);
    let mut code = 0u8;
    for (k, (dx, dy)) in LBP_NEIGHBORS.iter().enumerate() {
        let v = gray.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        if v >= c {
            code |= 1 << (7 - k);
        }
    }
    code
}

/// LBP histogram over interior pixels.
pub fn lbp_histogram(gray: &Plane) -> Result<TextureDescriptor> {
    if gray.width < 3 || gray.height < 3 {
        return Err(Error::shape("at least 3x3", format!("{}x{}", gray.width, gray.height)));
    }
    let mut counts = [0u64; HIST_BINS];
    for y in 1..gray.height - 1 {
        for x in 1..gray.width - 1 {
            counts[lbp_code(gray, x, y) as usize] += 1;
        }
    }
    Ok(normalized_histogram(TextureKind::Lbp, &counts))
}

/// Eight 3×3 filters, row-major coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub filters: Vec<[f64; 9]>,
    pub sha256: String,
}

impl FilterBank {
    /// Parses a bank and checks its SHA-256 against `expected`.
    pub fn parse(text: &str, expected: &str) -> Result<FilterBank> {
        let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        if sha256 != expected {
            return Err(Error::FilterBank(format!("hash mismatch: expected {expected}, got {sha256}")));
        }
        let mut filters = Vec::new();
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::FilterBank(format!("line {}: {e}", i + 1)))?;
            let f: [f64; 9] = vals
                .try_into()
                .map_err(|v: Vec<f64>| Error::FilterBank(format!("line {}: expected 9 coefficients, got {}", i + 1, v.len())))?;
            filters.push(f);
        }
        if filters.len() != 8 {
            return Err(Error::FilterBank(format!("expected 8 filters, got {}", filters.len())));
        }
        Ok(FilterBank { filters, sha256 })
    }

    pub fn load(path: &std::path::Path) -> Result<FilterBank> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::FilterBank(format!("{}: {e}", path.display())))?;
        FilterBank::parse(&text, BSIF_BANK_SHA256)
    }

    /// The bank shipped with the crate.
    pub fn builtin() -> FilterBank {
        FilterBank::parse(BSIF_BANK, BSIF_BANK_SHA256).expect("vendored bank is valid")
    }

    /// Code of pixel `(x, y)` with replicate padding. Filter `i` sets bit `7 − i`
    /// when its response is positive. Responses are taken on the patch minus
    /// its center value, which equals the plain response for the zero-sum bank
    /// and makes flat patches respond exactly zero.
    pub fn code(&self, gray: &Plane, x: usize, y: usize) -> u8 {
        let c = gray.get(x, y) as f64;
        let mut patch = [0.0f64; 9];
        for dy in 0..3 {
            for dx in 0..3 {
                patch[dy * 3 + dx] = gray.get_clamped(x as isize + dx as isize - 1, y as isize + dy as isize - 1) as f64 - c;
            }
        }
        let mut code = 0u8;
        for (i, f) in self.filters.iter().enumerate() {
            let r: f64 = f.iter().zip(&patch).map(|(a, b)| a * b).sum();
            if r > 0.0 {
                code |= 1 << (7 - i);
            }
        }
        code
    }
}

/// BSIF histogram over every pixel (replicate padding at the border).
pub fn bsif_histogram(gray: &Plane, bank: &FilterBank) -> Result<TextureDescriptor> {
    if gray.width == 0 || gray.height == 0 {
        return Err(Error::shape("non-empty image", "0 pixels"));
    }
    let mut counts = [0u64; HIST_BINS];
    for y in 0..gray.height {
        for x in 0..gray.width {
            counts[bank.code(gray, x, y) as usize] += 1;
        }
    }
    Ok(normalized_histogram(TextureKind::Bsif, &counts))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeypointKind {
    Sift,
    Surf,
}

/// Mean of all keypoint descriptors; zero when nothing is detected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointDescriptor {
    pub kind: KeypointKind,
    pub aggregated: Vec<f64>,
    pub n_keypoints: usize,
}

fn average(rows: &[Vec<f32>], len: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; len];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += *v as f64;
        }
    }
    if !rows.is_empty() {
        out.iter_mut().for_each(|v| *v /= rows.len() as f64);
    }
    out
}

pub fn keypoint_vector(gray: &Plane, kind: KeypointKind) -> KeypointDescriptor {
    let (rows, len) = match kind {
        KeypointKind::Sift => (sift_descriptors(gray, &SiftParams::default()), SIFT_LEN),
        KeypointKind::Surf => (surf_descriptors(gray, &SurfParams::default()), SURF_LEN),
    };
    KeypointDescriptor {
        kind,
        aggregated: average(&rows, len),
        n_keypoints: rows.len(),
    }
}

/// Fixed-length feature of one aligned grayscale face.
pub fn extract(kind: BaselineKind, gray: &Plane, bank: &FilterBank) -> Result<Vec<f64>> {
    Ok(match kind {
        BaselineKind::Lbp => lbp_histogram(gray)?.histogram,
        BaselineKind::Bsif => bsif_histogram(gray, bank)?.histogram,
        BaselineKind::Sift => keypoint_vector(gray, KeypointKind::Sift).aggregated,
        BaselineKind::Surf => keypoint_vector(gray, KeypointKind::Surf).aggregated,
    })
}

pub fn difference(feature_trusted: &[f64], feature_questioned: &[f64]) -> Result<Vec<f64>> {
    if feature_trusted.len() != feature_questioned.len() {
        return Err(Error::LengthMismatch(feature_trusted.len(), feature_questioned.len()));
    }
    Ok(feature_trusted.iter().zip(feature_questioned).map(|(a, b)| a - b).collect())
}

/// SVM margin on `trusted − questioned`; larger means morph.
pub fn differential_classify(feature_trusted: &[f64], feature_questioned: &[f64], svm: &FeatureSvm) -> Result<f64> {
    svm.decision(&difference(feature_trusted, feature_questioned)?)
}
