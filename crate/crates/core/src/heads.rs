//! Decision heads over a pair of embeddings: Euclidean distance and RBF-SVMs
//! on the difference or concatenation of the two vectors.
//!
//! Every head scores so that larger means morph.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Label;
use crate::embedding::{pair_distance, EmbeddingVector};
use crate::error::{Error, Result};
use crate::svm::{FeatureSvm, HyperGrid, RbfSvm, Standardizer};

const HEAD_MAGIC: &[u8; 4] = b"MDHD";
const HEAD_VERSION: u32 = 1;

/// Distance between trusted and questioned embeddings.
pub fn euclidean_score(e_trusted: &EmbeddingVector, e_questioned: &EmbeddingVector) -> Result<f64> {
    pair_distance(e_trusted, e_questioned)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `e_trusted − e_questioned`.
    Difference,
    /// `[e_trusted ‖ e_questioned]`.
    Concatenation,
}

impl InputMode {
    pub fn tag(self) -> &'static str {
        match self {
            InputMode::Difference => "difference",
            InputMode::Concatenation => "concat",
        }
    }

    pub fn feature_len(self, embedding_len: usize) -> usize {
        match self {
            InputMode::Difference => embedding_len,
            InputMode::Concatenation => 2 * embedding_len,
        }
    }
}

pub fn pair_features(mode: InputMode, e_trusted: &EmbeddingVector, e_questioned: &EmbeddingVector) -> Result<Vec<f64>> {
    if e_trusted.len() != e_questioned.len() {
        return Err(Error::LengthMismatch(e_trusted.len(), e_questioned.len()));
    }
    let t = e_trusted.values.iter().map(|&v| v as f64);
    let q = e_questioned.values.iter().map(|&v| v as f64);
    Ok(match mode {
        InputMode::Difference => t.zip(q).map(|(a, b)| a - b).collect(),
        InputMode::Concatenation => t.chain(q).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmHead {
    pub mode: InputMode,
    /// Embedding length the head expects.
    pub embedding_len: usize,
    /// SHA-256 over the training features and labels.
    pub training_fingerprint: String,
    svm: Option<FeatureSvm>,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    version: u32,
    mode: InputMode,
    embedding_len: usize,
    input_dim: usize,
    c: f64,
    gamma: f64,
    rho: f64,
    n_support: usize,
    selection_deer: f64,
    mean: Vec<f64>,
    std: Vec<f64>,
    training_fingerprint: String,
}

impl SvmHead {
    pub fn unfitted(mode: InputMode, embedding_len: usize) -> Self {
        SvmHead {
            mode,
            embedding_len,
            training_fingerprint: String::new(),
            svm: None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.svm.is_some()
    }

    pub fn svm(&self) -> Option<&FeatureSvm> {
        self.svm.as_ref()
    }

    /// Writes `<stem>.json` (metadata) and `<stem>.bin` (support vectors and
    /// coefficients, f64 LE).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let svm = self.svm.as_ref().ok_or(Error::NotFitted)?;
        let m = &svm.model;
        let meta = HeadMeta {
            version: HEAD_VERSION,
            mode: self.mode,
            embedding_len: self.embedding_len,
            input_dim: svm.input_dim,
            c: m.c,
            gamma: m.gamma,
            rho: m.rho,
            n_support: m.support.len(),
            selection_deer: svm.selection_deer,
            mean: svm.scaler.mean.clone(),
            std: svm.scaler.std.clone(),
            training_fingerprint: self.training_fingerprint.clone(),
        };
        crate::dataset::write_json(&dir.join(format!("{stem}.json")), &meta)?;
        let mut bytes = Vec::with_capacity(8 + 8 * m.support.len() * (svm.input_dim + 1));
        bytes.extend_from_slice(HEAD_MAGIC);
        bytes.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        for (s, c) in m.support.iter().zip(&m.coef) {
            bytes.extend_from_slice(&c.to_le_bytes());
            for v in s {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let meta: HeadMeta = serde_json::from_str(&text)?;
        if meta.version != HEAD_VERSION {
            return Err(Error::InvalidInput(format!("unsupported head version {}", meta.version)));
        }
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let row = meta.input_dim + 1;
        if bytes.len() != 8 + 8 * row * meta.n_support || &bytes[..4] != HEAD_MAGIC {
            return Err(Error::InvalidInput(format!("{} does not match its metadata", bin.display())));
        }
        let vals: Vec<f64> = bytes[8..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut support = Vec::with_capacity(meta.n_support);
        let mut coef = Vec::with_capacity(meta.n_support);
        for r in vals.chunks_exact(row) {
            coef.push(r[0]);
            support.push(r[1..].to_vec());
        }
        Ok(SvmHead {
            mode: meta.mode,
            embedding_len: meta.embedding_len,
            training_fingerprint: meta.training_fingerprint,
            svm: Some(FeatureSvm {
                input_dim: meta.input_dim,
                scaler: Standardizer {
                    mean: meta.mean,
                    std: meta.std,
                },
                model: RbfSvm {
                    gamma: meta.gamma,
                    c: meta.c,
                    support,
                    coef,
                    rho: meta.rho,
                },
                selection_deer: meta.selection_deer,
            }),
        })
    }
}

pub type EmbeddingPair = (EmbeddingVector, EmbeddingVector);

fn features(mode: InputMode, pairs: &[EmbeddingPair]) -> Result<Vec<Vec<f64>>> {
    pairs.iter().map(|(t, q)| pair_features(mode, t, q)).collect()
}

fn fingerprint(x: &[Vec<f64>], labels: &[Label]) -> String {
    let mut h = Sha256::new();
    for (r, l) in x.iter().zip(labels) {
        h.update([l.y()]);
        for v in r {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Fits an SVM head on (trusted, questioned) embedding pairs; labels mark
/// morph pairs as [`Label::Imposter`]. Hyper-parameters are chosen on `val`
/// when given, else on a seeded holdout of the training pairs.
pub fn fit_svm_head(
    train: &[EmbeddingPair],
    labels: &[Label],
    val: Option<(&[EmbeddingPair], &[Label])>,
    mode: InputMode,
    grid: &HyperGrid,
    seed: u64,
) -> Result<SvmHead> {
    let embedding_len = train.first().map_or(0, |p| p.0.len());
    let x = features(mode, train)?;
    let val_x = match val {
        Some((v, _)) => Some(features(mode, v)?),
        None => None,
    };
    let val_ref = match (&val_x, val) {
        (Some(x), Some((_, y))) => Some((x.as_slice(), y)),
        _ => None,
    };
    let svm = FeatureSvm::fit(&x, labels, val_ref, grid, seed)?;
    Ok(SvmHead {
        mode,
        embedding_len,
        training_fingerprint: fingerprint(&x, labels),
        svm: Some(svm),
    })
}

/// Signed SVM margin; larger means morph.
pub fn svm_score(head: &SvmHead, e_trusted: &EmbeddingVector, e_questioned: &EmbeddingVector) -> Result<f64> {
    let svm = head.svm.as_ref().ok_or(Error::NotFitted)?;
    if e_trusted.len() != head.embedding_len {
        return Err(Error::LengthMismatch(head.embedding_len, e_trusted.len()));
    }
    svm.decision(&pair_features(head.mode, e_trusted, e_questioned)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ev(v: Vec<f32>) -> EmbeddingVector {
        EmbeddingVector {
            values: v,
            normalized: false,
        }
    }

    /// Genuine pairs differ by small noise, imposter pairs by a large offset.
    fn fixture(n: usize, seed: u64) -> (Vec<EmbeddingPair>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0f32, 1.0).unwrap();
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n {
            let morph = i % 2 == 1;
            let t: Vec<f32> = (0..4).map(|_| nd.sample(&mut rng)).collect();
            let off = if morph { 3.0 } else { 0.0 };
            let q: Vec<f32> = t.iter().map(|v| v + off + 0.1 * nd.sample(&mut rng)).collect();
            pairs.push((ev(t), ev(q)));
            labels.push(if morph { Label::Imposter } else { Label::Genuine });
        }
        (pairs, labels)
    }

    #[test]
    fn unfitted_head_refuses_to_score() {
        let h = SvmHead::unfitted(InputMode::Difference, 2);
        let e = ev(vec![0.0, 1.0]);
        assert!(matches!(svm_score(&h, &e, &e), Err(Error::NotFitted)));
    }

    #[test]
    fn feature_lengths() {
        let a = ev(vec![1.0, 2.0, 3.0]);
        let b = ev(vec![0.5, 0.5, 0.5]);
        assert_eq!(pair_features(InputMode::Difference, &a, &b).unwrap(), vec![0.5, 1.5, 2.5]);
        assert_eq!(pair_features(InputMode::Concatenation, &a, &b).unwrap().len(), 6);
    }

    #[test]
    fn fitted_head_separates_and_persists() {
        let (pairs, labels) = fixture(50, 4);
        for mode in [InputMode::Difference, InputMode::Concatenation] {
            let head = fit_svm_head(&pairs, &labels, None, mode, &HyperGrid::default(), 1).unwrap();
            let genuine: Vec<f64> = pairs.iter().zip(&labels).filter(|p| !p.1.is_morph()).map(|(p, _)| svm_score(&head, &p.0, &p.1).unwrap()).collect();
            let morph: Vec<f64> = pairs.iter().zip(&labels).filter(|p| p.1.is_morph()).map(|(p, _)| svm_score(&head, &p.0, &p.1).unwrap()).collect();
            let gmax = genuine.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mmin = morph.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(mmin > gmax, "{mode:?}");
            assert!(genuine.iter().all(|&s| s < 0.0));
            let dir = tempfile::tempdir().unwrap();
            head.save(dir.path(), "head").unwrap();
            let back = SvmHead::load(dir.path(), "head").unwrap();
            assert_eq!(back, head);
        }
    }

    #[test]
    fn euclidean_is_the_distance() {
        assert_eq!(euclidean_score(&ev(vec![0.0, 0.0]), &ev(vec![3.0, 4.0])).unwrap(), 5.0);
    }
}
