//! Backbone handle, flip-concatenated embeddings and pair distances.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::mirror;
use crate::nn::{CheckpointHeader, Network};

/// Images per forward pass during inference.
const INFER_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// L2-normalized copy; a zero vector stays zero.
    pub fn normalized(&self) -> EmbeddingVector {
        let n = self.norm();
        let values = if n > 0.0 {
            self.values.iter().map(|&v| (v as f64 / n) as f32).collect()
        } else {
            self.values.clone()
        };
        EmbeddingVector { values, normalized: true }
    }
}

/// Euclidean distance between two embeddings of the same kind.
pub fn pair_distance(e1: &EmbeddingVector, e2: &EmbeddingVector) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::LengthMismatch(e1.len(), e2.len()));
    }
    if e1.normalized != e2.normalized {
        return Err(Error::InvalidInput("cannot compare normalized with raw embeddings".into()));
    }
    Ok(e1
        .values
        .iter()
        .zip(&e2.values)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Inference handle around a trained [`Network`].
#[derive(Clone, Debug)]
pub struct Backbone {
    pub identifier: String,
    network: Network,
    fingerprint: String,
    provenance: Vec<String>,
}

impl Backbone {
    pub fn new(identifier: impl Into<String>, network: Network) -> Self {
        Backbone::with_provenance(identifier, network, Vec::new())
    }

    pub fn with_provenance(identifier: impl Into<String>, network: Network, provenance: Vec<String>) -> Self {
        let fingerprint = network.fingerprint();
        Backbone {
            identifier: identifier.into(),
            network,
            fingerprint,
            provenance,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (network, header) = Network::load(path)?;
        Ok(Backbone {
            identifier: header.identifier,
            fingerprint: header.fingerprint,
            provenance: header.provenance,
            network,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader::for_network(self.identifier.clone(), &self.network, self.provenance.clone());
        self.network.save(path, &header)
    }

    pub fn embedding_dim(&self) -> usize {
        self.network.embedding_dim()
    }

    pub fn weights_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    fn check(&self, face: &RgbImage) -> Result<()> {
        let s = self.network.arch.input as u32;
        if face.dimensions() != (s, s) {
            return Err(Error::shape(format!("{s}x{s}x3"), format!("{}x{}x3", face.width(), face.height())));
        }
        Ok(())
    }

    /// Raw embeddings of a batch of faces.
    pub fn embed_batch(&self, faces: &[&RgbImage]) -> Result<Vec<EmbeddingVector>> {
        let d = self.embedding_dim();
        let mut out = Vec::with_capacity(faces.len());
        for chunk in faces.chunks(INFER_CHUNK) {
            for f in chunk {
                self.check(f)?;
            }
            let raw: Vec<&[u8]> = chunk.iter().map(|f| f.as_raw().as_slice()).collect();
            let x = self.network.pack_input(&raw)?;
            let cache = self.network.forward(&x, chunk.len());
            for row in cache.embeddings.chunks(d) {
                out.push(EmbeddingVector {
                    values: row.to_vec(),
                    normalized: false,
                });
            }
        }
        Ok(out)
    }

    pub fn embed(&self, face: &RgbImage) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(&[face])?.remove(0))
    }

    /// `[embed(face), embed(mirror(face))]`, optionally L2-normalized after concatenation.
    pub fn flip_concat_batch(&self, faces: &[&RgbImage], normalize: bool) -> Result<Vec<EmbeddingVector>> {
        let mirrored: Vec<RgbImage> = faces.iter().map(|f| mirror(f)).collect();
        let mut all: Vec<&RgbImage> = faces.to_vec();
        all.extend(mirrored.iter());
        let emb = self.embed_batch(&all)?;
        let n = faces.len();
        Ok((0..n)
            .map(|i| {
                let mut values = emb[i].values.clone();
                values.extend_from_slice(&emb[n + i].values);
                let v = EmbeddingVector { values, normalized: false };
                if normalize {
                    v.normalized()
                } else {
                    v
                }
            })
            .collect())
    }

    pub fn flip_concat_embed(&self, face: &RgbImage, normalize: bool) -> Result<EmbeddingVector> {
        Ok(self.flip_concat_batch(&[face], normalize)?.remove(0))
    }
}

/// Embeddings keyed by image path, persisted as `<stem>.bin` (f32 LE rows)
/// plus `<stem>.json` (index and metadata).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub normalized: bool,
    pub backbone_fingerprint: String,
    pub vectors: BTreeMap<String, Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct StoreIndex {
    dim: usize,
    normalized: bool,
    backbone_fingerprint: String,
    keys: Vec<String>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, normalized: bool, backbone_fingerprint: impl Into<String>) -> Self {
        EmbeddingStore {
            dim,
            normalized,
            backbone_fingerprint: backbone_fingerprint.into(),
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::LengthMismatch(self.dim, v.len()));
        }
        self.vectors.insert(key.into(), v.values);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<EmbeddingVector> {
        self.vectors
            .get(key)
            .map(|v| EmbeddingVector {
                values: v.clone(),
                normalized: self.normalized,
            })
            .ok_or_else(|| Error::InvalidInput(format!("no embedding for {key}")))
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::with_capacity(4 * self.dim * self.vectors.len());
        for v in self.vectors.values() {
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let index = StoreIndex {
            dim: self.dim,
            normalized: self.normalized,
            backbone_fingerprint: self.backbone_fingerprint.clone(),
            keys: self.vectors.keys().cloned().collect(),
        };
        crate::dataset::write_json(&dir.join(format!("{stem}.json")), &index)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let index: StoreIndex = serde_json::from_str(&text)?;
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != 4 * index.dim * index.keys.len() {
            return Err(Error::InvalidInput(format!("{} does not match its index", bin.display())));
        }
        let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let vectors = index
            .keys
            .into_iter()
            .zip(floats.chunks(index.dim.max(1)))
            .map(|(k, v)| (k, v.to_vec()))
            .collect();
        Ok(EmbeddingStore {
            dim: index.dim,
            normalized: index.normalized,
            backbone_fingerprint: index.backbone_fingerprint,
            vectors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Arch;

    fn backbone() -> Backbone {
        Backbone::new("test", Network::new(Arch::default(), 1).unwrap())
    }

    fn face(seed: u32) -> RgbImage {
        RgbImage::from_fn(160, 160, |x, y| image::Rgb([((x * 7 + y * 3 + seed) % 256) as u8, ((x * y + seed) % 256) as u8, ((x + 2 * y) % 256) as u8]))
    }

    #[test]
    fn embedding_is_deterministic_and_sized() {
        let b = backbone();
        let f = face(3);
        let e1 = b.embed(&f).unwrap();
        assert_eq!(e1, b.embed(&f).unwrap());
        assert_eq!(e1.len(), 128);
        assert_eq!(b.flip_concat_embed(&f, true).unwrap().len(), 256);
    }

    #[test]
    fn wrong_size_is_rejected() {
        let b = backbone();
        let f = RgbImage::new(159, 160);
        assert!(matches!(b.embed(&f), Err(Error::Shape { .. })));
    }

    #[test]
    fn mirrored_input_swaps_halves() {
        let b = backbone();
        let f = face(9);
        let e = b.flip_concat_embed(&f, false).unwrap();
        let m = b.flip_concat_embed(&mirror(&f), false).unwrap();
        let d = 128;
        for i in 0..d {
            assert!((e.values[i] - m.values[d + i]).abs() < 1e-5);
            assert!((e.values[d + i] - m.values[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn distance_basics() {
        let v = |x: &[f32]| EmbeddingVector {
            values: x.to_vec(),
            normalized: false,
        };
        assert_eq!(pair_distance(&v(&[0.0, 0.0]), &v(&[3.0, 4.0])).unwrap(), 5.0);
        assert_eq!(pair_distance(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert!(pair_distance(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = EmbeddingStore::new(3, true, "fp");
        s.insert(
            "b.png",
            EmbeddingVector {
                values: vec![1.0, 2.0, 3.0],
                normalized: true,
            },
        )
        .unwrap();
        s.insert(
            "a.png",
            EmbeddingVector {
                values: vec![4.0, 5.0, 6.0],
                normalized: true,
            },
        )
        .unwrap();
        s.save(dir.path(), "emb").unwrap();
        assert_eq!(EmbeddingStore::load(dir.path(), "emb").unwrap(), s);
    }
}
