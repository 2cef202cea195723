//! Contrastive Siamese training: hard-pair pretraining and morph fine-tuning.

use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::embedding::{pair_distance, Backbone};
use crate::error::{Error, Result};
use crate::metrics::{d_eer, Polarity, ScoreSet};
use crate::nn::Network;

/// `(1−y)·d² + y·max(0, m−d)²`.
pub fn contrastive_loss(d: f64, y: Label, m: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidInput(format!("distance must be non-negative, got {d}")));
    }
    if !(m > 0.0) {
        return Err(Error::InvalidInput(format!("margin must be positive, got {m}")));
    }
    Ok(match y {
        Label::Genuine => d * d,
        Label::Imposter => (m - d).max(0.0).powi(2),
    })
}

/// dLoss/dd, with subgradient 0 at the imposter kink `d = m`.
pub fn loss_gradient(d: f64, y: Label, m: f64) -> f64 {
    match y {
        Label::Genuine => 2.0 * d,
        Label::Imposter if d < m => -2.0 * (m - d),
        Label::Imposter => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub margin: f64,
    pub batch_pairs: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_decay: f64,
    pub decay_every_epochs: usize,
    pub lr_floor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: Augment,
    /// L2-normalize embeddings before the distance.
    pub normalize: bool,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            margin: 1.0,
            batch_pairs: 64,
            epochs: 20,
            lr_initial: 0.1,
            lr_decay: 0.9,
            decay_every_epochs: 5,
            lr_floor: 1e-6,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            augment: Augment {
                horizontal_flip: true,
                vertical_flip: true,
            },
            normalize: true,
        }
    }

    pub fn finetune() -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            lr_initial: 1e-3,
            epochs: 10,
            ..TrainConfig::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.margin > 0.0) {
            return bad(format!("margin must be > 0, got {}", self.margin));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad(format!("lr_decay must be in (0,1), got {}", self.lr_decay));
        }
        if !(self.lr_floor <= self.lr_initial) || !(self.lr_floor >= 0.0) {
            return bad(format!("lr_floor {} must be in [0, lr_initial {}]", self.lr_floor, self.lr_initial));
        }
        if self.batch_pairs == 0 || self.decay_every_epochs == 0 {
            return bad("batch_pairs and decay_every_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must be in [0,1) and weight_decay ≥ 0".into());
        }
        Ok(())
    }

    /// `max(lr_floor, lr_initial · lr_decay^floor(epoch / decay_every_epochs))`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = (epoch / self.decay_every_epochs) as i32;
        (self.lr_initial * self.lr_decay.powi(k)).max(self.lr_floor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_deer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: Stage,
    /// Epochs run.
    pub epoch: usize,
    pub current_lr: f64,
    /// None when no validation data was given.
    pub best_val_deer: Option<f64>,
    /// 0 means the starting weights were kept.
    pub best_epoch: usize,
    /// Fingerprint of the selected weights.
    pub checkpoint: String,
    /// Fingerprints this state descends from, oldest first.
    pub provenance: Vec<String>,
    pub log: Vec<EpochLog>,
}

/// Images plus labeled index pairs into them.
#[derive(Clone, Copy, Debug)]
pub struct PairData<'a> {
    pub images: &'a [RgbImage],
    pub pairs: &'a [(usize, usize, Label)],
}

impl PairData<'_> {
    fn check(&self) -> Result<()> {
        let has = |l: Label| self.pairs.iter().any(|p| p.2 == l);
        if !has(Label::Genuine) || !has(Label::Imposter) {
            return Err(Error::SingleClass("training pairs need both labels".into()));
        }
        if let Some(p) = self.pairs.iter().find(|p| p.0 >= self.images.len() || p.1 >= self.images.len()) {
            return Err(Error::InvalidInput(format!("pair {:?} indexes past {} images", p, self.images.len())));
        }
        Ok(())
    }
}

/// Two towers over one parameter set.
pub struct Siamese<'n> {
    net: &'n Network,
}

impl<'n> Siamese<'n> {
    pub fn new(net: &'n Network) -> Self {
        Siamese { net }
    }

    pub fn towers(&self) -> (&'n Network, &'n Network) {
        (self.net, self.net)
    }

    /// Mean contrastive loss of a batch and its parameter gradient. Tower
    /// inputs are `a[i]` and `b[i]`.
    pub fn loss_and_grad(&self, a: &[&[u8]], b: &[&[u8]], labels: &[Label], margin: f64, normalize: bool) -> Result<(f64, Vec<f32>)> {
        let (left, right) = self.towers();
        debug_assert!(std::ptr::eq(left, right));
        let n = a.len();
        let mut inputs: Vec<&[u8]> = a.to_vec();
        inputs.extend_from_slice(b);
        let x = left.pack_input(&inputs)?;
        let cache = left.forward(&x, 2 * n);
        let d = left.embedding_dim();
        let emb: Vec<f64> = cache.embeddings.iter().map(|&v| v as f64).collect();
        let mut phi = emb.clone();
        let mut norms = vec![1.0f64; 2 * n];
        if normalize {
            for (i, row) in phi.chunks_mut(d).enumerate() {
                let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                norms[i] = nrm;
                row.iter_mut().for_each(|v| *v /= nrm);
            }
        }
        let mut d_phi = vec![0.0f64; 2 * n * d];
        let mut total = 0.0;
        for i in 0..n {
            let pa = &phi[i * d..(i + 1) * d];
            let pb = &phi[(n + i) * d..(n + i + 1) * d];
            let dist = pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            total += contrastive_loss(dist, labels[i], margin)?;
            let g = loss_gradient(dist, labels[i], margin) / n as f64;
            if dist > 0.0 && g != 0.0 {
                for k in 0..d {
                    let v = g * (pa[k] - pb[k]) / dist;
                    d_phi[i * d + k] = v;
                    d_phi[(n + i) * d + k] = -v;
                }
            }
        }
        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss {loss}")));
        }
        let mut d_emb = vec![0.0f32; 2 * n * d];
        for r in 0..2 * n {
            let p = &phi[r * d..(r + 1) * d];
            let g = &d_phi[r * d..(r + 1) * d];
            if normalize {
                let dot: f64 = p.iter().zip(g).map(|(x, y)| x * y).sum();
                for k in 0..d {
                    d_emb[r * d + k] = ((g[k] - p[k] * dot) / norms[r]) as f32;
                }
            } else {
                for k in 0..d {
                    d_emb[r * d + k] = g[k] as f32;
                }
            }
        }
        let (grad, _) = left.backward(&cache, &d_emb, None);
        Ok((loss, grad))
    }
}

fn flip_h(raw: &[u8], s: usize) -> Vec<u8> {
    let mut out = vec![0u8; raw.len()];
    for y in 0..s {
        for x in 0..s {
            let (i, j) = (3 * (y * s + x), 3 * (y * s + s - 1 - x));
            out[i..i + 3].copy_from_slice(&raw[j..j + 3]);
        }
    }
    out
}

fn flip_v(raw: &[u8], s: usize) -> Vec<u8> {
    let mut out = vec![0u8; raw.len()];
    for y in 0..s {
        out[3 * y * s..3 * (y + 1) * s].copy_from_slice(&raw[3 * (s - 1 - y) * s..3 * (s - y) * s]);
    }
    out
}

/// Euclidean D-EER of flip-concatenated, normalized embeddings.
pub fn validation_deer(net: &Network, data: &PairData<'_>) -> Result<f64> {
    let backbone = Backbone::new("validation", net.clone());
    let mut used: Vec<usize> = data.pairs.iter().flat_map(|p| [p.0, p.1]).collect();
    used.sort_unstable();
    used.dedup();
    let faces: Vec<&RgbImage> = used.iter().map(|&i| &data.images[i]).collect();
    let emb = backbone.flip_concat_batch(&faces, true)?;
    let slot = |i: usize| used.binary_search(&i).unwrap();
    let mut raw = Vec::with_capacity(data.pairs.len());
    for p in data.pairs {
        raw.push(pair_distance(&emb[slot(p.0)], &emb[slot(p.1)])?);
    }
    let labels: Vec<Label> = data.pairs.iter().map(|p| p.2).collect();
    let ids = (0..data.pairs.len()).map(|i| i.to_string()).collect();
    let set = ScoreSet::from_raw("val", "val", ids, &raw, &labels, Polarity::LargerIsMorph)?;
    Ok(d_eer(&set)?.0)
}

/// SGD with momentum over shuffled batches. On return `net` holds the
/// weights with the lowest validation D-EER (the starting weights count as
/// epoch 0), or the final weights when no validation data is given.
pub fn train_stage(net: &mut Network, train: &PairData<'_>, val: Option<&PairData<'_>>, config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    train.check()?;
    if let Some(v) = val {
        v.check()?;
    }
    let start_fp = net.fingerprint();
    let s = net.arch.input;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = vec![0.0f32; net.params.len()];
    let mut order: Vec<usize> = (0..train.pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best = match val {
        Some(v) => Some((validation_deer(net, v)?, 0usize, net.params.clone())),
        None => None,
    };
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_pairs) {
            let mut a_buf = Vec::with_capacity(chunk.len());
            let mut b_buf = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &pi in chunk {
                let (ia, ib, y) = train.pairs[pi];
                let mut a = train.images[ia].as_raw().clone();
                let mut b = train.images[ib].as_raw().clone();
                let fh = config.augment.horizontal_flip && rng.gen_bool(0.5);
                let fv = config.augment.vertical_flip && rng.gen_bool(0.5);
                if fh {
                    a = flip_h(&a, s);
                    b = flip_h(&b, s);
                }
                if fv {
                    a = flip_v(&a, s);
                    b = flip_v(&b, s);
                }
                a_buf.push(a);
                b_buf.push(b);
                labels.push(y);
            }
            let a_refs: Vec<&[u8]> = a_buf.iter().map(|v| v.as_slice()).collect();
            let b_refs: Vec<&[u8]> = b_buf.iter().map(|v| v.as_slice()).collect();
            let (loss, grad) = Siamese::new(net)
                .loss_and_grad(&a_refs, &b_refs, &labels, config.margin, config.normalize)
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, batch {batches}, lr {lr}")),
                    other => other,
                })?;
            let (mu, wd, lr32) = (config.momentum as f32, config.weight_decay as f32, lr as f32);
            for ((p, v), g) in net.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = mu * *v - lr32 * (g + wd * *p);
                *p += *v;
            }
            if net.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite(format!("weights diverged at epoch {epoch}, batch {batches}, lr {lr}")));
            }
            loss_sum += loss;
            batches += 1;
        }
        let mean_loss = loss_sum / batches.max(1) as f64;
        let val_deer = match val {
            Some(v) => Some(validation_deer(net, v)?),
            None => None,
        };
        log::info!("{:?} epoch {} lr {:.3e} loss {:.5} val D-EER {:?}", config.stage, epoch + 1, lr, mean_loss, val_deer);
        if let (Some(vd), Some(b)) = (val_deer, best.as_mut()) {
            if vd < b.0 {
                *b = (vd, epoch + 1, net.params.clone());
            }
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            lr,
            mean_loss,
            val_deer,
        });
    }
    let (best_val_deer, best_epoch) = match best {
        Some((d, e, params)) => {
            net.params = params;
            (Some(d), e)
        }
        None => (None, config.epochs),
    };
    Ok(TrainState {
        stage: config.stage,
        epoch: config.epochs,
        current_lr: config.lr_at(config.epochs.saturating_sub(1)),
        best_val_deer,
        best_epoch,
        checkpoint: net.fingerprint(),
        provenance: vec![start_fp],
        log,
    })
}

/// Fine-tunes a copy of the pretrained backbone on morph pairs.
pub fn finetune_on_morphs(pretrained: &Backbone, train: &PairData<'_>, val: Option<&PairData<'_>>, config: &TrainConfig) -> Result<(Backbone, TrainState)> {
    if config.stage != Stage::Finetune {
        return Err(Error::Config("finetune_on_morphs needs a finetune-stage config".into()));
    }
    let mut net = pretrained.network().clone();
    let mut state = train_stage(&mut net, train, val, config)?;
    let mut provenance = pretrained.provenance().to_vec();
    provenance.push(pretrained.weights_fingerprint().to_string());
    state.provenance = provenance.clone();
    let backbone = Backbone::with_provenance(format!("{}+finetune", pretrained.identifier), net, provenance);
    Ok((backbone, state))
}

/// Loads a pretrained checkpoint, refusing an unexpected architecture.
pub fn load_pretrained(path: &Path, expected: &crate::nn::Arch) -> Result<Backbone> {
    let b = Backbone::load(path)?;
    if &b.network().arch != expected {
        return Err(Error::Checkpoint(format!(
            "{} has architecture {:?}, expected {:?}",
            path.display(),
            b.network().arch,
            expected
        )));
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_values() {
        assert_eq!(contrastive_loss(0.0, Label::Genuine, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(1.5, Label::Imposter, 1.0).unwrap(), 0.0);
        assert!((contrastive_loss(0.4, Label::Imposter, 1.0).unwrap() - 0.36).abs() < 1e-12);
        assert!(contrastive_loss(-0.1, Label::Genuine, 1.0).is_err());
    }

    #[test]
    fn gradient_values() {
        assert!((loss_gradient(0.4, Label::Imposter, 1.0) + 1.2).abs() < 1e-12);
        assert_eq!(loss_gradient(2.0, Label::Imposter, 1.0), 0.0);
        assert!((loss_gradient(0.3, Label::Genuine, 1.0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn schedules() {
        let p = TrainConfig::pretrain();
        assert_eq!(p.lr_at(0), 0.1);
        assert_eq!(p.lr_at(4), 0.1);
        assert!((p.lr_at(5) - 0.09).abs() < 1e-15);
        assert_eq!(p.lr_at(100_000), 1e-6);
        assert_eq!(TrainConfig::finetune().lr_at(0), 1e-3);
    }

    #[test]
    fn flips_are_involutions() {
        let raw: Vec<u8> = (0..4 * 4 * 3).map(|i| i as u8).collect();
        assert_eq!(flip_h(&flip_h(&raw, 4), 4), raw);
        assert_eq!(flip_v(&flip_v(&raw, 4), 4), raw);
        assert_ne!(flip_h(&raw, 4), raw);
    }
}
