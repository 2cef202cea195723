//! Small strided CNN with hand-written forward and backward passes.
//!
//! Activations are stored channel-major across the batch (`C × B × H × W`),
//! so every convolution is one im2col plus one matrix product for the whole
//! batch.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Input standardization `(x - INPUT_MEAN) / INPUT_SCALE`, same for every channel.
pub const INPUT_MEAN: f32 = 127.5;
pub const INPUT_SCALE: f32 = 128.0;

const MAGIC: &[u8; 4] = b"MDCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    /// Square input side.
    pub input: usize,
    /// Channel count per stage, starting with the 3 input channels. Every
    /// block is a 3×3, stride-2, pad-1 convolution followed by ReLU.
    pub channels: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            input: 160,
            channels: vec![3, 8, 16, 32, 64],
            embedding_dim: 128,
        }
    }
}

impl Arch {
    pub fn n_blocks(&self) -> usize {
        self.channels.len() - 1
    }

    /// Spatial side after block `l` (0-based).
    pub fn side(&self, l: usize) -> usize {
        let mut s = self.input;
        for _ in 0..=l {
            s = s.div_ceil(2);
        }
        s
    }

    pub fn flat_dim(&self) -> usize {
        let l = self.n_blocks() - 1;
        self.channels[l + 1] * self.side(l) * self.side(l)
    }

    pub fn layer_tags(&self) -> Vec<String> {
        (1..=self.n_blocks()).map(|i| format!("block{i}")).collect()
    }

    pub fn layer_index(&self, tag: &str) -> Result<usize> {
        let tags = self.layer_tags();
        tags.iter().position(|t| t == tag).ok_or_else(|| Error::UnknownLayer {
            tag: tag.to_string(),
            available: tags.clone(),
        })
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        // (weight offset, bias offset) per block, then fc
        let mut out = Vec::new();
        let mut at = 0;
        for l in 0..self.n_blocks() {
            let (cin, cout) = (self.channels[l], self.channels[l + 1]);
            out.push((at, at + cout * cin * 9));
            at += cout * cin * 9 + cout;
        }
        out.push((at, at + self.embedding_dim * self.flat_dim()));
        out
    }

    pub fn param_count(&self) -> usize {
        let o = self.offsets();
        o.last().unwrap().1 + self.embedding_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels[0] != 3 || self.channels.iter().any(|&c| c == 0) || self.embedding_dim == 0 || self.input < 2 {
            return Err(Error::Checkpoint(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Arch,
    pub params: Vec<f32>,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    batch: usize,
    /// im2col matrix per block, `(cin·9) × (B·Hout·Wout)`.
    cols: Vec<Vec<f32>>,
    /// Post-ReLU output per block, `C × B × H × W`.
    acts: Vec<Vec<f32>>,
    /// Flattened last activation, `B × flat_dim`.
    flat: Vec<f32>,
    /// Raw embeddings, `B × embedding_dim`.
    pub embeddings: Vec<f32>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Post-ReLU activation of block `l` for image `b`, `C × H × W`.
    pub fn activation(&self, arch: &Arch, l: usize, b: usize) -> Vec<f32> {
        let c = arch.channels[l + 1];
        let hw = arch.side(l) * arch.side(l);
        let a = &self.acts[l];
        let mut out = Vec::with_capacity(c * hw);
        for ch in 0..c {
            let base = ch * self.batch * hw + b * hw;
            out.extend_from_slice(&a[base..base + hw]);
        }
        out
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// 3×3 / stride 2 / pad 1 im2col over a `C × B × H × W` tensor.
fn im2col(x: &[f32], c: usize, b: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let n = b * ho * wo;
    let mut col = vec![0.0f32; c * 9 * n];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * n;
                for bi in 0..b {
                    let src = &x[(ch * b + bi) * h * w..(ch * b + bi + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = row + (bi * ho + oy) * wo;
                        let srow = iy as usize * w;
                        for ox in 0..wo {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                col[dst + ox] = src[srow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (col, ho, wo)
}

fn col2im(col: &[f32], c: usize, b: usize, h: usize, w: usize) -> Vec<f32> {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let n = b * ho * wo;
    let mut x = vec![0.0f32; c * b * h * w];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * n;
                for bi in 0..b {
                    let base = (ch * b + bi) * h * w;
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = row + (bi * ho + oy) * wo;
                        let drow = base + iy as usize * w;
                        for ox in 0..wo {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                x[drow + ix as usize] += col[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl Network {
    /// He-initialized network.
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; arch.param_count()];
        let offs = arch.offsets();
        for l in 0..arch.n_blocks() {
            let fan_in = arch.channels[l] * 9;
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).unwrap();
            for p in &mut params[offs[l].0..offs[l].1] {
                *p = normal.sample(&mut rng);
            }
        }
        let fc = offs[arch.n_blocks()];
        let normal = Normal::new(0.0f32, (1.0 / arch.flat_dim() as f32).sqrt()).unwrap();
        for p in &mut params[fc.0..fc.1] {
            *p = normal.sample(&mut rng);
        }
        Ok(Network { arch, params })
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim
    }

    /// SHA-256 over the architecture and the little-endian weights.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.arch).unwrap());
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Packs `B` interleaved-RGB images (side × side × 3, 8-bit) into a standardized `3 × B × H × W` tensor.
    pub fn pack_input(&self, images: &[&[u8]]) -> Result<Vec<f32>> {
        let s = self.arch.input;
        let b = images.len();
        let mut x = vec![0.0f32; 3 * b * s * s];
        for (bi, img) in images.iter().enumerate() {
            if img.len() != s * s * 3 {
                return Err(Error::shape(format!("{s}x{s}x3"), format!("{} bytes", img.len())));
            }
            for i in 0..s * s {
                for ch in 0..3 {
                    x[(ch * b + bi) * s * s + i] = (img[3 * i + ch] as f32 - INPUT_MEAN) / INPUT_SCALE;
                }
            }
        }
        Ok(x)
    }

    /// Forward pass on a packed batch.
    pub fn forward(&self, x: &[f32], batch: usize) -> ForwardCache {
        let arch = &self.arch;
        let offs = arch.offsets();
        let mut cols = Vec::with_capacity(arch.n_blocks());
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(arch.n_blocks());
        let mut side = arch.input;
        for l in 0..arch.n_blocks() {
            let (cin, cout) = (arch.channels[l], arch.channels[l + 1]);
            let input: &[f32] = if l == 0 { x } else { &acts[l - 1] };
            let (col, ho, wo) = im2col(input, cin, batch, side, side);
            let n = batch * ho * wo;
            let wgt = &self.params[offs[l].0..offs[l].1];
            let bias = &self.params[offs[l].1..offs[l].1 + cout];
            let mut out = vec![0.0f32; cout * n];
            for (co, row) in out.chunks_mut(n).enumerate() {
                row.fill(bias[co]);
            }
            gemm(cout, cin * 9, n, wgt, false, &col, false, &mut out, 1.0);
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            cols.push(col);
            acts.push(out);
            side = ho;
        }
        let c = arch.channels[arch.n_blocks()];
        let hw = side * side;
        let fd = arch.flat_dim();
        let last = &acts[arch.n_blocks() - 1];
        let mut flat = vec![0.0f32; batch * fd];
        for bi in 0..batch {
            for ch in 0..c {
                let src = &last[(ch * batch + bi) * hw..(ch * batch + bi + 1) * hw];
                flat[bi * fd + ch * hw..bi * fd + (ch + 1) * hw].copy_from_slice(src);
            }
        }
        let (fw, fb) = offs[arch.n_blocks()];
        let d = arch.embedding_dim;
        let mut emb = vec![0.0f32; batch * d];
        for row in emb.chunks_mut(d) {
            row.copy_from_slice(&self.params[fb..fb + d]);
        }
        gemm(batch, fd, d, &flat, false, &self.params[fw..fb], true, &mut emb, 1.0);
        ForwardCache {
            batch,
            cols,
            acts,
            flat,
            embeddings: emb,
        }
    }

    /// Backward pass from `d_emb` (`B × embedding_dim`). Returns the parameter
    /// gradient and, if requested, the gradient at a block's post-ReLU output
    /// (`C × B × H × W`).
    pub fn backward(&self, cache: &ForwardCache, d_emb: &[f32], capture: Option<usize>) -> (Vec<f32>, Option<Vec<f32>>) {
        let arch = &self.arch;
        let offs = arch.offsets();
        let b = cache.batch;
        let d = arch.embedding_dim;
        let fd = arch.flat_dim();
        let mut grad = vec![0.0f32; self.params.len()];
        let (fw, fb) = offs[arch.n_blocks()];
        gemm(d, b, fd, d_emb, true, &cache.flat, false, &mut grad[fw..fb], 0.0);
        for row in d_emb.chunks(d) {
            for (g, v) in grad[fb..fb + d].iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut d_flat = vec![0.0f32; b * fd];
        gemm(b, d, fd, d_emb, false, &self.params[fw..fb], false, &mut d_flat, 0.0);
        let nl = arch.n_blocks();
        let c = arch.channels[nl];
        let side = arch.side(nl - 1);
        let hw = side * side;
        let mut d_act = vec![0.0f32; c * b * hw];
        for bi in 0..b {
            for ch in 0..c {
                d_act[(ch * b + bi) * hw..(ch * b + bi + 1) * hw].copy_from_slice(&d_flat[bi * fd + ch * hw..bi * fd + (ch + 1) * hw]);
            }
        }
        let mut captured = None;
        for l in (0..nl).rev() {
            if capture == Some(l) {
                captured = Some(d_act.clone());
            }
            let (cin, cout) = (arch.channels[l], arch.channels[l + 1]);
            let so = arch.side(l);
            let n = b * so * so;
            for (g, a) in d_act.iter_mut().zip(&cache.acts[l]) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let (w0, b0) = offs[l];
            gemm(cout, n, cin * 9, &d_act, false, &cache.cols[l], true, &mut grad[w0..b0], 0.0);
            for (co, row) in d_act.chunks(n).enumerate() {
                grad[b0 + co] = row.iter().sum();
            }
            if l == 0 {
                break;
            }
            let mut d_col = vec![0.0f32; cin * 9 * n];
            gemm(cin * 9, cout, n, &self.params[w0..b0], true, &d_act, false, &mut d_col, 0.0);
            let si = arch.side(l - 1);
            d_act = col2im(&d_col, cin, b, si, si);
        }
        (grad, captured)
    }

    pub fn save(&self, path: &Path, header: &CheckpointHeader) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let head = serde_json::to_vec(header)?;
        let mut buf = Vec::with_capacity(12 + head.len() + 4 * self.params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(head.len() as u32).to_le_bytes());
        buf.extend_from_slice(&head);
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Network, CheckpointHeader)> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
        if buf.len() < 12 || &buf[..4] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hl = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        if buf.len() < 12 + hl {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&buf[12..12 + hl])?;
        header.arch.validate()?;
        let body = &buf[12 + hl..];
        if body.len() != 4 * header.arch.param_count() {
            return Err(bad(&format!("expected {} weights, found {} bytes", header.arch.param_count(), body.len())));
        }
        let params = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let net = Network {
            arch: header.arch.clone(),
            params,
        };
        if net.fingerprint() != header.fingerprint {
            return Err(bad("weights do not match the recorded fingerprint"));
        }
        Ok((net, header))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub identifier: String,
    pub arch: Arch,
    pub fingerprint: String,
    pub input_mean: f32,
    pub input_scale: f32,
    /// Fingerprints of the checkpoints this one was trained from, oldest first.
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl CheckpointHeader {
    pub fn for_network(identifier: impl Into<String>, net: &Network, provenance: Vec<String>) -> Self {
        CheckpointHeader {
            identifier: identifier.into(),
            arch: net.arch.clone(),
            fingerprint: net.fingerprint(),
            input_mean: INPUT_MEAN,
            input_scale: INPUT_SCALE,
            provenance,
        }
    }
}
