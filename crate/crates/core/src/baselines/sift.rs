//! Scale-invariant keypoints and 128-d gradient-histogram descriptors with
//! the customary defaults (3 layers per octave, sigma 1.6, contrast 0.04,
//! edge ratio 10, doubled base image).

use std::f32::consts::PI;

use crate::imaging::Plane;

pub const SIFT_LEN: usize = 128;

const IMG_BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_SIG_FCTR: f32 = 1.5;
const ORI_RADIUS: f32 = 3.0 * ORI_SIG_FCTR;
const ORI_PEAK_RATIO: f32 = 0.8;
const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_SCL_FCTR: f32 = 3.0;
const DESCR_MAG_THR: f32 = 0.2;
/// Assumed blur of the input image.
const INIT_SIGMA: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiftParams {
    pub n_octave_layers: usize,
    pub contrast_threshold: f32,
    pub edge_threshold: f32,
    pub sigma: f32,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            n_octave_layers: 3,
            contrast_threshold: 0.04,
            edge_threshold: 10.0,
            sigma: 1.6,
        }
    }
}

fn gaussian_blur(src: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    let r = (sigma * 4.0).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = (src.width, src.height);
    let mut tmp = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * src.get_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp.get_clamped(x as isize, y as isize + i as isize - r);
            }
            out.set(x, y, acc);
        }
    }
    out
}

fn upsample2(src: &Plane) -> Plane {
    Plane::from_fn(src.width * 2, src.height * 2, |x, y| {
        src.sample_bilinear((x as f64 + 0.5) / 2.0 - 0.5, (y as f64 + 0.5) / 2.0 - 0.5)
    })
}

fn downsample2(src: &Plane) -> Plane {
    Plane::from_fn(src.width / 2, src.height / 2, |x, y| src.get(2 * x, 2 * y))
}

struct Pyramid {
    gauss: Vec<Vec<Plane>>,
    dog: Vec<Vec<Plane>>,
}

fn build_pyramid(base: &Plane, n_octaves: usize, p: &SiftParams) -> Pyramid {
    let s = p.n_octave_layers;
    let k = 2f32.powf(1.0 / s as f32);
    let mut sig = vec![p.sigma; s + 3];
    for (i, v) in sig.iter_mut().enumerate().skip(1) {
        let prev = p.sigma * k.powi(i as i32 - 1);
        let total = prev * k;
        *v = (total * total - prev * prev).sqrt();
    }
    let mut gauss: Vec<Vec<Plane>> = Vec::with_capacity(n_octaves);
    for o in 0..n_octaves {
        let mut layers = Vec::with_capacity(s + 3);
        for i in 0..s + 3 {
            let img = if o == 0 && i == 0 {
                base.clone()
            } else if i == 0 {
                downsample2(&gauss[o - 1][s])
            } else {
                gaussian_blur(&layers[i - 1], sig[i])
            };
            layers.push(img);
        }
        gauss.push(layers);
    }
    let dog = gauss
        .iter()
        .map(|layers| {
            layers
                .windows(2)
                .map(|w| {
                    let mut d = w[1].clone();
                    d.data.iter_mut().zip(&w[0].data).for_each(|(a, b)| *a -= b);
                    d
                })
                .collect()
        })
        .collect();
    Pyramid { gauss, dog }
}

struct Keypoint {
    layer: usize,
    x: usize,
    y: usize,
    /// Scale relative to the octave.
    scl_octv: f32,
    /// Degrees, counter-clockwise with y up.
    angle: f32,
}

fn is_extremum(dog: &[Plane], layer: usize, x: usize, y: usize, threshold: f32) -> bool {
    let v = dog[layer].get(x, y);
    if v.abs() <= threshold {
        return false;
    }
    for l in layer - 1..=layer + 1 {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = dog[l].get(xx, yy);
                if v > 0.0 && n > v || v < 0.0 && n < v {
                    return false;
                }
            }
        }
    }
    true
}

fn solve3(h: [[f32; 3]; 3], g: [f32; 3]) -> Option<[f32; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut x = [0.0f32; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = g[r];
        }
        let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *xc = d / det;
    }
    Some(x)
}

/// Sub-pixel refinement plus contrast and edge tests.
fn refine(pyr: &Pyramid, o: usize, layer: usize, x: usize, y: usize, p: &SiftParams) -> Option<Keypoint> {
    let dog = &pyr.dog[o];
    let (w, h) = (dog[0].width, dog[0].height);
    let s = p.n_octave_layers;
    let (mut l, mut xi, mut yi) = (layer, x, y);
    let mut off = [0.0f32; 3];
    let mut converged = false;
    for _ in 0..MAX_INTERP_STEPS {
        let d = |dl: isize, dx: isize, dy: isize| dog[(l as isize + dl) as usize].get((xi as isize + dx) as usize, (yi as isize + dy) as usize);
        let g = [
            (d(0, 1, 0) - d(0, -1, 0)) * 0.5,
            (d(0, 0, 1) - d(0, 0, -1)) * 0.5,
            (d(1, 0, 0) - d(-1, 0, 0)) * 0.5,
        ];
        let v2 = 2.0 * d(0, 0, 0);
        let dxx = d(0, 1, 0) + d(0, -1, 0) - v2;
        let dyy = d(0, 0, 1) + d(0, 0, -1) - v2;
        let dss = d(1, 0, 0) + d(-1, 0, 0) - v2;
        let dxy = (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1)) * 0.25;
        let dxs = (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0)) * 0.25;
        let dys = (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1)) * 0.25;
        let hm = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let sol = solve3(hm, g)?;
        off = [-sol[0], -sol[1], -sol[2]];
        if off.iter().all(|v| v.abs() < 0.5) {
            converged = true;
            break;
        }
        if off.iter().any(|v| v.abs() > 1e6) {
            return None;
        }
        let nx = xi as isize + off[0].round() as isize;
        let ny = yi as isize + off[1].round() as isize;
        let nl = l as isize + off[2].round() as isize;
        if nl < 1 || nl > s as isize || nx < IMG_BORDER as isize || nx >= (w - IMG_BORDER) as isize || ny < IMG_BORDER as isize || ny >= (h - IMG_BORDER) as isize {
            return None;
        }
        xi = nx as usize;
        yi = ny as usize;
        l = nl as usize;
    }
    if !converged {
        return None;
    }
    let d = |dx: isize, dy: isize| dog[l].get((xi as isize + dx) as usize, (yi as isize + dy) as usize);
    let g = [(d(1, 0) - d(-1, 0)) * 0.5, (d(0, 1) - d(0, -1)) * 0.5, (dog[l + 1].get(xi, yi) - dog[l - 1].get(xi, yi)) * 0.5];
    let contrast = d(0, 0) + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
    if contrast.abs() * (s as f32) < p.contrast_threshold {
        return None;
    }
    let v2 = 2.0 * d(0, 0);
    let dxx = d(1, 0) + d(-1, 0) - v2;
    let dyy = d(0, 1) + d(0, -1) - v2;
    let dxy = (d(1, 1) - d(-1, 1) - d(1, -1) + d(-1, -1)) * 0.25;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = p.edge_threshold;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    Some(Keypoint {
        layer: l,
        x: xi,
        y: yi,
        scl_octv: p.sigma * 2f32.powf((l as f32 + off[2]) / s as f32),
        angle: 0.0,
    })
}

fn gradient(img: &Plane, x: usize, y: usize) -> (f32, f32) {
    (img.get(x + 1, y) - img.get(x - 1, y), img.get(x, y - 1) - img.get(x, y + 1))
}

/// Dominant orientations (degrees) of a keypoint.
fn orientations(img: &Plane, kp: &Keypoint) -> Vec<f32> {
    let radius = (ORI_RADIUS * kp.scl_octv).round() as isize;
    let sigma = ORI_SIG_FCTR * kp.scl_octv;
    let mut hist = [0.0f32; ORI_BINS];
    for dy in -radius..=radius {
        let y = kp.y as isize + dy;
        if y <= 0 || y >= img.height as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = kp.x as isize + dx;
            if x <= 0 || x >= img.width as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, x as usize, y as usize);
            let w = (-((dx * dx + dy * dy) as f32) / (2.0 * sigma * sigma)).exp();
            let ang = gy.atan2(gx).to_degrees().rem_euclid(360.0);
            let bin = ((ang * ORI_BINS as f32 / 360.0).round() as usize) % ORI_BINS;
            hist[bin] += w * (gx * gx + gy * gy).sqrt();
        }
    }
    let n = ORI_BINS;
    let smooth: Vec<f32> = (0..n)
        .map(|i| {
            (hist[(i + n - 2) % n] + hist[(i + 2) % n]) * (1.0 / 16.0)
                + (hist[(i + n - 1) % n] + hist[(i + 1) % n]) * (4.0 / 16.0)
                + hist[i] * (6.0 / 16.0)
        })
        .collect();
    let max = smooth.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let (l, r) = (smooth[(i + n - 1) % n], smooth[(i + 1) % n]);
        let v = smooth[i];
        if v > l && v > r && v >= max * ORI_PEAK_RATIO {
            let bin = i as f32 + 0.5 * (l - r) / (l - 2.0 * v + r);
            let bin = bin.rem_euclid(n as f32);
            out.push(bin * 360.0 / n as f32);
        }
    }
    out
}

fn descriptor(img: &Plane, kp: &Keypoint) -> Vec<f32> {
    let d = DESCR_WIDTH;
    let n = DESCR_BINS;
    let hist_width = DESCR_SCL_FCTR * kp.scl_octv;
    let radius = ((hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round() as isize)
        .min(((img.width * img.width + img.height * img.height) as f32).sqrt() as isize);
    let ang = kp.angle.to_radians();
    let (sin_t, cos_t) = (ang.sin() / hist_width, ang.cos() / hist_width);
    let exp_scale = -1.0 / (d as f32 * d as f32 * 0.5);
    let bins_per_rad = n as f32 / (2.0 * PI);
    let mut hist = vec![0.0f32; (d + 2) * (d + 2) * (n + 2)];
    let idx = |r: usize, c: usize, o: usize| (r * (d + 2) + c) * (n + 2) + o;
    for i in -radius..=radius {
        for j in -radius..=radius {
            // rotate into the keypoint frame (y up)
            let c_rot = j as f32 * cos_t - i as f32 * sin_t;
            let r_rot = j as f32 * sin_t + i as f32 * cos_t;
            let rbin = r_rot + d as f32 / 2.0 - 0.5;
            let cbin = c_rot + d as f32 / 2.0 - 0.5;
            let (y, x) = (kp.y as isize + i, kp.x as isize + j);
            if rbin <= -1.0 || rbin >= d as f32 || cbin <= -1.0 || cbin >= d as f32 {
                continue;
            }
            if y <= 0 || y >= img.height as isize - 1 || x <= 0 || x >= img.width as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, x as usize, y as usize);
            let mag = (gx * gx + gy * gy).sqrt() * ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let obin = ((gy.atan2(gx) - ang).rem_euclid(2.0 * PI)) * bins_per_rad;
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 as isize + 1) as usize, (c0 as isize + 1) as usize);
            let o0 = (o0 as usize) % n;
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    for (dob, wo) in [(0, 1.0 - fo), (1, fo)] {
                        hist[idx(r0 + dr, c0 + dc, o0 + dob)] += mag * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(SIFT_LEN);
    for r in 0..d {
        for c in 0..d {
            // fold the wrap-around orientation bin back
            let base = idx(r + 1, c + 1, 0);
            hist[base] += hist[base + n];
            for o in 0..n {
                out.push(hist[base + o]);
            }
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        let thr = norm * DESCR_MAG_THR;
        out.iter_mut().for_each(|v| *v = v.min(thr));
        let norm2 = out.iter().map(|v| v * v).sum::<f32>().sqrt().max(f32::EPSILON);
        out.iter_mut().for_each(|v| *v /= norm2);
    }
    out
}

/// Descriptors of every keypoint in a grayscale image with values in 0..=255.
pub fn sift_descriptors(gray: &Plane, p: &SiftParams) -> Vec<Vec<f32>> {
    let unit = Plane {
        width: gray.width,
        height: gray.height,
        data: gray.data.iter().map(|v| v / 255.0).collect(),
    };
    let up = upsample2(&unit);
    let sig_diff = (p.sigma * p.sigma - 4.0 * INIT_SIGMA * INIT_SIGMA).max(0.01).sqrt();
    let base = gaussian_blur(&up, sig_diff);
    let min_side = base.width.min(base.height);
    if min_side < 4 * IMG_BORDER {
        return Vec::new();
    }
    let n_octaves = (((min_side as f32).log2().round() as isize) - 2).max(1) as usize;
    let n_octaves = (0..n_octaves).take_while(|o| (min_side >> o) > 2 * IMG_BORDER + 2).count();
    let pyr = build_pyramid(&base, n_octaves, p);
    let s = p.n_octave_layers;
    let threshold = 0.5 * p.contrast_threshold / s as f32;
    let mut out = Vec::new();
    for o in 0..n_octaves {
        let dog = &pyr.dog[o];
        let (w, h) = (dog[0].width, dog[0].height);
        for layer in 1..=s {
            for y in IMG_BORDER..h - IMG_BORDER {
                for x in IMG_BORDER..w - IMG_BORDER {
                    if !is_extremum(dog, layer, x, y, threshold) {
                        continue;
                    }
                    let Some(mut kp) = refine(&pyr, o, layer, x, y, p) else {
                        continue;
                    };
                    let img = &pyr.gauss[o][kp.layer];
                    for angle in orientations(img, &kp) {
                        kp.angle = angle;
                        out.push(descriptor(img, &kp));
                    }
                }
            }
        }
    }
    out
}
