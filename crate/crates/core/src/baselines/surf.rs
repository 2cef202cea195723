//! Box-filter Hessian keypoints with 64-d Haar-wavelet descriptors, using
//! the customary defaults (Hessian threshold 100, 4 octaves, 3 layers).

use std::f64::consts::PI;

use crate::imaging::Plane;

pub const SURF_LEN: usize = 64;

const BASE_SIZE: usize = 9;
const SIZE_INC: usize = 6;
const ORI_RADIUS: isize = 6;
const ORI_WINDOW: f64 = PI / 3.0;
const ORI_STEP_DEG: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfParams {
    pub hessian_threshold: f64,
    pub n_octaves: usize,
    pub n_octave_layers: usize,
}

impl Default for SurfParams {
    fn default() -> Self {
        SurfParams {
            hessian_threshold: 100.0,
            n_octaves: 4,
            n_octave_layers: 3,
        }
    }
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    h: usize,
    sum: Vec<f64>,
}

impl Integral {
    fn new(img: &Plane) -> Self {
        let (w, h) = (img.width, img.height);
        let mut sum = vec![0.0f64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += img.get(x, y) as f64;
                sum[(y + 1) * (w + 1) + x + 1] = sum[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { w, h, sum }
    }

    /// Sum over `[x0, x1) × [y0, y1)`, clipped to the image.
    fn rect(&self, x0: isize, y0: isize, x1: isize, y1: isize) -> f64 {
        let cx = |v: isize| v.clamp(0, self.w as isize) as usize;
        let cy = |v: isize| v.clamp(0, self.h as isize) as usize;
        let (x0, x1, y0, y1) = (cx(x0), cx(x1), cy(y0), cy(y1));
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let s = |x: usize, y: usize| self.sum[y * (self.w + 1) + x];
        s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0)
    }

    /// Haar responses of side `size` centered at (x, y).
    fn haar(&self, x: isize, y: isize, size: isize) -> (f64, f64) {
        let h = size / 2;
        let dx = self.rect(x, y - h, x + h, y + h) - self.rect(x - h, y - h, x, y + h);
        let dy = self.rect(x - h, y, x + h, y + h) - self.rect(x - h, y - h, x + h, y);
        (dx, dy)
    }
}

/// `(x0, y0, x1, y1, weight)` on the 9×9 template.
type Lobe = (f64, f64, f64, f64, f64);
const DXX: [Lobe; 3] = [(0.0, 2.0, 3.0, 7.0, 1.0), (3.0, 2.0, 6.0, 7.0, -2.0), (6.0, 2.0, 9.0, 7.0, 1.0)];
const DYY: [Lobe; 3] = [(2.0, 0.0, 7.0, 3.0, 1.0), (2.0, 3.0, 7.0, 6.0, -2.0), (2.0, 6.0, 7.0, 9.0, 1.0)];
const DXY: [Lobe; 4] = [(1.0, 1.0, 4.0, 4.0, 1.0), (5.0, 1.0, 8.0, 4.0, -1.0), (1.0, 5.0, 4.0, 8.0, -1.0), (5.0, 5.0, 8.0, 8.0, 1.0)];

fn scaled(lobes: &[Lobe], size: usize) -> Vec<(isize, isize, isize, isize, f64)> {
    let r = size as f64 / BASE_SIZE as f64;
    lobes
        .iter()
        .map(|&(x0, y0, x1, y1, w)| ((x0 * r).round() as isize, (y0 * r).round() as isize, (x1 * r).round() as isize, (y1 * r).round() as isize, w))
        .collect()
}

struct Layer {
    size: usize,
    det: Vec<f64>,
}

fn hessian_layer(ii: &Integral, size: usize, step: usize, gw: usize, gh: usize) -> Layer {
    let (dxx, dyy, dxy) = (scaled(&DXX, size), scaled(&DYY, size), scaled(&DXY, size));
    let norm = 1.0 / (size * size) as f64;
    let half = (size / 2) as isize;
    let mut det = vec![0.0f64; gw * gh];
    for gy in 0..gh {
        for gx in 0..gw {
            let (cx, cy) = ((gx * step) as isize, (gy * step) as isize);
            let (x0, y0) = (cx - half, cy - half);
            if x0 < 0 || y0 < 0 || x0 + size as isize > ii.w as isize || y0 + size as isize > ii.h as isize {
                continue;
            }
            let apply = |lobes: &[(isize, isize, isize, isize, f64)]| -> f64 {
                lobes.iter().map(|&(a, b, c, d, w)| w * ii.rect(x0 + a, y0 + b, x0 + c, y0 + d)).sum::<f64>() * norm
            };
            let (xx, yy, xy) = (apply(&dxx), apply(&dyy), apply(&dxy));
            det[gy * gw + gx] = xx * yy - 0.81 * xy * xy;
        }
    }
    Layer { size, det }
}

struct Keypoint {
    x: f64,
    y: f64,
    /// Scale `s` such that the 9×9 filter has s = 1.2.
    scale: f64,
}

fn detect(ii: &Integral, p: &SurfParams) -> Vec<Keypoint> {
    let mut out = Vec::new();
    let n_layers = p.n_octave_layers + 2;
    for o in 0..p.n_octaves {
        let step = 1usize << o;
        let (gw, gh) = (ii.w.div_ceil(step), ii.h.div_ceil(step));
        if gw < 3 || gh < 3 {
            break;
        }
        let layers: Vec<Layer> = (0..n_layers).map(|l| hessian_layer(ii, (BASE_SIZE + SIZE_INC * l) << o, step, gw, gh)).collect();
        for l in 1..n_layers - 1 {
            let margin = (layers[l + 1].size / 2) / step + 1;
            if gw <= 2 * margin || gh <= 2 * margin {
                continue;
            }
            for gy in margin..gh - margin {
                for gx in margin..gw - margin {
                    let v = layers[l].det[gy * gw + gx];
                    if v <= p.hessian_threshold {
                        continue;
                    }
                    let mut is_max = true;
                    'nb: for layer in &layers[l - 1..=l + 1] {
                        for yy in gy - 1..=gy + 1 {
                            for xx in gx - 1..=gx + 1 {
                                let n = layer.det[yy * gw + xx];
                                if n > v || (n == v && !(std::ptr::eq(layer, &layers[l]) && xx == gx && yy == gy) && (yy, xx) < (gy, gx)) {
                                    is_max = false;
                                    break 'nb;
                                }
                            }
                        }
                    }
                    if !is_max {
                        continue;
                    }
                    let d = |dl: isize, dx: isize, dy: isize| {
                        layers[(l as isize + dl) as usize].det[(gy as isize + dy) as usize * gw + (gx as isize + dx) as usize]
                    };
                    let g = [(d(0, 1, 0) - d(0, -1, 0)) / 2.0, (d(0, 0, 1) - d(0, 0, -1)) / 2.0, (d(1, 0, 0) - d(-1, 0, 0)) / 2.0];
                    let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
                    let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
                    let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
                    let dxy = (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1)) / 4.0;
                    let dxs = (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0)) / 4.0;
                    let dys = (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1)) / 4.0;
                    let Some(off) = solve3([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]], g) else {
                        continue;
                    };
                    let off = [-off[0], -off[1], -off[2]];
                    if off.iter().any(|v| v.abs() > 1.0) {
                        continue;
                    }
                    let size = layers[l].size as f64 + off[2] * (SIZE_INC << o) as f64;
                    out.push(Keypoint {
                        x: (gx as f64 + off[0]) * step as f64,
                        y: (gy as f64 + off[1]) * step as f64,
                        scale: 1.2 * size / BASE_SIZE as f64,
                    });
                }
            }
        }
    }
    out
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> Option<[f64; 3]> {
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(h);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = g[r];
        }
        *xc = det3(m) / det;
    }
    Some(x)
}

fn gauss(dx: f64, dy: f64, sigma: f64) -> f64 {
    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
}

/// Dominant direction in radians (image axes, y down).
fn orientation(ii: &Integral, kp: &Keypoint) -> f64 {
    let s = kp.scale;
    let haar = ((4.0 * s).round() as isize).max(2);
    let mut samples = Vec::new();
    for i in -ORI_RADIUS..=ORI_RADIUS {
        for j in -ORI_RADIUS..=ORI_RADIUS {
            if i * i + j * j >= ORI_RADIUS * ORI_RADIUS {
                continue;
            }
            let x = (kp.x + j as f64 * s).round() as isize;
            let y = (kp.y + i as f64 * s).round() as isize;
            let (dx, dy) = ii.haar(x, y, haar);
            let w = gauss(j as f64, i as f64, 2.5);
            let (dx, dy) = (dx * w, dy * w);
            if dx != 0.0 || dy != 0.0 {
                samples.push((dy.atan2(dx).rem_euclid(2.0 * PI), dx, dy));
            }
        }
    }
    let mut best = (0.0f64, 0.0f64);
    for k in (0..360).step_by(ORI_STEP_DEG) {
        let start = (k as f64).to_radians();
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(a, dx, dy) in &samples {
            let rel = (a - start).rem_euclid(2.0 * PI);
            if rel < ORI_WINDOW {
                sx += dx;
                sy += dy;
            }
        }
        let m = sx * sx + sy * sy;
        if m > best.0 {
            best = (m, sy.atan2(sx));
        }
    }
    best.1
}

fn descriptor(ii: &Integral, kp: &Keypoint, angle: f64) -> Vec<f32> {
    let s = kp.scale;
    let (sin, cos) = angle.sin_cos();
    let haar = ((2.0 * s).round() as isize).max(2);
    let mut out = Vec::with_capacity(SURF_LEN);
    for by in 0..4 {
        for bx in 0..4 {
            let mut acc = [0.0f64; 4];
            for sy in 0..5 {
                for sx in 0..5 {
                    // sample position in the keypoint frame, units of s
                    let u = (bx * 5 + sx) as f64 - 9.5;
                    let v = (by * 5 + sy) as f64 - 9.5;
                    let x = kp.x + s * (u * cos - v * sin);
                    let y = kp.y + s * (u * sin + v * cos);
                    let (rx, ry) = ii.haar(x.round() as isize, y.round() as isize, haar);
                    let w = gauss(u, v, 3.3);
                    let du = w * (rx * cos + ry * sin);
                    let dv = w * (-rx * sin + ry * cos);
                    acc[0] += du;
                    acc[1] += du.abs();
                    acc[2] += dv;
                    acc[3] += dv.abs();
                }
            }
            out.extend(acc.iter().map(|&v| v as f32));
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Descriptors of every keypoint in a grayscale image with values in 0..=255.
pub fn surf_descriptors(gray: &Plane, p: &SurfParams) -> Vec<Vec<f32>> {
    let ii = Integral::new(gray);
    detect(&ii, p)
        .iter()
        .map(|kp| descriptor(&ii, kp, orientation(&ii, kp)))
        .collect()
}
