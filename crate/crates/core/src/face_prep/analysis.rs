//! Pixel-level face analysis behind the built-in detector and landmarker.
//!
//! Skin is segmented with a fixed RGB rule; each large skin component is a
//! face candidate, and the non-skin holes enclosed by it are its features.
//! Feature centers and axes come from coverage-weighted moments, so
//! anti-aliased shapes resolve to sub-pixel positions.

use image::RgbImage;

use crate::imaging::Point;
use crate::synth::NOSTRIL_DROP;

pub(crate) const MIN_FACE_AREA: usize = 1500;
const REFERENCE_FACE_AREA: f64 = 12000.0;
const MIN_HOLE_AREA: usize = 4;
const LIP_RED_RATIO: f32 = 0.53;

#[inline]
pub(crate) fn is_skin(p: [u8; 3]) -> bool {
    let (r, g, b) = (p[0] as f32, p[1] as f32, p[2] as f32);
    r > 97.0 && g > 0.45 * r && r > b + 30.0 && r > g + 15.0
}

/// Coverage-weighted second-order shape summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub center: Point,
    /// Unit major axis.
    pub major: Point,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub area: usize,
}

impl Shape {
    /// Major axis flipped, if needed, to point along `dir`.
    pub fn major_along(&self, dir: Point) -> Point {
        if self.major.dot(dir) < 0.0 {
            self.major.scale(-1.0)
        } else {
            self.major
        }
    }
}

#[derive(Default)]
struct Moments {
    w: f64,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
    yy: f64,
}

impl Moments {
    fn add(&mut self, x: f64, y: f64, w: f64) {
        self.w += w;
        self.x += w * x;
        self.y += w * y;
        self.xx += w * x * x;
        self.xy += w * x * y;
        self.yy += w * y * y;
    }

    fn center(&self) -> Point {
        Point::new(self.x / self.w, self.y / self.w)
    }

    /// (cxx, cxy, cyy) with the pixel-box variance removed.
    fn covariance(&self) -> (f64, f64, f64) {
        let c = self.center();
        let cxx = self.xx / self.w - c.x * c.x - 1.0 / 12.0;
        let cxy = self.xy / self.w - c.x * c.y;
        let cyy = self.yy / self.w - c.y * c.y - 1.0 / 12.0;
        (cxx, cxy, cyy)
    }

    fn variance_along(&self, dir: Point) -> f64 {
        let (cxx, cxy, cyy) = self.covariance();
        dir.x * dir.x * cxx + 2.0 * dir.x * dir.y * cxy + dir.y * dir.y * cyy
    }

    fn shape(&self, area: usize) -> Shape {
        let (cxx, cxy, cyy) = self.covariance();
        let tr = cxx + cyy;
        let det = cxx * cyy - cxy * cxy;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let l1 = (tr / 2.0 + disc).max(0.0);
        let l2 = (tr / 2.0 - disc).max(0.0);
        let major = if cxy.abs() > 1e-12 {
            Point::new(l1 - cyy, cxy).normalized()
        } else if cxx >= cyy {
            Point::new(1.0, 0.0)
        } else {
            Point::new(0.0, 1.0)
        };
        Shape {
            center: self.center(),
            major,
            semi_major: 2.0 * l1.sqrt(),
            semi_minor: 2.0 * l2.sqrt(),
            area,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaceAnalysis {
    /// x_min, y_min, x_max, y_max of the skin component.
    pub bbox: [f64; 4],
    pub face_center: Point,
    pub face_half_w: f64,
    pub face_half_h: f64,
    pub up: Point,
    pub right: Point,
    /// Image-left first in each pair.
    pub eyes: [Shape; 2],
    pub brows: [Shape; 2],
    pub nostrils: [Shape; 2],
    pub mouth: Shape,
    pub confidence: f64,
}

impl FaceAnalysis {
    pub fn nose_tip(&self) -> Point {
        let mid = self.nostrils[0].center.lerp(self.nostrils[1].center, 0.5);
        let spacing = self.nostrils[0].center.dist(self.nostrils[1].center);
        mid.add(self.up.scale(NOSTRIL_DROP * spacing))
    }

    pub fn mouth_corners(&self) -> [Point; 2] {
        let axis = self.mouth.major_along(self.right).scale(self.mouth.semi_major);
        [self.mouth.center.sub(axis), self.mouth.center.add(axis)]
    }

    pub fn landmarks5(&self) -> [Point; 5] {
        let [ml, mr] = self.mouth_corners();
        [self.eyes[0].center, self.eyes[1].center, self.nose_tip(), ml, mr]
    }
}

fn components(mask: &[bool], w: usize, h: usize, eight: bool) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

fn channel_median(values: impl Iterator<Item = [u8; 3]>) -> [f32; 3] {
    let mut hist = [[0usize; 256]; 3];
    let mut n = 0usize;
    for v in values {
        for k in 0..3 {
            hist[k][v[k] as usize] += 1;
        }
        n += 1;
    }
    let mut out = [0.0f32; 3];
    for k in 0..3 {
        let mut acc = 0;
        for (i, c) in hist[k].iter().enumerate() {
            acc += c;
            if 2 * acc >= n {
                out[k] = i as f32;
                break;
            }
        }
    }
    out
}

struct Hole {
    pixels: Vec<usize>,
    color: [f32; 3],
}

/// Every face candidate that yields a complete feature set.
pub fn analyze(img: &RgbImage) -> Vec<FaceAnalysis> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let pix = |i: usize| -> [u8; 3] { [raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]] };
    let skin: Vec<bool> = (0..w * h).map(|i| is_skin(pix(i))).collect();
    let (labels, n) = components(&skin, w, h, false);
    let mut areas = vec![0usize; n + 1];
    let mut bbox = vec![[usize::MAX, usize::MAX, 0usize, 0usize]; n + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let l = l as usize;
        areas[l] += 1;
        let (x, y) = (i % w, i / w);
        let b = &mut bbox[l];
        b[0] = b[0].min(x);
        b[1] = b[1].min(y);
        b[2] = b[2].max(x);
        b[3] = b[3].max(y);
    }
    let mut out = Vec::new();
    for label in 1..=n {
        if areas[label] < MIN_FACE_AREA {
            continue;
        }
        if let Some(f) = analyze_component(img, &labels, label as u32, bbox[label], w, h) {
            out.push(f);
        }
    }
    out
}

fn analyze_component(img: &RgbImage, labels: &[u32], label: u32, bb: [usize; 4], w: usize, _h: usize) -> Option<FaceAnalysis> {
    let raw = img.as_raw();
    let pix = |i: usize| -> [u8; 3] { [raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]] };
    let (x0, y0, x1, y1) = (bb[0], bb[1], bb[2], bb[3]);
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let gi = |lx: usize, ly: usize| (y0 + ly) * w + (x0 + lx);
    let member: Vec<bool> = (0..bw * bh).map(|k| labels[gi(k % bw, k / bw)] == label).collect();

    // flood the complement from the bbox border; what stays dry is enclosed
    let mut outside = vec![false; bw * bh];
    let mut stack: Vec<usize> = Vec::new();
    for lx in 0..bw {
        for ly in [0, bh - 1] {
            let k = ly * bw + lx;
            if !member[k] && !outside[k] {
                outside[k] = true;
                stack.push(k);
            }
        }
    }
    for ly in 0..bh {
        for lx in [0, bw - 1] {
            let k = ly * bw + lx;
            if !member[k] && !outside[k] {
                outside[k] = true;
                stack.push(k);
            }
        }
    }
    while let Some(k) = stack.pop() {
        let (lx, ly) = (k % bw, k / bw);
        let nbrs = [
            (lx.wrapping_sub(1), ly),
            (lx + 1, ly),
            (lx, ly.wrapping_sub(1)),
            (lx, ly + 1),
        ];
        for (nx, ny) in nbrs {
            if nx >= bw || ny >= bh {
                continue;
            }
            let j = ny * bw + nx;
            if !member[j] && !outside[j] {
                outside[j] = true;
                stack.push(j);
            }
        }
    }
    let hole_mask: Vec<bool> = (0..bw * bh).map(|k| !member[k] && !outside[k]).collect();

    let mut filled = Moments::default();
    let mut filled_area = 0usize;
    for k in 0..bw * bh {
        if member[k] || hole_mask[k] {
            filled.add((x0 + k % bw) as f64, (y0 + k / bw) as f64, 1.0);
            filled_area += 1;
        }
    }
    let skin_ref = channel_median((0..bw * bh).filter(|&k| member[k]).map(|k| pix(gi(k % bw, k / bw))));

    let (hl, hn) = components(&hole_mask, bw, bh, true);
    let mut holes: Vec<Hole> = (0..hn).map(|_| Hole { pixels: Vec::new(), color: [0.0; 3] }).collect();
    for (k, &l) in hl.iter().enumerate() {
        if l > 0 {
            holes[l as usize - 1].pixels.push(k);
        }
    }
    holes.retain(|h| h.pixels.len() >= MIN_HOLE_AREA);
    for hole in holes.iter_mut() {
        let set: std::collections::HashSet<usize> = hole.pixels.iter().copied().collect();
        let interior: Vec<usize> = hole
            .pixels
            .iter()
            .copied()
            .filter(|&k| {
                let (lx, ly) = (k % bw, k / bw);
                lx > 0 && ly > 0 && set.contains(&(k - 1)) && set.contains(&(k + 1)) && set.contains(&(k - bw)) && set.contains(&(k + bw)) && lx + 1 < bw && ly + 1 < bh
            })
            .collect();
        let src = if interior.is_empty() { &hole.pixels } else { &interior };
        let mut acc = [0.0f32; 3];
        for &k in src {
            let p = pix(gi(k % bw, k / bw));
            for c in 0..3 {
                acc[c] += p[c] as f32;
            }
        }
        hole.color = acc.map(|v| v / src.len() as f32);
    }

    let weighted_shape = |hole: &Hole| -> Shape {
        let f = hole.color;
        let d = [f[0] - skin_ref[0], f[1] - skin_ref[1], f[2] - skin_ref[2]];
        let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let weight = |k: usize| -> f64 {
            let p = pix(gi(k % bw, k / bw));
            let t = ((p[0] as f32 - skin_ref[0]) * d[0] + (p[1] as f32 - skin_ref[1]) * d[1] + (p[2] as f32 - skin_ref[2]) * d[2]) / dd.max(1e-6);
            t.clamp(0.0, 1.0) as f64
        };
        let mut m = Moments::default();
        let mut region: Vec<usize> = hole.pixels.clone();
        let set: std::collections::HashSet<usize> = hole.pixels.iter().copied().collect();
        let mut ring = std::collections::BTreeSet::new();
        for &k in &hole.pixels {
            let (lx, ly) = ((k % bw) as isize, (k / bw) as isize);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (lx + dx, ly + dy);
                    if nx < 0 || ny < 0 || nx >= bw as isize || ny >= bh as isize {
                        continue;
                    }
                    let j = ny as usize * bw + nx as usize;
                    if member[j] && !set.contains(&j) {
                        ring.insert(j);
                    }
                }
            }
        }
        region.extend(ring);
        for k in region {
            let wgt = weight(k);
            if wgt > 0.0 {
                m.add((x0 + k % bw) as f64, (y0 + k / bw) as f64, wgt);
            }
        }
        m.shape(hole.pixels.len())
    };

    let red_ratio = |c: [f32; 3]| c[0] / (c[0] + c[1] + c[2]).max(1.0);
    let mut lips: Vec<&Hole> = holes.iter().filter(|h| red_ratio(h.color) >= LIP_RED_RATIO).collect();
    lips.sort_by_key(|h| std::cmp::Reverse(h.pixels.len()));
    let mouth_hole = *lips.first()?;
    let mut dark: Vec<&Hole> = holes.iter().filter(|h| red_ratio(h.color) < LIP_RED_RATIO).collect();
    // ghosted brows of a morph may fade into the skin; eyes and nostrils suffice
    if dark.len() < 4 {
        return None;
    }
    let has_brows = dark.len() >= 6;
    let extra = dark.len().saturating_sub(6) + lips.len() - 1;
    dark.sort_by_key(|h| std::cmp::Reverse(h.pixels.len()));
    dark.truncate(6);

    let mouth = weighted_shape(mouth_hole);
    let face_center = filled.center();
    let up0 = face_center.sub(mouth.center).normalized();
    let mut dark_shapes: Vec<Shape> = dark.iter().map(|h| weighted_shape(h)).collect();
    dark_shapes.sort_by(|a, b| {
        let pa = a.center.sub(mouth.center).dot(up0);
        let pb = b.center.sub(mouth.center).dot(up0);
        pa.partial_cmp(&pb).unwrap()
    });
    let eye_mid = dark_shapes[2].center.lerp(dark_shapes[3].center, 0.5);
    let up = eye_mid.sub(mouth.center).normalized();
    let right = up.perp();
    let order = |a: Shape, b: Shape| -> [Shape; 2] {
        if a.center.dot(right) <= b.center.dot(right) {
            [a, b]
        } else {
            [b, a]
        }
    };
    let nostrils = order(dark_shapes[0], dark_shapes[1]);
    let eyes = order(dark_shapes[2], dark_shapes[3]);
    let brows = if has_brows {
        order(dark_shapes[4], dark_shapes[5])
    } else {
        let lift = up.scale(0.3 * eye_mid.dist(mouth.center));
        eyes.map(|e| Shape {
            center: e.center.add(lift),
            ..e
        })
    };

    let var_r = filled.variance_along(right).max(0.0);
    let var_u = filled.variance_along(up).max(0.0);
    let half_w = 2.0 * var_r.sqrt();
    let half_h = 2.0 * var_u.sqrt();

    let fill = filled_area as f64 / (std::f64::consts::PI * half_w * half_h).max(1.0);
    let q_fill = (1.0 - 3.0 * (fill - 1.0).abs()).clamp(0.0, 1.0);
    let q_size = (filled_area as f64 / REFERENCE_FACE_AREA).min(1.0);
    let q_parts = 0.85f64.powi(extra as i32) * if has_brows { 1.0 } else { 0.5 };
    let d0 = eyes[0].center.dist(mouth.center);
    let d1 = eyes[1].center.dist(mouth.center);
    let q_sym = (1.0 - 2.0 * (1.0 - d0.min(d1) / d0.max(d1))).clamp(0.0, 1.0);
    let confidence = (q_fill * q_size * q_parts * q_sym).clamp(0.0, 1.0);

    Some(FaceAnalysis {
        bbox: [x0 as f64, y0 as f64, x1 as f64, y1 as f64],
        face_center,
        face_half_w: half_w,
        face_half_h: half_h,
        up,
        right,
        eyes,
        brows,
        nostrils,
        mouth,
        confidence,
    })
}
