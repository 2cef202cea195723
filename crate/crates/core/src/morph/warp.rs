use image::RgbImage;

use super::landmarks::{LandmarkSet, INNER_FACE_START};
use super::triangulate::{border_points, triangulate};
use crate::error::{Error, Result};
use crate::imaging::{quantize, sample_bilinear_rgb, Point};

/// Radius of the splice feather band, pixels.
pub const FEATHER_RADIUS: f64 = 11.0;
/// Gaussian sigma of the feather falloff; the band edge sits at 3 sigma.
pub const FEATHER_SIGMA: f64 = FEATHER_RADIUS / 3.0;

/// Landmarks plus the eight border anchors.
pub fn anchored(lm: &LandmarkSet) -> Vec<Point> {
    let mut pts = lm.points.clone();
    pts.extend(border_points(lm.image_size.0, lm.image_size.1));
    pts
}

struct Affine {
    origin: Point,
    e1: Point,
    e2: Point,
}

/// Barycentric coordinates of `p` in triangle (a, b, c), or `None` for a degenerate triangle.
fn barycentric(p: Point, a: Point, b: Point, c: Point) -> Option<(f64, f64, f64)> {
    let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if det.abs() < 1e-12 {
        return None;
    }
    let l1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / det;
    let l2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / det;
    Some((1.0 - l1 - l2, l1, l2))
}

/// Triangle-wise affine warp of both sources onto the alpha-averaged
/// landmarks, followed by an alpha blend.
pub fn warp_blend(img_a: &RgbImage, lm_a: &LandmarkSet, img_b: &RgbImage, lm_b: &LandmarkSet, alpha: f64) -> Result<RgbImage> {
    if img_a.dimensions() != img_b.dimensions() {
        return Err(Error::shape(format!("{:?}", img_a.dimensions()), format!("{:?}", img_b.dimensions())));
    }
    if lm_a.image_size != img_a.dimensions() || lm_b.image_size != img_b.dimensions() {
        return Err(Error::shape("landmarks sized for the image", format!("{:?}/{:?}", lm_a.image_size, lm_b.image_size)));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside [0,1]")));
    }
    let (w, h) = img_a.dimensions();
    let pa = anchored(lm_a);
    let pb = anchored(lm_b);
    let avg: Vec<Point> = pa.iter().zip(&pb).map(|(a, b)| a.lerp(*b, alpha)).collect();
    let triangles = triangulate(&avg)?;

    let alpha32 = alpha as f32;
    let mut out = RgbImage::new(w, h);
    let mut done = vec![false; (w * h) as usize];
    let source = |pts: &[Point], t: &[usize; 3]| Affine {
        origin: pts[t[0]],
        e1: pts[t[1]].sub(pts[t[0]]),
        e2: pts[t[2]].sub(pts[t[0]]),
    };
    for t in &triangles {
        let (q0, q1, q2) = (avg[t[0]], avg[t[1]], avg[t[2]]);
        let sa = source(&pa, t);
        let sb = source(&pb, t);
        let x0 = q0.x.min(q1.x).min(q2.x).floor().max(0.0) as u32;
        let x1 = (q0.x.max(q1.x).max(q2.x).ceil() as u32).min(w - 1);
        let y0 = q0.y.min(q1.y).min(q2.y).floor().max(0.0) as u32;
        let y1 = (q0.y.max(q1.y).max(q2.y).ceil() as u32).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let idx = (y * w + x) as usize;
                if done[idx] {
                    continue;
                }
                let p = Point::new(x as f64, y as f64);
                let Some((_, l1, l2)) = barycentric(p, q0, q1, q2) else {
                    continue;
                };
                let tol = -1e-9;
                if l1 < tol || l2 < tol || 1.0 - l1 - l2 < tol {
                    continue;
                }
                let at = |s: &Affine| s.origin.add(s.e1.scale(l1)).add(s.e2.scale(l2));
                let ca = at(&sa);
                let cb = at(&sb);
                let va = sample_bilinear_rgb(img_a, ca.x, ca.y);
                let vb = sample_bilinear_rgb(img_b, cb.x, cb.y);
                let px = out.get_pixel_mut(x, y);
                for k in 0..3 {
                    px[k] = quantize((1.0 - alpha32) * va[k] + alpha32 * vb[k]);
                }
                done[idx] = true;
            }
        }
    }
    for (idx, d) in done.iter().enumerate() {
        if !d {
            let (x, y) = (idx as u32 % w, idx as u32 / w);
            let (a, b) = (img_a.get_pixel(x, y), img_b.get_pixel(x, y));
            let px = out.get_pixel_mut(x, y);
            for k in 0..3 {
                px[k] = quantize((1.0 - alpha32) * a[k] as f32 + alpha32 * b[k] as f32);
            }
        }
    }
    Ok(out)
}

/// Counter-clockwise (in y-up terms) convex hull, collinear boundary points dropped.
pub(crate) fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Signed distance from `p` to a convex polygon: negative or zero inside.
fn hull_distance(hull: &[Point], p: Point) -> f64 {
    let n = hull.len();
    let mut inside = true;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let ab = b.sub(a);
        let ap = p.sub(a);
        if ab.x * ap.y - ab.y * ap.x < 0.0 {
            inside = false;
        }
        let t = (ap.dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        best = best.min(a.add(ab.scale(t)).dist(p));
    }
    if inside {
        -best
    } else {
        best
    }
}

/// Per-pixel splice weight of the morph: 1 inside the inner-face hull of
/// `recipient_lm`, Gaussian falloff over the feather band, 0 beyond.
pub fn splice_mask(recipient_lm: &LandmarkSet) -> Result<Vec<f32>> {
    let hull = convex_hull(&recipient_lm.points[INNER_FACE_START..]);
    if hull.len() < 3 {
        return Err(Error::InvalidInput("empty splice hull".into()));
    }
    let (w, h) = recipient_lm.image_size;
    let mut mask = vec![0.0f32; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let d = hull_distance(&hull, Point::new(x as f64, y as f64));
            mask[(y * w + x) as usize] = if d <= 0.0 {
                1.0
            } else if d <= FEATHER_RADIUS {
                (-(d * d) / (2.0 * FEATHER_SIGMA * FEATHER_SIGMA)).exp() as f32
            } else {
                0.0
            };
        }
    }
    Ok(mask)
}

/// Pastes the inner face of `complete_morph` into the recipient image.
pub fn splice_morph(complete_morph: &RgbImage, recipient_img: &RgbImage, recipient_lm: &LandmarkSet) -> Result<RgbImage> {
    if complete_morph.dimensions() != recipient_img.dimensions() {
        return Err(Error::shape(format!("{:?}", recipient_img.dimensions()), format!("{:?}", complete_morph.dimensions())));
    }
    let mask = splice_mask(recipient_lm)?;
    let mut out = recipient_img.clone();
    for (i, (o, m)) in out.pixels_mut().zip(complete_morph.pixels()).enumerate() {
        let wgt = mask[i];
        if wgt == 0.0 {
            continue;
        }
        if wgt == 1.0 {
            *o = *m;
            continue;
        }
        for k in 0..3 {
            o[k] = quantize(wgt * m[k] as f32 + (1.0 - wgt) * o[k] as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
            Point::new(1.0, 1.0),
        ];
        assert_eq!(convex_hull(&pts).len(), 4);
        let hull = convex_hull(&pts);
        assert!(hull_distance(&hull, Point::new(1.0, 1.0)) < 0.0);
        assert!((hull_distance(&hull, Point::new(5.0, 1.0)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn barycentric_reconstructs_the_point() {
        let (a, b, c) = (Point::new(0.0, 0.0), Point::new(4.0, 1.0), Point::new(1.0, 3.0));
        let p = Point::new(1.5, 1.2);
        let (l0, l1, l2) = barycentric(p, a, b, c).unwrap();
        let q = a.scale(l0).add(b.scale(l1)).add(c.scale(l2));
        assert!(q.dist(p) < 1e-12);
    }
}
