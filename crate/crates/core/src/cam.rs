//! Gradient-weighted class activation maps of the pair distance, and the
//! upper-face CAM distance used to compare the two towers' attention.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::embedding::Backbone;
use crate::error::{Error, Result};
use crate::imaging::Plane;

/// Fraction of rows at the bottom of the face ignored by [`cam_distance`].
pub const DEFAULT_EXCLUDE_LOWER: f64 = 0.45;
/// Layer used when none is requested.
pub const DEFAULT_LAYER: &str = "block4";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub width: usize,
    pub height: usize,
    /// Row-major values in [0, 1].
    pub grid: Vec<f32>,
    pub layer_tag: String,
    pub face_ref: String,
}

impl ActivationMap {
    /// Bilinear resize (pixel-center aligned) to `side × side`.
    pub fn upsampled(&self, side: usize) -> ActivationMap {
        let plane = Plane {
            width: self.width,
            height: self.height,
            data: self.grid.clone(),
        };
        let sx = self.width as f64 / side as f64;
        let sy = self.height as f64 / side as f64;
        let up = Plane::from_fn(side, side, |x, y| {
            plane.sample_bilinear((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5).clamp(0.0, 1.0)
        });
        ActivationMap {
            width: side,
            height: side,
            grid: up.data,
            layer_tag: self.layer_tag.clone(),
            face_ref: self.face_ref.clone(),
        }
    }
}

/// Rows kept when the lowest `exclude` fraction is dropped.
fn kept_rows(height: usize, exclude: f64) -> usize {
    (((1.0 - exclude) * height as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Mean absolute difference over the rows above the excluded lower band.
pub fn cam_distance(a: &ActivationMap, b: &ActivationMap, exclude_lower_fraction: f64) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape(format!("{}x{}", a.width, a.height), format!("{}x{}", b.width, b.height)));
    }
    if !(0.0..1.0).contains(&exclude_lower_fraction) {
        return Err(Error::InvalidInput(format!("exclude_lower_fraction must be in [0,1), got {exclude_lower_fraction}")));
    }
    let n = kept_rows(a.height, exclude_lower_fraction) * a.width;
    let sum: f64 = a.grid[..n].iter().zip(&b.grid[..n]).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
    Ok(sum / n as f64)
}

fn min_max(v: &mut [f32]) {
    let lo = v.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if hi - lo > 1e-12 {
        v.iter_mut().for_each(|x| *x = (*x - lo) / (hi - lo));
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// CAMs for both faces of a pair at `layer_tag`, from the gradient of the
/// distance between L2-normalized embeddings. A pair at zero distance has no
/// gradient and gets all-zero maps.
pub fn grad_cam_pair(backbone: &Backbone, face_a: (&RgbImage, &str), face_b: (&RgbImage, &str), layer_tag: &str) -> Result<(ActivationMap, ActivationMap)> {
    let net = backbone.network();
    let arch = &net.arch;
    let l = arch.layer_index(layer_tag)?;
    let s = arch.input as u32;
    for f in [face_a.0, face_b.0] {
        if f.dimensions() != (s, s) {
            return Err(Error::shape(format!("{s}x{s}x3"), format!("{}x{}x3", f.width(), f.height())));
        }
    }
    let x = net.pack_input(&[face_a.0.as_raw(), face_b.0.as_raw()])?;
    let cache = net.forward(&x, 2);
    let d = arch.embedding_dim;
    let e: Vec<f64> = cache.embeddings.iter().map(|&v| v as f64).collect();
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let (na, nb) = (norm(&e[..d]), norm(&e[d..]));
    let pa: Vec<f64> = e[..d].iter().map(|v| v / na).collect();
    let pb: Vec<f64> = e[d..].iter().map(|v| v / nb).collect();
    let dist = pa.iter().zip(&pb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let side = arch.side(l);
    let hw = side * side;
    let channels = arch.channels[l + 1];
    let blank = |face: &str| ActivationMap {
        width: side,
        height: side,
        grid: vec![0.0; hw],
        layer_tag: layer_tag.to_string(),
        face_ref: face.to_string(),
    };
    if dist < 1e-9 {
        return Ok((blank(face_a.1), blank(face_b.1)));
    }
    // dD/dphi, then through the normalization of each tower
    let mut d_emb = vec![0.0f32; 2 * d];
    for (t, (p, n)) in [(&pa, na), (&pb, nb)].into_iter().enumerate() {
        let sign = if t == 0 { 1.0 } else { -1.0 };
        let g: Vec<f64> = (0..d).map(|k| sign * (pa[k] - pb[k]) / dist).collect();
        let dot: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        for k in 0..d {
            d_emb[t * d + k] = ((g[k] - p[k] * dot) / n) as f32;
        }
    }
    let (_, grad) = net.backward(&cache, &d_emb, Some(l));
    let grad = grad.expect("capture requested");
    let mut maps = Vec::with_capacity(2);
    for (b, face) in [face_a.1, face_b.1].into_iter().enumerate() {
        let act = cache.activation(arch, l, b);
        let mut cam = vec![0.0f32; hw];
        let mut any = false;
        for c in 0..channels {
            let g = &grad[(c * 2 + b) * hw..(c * 2 + b + 1) * hw];
            let w = g.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
            if w != 0.0 {
                any = true;
            }
            for (o, a) in cam.iter_mut().zip(&act[c * hw..(c + 1) * hw]) {
                *o += (w * *a as f64) as f32;
            }
        }
        if !any {
            maps.push(blank(face));
            continue;
        }
        cam.iter_mut().for_each(|v| *v = v.max(0.0));
        min_max(&mut cam);
        maps.push(ActivationMap {
            width: side,
            height: side,
            grid: cam,
            layer_tag: layer_tag.to_string(),
            face_ref: face.to_string(),
        });
    }
    let b = maps.pop().unwrap();
    let a = maps.pop().unwrap();
    Ok((a, b))
}

/// Blue-to-red ramp.
fn heat(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [255.0 * r, 255.0 * g, 255.0 * b]
}

/// Face blended half and half with the heat-mapped CAM (resized to the face).
pub fn overlay(face: &RgbImage, map: &ActivationMap) -> RgbImage {
    let up = if (map.width as u32, map.height as u32) == face.dimensions() {
        map.clone()
    } else {
        map.upsampled(face.width() as usize)
    };
    RgbImage::from_fn(face.width(), face.height(), |x, y| {
        let p = face.get_pixel(x, y);
        let h = heat(up.grid[(y as usize) * up.width + x as usize]);
        Rgb([0, 1, 2].map(|k| (0.5 * p[k] as f32 + 0.5 * h[k]).round().clamp(0.0, 255.0) as u8))
    })
}

fn side_by_side(a: &RgbImage, b: &RgbImage) -> RgbImage {
    let mut out = RgbImage::new(a.width() + b.width(), a.height().max(b.height()));
    image::imageops::replace(&mut out, a, 0, 0);
    image::imageops::replace(&mut out, b, a.width() as i64, 0);
    out
}

pub struct CamPair<'a> {
    pub pair_id: String,
    pub label: Label,
    pub trusted: (&'a RgbImage, &'a str),
    pub questioned: (&'a RgbImage, &'a str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamRecord {
    pub pair_id: String,
    pub label: u8,
    pub cam_distance: f64,
    pub overlay: Option<String>,
}

/// CAM distances for a list of pairs; optionally writes the first
/// `max_overlays` side-by-side overlays plus `cam_distances.csv` into `out_dir`.
pub fn explain_pairs(backbone: &Backbone, pairs: &[CamPair<'_>], layer_tag: &str, exclude_lower_fraction: f64, out_dir: Option<&Path>, max_overlays: usize) -> Result<Vec<CamRecord>> {
    let side = backbone.network().arch.input;
    let mut records = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let (ma, mb) = grad_cam_pair(backbone, p.trusted, p.questioned, layer_tag)?;
        let (ua, ub) = (ma.upsampled(side), mb.upsampled(side));
        let dist = cam_distance(&ua, &ub, exclude_lower_fraction)?;
        let mut overlay_name = None;
        if let Some(dir) = out_dir {
            if i < max_overlays {
                let name = format!("overlays/pair_{i:04}.png");
                let img = side_by_side(&overlay(p.trusted.0, &ua), &overlay(p.questioned.0, &ub));
                crate::imaging::save_rgb(&img, &dir.join(&name))?;
                overlay_name = Some(name);
            }
        }
        records.push(CamRecord {
            pair_id: p.pair_id.clone(),
            label: p.label.y(),
            cam_distance: dist,
            overlay: overlay_name,
        });
    }
    if let Some(dir) = out_dir {
        let path = dir.join("cam_distances.csv");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["pair_id", "label", "cam_distance", "overlay"])?;
        for r in &records {
            w.write_record([r.pair_id.as_str(), &r.label.to_string(), &format!("{:.9}", r.cam_distance), r.overlay.as_deref().unwrap_or("")])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(records)
}

/// Mean CAM distance of genuine and imposter records.
pub fn mean_by_label(records: &[CamRecord]) -> (f64, f64) {
    let mean = |y: u8| {
        let v: Vec<f64> = records.iter().filter(|r| r.label == y).map(|r| r.cam_distance).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    (mean(0), mean(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Arch, Network};

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> ActivationMap {
        ActivationMap {
            width: w,
            height: h,
            grid: Plane::from_fn(w, h, f).data,
            layer_tag: "t".into(),
            face_ref: "f".into(),
        }
    }

    fn face(seed: u32) -> RgbImage {
        RgbImage::from_fn(160, 160, |x, y| Rgb([((x * 3 + y + seed) % 256) as u8, ((x + y * 5 + 2 * seed) % 256) as u8, ((x * y / 7 + seed) % 256) as u8]))
    }

    #[test]
    fn distance_of_constant_maps() {
        let zeros = map(160, 160, |_, _| 0.0);
        let ones = map(160, 160, |_, _| 1.0);
        assert_eq!(cam_distance(&zeros, &ones, DEFAULT_EXCLUDE_LOWER).unwrap(), 1.0);
        assert_eq!(cam_distance(&ones, &ones, DEFAULT_EXCLUDE_LOWER).unwrap(), 0.0);
        assert_eq!(kept_rows(160, 0.45), 88);
    }

    #[test]
    fn lower_band_is_ignored() {
        let a = map(10, 10, |_, y| if y >= 6 { 1.0 } else { 0.0 });
        let b = map(10, 10, |_, _| 0.0);
        assert_eq!(cam_distance(&a, &b, 0.45).unwrap(), 0.0);
        assert!(cam_distance(&a, &b, 0.0).unwrap() > 0.0);
        assert!(cam_distance(&a, &map(9, 10, |_, _| 0.0), 0.45).is_err());
    }

    #[test]
    fn identical_faces_give_zero_maps() {
        let b = Backbone::new("t", Network::new(Arch::default(), 3).unwrap());
        let f = face(1);
        let (ma, mb) = grad_cam_pair(&b, (&f, "a"), (&f, "b"), "block3").unwrap();
        assert!(ma.grid.iter().chain(&mb.grid).all(|&v| v == 0.0));
        assert_eq!((ma.width, ma.height), (20, 20));
    }

    #[test]
    fn maps_are_scaled_and_unknown_layer_fails() {
        let b = Backbone::new("t", Network::new(Arch::default(), 3).unwrap());
        let (f1, f2) = (face(1), face(40));
        for tag in ["block1", "block2", "block3", "block4"] {
            let (ma, mb) = grad_cam_pair(&b, (&f1, "a"), (&f2, "b"), tag).unwrap();
            for m in [&ma, &mb] {
                assert!(m.grid.iter().all(|v| (0.0..=1.0).contains(v)));
                let up = m.upsampled(160);
                assert_eq!(up.grid.len(), 160 * 160);
                assert!(up.grid.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        assert!(matches!(grad_cam_pair(&b, (&f1, "a"), (&f2, "b"), "repeat_2"), Err(Error::UnknownLayer { .. })));
    }
}
