use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::detect::FaceDetection;
use crate::dataset::ImageRef;
use crate::error::{Error, Result};
use crate::imaging::{quantize_rgb, sample_bicubic_rgb, Point};

/// Side of an aligned crop.
pub const CROP: u32 = 160;

/// Five-point target positions for a 160×160 crop: the widely used 112×112
/// ArcFace template scaled by 160/112.
pub const TEMPLATE_160: [Point; 5] = {
    const S: f64 = 160.0 / 112.0;
    [
        Point::new(38.2946 * S, 51.6963 * S),
        Point::new(73.5318 * S, 51.5014 * S),
        Point::new(56.0252 * S, 71.7366 * S),
        Point::new(41.5493 * S, 92.3655 * S),
        Point::new(70.7299 * S, 92.2041 * S),
    ]
};

const DEGENERATE_RATIO: f64 = 1e-6;

/// `u = a·x − b·y + tx`, `v = b·x + a·y + ty`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            a: 1.0,
            b: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x - self.b * p.y + self.tx,
            self.b * p.x + self.a * p.y + self.ty,
        )
    }

    pub fn scale(&self) -> f64 {
        (self.a * self.a + self.b * self.b).sqrt()
    }

    pub fn det(&self) -> f64 {
        self.a * self.a + self.b * self.b
    }

    pub fn inverse(&self) -> Result<Similarity> {
        let d = self.det();
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::DegenerateLandmarks("singular similarity".into()));
        }
        let (a, b) = (self.a / d, -self.b / d);
        let t = Point::new(-(a * self.tx - b * self.ty), -(b * self.tx + a * self.ty));
        Ok(Similarity {
            a,
            b,
            tx: t.x,
            ty: t.y,
        })
    }

    /// Row-major 2×3 matrix.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        [[self.a, -self.b, self.tx], [self.b, self.a, self.ty]]
    }

    /// Least-squares similarity taking `src` onto `dst`.
    pub fn estimate(src: &[Point], dst: &[Point]) -> Result<Similarity> {
        if src.len() != dst.len() {
            return Err(Error::LengthMismatch(src.len(), dst.len()));
        }
        let n = src.len() as f64;
        if src.len() < 2 {
            return Err(Error::DegenerateLandmarks("need at least two points".into()));
        }
        let mean = |ps: &[Point]| ps.iter().fold(Point::default(), |acc, p| acc.add(*p)).scale(1.0 / n);
        let (ms, md) = (mean(src), mean(dst));
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        let (mut num_a, mut num_b) = (0.0, 0.0);
        for (s, d) in src.iter().zip(dst) {
            let s = s.sub(ms);
            let d = d.sub(md);
            sxx += s.x * s.x;
            sxy += s.x * s.y;
            syy += s.y * s.y;
            num_a += s.x * d.x + s.y * d.y;
            num_b += s.x * d.y - s.y * d.x;
        }
        let tr = sxx + syy;
        let disc = ((sxx - syy).powi(2) / 4.0 + sxy * sxy).sqrt();
        let l_max = tr / 2.0 + disc;
        let l_min = tr / 2.0 - disc;
        if !(l_max > 0.0) || l_min / l_max < DEGENERATE_RATIO {
            return Err(Error::DegenerateLandmarks(format!(
                "landmark scatter eigenvalues {l_min:.3e}/{l_max:.3e}"
            )));
        }
        let a = num_a / tr;
        let b = num_b / tr;
        Ok(Similarity {
            a,
            b,
            tx: md.x - (a * ms.x - b * ms.y),
            ty: md.y - (b * ms.x + a * ms.y),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedFace {
    pub pixels: RgbImage,
    pub source: ImageRef,
    /// Maps source-image coordinates into the crop.
    pub transform: Similarity,
}

/// Warps `img` so that the detected landmarks land on [`TEMPLATE_160`].
pub fn align_face(img: &RgbImage, det: &FaceDetection, source: ImageRef) -> Result<AlignedFace> {
    let transform = Similarity::estimate(&det.landmarks5, &TEMPLATE_160)?;
    let pixels = warp_similarity(img, &transform, CROP, CROP)?;
    Ok(AlignedFace {
        pixels,
        source,
        transform,
    })
}

/// Inverse-maps every output pixel through `t` and samples bicubically;
/// points falling outside the source frame are black.
pub fn warp_similarity(img: &RgbImage, t: &Similarity, w: u32, h: u32) -> Result<RgbImage> {
    let inv = t.inverse()?;
    let (sw, sh) = (img.width() as f64 - 1.0, img.height() as f64 - 1.0);
    let mut out = RgbImage::new(w, h);
    for v in 0..h {
        for u in 0..w {
            let p = inv.apply(Point::new(u as f64, v as f64));
            let inside = p.x >= -1e-9 && p.y >= -1e-9 && p.x <= sw + 1e-9 && p.y <= sh + 1e-9;
            let px = if inside {
                quantize_rgb(sample_bicubic_rgb(img, p.x, p.y))
            } else {
                Rgb([0, 0, 0])
            };
            out.put_pixel(u, v, px);
        }
    }
    Ok(out)
}

/// RMS distance between `landmarks` and the template pulled back through `t`.
pub fn template_residual_rms(t: &Similarity, landmarks: &[Point; 5]) -> Result<f64> {
    let inv = t.inverse()?;
    let ss: f64 = TEMPLATE_160
        .iter()
        .zip(landmarks)
        .map(|(q, p)| inv.apply(*q).dist(*p).powi(2))
        .sum();
    Ok((ss / 5.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_prep::detect::{detect_face, ChromaFaceDetector};
    use crate::face_prep::canonical_fixture;
    use crate::imaging::{mean_abs_diff, rotate90};

    #[test]
    fn estimate_recovers_a_known_similarity() {
        let t = Similarity {
            a: 0.8,
            b: -0.3,
            tx: 12.0,
            ty: -4.0,
        };
        let src = [
            Point::new(10.0, 20.0),
            Point::new(50.0, 22.0),
            Point::new(30.0, 40.0),
            Point::new(12.0, 60.0),
            Point::new(48.0, 61.0),
        ];
        let dst = src.map(|p| t.apply(p));
        let e = Similarity::estimate(&src, &dst).unwrap();
        assert!((e.a - t.a).abs() < 1e-12 && (e.b - t.b).abs() < 1e-12);
        assert!((e.tx - t.tx).abs() < 1e-9 && (e.ty - t.ty).abs() < 1e-9);
        let back = e.inverse().unwrap();
        for p in src {
            assert!(back.apply(e.apply(p)).dist(p) < 1e-9);
        }
    }

    #[test]
    fn collinear_landmarks_are_rejected() {
        let src: Vec<Point> = (0..5).map(|i| Point::new(i as f64 * 10.0, i as f64 * 5.0)).collect();
        assert!(matches!(
            Similarity::estimate(&src, &TEMPLATE_160),
            Err(Error::DegenerateLandmarks(_))
        ));
    }

    #[test]
    fn canonical_face_aligns_with_identity_transform() {
        let img = canonical_fixture();
        let det = detect_face(&ChromaFaceDetector, &img, "canonical").unwrap();
        let face = align_face(&img, &det, ImageRef::bona_fide("c.png", crate::dataset::ImageKind::BonaFideProbe, "c")).unwrap();
        let t = face.transform;
        let s = t.scale();
        assert!((t.a / s - 1.0).abs() < 1e-3 && (t.b / s).abs() < 1e-3, "{t:?}");
        assert!((s - 1.0).abs() < 1e-3, "{t:?}");
        assert!(template_residual_rms(&t, &det.landmarks5).unwrap() < 0.5);
        assert_eq!(face.pixels.dimensions(), (CROP, CROP));
    }

    #[test]
    fn rotated_copy_aligns_to_the_same_crop() {
        let img = canonical_fixture();
        let rot = rotate90(&img);
        let src = ImageRef::bona_fide("c.png", crate::dataset::ImageKind::BonaFideProbe, "c");
        let d0 = detect_face(&ChromaFaceDetector, &img, "a").unwrap();
        let d1 = detect_face(&ChromaFaceDetector, &rot, "b").unwrap();
        let a = align_face(&img, &d0, src.clone()).unwrap();
        let b = align_face(&rot, &d1, src).unwrap();
        assert!(mean_abs_diff(&a.pixels, &b.pixels) <= 3.0);
    }

    #[test]
    fn out_of_frame_is_black() {
        let img = RgbImage::from_pixel(40, 40, Rgb([200, 200, 200]));
        let t = Similarity {
            a: 1.0,
            b: 0.0,
            tx: 100.0,
            ty: 100.0,
        };
        let out = warp_similarity(&img, &t, 160, 160).unwrap();
        assert_eq!(*out.get_pixel(0, 0), Rgb([0, 0, 0]));
        assert_eq!(*out.get_pixel(120, 120), Rgb([200, 200, 200]));
    }
}
