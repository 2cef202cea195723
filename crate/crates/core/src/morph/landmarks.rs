use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_prep::analysis::{analyze, FaceAnalysis, Shape};
use crate::imaging::Point;

pub const N_LANDMARKS: usize = 68;
/// First non-jaw index; the inner face spans `INNER_FACE_START..68`.
pub const INNER_FACE_START: usize = 17;

/// Index of the anatomically mirrored point under a horizontal flip.
pub const MIRROR_INDEX: [usize; N_LANDMARKS] = {
    let mut m = [0usize; N_LANDMARKS];
    let mut i = 0;
    while i < 17 {
        m[i] = 16 - i;
        i += 1;
    }
    let pairs: [(usize, usize); 21] = [
        (17, 26),
        (18, 25),
        (19, 24),
        (20, 23),
        (21, 22),
        (31, 35),
        (32, 34),
        (36, 45),
        (37, 44),
        (38, 43),
        (39, 42),
        (40, 47),
        (41, 46),
        (48, 54),
        (49, 53),
        (50, 52),
        (55, 59),
        (56, 58),
        (60, 64),
        (61, 63),
        (65, 67),
    ];
    let mut k = 0;
    while k < pairs.len() {
        m[pairs[k].0] = pairs[k].1;
        m[pairs[k].1] = pairs[k].0;
        k += 1;
    }
    let centre = [27, 28, 29, 30, 33, 51, 57, 62, 66];
    let mut c = 0;
    while c < centre.len() {
        m[centre[c]] = centre[c];
        c += 1;
    }
    m
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<Point>,
    pub image_size: (u32, u32),
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, image_size: (u32, u32)) -> Result<Self> {
        if points.len() != N_LANDMARKS {
            return Err(Error::shape(format!("{N_LANDMARKS} landmarks"), format!("{}", points.len())));
        }
        let mut set = LandmarkSet { points, image_size };
        set.clamp();
        Ok(set)
    }

    fn clamp(&mut self) {
        let (w, h) = (self.image_size.0 as f64 - 1.0, self.image_size.1 as f64 - 1.0);
        for p in self.points.iter_mut() {
            p.x = p.x.clamp(0.0, w);
            p.y = p.y.clamp(0.0, h);
        }
    }

    /// Landmarks of the horizontally flipped image, in standard index order.
    pub fn mirrored(&self) -> LandmarkSet {
        let w = self.image_size.0 as f64 - 1.0;
        let points = (0..N_LANDMARKS)
            .map(|i| {
                let p = self.points[MIRROR_INDEX[i]];
                Point::new(w - p.x, p.y)
            })
            .collect();
        LandmarkSet {
            points,
            image_size: self.image_size,
        }
    }

    pub fn lerp(&self, other: &LandmarkSet, alpha: f64) -> Result<LandmarkSet> {
        if self.image_size != other.image_size {
            return Err(Error::shape(format!("{:?}", self.image_size), format!("{:?}", other.image_size)));
        }
        Ok(LandmarkSet {
            points: self.points.iter().zip(&other.points).map(|(a, b)| a.lerp(*b, alpha)).collect(),
            image_size: self.image_size,
        })
    }

    pub fn rms_to(&self, other: &LandmarkSet) -> f64 {
        let ss: f64 = self.points.iter().zip(&other.points).map(|(a, b)| a.dist(*b).powi(2)).sum();
        (ss / self.points.len().max(1) as f64).sqrt()
    }

    pub fn mean_of(&self, range: std::ops::Range<usize>) -> Point {
        let n = range.len() as f64;
        self.points[range].iter().fold(Point::default(), |a, p| a.add(*p)).scale(1.0 / n)
    }
}

/// Any 68-point landmarker.
pub trait Landmarker: Send + Sync {
    fn locate(&self, img: &RgbImage, path: &str) -> Result<LandmarkSet>;
}

/// 68-point landmarks read off the chroma face analysis.
#[derive(Clone, Copy, Debug, Default)]
pub struct ChromaLandmarker;

impl Landmarker for ChromaLandmarker {
    fn locate(&self, img: &RgbImage, path: &str) -> Result<LandmarkSet> {
        let best = analyze(img)
            .into_iter()
            .fold(None::<FaceAnalysis>, |best, a| match best {
                Some(b) if b.confidence >= a.confidence => Some(b),
                _ => Some(a),
            })
            .ok_or_else(|| Error::NoFace(path.to_string()))?;
        LandmarkSet::new(landmarks68(&best), img.dimensions())
    }
}

/// Point on an ellipse at angle `deg`, measured from `right` toward `up`.
fn on_ellipse(c: Point, right: Point, up: Point, a: f64, b: f64, deg: f64) -> Point {
    let t = deg.to_radians();
    c.add(right.scale(a * t.cos())).add(up.scale(b * t.sin()))
}

fn along(s: &Shape, dir: Point, t: f64) -> Point {
    s.center.add(s.major_along(dir).scale(t * s.semi_major))
}

pub(crate) fn landmarks68(f: &FaceAnalysis) -> Vec<Point> {
    let (right, up) = (f.right, f.up);
    let mut p = Vec::with_capacity(N_LANDMARKS);
    for k in 0..17 {
        p.push(on_ellipse(f.face_center, right, up, f.face_half_w, f.face_half_h, 180.0 + 180.0 * k as f64 / 16.0));
    }
    for brow in &f.brows {
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            p.push(along(brow, right, t));
        }
    }
    let eye_mid = f.eyes[0].center.lerp(f.eyes[1].center, 0.5);
    let tip = f.nose_tip();
    for k in 0..4 {
        p.push(eye_mid.lerp(tip, k as f64 / 3.0));
    }
    let [nl, nr] = [f.nostrils[0].center, f.nostrils[1].center];
    let r = 0.5 * (f.nostrils[0].semi_major + f.nostrils[1].semi_major);
    p.push(nl.sub(right.scale(r)));
    p.push(nl);
    p.push(nl.lerp(nr, 0.5));
    p.push(nr);
    p.push(nr.add(right.scale(r)));
    for eye in &f.eyes {
        let (a, b) = (eye.semi_major, eye.semi_minor);
        for deg in [180.0, 120.0, 60.0, 0.0, -60.0, -120.0] {
            p.push(on_ellipse(eye.center, right, up, a, b, deg));
        }
    }
    let m = &f.mouth;
    let mr = m.major_along(right);
    let mu = mr.perp().scale(-1.0);
    for k in 0..12 {
        p.push(on_ellipse(m.center, mr, mu, m.semi_major, m.semi_minor, 180.0 - 30.0 * k as f64));
    }
    for k in 0..8 {
        p.push(on_ellipse(m.center, mr, mu, 0.8 * m.semi_major, 0.4 * m.semi_minor, 180.0 - 45.0 * k as f64));
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Gender;
    use crate::imaging::mirror;
    use crate::synth::{render_face, Capture, Expression, Identity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn face(seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let id = Identity::random("s", Gender::Male, &mut rng);
        let cap = Capture::probe(&mut rng);
        let pose = crate::synth::probe_pose(&mut rng);
        render_face(&id, pose, Expression::default(), &cap, 256, 256).image
    }

    #[test]
    fn mirror_index_is_an_involution() {
        for i in 0..N_LANDMARKS {
            assert_eq!(MIRROR_INDEX[MIRROR_INDEX[i]], i);
        }
    }

    #[test]
    fn eyes_sit_above_mouth() {
        let lm = ChromaLandmarker.locate(&face(1), "f").unwrap();
        assert_eq!(lm.points.len(), 68);
        assert!(lm.mean_of(36..48).y < lm.mean_of(48..68).y);
    }

    #[test]
    fn flipped_image_gives_mirrored_landmarks() {
        for seed in 0..3 {
            let img = face(seed);
            let lm = ChromaLandmarker.locate(&img, "f").unwrap();
            let lm_flip = ChromaLandmarker.locate(&mirror(&img), "g").unwrap();
            let rms = lm_flip.rms_to(&lm.mirrored());
            assert!(rms < 2.0, "rms {rms}");
        }
    }

    #[test]
    fn blank_image_is_an_error() {
        let img = RgbImage::from_pixel(64, 64, image::Rgb([90, 90, 90]));
        assert!(matches!(ChromaLandmarker.locate(&img, "b"), Err(Error::NoFace(_))));
    }

    #[test]
    fn landmarks_stay_inside_the_frame() {
        let lm = LandmarkSet::new(vec![Point::new(-5.0, 300.0); 68], (100, 100)).unwrap();
        assert!(lm.points.iter().all(|p| p.x == 0.0 && p.y == 99.0));
    }
}
