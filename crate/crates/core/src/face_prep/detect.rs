use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::analysis::{analyze, FaceAnalysis};
use crate::error::{Error, Result};
use crate::imaging::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceDetection {
    /// x_min, y_min, x_max, y_max in pixels.
    pub bounding_box: [f64; 4],
    /// Left eye, right eye, nose tip, left and right mouth corner (image left first).
    pub landmarks5: [Point; 5],
    pub confidence: f64,
}

/// Any five-point face detector.
pub trait FaceDetector: Send + Sync {
    fn name(&self) -> &str;

    /// Every face found, in no particular order.
    fn detect_all(&self, img: &RgbImage) -> Vec<FaceDetection>;
}

/// Returns the highest-confidence detection. `path` is only used for the error.
pub fn detect_face(detector: &dyn FaceDetector, img: &RgbImage, path: &str) -> Result<FaceDetection> {
    let mut best: Option<FaceDetection> = None;
    for d in detector.detect_all(img) {
        if best.as_ref().map_or(true, |b| d.confidence > b.confidence) {
            best = Some(d);
        }
    }
    best.ok_or_else(|| Error::NoFace(path.to_string()))
}

/// Skin-chroma detector for the procedural testbed.
///
/// Locates faces as large skin-colored regions, then reads eyes, nostrils
/// and mouth off the enclosed non-skin blobs.
#[derive(Clone, Copy, Debug, Default)]
pub struct ChromaFaceDetector;

impl ChromaFaceDetector {
    pub fn analyses(&self, img: &RgbImage) -> Vec<FaceAnalysis> {
        analyze(img)
    }
}

fn clamp_to(img: &RgbImage, p: Point) -> Point {
    Point::new(
        p.x.clamp(0.0, img.width() as f64 - 1.0),
        p.y.clamp(0.0, img.height() as f64 - 1.0),
    )
}

impl FaceDetector for ChromaFaceDetector {
    fn name(&self) -> &str {
        "chroma-v1"
    }

    fn detect_all(&self, img: &RgbImage) -> Vec<FaceDetection> {
        analyze(img)
            .into_iter()
            .map(|a| FaceDetection {
                bounding_box: a.bbox,
                landmarks5: a.landmarks5().map(|p| clamp_to(img, p)),
                confidence: a.confidence,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Gender;
    use crate::synth::{render_scene, Capture, Expression, FaceInstance, Identity, Pose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frontal(seed: u64) -> (RgbImage, [Point; 5]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let id = Identity::random("s", Gender::Female, &mut rng);
        let cap = Capture::reference(&mut rng);
        let pose = Pose {
            center: Point::new(128.0, 124.0),
            scale: 1.15,
            angle: 0.0,
        };
        let r = crate::synth::render_face(&id, pose, Expression::default(), &cap, 256, 256);
        (r.image, r.landmarks5)
    }

    #[test]
    fn frontal_face_is_found_confidently() {
        for seed in 0..4 {
            let (img, truth) = frontal(seed);
            let d = detect_face(&ChromaFaceDetector, &img, "fixture").unwrap();
            assert!(d.confidence > 0.9, "confidence {}", d.confidence);
            for (p, q) in d.landmarks5.iter().zip(truth.iter()) {
                assert!(p.dist(*q) < 1.0, "{p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn blank_image_has_no_face() {
        let img = RgbImage::from_pixel(128, 128, image::Rgb([128, 128, 128]));
        match detect_face(&ChromaFaceDetector, &img, "blank.png") {
            Err(Error::NoFace(p)) => assert_eq!(p, "blank.png"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_faces_give_the_more_confident_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let big = Identity::random("a", Gender::Male, &mut rng);
        let small = Identity::random("b", Gender::Female, &mut rng);
        let faces = [
            FaceInstance {
                identity: &big,
                pose: Pose {
                    center: Point::new(110.0, 128.0),
                    scale: 1.05,
                    angle: 0.0,
                },
                expression: Expression::default(),
            },
            FaceInstance {
                identity: &small,
                pose: Pose {
                    center: Point::new(262.0, 140.0),
                    scale: 0.75,
                    angle: 0.1,
                },
                expression: Expression::default(),
            },
        ];
        let img = render_scene(350, 256, &faces, &Capture::clean());
        let all = ChromaFaceDetector.detect_all(&img);
        assert_eq!(all.len(), 2);
        let best = detect_face(&ChromaFaceDetector, &img, "two").unwrap();
        let expect = faces[0].landmarks5();
        assert!(best.landmarks5[0].dist(expect[0]) < 1.0);
        assert!(all.iter().all(|d| d.confidence <= best.confidence));
    }
}
