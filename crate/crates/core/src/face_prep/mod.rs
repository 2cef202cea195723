//! Face detection and five-point similarity alignment to 160×160 crops.

mod align;
pub mod analysis;
mod detect;

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use align::{align_face, template_residual_rms, warp_similarity, AlignedFace, Similarity, CROP, TEMPLATE_160};
pub use detect::{detect_face, ChromaFaceDetector, FaceDetection, FaceDetector};

use crate::dataset::{Gender, Manifest};
use crate::error::Result;
use crate::imaging::{load_rgb, save_rgb, Point};
use crate::synth::{render_face, Appearance, Capture, Expression, FaceGeometry, Identity, Pose};

/// Plain face whose five landmarks sit exactly on [`TEMPLATE_160`].
pub fn canonical_fixture() -> RgbImage {
    let t = TEMPLATE_160;
    let mut g = FaceGeometry::neutral(Gender::Female);
    let eye_mid = t[0].lerp(t[1], 0.5);
    g.face_center = Point::new(eye_mid.x, eye_mid.y + 20.0);
    g.face_half_w = 54.0;
    g.face_half_h = 62.0;
    g.eyes = [t[0], t[1]];
    g.nose_tip = t[2];
    g.mouth_corners = [t[3], t[4]];
    let id = Identity {
        id: "canonical".into(),
        gender: Gender::Female,
        geometry: g,
        appearance: Appearance::plain(),
    };
    render_face(&id, Pose::identity(), Expression::default(), &Capture::clean(), CROP, CROP).image
}

/// One entry of the `transforms.json` sidecar.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AlignRecord {
    pub detection: FaceDetection,
    pub transform: [[f64; 3]; 2],
}

/// Aligns every image of `manifest` found under `input_root`, writing crops
/// to the same relative paths under `out_root` plus `transforms.json`.
pub fn align_manifest(manifest: &Manifest, input_root: &Path, out_root: &Path, detector: &dyn FaceDetector) -> Result<BTreeMap<String, AlignRecord>> {
    let mut records = BTreeMap::new();
    for image_ref in manifest.all_images() {
        let src = input_root.join(&image_ref.path);
        let img = load_rgb(&src)?;
        let det = detect_face(detector, &img, &src.display().to_string())?;
        let face = align_face(&img, &det, image_ref.clone())?;
        save_rgb(&face.pixels, &out_root.join(&image_ref.path))?;
        records.insert(
            image_ref.path.clone(),
            AlignRecord {
                detection: det,
                transform: face.transform.matrix(),
            },
        );
    }
    crate::dataset::write_json(&out_root.join("transforms.json"), &records)?;
    Ok(records)
}
