//! Class activation maps of the pair distance for one genuine pair.

use image::RgbImage;
use morphdet::cam::{cam_distance, grad_cam_pair, overlay, DEFAULT_EXCLUDE_LOWER, DEFAULT_LAYER};
use morphdet::dataset::{Gender, ImageKind, ImageRef};
use morphdet::embedding::Backbone;
use morphdet::face_prep::{align_face, detect_face, ChromaFaceDetector};
use morphdet::imaging::save_rgb;
use morphdet::nn::{Arch, Network};
use morphdet::synth::{probe_expression, probe_pose, render_face, Capture, Identity, CANVAS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn aligned(id: &Identity, rng: &mut ChaCha8Rng) -> Result<RgbImage, morphdet::Error> {
    let pose = probe_pose(rng);
    let expression = probe_expression(rng);
    let img = render_face(id, pose, expression, &Capture::probe(rng), CANVAS, CANVAS).image;
    let det = detect_face(&ChromaFaceDetector, &img, &id.id)?;
    Ok(align_face(&img, &det, ImageRef::bona_fide(id.id.clone(), ImageKind::BonaFideProbe, id.id.clone()))?.pixels)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir: std::path::PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("morphdet-cam"));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let backbone = Backbone::new("untrained", Network::new(Arch::default(), 2)?);
    let id = Identity::random("s", Gender::Female, &mut rng);
    let (a, b) = (aligned(&id, &mut rng)?, aligned(&id, &mut rng)?);
    let (ma, mb) = grad_cam_pair(&backbone, (&a, "a"), (&b, "b"), DEFAULT_LAYER)?;
    println!("{} maps of {}x{}, distance {:.4}", DEFAULT_LAYER, ma.width, ma.height, cam_distance(&ma, &mb, DEFAULT_EXCLUDE_LOWER)?);
    save_rgb(&overlay(&a, &ma), &dir.join("a.png"))?;
    save_rgb(&overlay(&b, &mb), &dir.join("b.png"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
