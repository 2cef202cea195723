//! Detects five landmarks on a rendered probe and writes the 160x160 crop.

use morphdet::dataset::{Gender, ImageKind, ImageRef};
use morphdet::face_prep::{align_face, detect_face, ChromaFaceDetector};
use morphdet::imaging::save_rgb;
use morphdet::synth::{probe_expression, probe_pose, render_face, Capture, Identity, CANVAS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("morphdet-align"));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let id = Identity::random("s000", Gender::Female, &mut rng);
    let pose = probe_pose(&mut rng);
    let expression = probe_expression(&mut rng);
    let img = render_face(&id, pose, expression, &Capture::probe(&mut rng), CANVAS, CANVAS).image;
    let det = detect_face(&ChromaFaceDetector, &img, "probe.png")?;
    println!("confidence {:.3}, eyes at {:?}", det.confidence, &det.landmarks5[..2]);
    let face = align_face(&img, &det, ImageRef::bona_fide("probe.png", ImageKind::BonaFideProbe, "s000"))?;
    save_rgb(&img, &dir.join("probe.png"))?;
    save_rgb(&face.pixels, &dir.join("aligned.png"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
