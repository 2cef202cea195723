//! Flip-concatenated embeddings of aligned faces and their distances.

use image::RgbImage;
use morphdet::dataset::Gender;
use morphdet::embedding::{pair_distance, Backbone};
use morphdet::face_prep::{align_face, detect_face, ChromaFaceDetector};
use morphdet::dataset::{ImageKind, ImageRef};
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
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let backbone = Backbone::new("untrained", Network::new(Arch::default(), 1)?);
    let x = Identity::random("x", Gender::Female, &mut rng);
    let y = Identity::random("y", Gender::Female, &mut rng);
    let faces = [aligned(&x, &mut rng)?, aligned(&x, &mut rng)?, aligned(&y, &mut rng)?];
    let refs: Vec<&RgbImage> = faces.iter().collect();
    let e = backbone.flip_concat_batch(&refs, true)?;
    println!("embedding length {}, backbone {}", e[0].len(), &backbone.weights_fingerprint()[..12]);
    println!("x vs x: {:.4}", pair_distance(&e[0], &e[1])?);
    println!("x vs y: {:.4}", pair_distance(&e[0], &e[2])?);
    Ok(())
}
