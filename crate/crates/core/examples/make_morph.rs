//! Complete and spliced morphs of two rendered references.

use morphdet::dataset::Gender;
use morphdet::imaging::save_rgb;
use morphdet::morph::{splice_morph, warp_blend, ChromaLandmarker, Landmarker};
use morphdet::synth::{reference_pose, render_face, Capture, Expression, Identity, CANVAS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("morphdet-morph"));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut reference = |name: &str| {
        let id = Identity::random(name, Gender::Male, &mut rng);
        let pose = reference_pose(&mut rng);
        render_face(&id, pose, Expression::default(), &Capture::reference(&mut rng), CANVAS, CANVAS).image
    };
    let (a, b) = (reference("a"), reference("b"));
    let (la, lb) = (ChromaLandmarker.locate(&a, "a")?, ChromaLandmarker.locate(&b, "b")?);
    let complete = warp_blend(&a, &la, &b, &lb, 0.5)?;
    let spliced = splice_morph(&complete, &a, &la)?;
    for (name, img) in [("a", &a), ("b", &b), ("complete", &complete), ("splice_into_a", &spliced)] {
        save_rgb(img, &dir.join(format!("{name}.png")))?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}
