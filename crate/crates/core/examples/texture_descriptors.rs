//! The four classical descriptors of one aligned face.

use morphdet::baselines::{extract, BaselineKind, FilterBank};
use morphdet::dataset::Gender;
use morphdet::imaging::to_gray;
use morphdet::synth::{reference_pose, render_face, Capture, Expression, Identity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let id = Identity::random("s", Gender::Male, &mut rng);
    let pose = reference_pose(&mut rng);
    let img = render_face(&id, pose, Expression::default(), &Capture::reference(&mut rng), 160, 160).image;
    let gray = to_gray(&img);
    let bank = FilterBank::builtin();
    for kind in BaselineKind::ALL {
        let f = extract(kind, &gray, &bank)?;
        let nonzero = f.iter().filter(|v| **v != 0.0).count();
        println!("{:<5} length {:>3}, {nonzero} non-zero entries", kind.tag(), f.len());
    }
    Ok(())
}
