//! Short contrastive training run on look-alike families of a small testbed.

use std::collections::BTreeMap;

use image::RgbImage;
use morphdet::dataset::{build_family_pairs, ImageKind, ImageRef};
use morphdet::face_prep::{align_face, detect_face, ChromaFaceDetector};
use morphdet::imaging::load_rgb;
use morphdet::nn::{Arch, Network};
use morphdet::testbed::{generate_testbed, TestbedConfig};
use morphdet::train::{train_stage, PairData, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("morphdet-train"));
    let config = TestbedConfig {
        identities: 4,
        families: 12,
        ..TestbedConfig::default()
    };
    let (_, families) = generate_testbed(&config, &dir)?;
    let families = families.expect("families requested");
    let mut index = BTreeMap::new();
    let mut images: Vec<RgbImage> = Vec::new();
    for r in families.all_images() {
        let img = load_rgb(&dir.join(&r.path))?;
        let det = detect_face(&ChromaFaceDetector, &img, &r.path)?;
        images.push(align_face(&img, &det, ImageRef::bona_fide(r.path.clone(), ImageKind::BonaFideProbe, "f"))?.pixels);
        index.insert(r.path.clone(), images.len() - 1);
    }
    let ids = families.subjects.iter().map(|s| s.subject_id.clone()).collect();
    let pairs: Vec<_> = build_family_pairs(&families, &ids)?
        .pairs
        .iter()
        .map(|p| (index[&p.trusted.path], index[&p.questioned.path], p.label))
        .collect();
    let mut net = Network::new(Arch::default(), 7)?;
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::pretrain()
    };
    let state = train_stage(&mut net, &PairData { images: &images, pairs: &pairs }, None, &cfg)?;
    for e in &state.log {
        println!("epoch {} lr {:.3} loss {:.4}", e.epoch, e.lr, e.mean_loss);
    }
    println!("weights {}", state.checkpoint);
    Ok(())
}
