//! Generates a small testbed, splits it by subject and counts the pairs.

use morphdet::dataset::{build_pairs, make_split, Label, SplitName};
use morphdet::testbed::{generate_testbed, TestbedConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("morphdet-split"));
    let config = TestbedConfig {
        identities: 20,
        families: 0,
        ..TestbedConfig::default()
    };
    let (manifest, _) = generate_testbed(&config, &dir)?;
    let split = make_split(&manifest, 0.5, 0.2, 1)?;
    for which in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let pairs = build_pairs(&manifest, &split, which)?;
        let genuine = pairs.pairs.iter().filter(|p| p.label == Label::Genuine).count();
        println!("{which}: {} subjects, {genuine} genuine pairs", split.subjects(which).len());
    }
    split.save(&dir.join("split.json"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
