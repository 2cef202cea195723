//! D-EER, fixed operating points and a DET plot for two score sets.

use morphdet::dataset::Label;
use morphdet::metrics::{evaluate, render_det_png, Polarity, ScoreSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir: std::path::PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("morphdet-det"));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut reports = Vec::new();
    for (method, sep) in [("weak", 0.8), ("strong", 2.5)] {
        let n = 500;
        let labels: Vec<Label> = (0..n).map(|i| if i % 2 == 0 { Label::Imposter } else { Label::Genuine }).collect();
        let raw: Vec<f64> = labels
            .iter()
            .map(|l| Normal::new(if *l == Label::Imposter { sep } else { 0.0 }, 1.0).unwrap().sample(&mut rng))
            .collect();
        let ids = (0..n).map(|i| format!("p{i}")).collect();
        let set = ScoreSet::from_raw(method, "test", ids, &raw, &labels, Polarity::LargerIsMorph)?;
        let r = evaluate(&set, 101)?;
        println!("{method}: D-EER {:.4}, APCER@BPCER {:?}", r.d_eer, r.apcer_at_bpcer);
        reports.push(r);
    }
    let curves: Vec<(&str, &[(f64, f64)])> = reports.iter().map(|r| (r.method.as_str(), r.det_samples.as_slice())).collect();
    render_det_png(&dir.join("det.png"), &curves)?;
    println!("wrote {}", dir.join("det.png").display());
    Ok(())
}
