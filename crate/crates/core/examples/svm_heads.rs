//! Euclidean and SVM decision heads on synthetic embedding pairs.

use morphdet::dataset::Label;
use morphdet::embedding::EmbeddingVector;
use morphdet::heads::{euclidean_score, fit_svm_head, svm_score, EmbeddingPair, InputMode};
use morphdet::metrics::{d_eer, Polarity, ScoreSet};
use morphdet::svm::HyperGrid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Genuine pairs are two noisy views of one point; imposter pairs mix in a
/// second point, as a morph would.
fn pairs(n: usize, rng: &mut ChaCha8Rng) -> (Vec<EmbeddingPair>, Vec<Label>) {
    let noise = Normal::new(0.0f32, 0.15).unwrap();
    let mut out = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let base: Vec<f32> = (0..8).map(|_| noise.sample(rng) * 4.0).collect();
        let other: Vec<f32> = (0..8).map(|_| noise.sample(rng) * 4.0).collect();
        let morph = i % 2 == 1;
        let t: Vec<f32> = base.iter().map(|v| v + noise.sample(rng)).collect();
        let q: Vec<f32> = base.iter().zip(&other).map(|(b, o)| if morph { (b + o) / 2.0 } else { *b } + noise.sample(rng)).collect();
        out.push((EmbeddingVector { values: t, normalized: false }, EmbeddingVector { values: q, normalized: false }));
        labels.push(if morph { Label::Imposter } else { Label::Genuine });
    }
    (out, labels)
}

fn deer(scores: Vec<f64>, labels: &[Label]) -> f64 {
    let ids = (0..scores.len()).map(|i| i.to_string()).collect();
    d_eer(&ScoreSet::from_raw("x", "test", ids, &scores, labels, Polarity::LargerIsMorph).unwrap()).unwrap().0
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (train, ty) = pairs(300, &mut rng);
    let (val, vy) = pairs(100, &mut rng);
    let (test, sy) = pairs(300, &mut rng);
    let eu: Vec<f64> = test.iter().map(|(a, b)| euclidean_score(a, b)).collect::<Result<_, _>>()?;
    println!("Euclidean D-EER {:.4}", deer(eu, &sy));
    for mode in [InputMode::Difference, InputMode::Concatenation] {
        let head = fit_svm_head(&train, &ty, Some((&val, &vy)), mode, &HyperGrid::default(), 1)?;
        let s: Vec<f64> = test.iter().map(|(a, b)| svm_score(&head, a, b)).collect::<Result<_, _>>()?;
        let svm = head.svm().unwrap();
        println!("SVM {} D-EER {:.4} (C {}, gamma {:.4})", mode.tag(), deer(s, &sy), svm.model.c, svm.model.gamma);
    }
    Ok(())
}
