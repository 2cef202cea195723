//! Independent brute-force oracles shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use morphdet::dataset::Label;
use morphdet::metrics::{FixedKind, ScoreEntry, ScoreSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random set with both classes, integer-valued scores so ties occur.
pub fn random_set(n: usize, seed: u64) -> ScoreSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: f64 = rng.gen_range(0.0..3.0);
    let mut entries: Vec<ScoreEntry> = (0..n)
        .map(|i| {
            let morph = rng.gen_bool(0.4);
            let base: f64 = rng.gen_range(0.0..10.0) + if morph { shift } else { 0.0 };
            ScoreEntry {
                pair_id: format!("p{i}"),
                score: (base * 20.0).round() / 20.0,
                label: if morph { Label::Imposter } else { Label::Genuine },
            }
        })
        .collect();
    entries[0].label = Label::Imposter;
    entries[1].label = Label::Genuine;
    ScoreSet::new("oracle", "test", entries).unwrap()
}

/// Candidate thresholds: −∞, midpoints of sorted unique scores, +∞.
pub fn thresholds(s: &ScoreSet) -> Vec<f64> {
    let mut v: Vec<f64> = s.entries.iter().map(|e| e.score).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut t = vec![f64::NEG_INFINITY];
    t.extend(v.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    t.push(f64::INFINITY);
    t
}

/// (missed morphs, false alarms, n_morph, n_bona) at `t` by direct count.
pub fn counts(s: &ScoreSet, t: f64) -> (usize, usize, usize, usize) {
    let (mut missed, mut fa, mut nm, mut nb) = (0, 0, 0, 0);
    for e in &s.entries {
        if e.label == Label::Imposter {
            nm += 1;
            if !(e.score >= t) {
                missed += 1;
            }
        } else {
            nb += 1;
            if e.score >= t {
                fa += 1;
            }
        }
    }
    (missed, fa, nm, nb)
}

pub fn brute_deer(s: &ScoreSet) -> (f64, f64) {
    let mut best: Option<(u128, f64, f64)> = None;
    for t in thresholds(s) {
        let (m, f, nm, nb) = counts(s, t);
        let gap = (m as u128 * nb as u128).abs_diff(f as u128 * nm as u128);
        let rate = (m as f64 / nm as f64 + f as f64 / nb as f64) / 2.0;
        if best.map_or(true, |b| gap < b.0) {
            best = Some((gap, rate, t));
        }
    }
    let b = best.unwrap();
    (b.1, b.2)
}

pub fn brute_fixed(s: &ScoreSet, kind: FixedKind, value: f64) -> (f64, f64) {
    let mut best: Option<(usize, usize, f64, f64)> = None;
    for t in thresholds(s) {
        let (m, f, nm, nb) = counts(s, t);
        let (fixed, n_fixed, other, n_other) = match kind {
            FixedKind::Apcer => (m, nm, f, nb),
            FixedKind::Bpcer => (f, nb, m, nm),
        };
        if fixed as f64 / n_fixed as f64 > value {
            continue;
        }
        let better = match best {
            None => true,
            Some((bf, bo, _, _)) => fixed > bf || (fixed == bf && other < bo),
        };
        if better {
            best = Some((fixed, other, other as f64 / n_other as f64, t));
        }
    }
    let b = best.unwrap();
    (b.2, b.3)
}

pub fn brute_det(s: &ScoreSet) -> Vec<(f64, f64)> {
    thresholds(s)
        .into_iter()
        .map(|t| {
            let (m, f, nm, nb) = counts(s, t);
            (m as f64 / nm as f64, f as f64 / nb as f64)
        })
        .collect()
}

/// Rank-sum AUC: P(morph score > bona score) + ½ P(tie).
pub fn rank_auc(s: &ScoreSet) -> f64 {
    let morph: Vec<f64> = s.entries.iter().filter(|e| e.label == Label::Imposter).map(|e| e.score).collect();
    let bona: Vec<f64> = s.entries.iter().filter(|e| e.label == Label::Genuine).map(|e| e.score).collect();
    let mut acc = 0.0;
    for &m in &morph {
        for &b in &bona {
            acc += if m > b {
                1.0
            } else if m == b {
                0.5
            } else {
                0.0
            };
        }
    }
    acc / (morph.len() * bona.len()) as f64
}
