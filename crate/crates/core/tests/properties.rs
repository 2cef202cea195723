use std::collections::BTreeSet;

use morphdet::baselines::{bsif_histogram, lbp_histogram, FilterBank};
use morphdet::cam::{cam_distance, ActivationMap};
use morphdet::dataset::*;
use morphdet::embedding::{pair_distance, EmbeddingVector};
use morphdet::imaging::Plane;
use proptest::prelude::*;

fn vector(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-3.0f32..3.0, len)
}

fn emb(values: Vec<f32>) -> EmbeddingVector {
    EmbeddingVector { values, normalized: false }
}

fn map(grid: Vec<f32>, side: usize) -> ActivationMap {
    ActivationMap {
        width: side,
        height: side,
        grid,
        layer_tag: "block4".into(),
        face_ref: "f".into(),
    }
}

/// Manifest of `genders.len()` subjects with `n_images[i]` bona fide images
/// and morphs over the listed contributor pairs.
fn manifest(genders: &[Gender], n_images: &[usize], morphs: &[(usize, usize)]) -> Manifest {
    let subjects = genders
        .iter()
        .zip(n_images)
        .enumerate()
        .map(|(i, (&gender, &n))| {
            let id = format!("s{i:03}");
            SubjectRecord {
                subject_id: id.clone(),
                gender,
                family: None,
                images: (0..n).map(|k| ImageRef::bona_fide(format!("{id}/{k}.png"), ImageKind::BonaFideProbe, id.clone())).collect(),
            }
        })
        .collect();
    let morphs = morphs
        .iter()
        .filter(|(a, b)| a != b)
        .enumerate()
        .map(|(k, (a, b))| ImageRef::morph(format!("m{k}.png"), vec![format!("s{a:03}"), format!("s{b:03}")]))
        .collect();
    Manifest {
        name: "prop".into(),
        subjects,
        morphs,
    }
}

fn gender() -> impl Strategy<Value = Gender> {
    prop_oneof![Just(Gender::Female), Just(Gender::Male), Just(Gender::Unknown)]
}

#[test]
fn distance_worked_values() {
    assert_eq!(pair_distance(&emb(vec![0.0, 0.0]), &emb(vec![3.0, 4.0])).unwrap(), 5.0);
    assert!(pair_distance(&emb(vec![0.0]), &emb(vec![0.0, 1.0])).is_err());
    let all_zero = map(vec![0.0; 100], 10);
    let all_one = map(vec![1.0; 100], 10);
    assert_eq!(cam_distance(&all_zero, &all_one, 0.45).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn distance_is_a_metric(a in vector(16), b in vector(16), c in vector(16)) {
        let (a, b, c) = (emb(a), emb(b), emb(c));
        let d = |x: &EmbeddingVector, y: &EmbeddingVector| pair_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        let oracle: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!((d(&a, &b) - oracle).abs() < 1e-9);
    }

    #[test]
    fn normalized_distance_is_at_most_two(a in vector(12), b in vector(12)) {
        let (a, b) = (emb(a), emb(b));
        prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
        let d = pair_distance(&a.normalized(), &b.normalized()).unwrap();
        prop_assert!((0.0..=2.0 + 1e-6).contains(&d));
    }

    #[test]
    fn cam_distance_is_a_pseudo_metric(a in prop::collection::vec(0.0f32..1.0, 64), b in prop::collection::vec(0.0f32..1.0, 64), c in prop::collection::vec(0.0f32..1.0, 64), f in 0.0f64..0.95) {
        let (ma, mb, mc) = (map(a.clone(), 8), map(b.clone(), 8), map(c, 8));
        let d = |x: &ActivationMap, y: &ActivationMap| cam_distance(x, y, f).unwrap();
        prop_assert_eq!(d(&ma, &ma), 0.0);
        prop_assert_eq!(d(&ma, &mb), d(&mb, &ma));
        prop_assert!(d(&ma, &mc) <= d(&ma, &mb) + d(&mb, &mc) + 1e-12);
        // naive double loop over the kept rows
        let rows = ((1.0 - f) * 8.0 - 1e-9).ceil() as usize;
        let mut acc = 0.0f64;
        for y in 0..rows {
            for x in 0..8 {
                acc += (a[y * 8 + x] as f64 - b[y * 8 + x] as f64).abs();
            }
        }
        prop_assert!((d(&ma, &mb) - acc / (rows * 8) as f64).abs() < 1e-12);
    }

    #[test]
    fn texture_histograms_are_distributions(pixels in prop::collection::vec(0.0f32..255.0, 12 * 9), w in 3usize..=12) {
        let h = pixels.len() / w;
        let gray = Plane::from_fn(w, h, |x, y| pixels[y * w + x]);
        for hist in [lbp_histogram(&gray).unwrap().histogram, bsif_histogram(&gray, &FilterBank::builtin()).unwrap().histogram] {
            prop_assert_eq!(hist.len(), 256);
            prop_assert!(hist.iter().all(|v| *v >= 0.0));
            prop_assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn splits_are_disjoint_and_stratified(genders in prop::collection::vec(gender(), 6..40), seed in 0u64..1000, frac in 0.2f64..0.8) {
        let n = vec![2; genders.len()];
        let m = manifest(&genders, &n, &[]);
        let count = |g: Gender| genders.iter().filter(|x| **x == g).count();
        let ok = [Gender::Female, Gender::Male, Gender::Unknown].iter().all(|g| count(*g) == 0 || count(*g) >= 2);
        match make_split(&m, frac, 0.25, seed) {
            Err(_) => prop_assert!(!ok),
            Ok(s) => {
                prop_assert!(ok);
                let (tr, va, te) = (s.subjects(SplitName::Train), s.subjects(SplitName::Val), s.subjects(SplitName::Test));
                prop_assert!(tr.is_disjoint(va) && tr.is_disjoint(te) && va.is_disjoint(te));
                prop_assert_eq!(tr.len() + va.len() + te.len(), genders.len());
                prop_assert_eq!(make_split(&m, frac, 0.25, seed).unwrap(), s);
            }
        }
    }

    #[test]
    fn pairs_match_brute_force_enumeration(
        n_images in prop::collection::vec(0usize..4, 10),
        morphs in prop::collection::vec((0usize..10, 0usize..10), 0..12),
        members in prop::collection::btree_set(0usize..10, 0..10),
    ) {
        let genders = vec![Gender::Unknown; 10];
        let m = manifest(&genders, &n_images, &morphs);
        let ids: BTreeSet<String> = members.iter().map(|i| format!("s{i:03}")).collect();
        let split = SplitSpec {
            train_subjects: ids.clone(),
            val_subjects: BTreeSet::new(),
            test_subjects: (0..10).map(|i| format!("s{i:03}")).filter(|s| !ids.contains(s)).collect(),
            seed: 0,
        };
        let pairs = build_pairs(&m, &split, SplitName::Train).unwrap().pairs;
        // combinatorial count over the split members
        let mut expected = 0usize;
        for i in &members {
            expected += n_images[*i] * n_images[*i].saturating_sub(1) / 2;
            for mo in &m.morphs {
                let inside = mo.contributors.iter().all(|c| ids.contains(c));
                if inside && mo.contributors.contains(&format!("s{i:03}")) {
                    expected += n_images[*i];
                }
            }
        }
        prop_assert_eq!(pairs.len(), expected);
        for p in &pairs {
            prop_assert!(p.trusted.kind != ImageKind::Morph);
            match p.label {
                Label::Genuine => prop_assert!(p.questioned.kind != ImageKind::Morph && p.questioned.contributors == p.trusted.contributors && p.questioned.path != p.trusted.path),
                Label::Imposter => prop_assert!(p.questioned.kind == ImageKind::Morph && p.questioned.contributors.contains(&p.trusted.contributors[0])),
            }
        }
    }
}
