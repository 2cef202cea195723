mod common;

use common::*;
use morphdet::dataset::Label;
use morphdet::metrics::*;
use proptest::prelude::*;

fn hand_set() -> ScoreSet {
    let morph = [0.9, 0.7, 0.4];
    let bona = [0.3, 0.2, 0.8];
    let mut ids = Vec::new();
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for (i, s) in morph.iter().enumerate() {
        ids.push(format!("m{i}"));
        raw.push(*s);
        labels.push(Label::Imposter);
    }
    for (i, s) in bona.iter().enumerate() {
        ids.push(format!("b{i}"));
        raw.push(*s);
        labels.push(Label::Genuine);
    }
    ScoreSet::from_raw("hand", "test", ids, &raw, &labels, Polarity::LargerIsMorph).unwrap()
}

#[test]
fn hand_set_counts() {
    let s = hand_set();
    let (a, b) = rates_at_threshold(&s, 0.5).unwrap();
    assert!((a - 1.0 / 3.0).abs() < 1e-12 && (b - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(rates_at_threshold(&s, f64::NEG_INFINITY).unwrap(), (0.0, 1.0));
    assert_eq!(rates_at_threshold(&s, f64::INFINITY).unwrap(), (1.0, 0.0));
    let (eer, t) = d_eer(&s).unwrap();
    assert!((eer - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!((eer, t), brute_deer(&s));
    assert!(t > 0.3 && t < 0.8, "threshold {t}");
}

#[test]
fn polarity_is_applied_once() {
    let s = ScoreSet::from_raw("sim", "test", vec!["a".into(), "b".into()], &[0.9, 0.1], &[Label::Genuine, Label::Imposter], Polarity::LargerIsGenuine).unwrap();
    assert_eq!(d_eer(&s).unwrap().0, 0.0);
}

#[test]
fn single_class_and_non_finite_are_rejected() {
    let one = ScoreSet::from_raw("x", "t", vec!["a".into()], &[0.1], &[Label::Genuine], Polarity::LargerIsMorph).unwrap();
    assert!(matches!(d_eer(&one), Err(morphdet::Error::SingleClass(_))));
    assert!(ScoreSet::from_raw("x", "t", vec!["a".into()], &[f64::NAN], &[Label::Genuine], Polarity::LargerIsMorph).is_err());
}

#[test]
fn separable_scores_are_perfect() {
    let ids = (0..6).map(|i| i.to_string()).collect();
    let labels = [Label::Genuine, Label::Genuine, Label::Genuine, Label::Imposter, Label::Imposter, Label::Imposter];
    let s = ScoreSet::from_raw("sep", "t", ids, &[0.1, 0.2, 0.3, 0.7, 0.8, 0.9], &labels, Polarity::LargerIsMorph).unwrap();
    let r = evaluate(&s, 11).unwrap();
    assert_eq!(r.d_eer, 0.0);
    assert!(r.apcer_at_bpcer.values().chain(r.bpcer_at_apcer.values()).all(|v| *v == 0.0));
}

#[test]
fn uninformative_scores_give_half() {
    let n = 10_000;
    let ids = (0..n).map(|i| i.to_string()).collect();
    let labels: Vec<Label> = (0..n).map(|i| if (i * 7919) % 13 < 6 { Label::Imposter } else { Label::Genuine }).collect();
    let s = ScoreSet::from_raw("flat", "t", ids, &vec![0.5; n], &labels, Polarity::LargerIsMorph).unwrap();
    assert!((d_eer(&s).unwrap().0 - 0.5).abs() < 0.02);
}

#[test]
fn random_sets_match_the_exhaustive_sweep() {
    for seed in 0..20 {
        let s = random_set(300, seed);
        assert_eq!(d_eer(&s).unwrap(), brute_deer(&s), "seed {seed}");
        for kind in [FixedKind::Apcer, FixedKind::Bpcer] {
            for v in OPERATING_POINTS {
                let got = rate_at_fixed(&s, kind, v).unwrap();
                let (rate, t) = brute_fixed(&s, kind, v);
                assert_eq!(got.threshold, t);
                assert!((got.rate - rate).abs() <= 1e-12);
            }
        }
        let full = brute_det(&s);
        assert_eq!(det_curve(&s, full.len()).unwrap(), full);
        assert!((det_auc(&full) - rank_auc(&s)).abs() < 1e-9);
    }
}

#[test]
fn det_keeps_endpoints_and_passes_near_the_eer() {
    let s = random_set(500, 99);
    let det = det_curve(&s, 25).unwrap();
    assert_eq!(det.len(), 25);
    assert_eq!(det[0], (0.0, 1.0));
    assert_eq!(*det.last().unwrap(), (1.0, 0.0));
    let full = brute_det(&s);
    let (eer, _) = d_eer(&s).unwrap();
    let step = full.windows(2).map(|w| (w[1].0 - w[0].0).max(w[0].1 - w[1].1)).fold(0.0, f64::max);
    assert!(full.iter().any(|(a, b)| (a - eer).abs() <= step && (b - eer).abs() <= step));
}

#[test]
fn scores_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = random_set(40, 1);
    let mut b = random_set(30, 2);
    b.method_tag = "other".into();
    let path = dir.path().join("scores.csv");
    write_scores_csv(&path, &[&a, &b]).unwrap();
    let back = read_scores_csv(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert!(back.contains(&a) && back.contains(&b));
}

proptest! {
    #[test]
    fn rates_are_monotone_in_threshold(seed in 0u64..500) {
        let s = random_set(120, seed);
        let det = brute_det(&s);
        for w in det.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1);
        }
        let r = evaluate(&s, 21).unwrap();
        for (a, b) in &r.det_samples {
            prop_assert!((0.0..=1.0).contains(a) && (0.0..=1.0).contains(b));
        }
    }

    #[test]
    fn deer_ignores_monotone_transforms(seed in 0u64..500) {
        let s = random_set(150, seed);
        let mut t = s.clone();
        t.entries.iter_mut().for_each(|e| e.score = (e.score * 0.7).exp() + 3.0);
        prop_assert_eq!(d_eer(&s).unwrap().0, d_eer(&t).unwrap().0);
        for v in OPERATING_POINTS {
            prop_assert_eq!(rate_at_fixed(&s, FixedKind::Bpcer, v).unwrap().rate, rate_at_fixed(&t, FixedKind::Bpcer, v).unwrap().rate);
        }
    }

    #[test]
    fn deer_ignores_duplicating_the_set(seed in 0u64..500) {
        let s = random_set(100, seed);
        let mut d = s.clone();
        d.entries.extend(s.entries.iter().cloned());
        prop_assert_eq!(d_eer(&s).unwrap().0, d_eer(&d).unwrap().0);
    }
}
