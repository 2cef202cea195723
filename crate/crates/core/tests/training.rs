use image::{Rgb, RgbImage};
use morphdet::dataset::Label;
use morphdet::embedding::Backbone;
use morphdet::nn::{Arch, Network};
use morphdet::train::{contrastive_loss, finetune_on_morphs, loss_gradient, train_stage, PairData, Siamese, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch() -> Arch {
    Arch {
        input: 160,
        channels: vec![3, 4, 8, 8, 8],
        embedding_dim: 16,
    }
}

/// Each subject is a colored blob at its own position; captures add noise.
fn fixture(subjects: usize, per_subject: usize, seed: u64) -> (Vec<RgbImage>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut owner = Vec::new();
    for s in 0..subjects {
        let cx = 40.0 + 80.0 * (s % 4) as f64 / 3.0;
        let cy = 40.0 + 80.0 * (s / 4 % 4) as f64 / 3.0;
        let color = [60 + (s * 37 % 180) as u8, 60 + (s * 71 % 180) as u8, 60 + (s * 113 % 180) as u8];
        for _ in 0..per_subject {
            let img = RgbImage::from_fn(160, 160, |x, y| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let n: i16 = rng.gen_range(-12..=12);
                let base = if d2 < 900.0 { color } else { [128, 128, 128] };
                Rgb(base.map(|c| (c as i16 + n).clamp(0, 255) as u8))
            });
            images.push(img);
            owner.push(s);
        }
    }
    (images, owner)
}

fn pairs(owner: &[usize], n: usize, seed: u64) -> Vec<(usize, usize, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = rng.gen_range(0..owner.len());
        let b = rng.gen_range(0..owner.len());
        if a == b {
            continue;
        }
        let want_genuine = out.len() % 2 == 0;
        if (owner[a] == owner[b]) == want_genuine {
            out.push((a, b, if want_genuine { Label::Genuine } else { Label::Imposter }));
        }
    }
    out
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr_initial: 0.01,
        seed: 3,
        ..TrainConfig::pretrain()
    }
}

#[test]
fn towers_share_one_parameter_set() {
    let net = Network::new(small_arch(), 1).unwrap();
    let s = Siamese::new(&net);
    let (a, b) = s.towers();
    assert!(std::ptr::eq(a, b));
    assert!(std::ptr::eq(a.params.as_ptr(), b.params.as_ptr()));
}

#[test]
fn training_loss_decreases_on_two_hundred_pairs() {
    let (images, owner) = fixture(12, 4, 11);
    let p = pairs(&owner, 200, 12);
    let mut net = Network::new(small_arch(), 5).unwrap();
    let state = train_stage(&mut net, &PairData { images: &images, pairs: &p }, None, &quick_config(5)).unwrap();
    assert_eq!(state.log.len(), 5);
    let (first, last) = (state.log[0].mean_loss, state.log[4].mean_loss);
    assert!(last < first, "epoch 5 loss {last} not below epoch 1 loss {first}");
}

#[test]
fn zero_finetune_epochs_keep_the_checkpoint() {
    let (images, owner) = fixture(8, 3, 21);
    let p = pairs(&owner, 40, 22);
    let pre = Backbone::new("pre", Network::new(small_arch(), 9).unwrap());
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::finetune()
    };
    let data = PairData { images: &images, pairs: &p };
    let (tuned, state) = finetune_on_morphs(&pre, &data, Some(&data), &cfg).unwrap();
    assert_eq!(tuned.network().params, pre.network().params);
    assert_eq!(state.best_epoch, 0);
    assert_eq!(state.provenance, vec![pre.weights_fingerprint().to_string()]);
}

#[test]
fn same_seed_gives_same_fingerprint() {
    let (images, owner) = fixture(8, 3, 31);
    let p = pairs(&owner, 64, 32);
    let data = PairData { images: &images, pairs: &p };
    let run = || {
        let mut net = Network::new(small_arch(), 4).unwrap();
        train_stage(&mut net, &data, Some(&data), &quick_config(2)).unwrap().checkpoint
    };
    assert_eq!(run(), run());
}

#[test]
fn single_label_pairs_are_rejected() {
    let (images, _) = fixture(2, 2, 41);
    let p = vec![(0, 1, Label::Genuine), (2, 3, Label::Genuine)];
    let mut net = Network::new(small_arch(), 4).unwrap();
    assert!(train_stage(&mut net, &PairData { images: &images, pairs: &p }, None, &quick_config(1)).is_err());
}

#[test]
fn loss_at_the_worked_value() {
    assert!((contrastive_loss(0.4, Label::Imposter, 1.0).unwrap() - 0.36).abs() < 1e-12);
    assert!(contrastive_loss(-0.1, Label::Genuine, 1.0).is_err());
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Genuine), Just(Label::Imposter)]
}

proptest! {
    #[test]
    fn loss_is_non_negative(d in 0.0f64..5.0, y in label(), m in 0.1f64..3.0) {
        prop_assert!(contrastive_loss(d, y, m).unwrap() >= 0.0);
    }

    #[test]
    fn genuine_loss_grows_and_imposter_loss_does_not(d in 0.0f64..5.0, step in 0.0f64..1.0, m in 0.1f64..3.0) {
        let g = |x| contrastive_loss(x, Label::Genuine, m).unwrap();
        let i = |x| contrastive_loss(x, Label::Imposter, m).unwrap();
        prop_assert!(g(d + step) >= g(d));
        prop_assert!(i(d + step) <= i(d));
    }

    #[test]
    fn gradient_matches_central_differences(k in 1usize..=20, y in label()) {
        let (d, m, h) = (k as f64 / 10.0, 1.0, 1e-6);
        prop_assume!((d - m).abs() > 1e-9);
        let num = (contrastive_loss(d + h, y, m).unwrap() - contrastive_loss(d - h, y, m).unwrap()) / (2.0 * h);
        let ana = loss_gradient(d, y, m);
        prop_assert!((num - ana).abs() <= 1e-5 * ana.abs().max(1.0), "d {} num {} ana {}", d, num, ana);
    }
}
