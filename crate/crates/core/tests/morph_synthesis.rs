use image::RgbImage;
use morphdet::dataset::Gender;
use morphdet::imaging::{mean_abs_diff, Point};
use morphdet::morph::{
    anchored, splice_mask, splice_morph, triangulate, warp_blend, ChromaLandmarker, LandmarkSet, Landmarker, FEATHER_RADIUS,
};
use morphdet::synth::{reference_pose, render_face, Capture, Expression, Identity, CANVAS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn reference(seed: u64, gender: Gender) -> (RgbImage, LandmarkSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = Identity::random(format!("s{seed}"), gender, &mut rng);
    let cap = Capture::reference(&mut rng);
    let pose = reference_pose(&mut rng);
    let img = render_face(&id, pose, Expression::default(), &cap, CANVAS, CANVAS).image;
    let lm = ChromaLandmarker.locate(&img, "ref").unwrap();
    (img, lm)
}

/// Monotone-chain hull keeping collinear boundary points.
fn hull_size_with_collinear(points: &[Point]) -> usize {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let chain = |iter: Vec<(f64, f64)>| {
        let mut h: Vec<(f64, f64)> = Vec::new();
        for p in iter {
            while h.len() >= 2 && cross(h[h.len() - 2], h[h.len() - 1], p) < 0.0 {
                h.pop();
            }
            h.push(p);
        }
        h
    };
    let mut lower = chain(pts.clone());
    let mut upper = chain(pts.into_iter().rev().collect());
    lower.pop();
    upper.pop();
    lower.len() + upper.len()
}

#[test]
fn euler_count_on_the_anchored_landmarks() {
    let (_, lm) = reference(1, Gender::Female);
    let pts = anchored(&lm);
    assert_eq!(pts.len(), 76);
    let tris = triangulate(&pts).unwrap();
    let b = hull_size_with_collinear(&pts);
    assert_eq!(tris.len(), 2 * pts.len() - 2 - b);
    assert_eq!(tris, triangulate(&pts).unwrap());
    assert!(tris.windows(2).all(|w| w[0] < w[1]));
    assert!(tris.iter().all(|t| t[0] < t[1] && t[1] < t[2]));
}

#[test]
fn identity_morph_reproduces_the_source() {
    let (img, lm) = reference(2, Gender::Male);
    for alpha in [0.0, 0.3, 0.5, 1.0] {
        let out = warp_blend(&img, &lm, &img, &lm, alpha).unwrap();
        assert!(mean_abs_diff(&out, &img) <= 1.0);
    }
}

#[test]
fn alpha_zero_keeps_the_first_geometry() {
    let (a, la) = reference(3, Gender::Male);
    let (b, lb) = reference(4, Gender::Male);
    let out = warp_blend(&a, &la, &b, &lb, 0.0).unwrap();
    let lo = ChromaLandmarker.locate(&out, "out").unwrap();
    assert!(lo.rms_to(&la) <= 1.0, "rms {}", lo.rms_to(&la));
}

#[test]
fn half_morph_is_symmetric() {
    let (a, la) = reference(5, Gender::Female);
    let (b, lb) = reference(6, Gender::Female);
    let ab = warp_blend(&a, &la, &b, &lb, 0.5).unwrap();
    let ba = warp_blend(&b, &lb, &a, &la, 0.5).unwrap();
    assert!(mean_abs_diff(&ab, &ba) <= 2.0);
    // morph landmarks land between the sources
    let lm = ChromaLandmarker.locate(&ab, "m").unwrap();
    let mid = la.lerp(&lb, 0.5).unwrap();
    assert!(lm.rms_to(&mid) < 1.5, "rms {}", lm.rms_to(&mid));
}

#[test]
fn mismatched_sizes_are_rejected() {
    let (a, la) = reference(7, Gender::Male);
    let small = RgbImage::new(100, 100);
    assert!(warp_blend(&a, &la, &small, &la, 0.5).is_err());
}

#[test]
fn splice_keeps_background_outside_the_band() {
    let (a, la) = reference(8, Gender::Male);
    let (b, lb) = reference(9, Gender::Male);
    let morph = warp_blend(&a, &la, &b, &lb, 0.5).unwrap();
    let spliced = splice_morph(&morph, &a, &la).unwrap();
    let mask = splice_mask(&la).unwrap();
    let inside = mask.iter().filter(|&&m| m == 1.0).count();
    assert!(inside > 0 && inside < mask.len());
    for (i, (s, r)) in spliced.pixels().zip(a.pixels()).enumerate() {
        if mask[i] == 0.0 {
            assert_eq!(s, r);
        }
    }
    let identity = warp_blend(&a, &la, &a, &la, 0.5).unwrap();
    let back = splice_morph(&identity, &a, &la).unwrap();
    assert!(mean_abs_diff(&back, &a) <= 1.0);
    assert!(FEATHER_RADIUS == 11.0);
}
