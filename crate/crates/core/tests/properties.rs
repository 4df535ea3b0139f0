use proptest::prelude::*;
use spt_core::gmm::{fit_with, FitOptions};
use spt_core::imaging::{compute_superpixels, decode_pnm, extract_features};
use spt_core::latent::{init_labels, TrainingInstance};
use spt_core::{make_scene, BoundingBox, Image, SceneConfig, Shape};

fn arb_image() -> impl Strategy<Value = Image> {
    (4usize..24, 4usize..24, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
        prop::collection::vec(0u8..=255, w * h * c).prop_map(move |v| Image::new(w, h, c, v.into_iter().map(|b| f64::from(b) / 255.0).collect()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pnm_round_trips_at_8_bits(img in arb_image()) {
        prop_assert_eq!(decode_pnm(&img.to_pnm()).unwrap(), img);
    }

    #[test]
    fn superpixels_partition_the_image(img in arb_image(), target in 1usize..40) {
        let map = compute_superpixels(&img, target.min(img.pixel_count())).unwrap();
        prop_assert!(!map.is_empty());
        prop_assert!(map.labels().iter().all(|&l| l < map.len()));
        let areas = map.areas();
        prop_assert!(areas.iter().all(|&a| a > 0));
        prop_assert_eq!(areas.iter().sum::<usize>(), img.pixel_count());
        let back = spt_core::SuperpixelMap::from_sidecar(&map.to_sidecar()).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn oversized_targets_are_rejected(img in arb_image(), extra in 1usize..10) {
        prop_assert!(compute_superpixels(&img, img.pixel_count() + extra).is_err());
        prop_assert!(compute_superpixels(&img, 0).is_err());
    }

    #[test]
    fn lifting_preserves_area(img in arb_image(), target in 1usize..30, bits in prop::collection::vec(any::<bool>(), 64)) {
        let map = compute_superpixels(&img, target.min(img.pixel_count())).unwrap();
        let labels: Vec<bool> = (0..map.len()).map(|i| bits[i % bits.len()]).collect();
        let mask = map.lift(&labels).unwrap();
        let areas = map.areas();
        let expected: usize = labels.iter().zip(&areas).filter(|(l, _)| **l).map(|(_, a)| a).sum();
        prop_assert_eq!(mask.count(), expected);
    }

    #[test]
    fn graph_is_well_formed(img in arb_image(), target in 2usize..30) {
        let map = compute_superpixels(&img, target.min(img.pixel_count())).unwrap();
        let g = extract_features(&img, &map).unwrap();
        prop_assert_eq!(g.len(), map.len());
        prop_assert_eq!(g.edges.len(), g.boundary_prob.len());
        prop_assert!(g.edges.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(g.edges.iter().all(|&(i, j)| i < j && j < g.len()));
        prop_assert!(g.boundary_prob.iter().all(|b| (0.0..=1.0).contains(b)));
        prop_assert!(g.features.iter().all(|f| f.len() == g.dim() && f.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn gmm_log_likelihood_never_decreases(
        samples in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 4..60),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let out = fit_with(&samples, k.min(samples.len()), seed, &FitOptions::default()).unwrap();
        for w in out.log_likelihoods.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-6 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        let total: f64 = out.mixture.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(out.mixture.variances().iter().flatten().all(|&v| v >= FitOptions::default().variance_floor));
    }

    #[test]
    fn initial_foreground_lies_inside_the_box(seed in any::<u64>(), shrink in 0.2..1.0f64) {
        let scene = make_scene(&SceneConfig { seed, shape: Shape::Blob, ..SceneConfig::default() }).unwrap();
        let map = compute_superpixels(&scene.image, 60).unwrap();
        let graph = extract_features(&scene.image, &map).unwrap();
        let frac = map.fraction_in_box(&scene.bbox);
        let inst = TrainingInstance::new(graph, &map, scene.bbox).unwrap();
        let x = init_labels(&inst, shrink).unwrap();
        for (i, &fg) in x.as_slice().iter().enumerate() {
            prop_assert!(!fg || frac[i] > 0.0, "superpixel {} labelled foreground outside the box", i);
        }
    }
}

#[test]
fn box_geometry() {
    let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
    let b = BoundingBox::new(5.0, 5.0, 15.0, 15.0);
    assert_eq!(a.intersection(&b), 25.0);
    assert!((a.iou(&b) - 25.0 / 175.0).abs() < 1e-12);
    assert_eq!(a.iou(&a), 1.0);
    let s = a.shrink(0.5);
    assert_eq!((s.x0, s.y0, s.x1, s.y1), (2.5, 2.5, 7.5, 7.5));
}
