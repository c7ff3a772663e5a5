//! Image codecs, pair loading, and the synthetic degradation model.

use hifi_core::data::{
    decode_ppm, encode_ppm, load_image, load_pairs, save_image, synth_degrade, synth_image,
    synth_pairs, DegradationSpec,
};
use hifi_core::metrics::er3c;
use hifi_core::{Shape, Tensor};
use proptest::prelude::*;

#[test]
fn ppm_encode_is_bit_exact() {
    let t = Tensor::from_vec(
        Shape::new(1, 3, 2, 2),
        vec![
            0.0, 1.0, 0.5, 0.25, // r
            1.0, 0.0, 0.5, 0.75, // g
            0.2, 0.4, 0.6, 0.8, // b
        ],
    )
    .unwrap();
    let bytes = encode_ppm(&t).unwrap();
    assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
    assert_eq!(bytes.len(), 11 + 12);

    let back = decode_ppm(&bytes).unwrap();
    let again = encode_ppm(&back).unwrap();
    assert_eq!(bytes, again, "8-bit content must round-trip exactly");
}

#[test]
fn ppm_decoder_handles_comments_and_whitespace() {
    // pixels: (0x00, 0x7f, 0xff) and (0x01, 0x02, 0x03), planar layout in the tensor
    let bytes = b"P6 # comment\n# another\n 2\t1 \n255\n\x00\x7f\xff\x01\x02\x03".to_vec();
    let t = decode_ppm(&bytes).unwrap();
    assert_eq!(t.shape(), Shape::new(1, 3, 1, 2));
    assert_eq!(t.data()[0], 0.0); // r of pixel 0
    assert_eq!(t.data()[1], 1.0 / 255.0); // r of pixel 1
    assert_eq!(t.data()[2], 127.0 / 255.0); // g of pixel 0
    assert_eq!(t.data()[5], 3.0 / 255.0); // b of pixel 1
}

#[test]
fn ppm_pixel_values_map_to_unit_range() {
    // pixel value 255 maps to exactly 1.0
    let bytes = b"P6\n1 1\n255\n\xff\x00\x80".to_vec();
    let t = decode_ppm(&bytes).unwrap();
    assert_eq!(t.data()[0], 1.0);
    assert_eq!(t.data()[1], 0.0);
    assert_eq!(t.data()[2], 128.0 / 255.0);
}

#[test]
fn ppm_decoder_error_paths() {
    assert!(decode_ppm(b"P5\n1 1\n255\n\x00").is_err());
    assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x01").is_err()); // truncated payload
    assert!(decode_ppm(b"P6\n0 4\n255\n").is_err());
    assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
}

#[test]
fn image_files_round_trip_at_8bit() {
    let dir = tempfile::tempdir().unwrap();
    let t = synth_image(9, 13, 5);
    for name in ["img.ppm", "img.png"] {
        let path = dir.path().join(name);
        save_image(&t, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        // quantization error is at most half an 8-bit step
        assert!(t.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
        // a second save/load cycle is lossless
        let path2 = dir.path().join(format!("again_{name}"));
        save_image(&back, &path2).unwrap();
        let back2 = load_image(&path2).unwrap();
        assert_eq!(back.max_abs_diff(&back2), 0.0);
    }
}

#[test]
fn load_pairs_matches_by_stem() {
    let dir = tempfile::tempdir().unwrap();
    let deg = dir.path().join("deg");
    let gt = dir.path().join("gt");
    std::fs::create_dir_all(&deg).unwrap();
    std::fs::create_dir_all(&gt).unwrap();

    let img = synth_image(8, 8, 1);
    save_image(&img, &deg.join("a.png")).unwrap();
    save_image(&img, &deg.join("b.png")).unwrap();
    save_image(&img, &gt.join("a.png")).unwrap();
    save_image(&img, &gt.join("c.png")).unwrap();

    let loaded = load_pairs(&deg, &gt).unwrap();
    assert_eq!(loaded.pairs.len(), 1);
    assert_eq!(loaded.pairs[0].id, "a");
    assert_eq!(loaded.warnings.len(), 2);

    // no matching stems at all -> usage error
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(load_pairs(&deg, &empty).is_err());
}

#[test]
fn load_pairs_records_undecodable_files() {
    let dir = tempfile::tempdir().unwrap();
    let deg = dir.path().join("deg");
    let gt = dir.path().join("gt");
    std::fs::create_dir_all(&deg).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let img = synth_image(8, 8, 2);
    save_image(&img, &deg.join("a.png")).unwrap();
    save_image(&img, &gt.join("a.png")).unwrap();
    std::fs::write(deg.join("bad.png"), b"not a png").unwrap();
    save_image(&img, &gt.join("bad.png")).unwrap();

    let loaded = load_pairs(&deg, &gt).unwrap();
    assert_eq!(loaded.pairs.len(), 1);
    assert_eq!(loaded.errors.len(), 1);
    assert_eq!(loaded.errors[0].0, "bad");
}

#[test]
fn degradation_identity_and_determinism() {
    let gt = synth_image(16, 16, 3);
    let null = DegradationSpec {
        attenuation: [1.0, 1.0, 1.0],
        beta: 0.0,
        noise_sigma: 0.0,
        ..Default::default()
    };
    assert_eq!(synth_degrade(&gt, &null).unwrap().max_abs_diff(&gt), 0.0);

    let spec = DegradationSpec::default();
    let a = synth_degrade(&gt, &spec).unwrap();
    let b = synth_degrade(&gt, &spec).unwrap();
    assert!(a.bit_eq(&b), "same spec + seed must be bit-identical");

    let other = DegradationSpec { seed: spec.seed + 1, ..spec };
    assert!(a.max_abs_diff(&synth_degrade(&gt, &other).unwrap()) > 0.0);
}

#[test]
fn degradation_changes_channel_ratios() {
    // white image through (1, 0.5, 0.5) attenuation: pixel becomes
    // (1, 0.5, 0.5), so the ratio error vs ground truth is positive
    let white = Tensor::full(Shape::new(1, 3, 4, 4), 1.0);
    let spec = DegradationSpec {
        attenuation: [1.0, 0.5, 0.5],
        beta: 0.0,
        noise_sigma: 0.0,
        ..Default::default()
    };
    let degraded = synth_degrade(&white, &spec).unwrap();
    let s = degraded.shape();
    assert_eq!(degraded.data()[s.idx(0, 0, 0, 0)], 1.0);
    assert_eq!(degraded.data()[s.idx(0, 1, 0, 0)], 0.5);
    assert_eq!(degraded.data()[s.idx(0, 2, 0, 0)], 0.5);
    assert!(er3c(&degraded, &white).unwrap() > 0.0);
}

#[test]
fn degradation_spec_validation() {
    let mut spec = DegradationSpec::default();
    spec.attenuation[0] = 0.0;
    assert!(spec.validate().is_err());
    let spec = DegradationSpec { beta: -1.0, ..Default::default() };
    assert!(spec.validate().is_err());
    let spec = DegradationSpec { noise_sigma: -0.1, ..Default::default() };
    assert!(spec.validate().is_err());
}

#[test]
fn synth_pairs_are_shaped_and_seeded() {
    let spec = DegradationSpec::default();
    let pairs = synth_pairs(4, 32, 32, &spec, 77).unwrap();
    assert_eq!(pairs.len(), 4);
    for p in &pairs {
        assert_eq!(p.degraded.shape(), Shape::new(1, 3, 32, 32));
        assert_eq!(p.ground_truth.shape(), Shape::new(1, 3, 32, 32));
    }
    let again = synth_pairs(4, 32, 32, &spec, 77).unwrap();
    assert!(pairs[2].degraded.bit_eq(&again[2].degraded));
    // different pairs differ
    assert!(pairs[0].ground_truth.max_abs_diff(&pairs[1].ground_truth) > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn prop_degraded_output_in_unit_range(seed in any::<u64>(), sigma in 0.0f64..0.2) {
        let gt = synth_image(12, 12, seed);
        let spec = DegradationSpec { noise_sigma: sigma, seed, ..Default::default() };
        let out = synth_degrade(&gt, &spec).unwrap();
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
