//! Metric examples, identities and the dataset evaluation harness.

use hifi_core::metrics::{
    compare_pair, er3c, evaluate_dataset, evaluate_identity, mse, psnr, psnr_from_mse, CSV_HEADER,
};
use hifi_core::{init_params, ImagePair, Shape, Tensor};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;

fn rand01(shape: Shape, seed: u64) -> Tensor {
    Tensor::uniform(shape, 0.0, 1.0, seed)
}

#[test]
fn mse_psnr_examples() {
    let x = rand01(Shape::new(1, 3, 8, 8), 1);
    assert_eq!(mse(&x, &x).unwrap(), 0.0);
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);

    // a uniform +0.1 error: mse 0.01, psnr 20
    let shifted = x.map(|v| v + 0.1);
    let m = mse(&shifted, &x).unwrap();
    assert!((m - 0.01).abs() < 1e-12);
    assert!((psnr_from_mse(m, 1.0) - 20.0).abs() < 1e-9);

    // symmetry
    let y = rand01(Shape::new(1, 3, 8, 8), 2);
    assert_eq!(mse(&x, &y).unwrap(), mse(&y, &x).unwrap());

    assert!(psnr(&x, &y, 0.0).is_err());
}

#[test]
fn er3c_hand_values() {
    let px = |vals: [f64; 3]| {
        Tensor::from_vec(Shape::new(1, 3, 1, 1), vals.to_vec()).unwrap()
    };
    // identical ratio vectors
    assert_eq!(er3c(&px([2.0, 2.0, 2.0]), &px([1.0, 1.0, 1.0])).unwrap(), 0.0);
    // |3-1| + |0-1| + |0-1| = 4
    assert_eq!(er3c(&px([3.0, 0.0, 0.0]), &px([1.0, 1.0, 1.0])).unwrap(), 4.0);

    let x = rand01(Shape::new(1, 3, 6, 6), 3);
    assert_eq!(er3c(&x, &x).unwrap(), 0.0);

    // non-3-channel input is a usage error
    let bad = Tensor::zeros(Shape::new(1, 2, 4, 4));
    assert!(er3c(&bad, &bad).is_err());
}

#[test]
fn er3c_scale_invariance_and_nonnegativity() {
    let x = rand01(Shape::new(1, 3, 8, 8), 4).map(|v| v + 0.05);
    let y = rand01(Shape::new(1, 3, 8, 8), 5).map(|v| v + 0.05);
    let base = er3c(&x, &y).unwrap();
    assert!(base >= 0.0);
    for k in [0.25, 2.0, 7.5] {
        let scaled = x.map(|v| k * v);
        assert!((er3c(&scaled, &y).unwrap() - base).abs() < 1e-6, "k={k}");
    }
}

#[test]
fn metrics_are_pixel_permutation_invariant() {
    let s = Shape::new(1, 3, 6, 6);
    let x = rand01(s, 6);
    let y = rand01(s, 7);
    let mut order: Vec<usize> = (0..36).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    order.shuffle(&mut rng);
    let permute = |t: &Tensor| {
        let mut data = vec![0.0; t.numel()];
        for c in 0..3 {
            for (dst, &src) in order.iter().enumerate() {
                data[c * 36 + dst] = t.data()[c * 36 + src];
            }
        }
        Tensor::from_vec(s, data).unwrap()
    };
    let (px, py) = (permute(&x), permute(&y));
    assert!((mse(&x, &y).unwrap() - mse(&px, &py).unwrap()).abs() < 1e-12);
    assert!((er3c(&x, &y).unwrap() - er3c(&px, &py).unwrap()).abs() < 1e-9);
}

fn synthetic_pairs(n: usize) -> Vec<ImagePair> {
    (0..n)
        .map(|i| {
            let gt = rand01(Shape::new(1, 3, 16, 16), 100 + i as u64);
            let degraded = gt.map(|v| (v * 0.7 + 0.1).clamp(0.0, 1.0));
            ImagePair { id: format!("p{i}"), degraded, ground_truth: gt }
        })
        .collect()
}

#[test]
fn report_rows_and_identities() {
    let pairs = synthetic_pairs(3);
    let report = evaluate_identity(&pairs).unwrap();
    assert_eq!(report.count(), 3);
    assert!(report.errors.is_empty());
    for row in &report.per_image {
        // psnr/mse identity on every row
        let expect = psnr_from_mse(row.mse, 1.0);
        if expect.is_finite() {
            assert!((row.psnr - expect).abs() < 1e-9);
        } else {
            assert_eq!(row.psnr, expect);
        }
    }
    // identity evaluation equals direct pred-vs-gt metrics
    for (row, pair) in report.per_image.iter().zip(&pairs) {
        let direct = compare_pair(&pair.id, &pair.degraded, &pair.ground_truth).unwrap();
        assert_eq!(row.mse, direct.mse);
        assert_eq!(row.ssim, direct.ssim);
        assert_eq!(row.er3c, direct.er3c);
    }
}

#[test]
fn perfect_pair_report_row() {
    let gt = rand01(Shape::new(1, 3, 16, 16), 200);
    let pairs = vec![ImagePair { id: "same".into(), degraded: gt.clone(), ground_truth: gt }];
    let report = evaluate_identity(&pairs).unwrap();
    let row = &report.per_image[0];
    assert_eq!(row.mse, 0.0);
    assert_eq!(row.psnr, f64::INFINITY);
    assert_eq!(row.ssim, 1.0);
    assert_eq!(row.er3c, 0.0);
}

#[test]
fn aggregates_recompute_from_rows() {
    let pairs = synthetic_pairs(2);
    let report = evaluate_identity(&pairs).unwrap();
    let mean = (report.per_image[0].mse + report.per_image[1].mse) / 2.0;
    assert_eq!(report.aggregate_mse().mean, mean);
}

#[test]
fn csv_and_json_contracts() {
    let pairs = synthetic_pairs(2);
    let report = evaluate_identity(&pairs).unwrap();
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    assert_eq!(lines.count(), 2);

    let json = report.to_json();
    assert_eq!(json["count"], 2);
    assert_eq!(json["per_image"].as_array().unwrap().len(), 2);
    assert!(json["aggregate"]["ssim"]["mean"].is_number());

    // non-finite psnr serializes as a string marker
    let gt = rand01(Shape::new(1, 3, 8, 8), 300);
    let perfect = vec![ImagePair { id: "x".into(), degraded: gt.clone(), ground_truth: gt }];
    let j = evaluate_identity(&perfect).unwrap().to_json();
    assert_eq!(j["per_image"][0]["psnr"], serde_json::json!("inf"));
}

#[test]
fn evaluate_dataset_runs_network_and_keeps_order() {
    let params = init_params(9);
    let pairs = synthetic_pairs(4);
    let report = evaluate_dataset(&pairs, &params).unwrap();
    assert_eq!(report.count(), 4);
    let ids: Vec<&str> = report.per_image.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["p0", "p1", "p2", "p3"]);
    for row in &report.per_image {
        assert!(row.mse.is_finite());
        assert!(row.ssim.is_finite());
    }

    assert!(evaluate_dataset(&[], &params).is_err());
}

#[test]
fn evaluation_records_per_item_errors_and_continues() {
    let good = rand01(Shape::new(1, 3, 16, 16), 400);
    let pairs = vec![
        ImagePair { id: "ok".into(), degraded: good.clone(), ground_truth: good.clone() },
        ImagePair {
            id: "broken".into(),
            degraded: Tensor::zeros(Shape::new(1, 2, 16, 16)),
            ground_truth: good,
        },
    ];
    let report = hifi_core::metrics::evaluate_with(&pairs, |d| {
        if d.shape().c != 3 {
            Err(hifi_core::Error::Shape("expected 3 channels".into()))
        } else {
            Ok(d.clone())
        }
    })
    .unwrap();
    assert_eq!(report.count(), 1);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].0, "broken");
}
