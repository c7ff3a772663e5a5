//! Finite-difference gradient checks per tensor op. The acceptance suite
//! runs the 20-seed sweep over ops and composite blocks; this file keeps a
//! faster per-op smoke that pins every backward rule individually.

use hifi_core::autodiff as ad;
use hifi_core::testkit::check_gradients;
use hifi_core::{Result, Shape, Tensor, Var};

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;

/// Dots the output against a fixed random weighting so every element of the
/// output influences the scalar loss.
fn weighted_sum(out: &Var, seed: u64) -> Var {
    let w = Var::constant(Tensor::uniform(out.shape(), -1.0, 1.0, seed));
    ad::sum_all(&ad::mul(out, &w).expect("same shape"))
}

fn check(build: &dyn Fn(&[Var]) -> Result<Var>, inputs: &[Tensor], label: &str) {
    let report = check_gradients(build, inputs, EPS, 64, 0xC0FFEE).unwrap();
    assert!(
        report.max_rel_err < TOL,
        "{label}: max relative error {} over {} coordinates",
        report.max_rel_err,
        report.coordinates_checked
    );
}

#[test]
fn grad_conv2d() {
    for seed in 0..3u64 {
        let x = Tensor::uniform(Shape::new(2, 2, 5, 5), -1.0, 1.0, seed);
        let w = Tensor::uniform(Shape::new(3, 2, 3, 3), -0.5, 0.5, seed + 50);
        let b = Tensor::uniform(Shape::new(1, 3, 1, 1), -0.5, 0.5, seed + 90);
        check(
            &|vars| Ok(weighted_sum(&ad::conv2d(&vars[0], &vars[1], &vars[2], hifi_core::Activation::Relu)?, 1)),
            &[x.clone(), w.clone(), b.clone()],
            "conv2d+relu",
        );
        check(
            &|vars| Ok(weighted_sum(&ad::conv2d_padded(&vars[0], &vars[1], &vars[2], 0, hifi_core::Activation::None)?, 2)),
            &[x, w, b],
            "conv2d valid",
        );
    }
}

#[test]
fn grad_pools() {
    for seed in 0..3u64 {
        let x = Tensor::uniform(Shape::new(2, 2, 5, 5), -1.0, 1.0, seed + 10);
        check(&|v| Ok(weighted_sum(&ad::maxpool2d(&v[0])?, 3)), &[x.clone()], "maxpool2d");
        check(&|v| Ok(weighted_sum(&ad::avgpool2d(&v[0])?, 4)), &[x], "avgpool2d");
    }
}

#[test]
fn grad_elementwise() {
    let x = Tensor::uniform(Shape::new(1, 3, 4, 4), -1.0, 1.0, 31);
    let y = Tensor::uniform(Shape::new(1, 3, 4, 4), -1.0, 1.0, 32);
    check(&|v| Ok(weighted_sum(&ad::relu(&v[0]), 5)), &[x.clone()], "relu");
    check(&|v| Ok(weighted_sum(&ad::sigmoid(&v[0]), 6)), &[x.clone()], "sigmoid");
    check(&|v| Ok(weighted_sum(&ad::exp(&v[0]), 7)), &[x.clone()], "exp");
    check(&|v| Ok(weighted_sum(&ad::add(&v[0], &v[1])?, 8)), &[x.clone(), y.clone()], "add");
    check(&|v| Ok(weighted_sum(&ad::sub(&v[0], &v[1])?, 9)), &[x.clone(), y.clone()], "sub");
    check(&|v| Ok(weighted_sum(&ad::mul(&v[0], &v[1])?, 10)), &[x.clone(), y.clone()], "mul");
    check(&|v| Ok(weighted_sum(&ad::scale(&v[0], -2.5), 11)), &[x.clone()], "scale");
    check(&|v| Ok(weighted_sum(&ad::add_scalar(&v[0], 0.7), 12)), &[x.clone()], "add_scalar");

    // abs and sqrt away from their singular points
    let pos = Tensor::uniform(Shape::new(1, 2, 3, 3), 0.5, 2.0, 33);
    check(&|v| Ok(weighted_sum(&ad::sqrt(&v[0]), 13)), &[pos], "sqrt");
    let off_zero = Tensor::uniform(Shape::new(1, 2, 3, 3), 0.2, 1.0, 34).map(|v| v - 1.6);
    check(&|v| Ok(weighted_sum(&ad::abs(&v[0]), 14)), &[off_zero], "abs");

    let denom = Tensor::uniform(Shape::new(1, 3, 4, 4), 0.5, 1.5, 35);
    check(&|v| Ok(weighted_sum(&ad::div(&v[0], &v[1])?, 15)), &[x.clone(), denom], "div");
}

#[test]
fn grad_broadcast_ops() {
    let a = Tensor::uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, 41);
    let b = Tensor::uniform(Shape::new(2, 1, 4, 4), -1.0, 1.0, 42);
    check(&|v| Ok(weighted_sum(&ad::add(&v[0], &v[1])?, 16)), &[a.clone(), b.clone()], "add bcast");
    check(&|v| Ok(weighted_sum(&ad::mul(&v[0], &v[1])?, 17)), &[a, b], "mul bcast");
}

#[test]
fn grad_shape_ops() {
    let x = Tensor::uniform(Shape::new(1, 4, 4, 4), -1.0, 1.0, 51);
    let y = Tensor::uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, 52);
    check(
        &|v| Ok(weighted_sum(&ad::concat_channels(&v[0], &v[1])?, 18)),
        &[x.clone(), y.clone()],
        "concat",
    );
    check(&|v| Ok(weighted_sum(&ad::slice_channels(&v[0], 1, 2)?, 19)), &[x.clone()], "slice");
    check(&|v| Ok(weighted_sum(&ad::upsample_nearest(&v[0], 7, 9)?, 20)), &[x.clone()], "upsample");
    check(&|v| Ok(weighted_sum(&ad::subsample2(&v[0])?, 21)), &[x.clone()], "subsample2");
    check(
        &|v| Ok(weighted_sum(&ad::reshape(&v[0], Shape::new(4, 1, 4, 4))?, 22)),
        &[x.clone()],
        "reshape",
    );
    check(&|v| Ok(weighted_sum(&ad::replicate_pad(&v[0], true, true)?, 23)), &[x.clone()], "pad");
    check(&|v| Ok(weighted_sum(&ad::haar_stack(&v[0])?, 24)), &[x.clone()], "haar_stack");
    check(&|v| Ok(ad::mean_all(&v[0])), &[x.clone()], "mean_all");
    check(&|v| Ok(ad::sum_all(&v[0])), &[x], "sum_all");
}

#[test]
fn grad_composed_chain() {
    // a small chain mixing several ops, checked end to end
    for seed in 0..3u64 {
        let x = Tensor::uniform(Shape::new(1, 2, 6, 6), -1.0, 1.0, 100 + seed);
        let w = Tensor::uniform(Shape::new(2, 2, 3, 3), -0.5, 0.5, 200 + seed);
        let b = Tensor::uniform(Shape::new(1, 2, 1, 1), -0.1, 0.1, 300 + seed);
        check(
            &|v| {
                let c = ad::conv2d(&v[0], &v[1], &v[2], hifi_core::Activation::Relu)?;
                let p = ad::maxpool2d(&c)?;
                let s = ad::sigmoid(&p);
                let m = ad::mul(&s, &v[0])?;
                Ok(weighted_sum(&m, 25))
            },
            &[x, w, b],
            "chain",
        );
    }
}
