//! Per-operation examples with frozen expected values (verified against the
//! independent nested-loop references) plus error-path contracts.

use hifi_core::tensor::{
    add, avgpool2d, concat_channels, conv2d, maxpool2d, mul, relu, sigmoid, slice_channels,
    upsample_nearest, Activation, ConvParams, Shape, Tensor,
};
use hifi_core::testkit;
use hifi_core::{Error, Var};

fn t(shape: Shape, data: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, data).unwrap()
}

fn conv_params(weight: Tensor, bias: Tensor) -> ConvParams {
    ConvParams::new(weight, bias).unwrap()
}

#[test]
fn conv2d_identity_kernel() {
    let x = t(Shape::new(1, 1, 1, 1), vec![5.0]);
    let p = conv_params(t(Shape::new(1, 1, 1, 1), vec![1.0]), Tensor::zeros(Shape::new(1, 1, 1, 1)));
    let y = conv2d(&x, &p, Activation::None).unwrap();
    assert_eq!(y.data(), &[5.0]);
}

#[test]
fn conv2d_ones_3x3_same_padding() {
    // all-ones 3x3 input and kernel: center sees the full window (9), the
    // corners see a 2x2 sub-window (4). Verified against the reference.
    let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
    let p = conv_params(Tensor::full(Shape::new(1, 1, 3, 3), 1.0), Tensor::zeros(Shape::new(1, 1, 1, 1)));
    let y = conv2d(&x, &p, Activation::None).unwrap();
    let reference = testkit::conv2d_reference(&x, &p.weight, &p.bias, 1);
    assert_eq!(y.max_abs_diff(&reference), 0.0);
    assert_eq!(y.data()[y.shape().idx(0, 0, 1, 1)], 9.0);
    assert_eq!(y.data()[y.shape().idx(0, 0, 0, 0)], 4.0);
    assert_eq!(y.data()[y.shape().idx(0, 0, 2, 2)], 4.0);
}

#[test]
fn conv2d_1x1_multichannel_with_relu_bias() {
    let x = Tensor::full(Shape::new(1, 2, 2, 2), 1.0);
    let p = conv_params(Tensor::full(Shape::new(3, 2, 1, 1), 1.0), Tensor::full(Shape::new(1, 3, 1, 1), 1.0));
    let y = conv2d(&x, &p, Activation::Relu).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 3, 2, 2));
    assert!(y.data().iter().all(|&v| v == 3.0));
}

#[test]
fn conv2d_matches_reference_on_random_input() {
    for (k, seed) in [(1usize, 11u64), (3, 12), (5, 13), (7, 14)] {
        let x = Tensor::uniform(Shape::new(2, 3, 6, 7), -1.0, 1.0, seed);
        let w = Tensor::uniform(Shape::new(4, 3, k, k), -0.5, 0.5, seed + 100);
        let b = Tensor::uniform(Shape::new(1, 4, 1, 1), -0.5, 0.5, seed + 200);
        let p = conv_params(w, b);
        let y = conv2d(&x, &p, Activation::None).unwrap();
        let reference = testkit::conv2d_reference(&x, &p.weight, &p.bias, (k - 1) / 2);
        assert!(y.max_abs_diff(&reference) < 1e-12, "k={k}");
    }
}

#[test]
fn conv2d_shape_errors() {
    let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
    let p = conv_params(Tensor::zeros(Shape::new(1, 3, 1, 1)), Tensor::zeros(Shape::new(1, 1, 1, 1)));
    assert!(matches!(conv2d(&x, &p, Activation::None), Err(Error::Shape(_))));
    // even kernels are rejected at construction
    assert!(matches!(
        ConvParams::new(Tensor::zeros(Shape::new(1, 1, 2, 2)), Tensor::zeros(Shape::new(1, 1, 1, 1))),
        Err(Error::Config(_))
    ));
}

#[test]
fn maxpool_examples() {
    let single = t(Shape::new(1, 1, 1, 1), vec![7.0]);
    assert_eq!(maxpool2d(&single).unwrap().data(), &[7.0]);

    let x = t(Shape::new(1, 1, 3, 3), (1..=9).map(f64::from).collect());
    let y = maxpool2d(&x).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_eq!(y.data()[y.shape().idx(0, 0, 1, 1)], 9.0);
    assert_eq!(y.max_abs_diff(&testkit::maxpool2d_reference(&x)), 0.0);

    // constant input: interior keeps the constant, borders are max(c, 0)
    for c in [2.5, -2.5] {
        let x = Tensor::full(Shape::new(1, 1, 5, 5), c);
        let y = maxpool2d(&x).unwrap();
        assert_eq!(y.data()[y.shape().idx(0, 0, 2, 2)], c);
        assert_eq!(y.data()[y.shape().idx(0, 0, 0, 0)], c.max(0.0));
    }

    assert!(matches!(maxpool2d(&Tensor::zeros(Shape::new(1, 0, 3, 3))), Err(Error::Shape(_))));
}

#[test]
fn avgpool_examples() {
    let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
    let y = avgpool2d(&x).unwrap();
    assert_eq!(y.data()[y.shape().idx(0, 0, 1, 1)], 1.0);
    assert_eq!(y.data()[y.shape().idx(0, 0, 0, 0)], 4.0 / 9.0);
    assert_eq!(y.max_abs_diff(&testkit::avgpool2d_reference(&x)), 0.0);

    let zeros = Tensor::zeros(Shape::new(2, 3, 4, 4));
    assert!(avgpool2d(&zeros).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn pools_match_reference_on_random_input() {
    let x = Tensor::uniform(Shape::new(2, 3, 5, 6), -1.0, 1.0, 77);
    assert_eq!(maxpool2d(&x).unwrap().max_abs_diff(&testkit::maxpool2d_reference(&x)), 0.0);
    assert!(avgpool2d(&x).unwrap().max_abs_diff(&testkit::avgpool2d_reference(&x)) < 1e-15);
}

#[test]
fn relu_sigmoid_examples() {
    let x = t(Shape::new(1, 1, 1, 3), vec![-2.0, 0.0, 3.0]);
    assert_eq!(relu(&x).data(), &[0.0, 0.0, 3.0]);

    assert_eq!(sigmoid(&Tensor::scalar(0.0)).data(), &[0.5]);
    for seed in 0..4u64 {
        let x = Tensor::uniform(Shape::new(1, 2, 3, 3), -6.0, 6.0, seed);
        let neg = x.map(|v| -v);
        let s = sigmoid(&x);
        let sn = sigmoid(&neg);
        for (a, b) in s.data().iter().zip(sn.data()) {
            assert!((a + b - 1.0).abs() < 1e-15);
        }
    }
}

#[test]
fn add_mul_examples() {
    let x = Tensor::uniform(Shape::new(1, 3, 4, 4), -1.0, 1.0, 5);
    assert_eq!(add(&x, &Tensor::zeros(x.shape())).unwrap().max_abs_diff(&x), 0.0);
    assert_eq!(mul(&x, &Tensor::full(x.shape(), 1.0)).unwrap().max_abs_diff(&x), 0.0);

    // one-channel broadcast copies across channels
    let a = Tensor::full(Shape::new(1, 2, 2, 2), 1.0);
    let b = Tensor::full(Shape::new(1, 1, 2, 2), 3.0);
    let y = mul(&a, &b).unwrap();
    assert!(y.data().iter().all(|&v| v == 3.0));

    let bad = Tensor::zeros(Shape::new(1, 2, 3, 3));
    assert!(matches!(add(&x, &bad), Err(Error::Shape(_))));
}

#[test]
fn concat_and_slice_examples() {
    let a = Tensor::uniform(Shape::new(1, 16, 4, 4), -1.0, 1.0, 21);
    let b = Tensor::uniform(Shape::new(1, 16, 4, 4), -1.0, 1.0, 22);
    let y = concat_channels(&a, &b).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 32, 4, 4));
    // channel i of the output equals channel i of a for i < a.c
    assert_eq!(slice_channels(&y, 0, 16).unwrap().max_abs_diff(&a), 0.0);
    assert_eq!(slice_channels(&y, 16, 16).unwrap().max_abs_diff(&b), 0.0);

    let empty = Tensor::zeros(Shape::new(1, 0, 4, 4));
    assert_eq!(concat_channels(&a, &empty).unwrap().max_abs_diff(&a), 0.0);

    let bad = Tensor::zeros(Shape::new(1, 2, 5, 5));
    assert!(matches!(concat_channels(&a, &bad), Err(Error::Shape(_))));
}

#[test]
fn upsample_examples() {
    let v = t(Shape::new(1, 1, 1, 1), vec![4.0]);
    let y = upsample_nearest(&v, 2, 2).unwrap();
    assert!(y.data().iter().all(|&x| x == 4.0));

    let x = t(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
    let y = upsample_nearest(&x, 4, 4).unwrap();
    let expected = vec![
        1.0, 1.0, 2.0, 2.0, //
        1.0, 1.0, 2.0, 2.0, //
        3.0, 3.0, 4.0, 4.0, //
        3.0, 3.0, 4.0, 4.0,
    ];
    assert_eq!(y.data(), expected.as_slice());
    assert_eq!(y.max_abs_diff(&testkit::upsample_reference(&x, 4, 4)), 0.0);

    // same-size target is the identity
    assert_eq!(upsample_nearest(&x, 2, 2).unwrap().max_abs_diff(&x), 0.0);

    assert!(matches!(upsample_nearest(&x, 0, 4), Err(Error::Shape(_))));
    assert!(matches!(upsample_nearest(&x, 1, 4), Err(Error::Shape(_))));
}

#[test]
fn backward_square_example() {
    // d(x^2)/dx at x = 3 is 6
    let x = Var::param(Tensor::scalar(3.0));
    let y = hifi_core::autodiff::mul(&x, &x).unwrap();
    let loss = hifi_core::autodiff::sum_all(&y);
    let tape = hifi_core::GradTape::backward(&loss).unwrap();
    assert_eq!(tape.grad(&x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_disconnected_param_is_zero() {
    let x = Var::param(Tensor::scalar(3.0));
    let unused = Var::param(Tensor::uniform(Shape::new(1, 2, 2, 2), -1.0, 1.0, 3));
    let loss = hifi_core::autodiff::sum_all(&hifi_core::autodiff::mul(&x, &x).unwrap());
    let tape = hifi_core::GradTape::backward(&loss).unwrap();
    assert!(tape.grad(&unused).is_none());
    assert!(tape.grad_or_zeros(&unused).data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_requires_scalar_loss() {
    let x = Var::param(Tensor::uniform(Shape::new(1, 1, 2, 2), -1.0, 1.0, 4));
    let y = hifi_core::autodiff::relu(&x);
    assert!(matches!(hifi_core::GradTape::backward(&y), Err(Error::Usage(_))));
}

#[test]
fn ops_are_deterministic() {
    let x = Tensor::uniform(Shape::new(2, 3, 8, 8), -1.0, 1.0, 9);
    let p = conv_params(
        Tensor::uniform(Shape::new(4, 3, 3, 3), -0.5, 0.5, 10),
        Tensor::uniform(Shape::new(1, 4, 1, 1), -0.5, 0.5, 11),
    );
    let a = conv2d(&x, &p, Activation::Relu).unwrap();
    let b = conv2d(&x, &p, Activation::Relu).unwrap();
    assert!(a.bit_eq(&b));
    assert!(maxpool2d(&x).unwrap().bit_eq(&maxpool2d(&x).unwrap()));
}
