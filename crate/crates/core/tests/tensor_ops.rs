use edgesr_core::{BatchNormMode, Error, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn conv_sums_ones_and_passes_identity() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
    let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
    let b = tape.constant(t(&[1], &[0.0])).unwrap();
    let y = tape.conv2d(x, w, Some(b), 1, 1).unwrap();
    assert_eq!(tape.shape(y), [1, 1, 3, 3]);
    assert_eq!(tape.value(y).data()[4], 9.0);
    assert_eq!(tape.value(y).data()[0], 4.0);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xv = Tensor::<f64>::uniform(&[2, 1, 5, 4], -1.0, 1.0, &mut rng);
    let x = tape.constant(xv.clone()).unwrap();
    let w = tape.constant(t(&[1, 1, 1, 1], &[1.0])).unwrap();
    let y = tape.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(tape.value(y), &xv);
}

#[test]
fn conv_output_extent_uses_floor() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 7, 6])).unwrap();
    let w = tape.constant(Tensor::zeros(&[3, 2, 3, 3])).unwrap();
    let y = tape.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(tape.shape(y), [1, 3, 4, 3]);
    let bad = tape.constant(Tensor::zeros(&[3, 5, 3, 3])).unwrap();
    assert!(matches!(tape.conv2d(x, bad, None, 1, 1), Err(Error::Shape { .. })));
}

#[test]
fn batch_norm_train_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xv = Tensor::<f64>::uniform(&[4, 8, 16, 16], -3.0, 7.0, &mut rng);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(xv).unwrap();
    let (mut rm, mut rv) = (vec![0.0; 8], vec![1.0; 8]);
    let y = tape.batch_norm(x, BatchNormMode::Train, &mut rm, &mut rv, 1e-5, 0.1).unwrap();
    let d = tape.value(y).data();
    for c in 0..8 {
        let vals: Vec<f64> = (0..4).flat_map(|n| d[(n * 8 + c) * 256..(n * 8 + c + 1) * 256].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
    }
    assert!(rm.iter().all(|&m| m > 0.0), "running mean moved toward the batch mean");
}

#[test]
fn batch_norm_constant_channels_give_zeros_and_standardized_input_is_kept() {
    let mut tape = Tape::<f64>::new();
    let data: Vec<f64> = (0..2 * 3 * 4).map(|i| ((i / 4) % 3) as f64 * 5.0 + 1.0).collect();
    let x = tape.constant(t(&[2, 3, 2, 2], &data)).unwrap();
    let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
    let y = tape.batch_norm(x, BatchNormMode::Train, &mut rm, &mut rv, 1e-5, 0.1).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let z = t(&[2, 1, 1, 2], &[-1.0, 1.0, 1.0, -1.0]);
    let x = tape.constant(z.clone()).unwrap();
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    let y = tape.batch_norm(x, BatchNormMode::Train, &mut rm, &mut rv, 1e-12, 0.1).unwrap();
    assert!(close(tape.value(y).data(), z.data(), 1e-9));
}

#[test]
fn prelu_matches_definition() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 3], &[-2.0, 0.0, 3.0])).unwrap();
    let a = tape.constant(t(&[1], &[0.25])).unwrap();
    let y = tape.prelu(x, a).unwrap();
    assert_eq!(tape.value(y).data(), &[-0.5, 0.0, 3.0]);
    let zero = tape.constant(t(&[1], &[0.0])).unwrap();
    let y = tape.prelu(x, zero).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 3.0]);
}

#[test]
fn prelu_slope_gradient_on_negative_inputs() {
    let xs = [-1.5, -0.25, -3.0, 2.0];
    let loss = |alpha: f64| -> (f64, f64) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 4], &xs)).unwrap();
        let a = tape.leaf(t(&[1], &[alpha]), true).unwrap();
        let y = tape.prelu(x, a).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        (tape.value(s).data()[0], tape.grad(a).unwrap().data()[0])
    };
    let (_, g) = loss(0.3);
    let h = 1e-6;
    let fd = (loss(0.3 + h).0 - loss(0.3 - h).0) / (2.0 * h);
    assert!((g - fd).abs() < 1e-4);
    assert!((g - (-4.75)).abs() < 1e-12);
}

#[test]
fn sigmoid_symmetry_saturation_and_derivative() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[4], &[0.0, 50.0, -50.0, 1.3]), true).unwrap();
    let y = tape.sigmoid(x).unwrap();
    let v = tape.value(y).data().to_vec();
    assert_eq!(v[0], 0.5);
    assert!((v[1] - 1.0).abs() < 1e-9 && v[2].abs() < 1e-9);
    assert!(v.iter().all(|p| p.is_finite()));
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(x).unwrap().data();
    for (gi, p) in g.iter().zip(&v) {
        assert!((gi - p * (1.0 - p)).abs() < 1e-6);
    }
}

#[test]
fn global_average_pool_and_linear() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]), true).unwrap();
    let p = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.shape(p), [1, 2]);
    assert_eq!(tape.value(p).data(), &[2.5, 7.0]);
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 0.25));

    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
    let eye = tape.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
    let zb = tape.constant(Tensor::zeros(&[3])).unwrap();
    let y = tape.linear(x, eye, Some(zb)).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let zw = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(t(&[2], &[0.5, -2.0])).unwrap();
    let y = tape.linear(x, zw, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -2.0, 0.5, -2.0]);
}

#[test]
fn pixel_shuffle_layout_and_round_trip() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let y = tape.pixel_shuffle(x, 2).unwrap();
    assert_eq!(tape.shape(y), [1, 1, 2, 2]);
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    let same = tape.pixel_shuffle(x, 1).unwrap();
    assert_eq!(tape.value(same), tape.value(x));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for r in [2, 3, 4] {
        let v = Tensor::<f64>::uniform(&[2, 2 * r * r, 3, 5], -1.0, 1.0, &mut rng);
        let x = tape.constant(v.clone()).unwrap();
        let up = tape.pixel_shuffle(x, r).unwrap();
        assert_eq!(tape.shape(up), [2, 2, 3 * r, 5 * r]);
        let back = tape.pixel_unshuffle(up, r).unwrap();
        assert_eq!(tape.value(back), &v);
    }
    let odd = tape.constant(Tensor::zeros(&[1, 3, 2, 2])).unwrap();
    assert!(tape.pixel_shuffle(odd, 2).is_err());
}

#[test]
fn losses_and_concat() {
    let mut tape = Tape::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = tape.constant(Tensor::uniform(&[2, 3, 4, 4], 0.0, 1.0, &mut rng)).unwrap();
    let m = tape.mse_mean(a, a).unwrap();
    assert_eq!(tape.value(m).data(), &[0.0]);
    let p = tape.constant(t(&[1], &[0.5])).unwrap();
    let b = tape.bce(p, 1.0).unwrap();
    assert!((tape.value(b).data()[0] - std::f64::consts::LN_2).abs() < 1e-6);
    let logit = tape.constant(t(&[1], &[0.0])).unwrap();
    let b = tape.bce_with_logits(logit, 1.0).unwrap();
    assert!((tape.value(b).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

    let c = tape.constant(Tensor::uniform(&[2, 5, 4, 4], 0.0, 1.0, &mut rng)).unwrap();
    let j = tape.concat_channels(&[a, c]).unwrap();
    assert_eq!(tape.shape(j), [2, 8, 4, 4]);
    let back_a = tape.narrow_channels(j, 0, 3).unwrap();
    let back_c = tape.narrow_channels(j, 3, 5).unwrap();
    assert_eq!(tape.value(back_a), tape.value(a));
    assert_eq!(tape.value(back_c), tape.value(c));
}

#[test]
fn backward_contract() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]), true).unwrap();
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    assert!(matches!(tape.backward(s), Err(Error::Backward(_))));

    let mut tape = Tape::<f64>::new();
    tape.retain_graph(true);
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Backward(_))), "non-scalar loss");
}

#[test]
fn only_leaves_keep_gradients() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), true).unwrap();
    let y = tape.scale(x, 2.0).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    assert!(tape.grad(y).is_none());
}

#[test]
fn large_inputs_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v = Tensor::<f32>::uniform(&[2, 3, 6, 6], -1e3, 1e3, &mut rng);
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(v, true).unwrap();
    let s = tape.sigmoid(x).unwrap();
    let ls = tape.log_sigmoid(x).unwrap();
    let b = tape.bce_with_logits(x, 1.0).unwrap();
    let m = tape.mean(ls).unwrap();
    let total = tape.add(b, m).unwrap();
    let sm = tape.mean(s).unwrap();
    let total = tape.add(total, sm).unwrap();
    tape.backward(total).unwrap();
    assert!(tape.value(total).is_finite());
    assert!(tape.grad(x).unwrap().is_finite());
}

#[test]
fn non_finite_results_are_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[1.0, 0.0])).unwrap();
    assert!(matches!(tape.log(x), Err(Error::NonFinite { .. })));
    let inf = Tensor::new(&[1], vec![f64::INFINITY]).unwrap();
    assert!(tape.constant(inf).is_err());
}
