use hlwnet::nn::*;
use ndarray::{array, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn chain(specs: &[LayerSpec], seed: u64) -> Sequential {
    Sequential::new(specs, &mut rng(seed)).unwrap()
}

fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

fn single(net: Sequential) -> Network {
    Network::new(vec![net], None).unwrap()
}

#[test]
fn activation_values() {
    let net = chain(&[LayerSpec::sigmoid(1)], 0);
    assert_eq!(net.forward(array![[0.0]].view(), &mut Mode::Eval).unwrap().output()[(0, 0)], 0.5);
    let relu = chain(&[LayerSpec::relu(2)], 0);
    let out = relu.forward(array![[-3.0, 3.0]].view(), &mut Mode::Eval).unwrap();
    assert_eq!(out.output(), &array![[0.0, 3.0]]);
}

#[test]
fn eval_batch_norm_with_unit_stats_is_identity() {
    let net = chain(&[LayerSpec::batch_norm(3)], 0);
    let x = random_batch(4, 3, 1);
    let y = net.forward(x.view(), &mut Mode::Eval).unwrap();
    for (a, b) in x.iter().zip(y.output()) {
        assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
    }
}

#[test]
fn train_batch_norm_output_statistics() {
    let mut net = chain(&[LayerSpec::batch_norm(2)], 0);
    if let LayerParams::BatchNorm { gamma, beta, .. } = &mut net.layers[0].params {
        gamma.assign(&array![2.0, 0.5]);
        beta.assign(&array![-1.0, 3.0]);
    }
    let x = random_batch(64, 2, 2) * 10.0;
    let mut r = rng(0);
    let y = net.forward(x.view(), &mut Mode::Train(&mut r)).unwrap().output().clone();
    let mean = y.mean_axis(Axis(0)).unwrap();
    let var = y.var_axis(Axis(0), 0.0);
    let xv = x.var_axis(Axis(0), 0.0);
    assert!((mean[0] + 1.0).abs() < 1e-6 && (mean[1] - 3.0).abs() < 1e-6);
    let shrink = |k: usize| xv[k] / (xv[k] + BN_EPS);
    assert!((var[0] - 4.0 * shrink(0)).abs() < 1e-6 && (var[1] - 0.25 * shrink(1)).abs() < 1e-6, "{var}");
}

#[test]
fn train_batch_norm_rejects_single_sample() {
    let net = chain(&[LayerSpec::batch_norm(2)], 0);
    let mut r = rng(0);
    assert!(net.forward(array![[1.0, 2.0]].view(), &mut Mode::Train(&mut r)).is_err());
    assert!(net.forward(array![[1.0, 2.0]].view(), &mut Mode::Eval).is_ok());
}

#[test]
fn running_stats_follow_momentum() {
    let mut net = chain(&[LayerSpec::batch_norm(1)], 0);
    let x = array![[1.0], [3.0]];
    let mut r = rng(0);
    let trace = net.forward(x.view(), &mut Mode::Train(&mut r)).unwrap();
    net.commit_running_stats(&trace);
    let LayerParams::BatchNorm {
        running_mean,
        running_var,
        ..
    } = &net.layers[0].params
    else {
        panic!()
    };
    assert!((running_mean[0] - 0.2).abs() < 1e-15);
    // unbiased batch variance of {1, 3} is 2
    assert!((running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
}

#[test]
fn dropout_is_identity_in_eval_and_unbiased_in_train() {
    let net = chain(&[LayerSpec::dropout(1000, 0.5)], 0);
    let x = Array2::from_elem((20, 1000), 0.7);
    assert_eq!(net.forward(x.view(), &mut Mode::Eval).unwrap().output(), &x);
    let mut r = rng(3);
    let y = net.forward(x.view(), &mut Mode::Train(&mut r)).unwrap();
    assert!(y.output().iter().all(|&v| v == 0.0 || v == 1.4));
    let mean = y.output().mean().unwrap();
    assert!((mean - 0.7).abs() < 0.02, "{mean}");
}

#[test]
fn dimension_mismatch_is_an_error() {
    let net = chain(&[LayerSpec::fc(3, 2)], 0);
    assert!(net.forward(Array2::zeros((2, 4)).view(), &mut Mode::Eval).is_err());
    assert!(Sequential::new(&[LayerSpec::fc(3, 2), LayerSpec::relu(3)], &mut rng(0)).is_err());
    assert!(Sequential::new(&[LayerSpec::dropout(3, 1.0)], &mut rng(0)).is_err());
}

#[test]
fn xavier_bounds() {
    let net = chain(&[LayerSpec::fc(10, 14)], 5);
    let LayerParams::Dense { weight, bias } = &net.layers[0].params else { panic!() };
    let limit = (6.0f64 / 24.0).sqrt();
    assert!(weight.iter().all(|w| w.abs() <= limit));
    assert!(weight.iter().any(|w| w.abs() > 0.8 * limit));
    assert!(bias.iter().all(|&b| b == 0.0));
}

#[test]
fn mse_values_and_gradient() {
    assert_eq!(mse_loss(&array![[0.3, 0.2]], &array![[0.3, 0.2]]).unwrap().0, 0.0);
    let (l, g) = mse_loss(&array![[0.5, 0.5]], &array![[1.0, 0.0]]).unwrap();
    assert_eq!(l, 0.25);
    assert_eq!(g, array![[-0.5, 0.5]]);
    assert!(mse_loss(&Array2::zeros((0, 2)), &Array2::zeros((0, 2))).is_err());
    assert!(mse_loss(&Array2::zeros((1, 2)), &Array2::zeros((1, 3))).is_err());
}

#[test]
fn mse_gradient_matches_finite_differences() {
    let pred = random_batch(3, 4, 7);
    let label = random_batch(3, 4, 8);
    let (_, g) = mse_loss(&pred, &label).unwrap();
    let h = 1e-5;
    for idx in [(0, 0), (1, 2), (2, 3)] {
        let mut up = pred.clone();
        up[idx] += h;
        let mut down = pred.clone();
        down[idx] -= h;
        let num = (mse_loss(&up, &label).unwrap().0 - mse_loss(&down, &label).unwrap().0) / (2.0 * h);
        assert!((num - g[idx]).abs() / g[idx].abs() < 1e-6);
    }
}

fn check(specs: &[LayerSpec], batch: usize, tol: f64) {
    let net = single(chain(specs, 11));
    let x = random_batch(batch, specs[0].in_dim, 12);
    let y = random_batch(batch, specs[specs.len() - 1].out_dim, 13).mapv(f64::abs);
    let err = grad_check(&net, &[x.view()], &y, 1e-5).unwrap();
    assert!(err < tol, "{specs:?}: {err}");
}

#[test]
fn grad_check_per_layer_kind() {
    check(&[LayerSpec::fc(4, 3)], 5, 1e-8);
    check(&[LayerSpec::fc(4, 3), LayerSpec::batch_norm(3)], 5, 1e-6);
    check(&[LayerSpec::fc(4, 6), LayerSpec::relu(6), LayerSpec::fc(6, 2)], 5, 1e-6);
    check(&[LayerSpec::fc(4, 3), LayerSpec::sigmoid(3)], 5, 1e-6);
    check(&[LayerSpec::fc(4, 6), LayerSpec::dropout(6, 0.5), LayerSpec::fc(6, 2)], 5, 1e-6);
}

#[test]
fn grad_check_through_concat_head() {
    let mut r = rng(4);
    let a = Sequential::new(&[LayerSpec::fc(3, 4), LayerSpec::batch_norm(4), LayerSpec::relu(4)], &mut r).unwrap();
    let b = Sequential::new(&[LayerSpec::fc(5, 2), LayerSpec::sigmoid(2)], &mut r).unwrap();
    let head = Sequential::new(&[LayerSpec::concat(4, 2), LayerSpec::fc(6, 2), LayerSpec::batch_norm(2), LayerSpec::sigmoid(2)], &mut r).unwrap();
    let net = Network::new(vec![a, b], Some(head)).unwrap();
    let xa = random_batch(6, 3, 1);
    let xb = random_batch(6, 5, 2);
    let y = random_batch(6, 2, 3).mapv(f64::abs);
    let err = grad_check(&net, &[xa.view(), xb.view()], &y, 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn corrupted_gradient_is_detected() {
    let net = single(chain(&[LayerSpec::fc(3, 2), LayerSpec::sigmoid(2)], 2));
    let x = random_batch(4, 3, 5);
    let y = random_batch(4, 2, 6).mapv(f64::abs);
    let mut a = analytic_gradient(&net, &[x.view()], &y, 1).unwrap();
    let n = numeric_gradient(&net, &[x.view()], &y, 1, 1e-5).unwrap();
    assert!(max_relative_error(&a, &n) < 1e-8);
    a[2] *= 1.5;
    assert!(max_relative_error(&a, &n) > 1e-2);
}

#[test]
fn batch_one_inference_matches_eval_forward() {
    let mut r = rng(9);
    let a = Sequential::new(&[LayerSpec::fc(6, 5), LayerSpec::batch_norm(5), LayerSpec::relu(5)], &mut r).unwrap();
    let b = Sequential::new(&[LayerSpec::fc(4, 3), LayerSpec::batch_norm(3), LayerSpec::relu(3)], &mut r).unwrap();
    let head = Sequential::new(&[LayerSpec::concat(5, 3), LayerSpec::fc(8, 2), LayerSpec::batch_norm(2), LayerSpec::sigmoid(2)], &mut r).unwrap();
    let mut net = Network::new(vec![a, b], Some(head)).unwrap();
    // non-trivial running statistics
    let xa = random_batch(8, 6, 1);
    let xb = random_batch(8, 4, 2);
    let trace = net.forward(&[xa.view(), xb.view()], &mut Mode::Train(&mut r)).unwrap();
    net.commit_running_stats(&trace);
    let mut xa1 = random_batch(1, 6, 3);
    xa1[(0, 2)] = 0.0;
    let xb1 = random_batch(1, 4, 4);
    let dense = net.predict(&[xa1.view(), xb1.view()]).unwrap();
    let fast = net.infer_one(&[xa1.as_slice().unwrap(), xb1.as_slice().unwrap()]).unwrap();
    for (d, f) in dense.iter().zip(&fast) {
        assert!((d - f).abs() < 1e-14);
    }
}

#[test]
fn seeded_training_steps_are_reproducible() {
    let run = || {
        let mut net = single(chain(&[LayerSpec::fc(3, 8), LayerSpec::batch_norm(8), LayerSpec::relu(8), LayerSpec::dropout(8, 0.5), LayerSpec::fc(8, 1), LayerSpec::sigmoid(1)], 21));
        let mut adam = Adam::new(AdamConfig::default(), &net.param_sizes());
        let mut r = rng(22);
        let x = random_batch(16, 3, 23);
        let y = random_batch(16, 1, 24).mapv(f64::abs);
        let mut losses = vec![];
        for _ in 0..50 {
            let trace = net.forward(&[x.view()], &mut Mode::Train(&mut r)).unwrap();
            let (l, g) = mse_loss(trace.output(), &y).unwrap();
            let grads = net.backward(&trace, &g).unwrap();
            net.commit_running_stats(&trace);
            adam.step(&mut net.params_mut(), &grads.tensors()).unwrap();
            losses.push(l);
        }
        (net, losses)
    };
    let (n1, l1) = run();
    let (n2, l2) = run();
    assert_eq!(l1, l2);
    assert_eq!(n1, n2);
    assert!(l1[49] < l1[0]);
}
