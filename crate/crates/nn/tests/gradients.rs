use ndarray::{Array2, Array4, ArrayD};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use headgen_nn::gradcheck::{finite_diff, max_rel_err};
use headgen_nn::{Act, Activation, Adam, Conv2d, FcResBlock, Linear, Net, Upsample2x};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Scalar loss used by all checks: weighted sum of outputs, with fixed
/// pseudo-random weights so every output element contributes.
fn weighted_sum(out: &ArrayD<f64>, weights: &[f64]) -> f64 {
    out.iter().zip(weights).map(|(o, w)| o * w).sum()
}

#[test]
fn conv2d_input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(stride, pad) in &[(1usize, 1usize), (2, 1)] {
        let mut conv = Conv2d::new(&mut rng, 2, 3, 3, stride, pad);
        let mut x = rand_vec(&mut rng, 2 * 6 * 6);
        let out_len = conv
            .forward(&Array4::from_shape_vec((1, 2, 6, 6), x.clone()).unwrap())
            .len();
        let w = rand_vec(&mut rng, out_len);

        let x_arr = Array4::from_shape_vec((1, 2, 6, 6), x.clone()).unwrap();
        let out = conv.forward(&x_arr);
        let gout = Array4::from_shape_vec(out.raw_dim(), w.clone()).unwrap();
        conv.zero_grad();
        let dx = conv.backward(&gout);

        let numeric = finite_diff(&mut x, 1e-6, |xs| {
            let mut c = conv.clone();
            let arr = Array4::from_shape_vec((1, 2, 6, 6), xs.to_vec()).unwrap();
            weighted_sum(&c.forward(&arr).into_dyn(), &w)
        });
        let analytic: Vec<f64> = dx.iter().copied().collect();
        assert!(
            max_rel_err(&analytic, &numeric, 1e-6) < 1e-6,
            "stride={stride} pad={pad}"
        );
    }
}

#[test]
fn conv2d_weight_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut conv = Conv2d::new(&mut rng, 2, 2, 3, 2, 1);
    let x = Array4::from_shape_vec((2, 2, 4, 4), rand_vec(&mut rng, 2 * 2 * 4 * 4)).unwrap();
    let out = conv.forward(&x);
    let w = rand_vec(&mut rng, out.len());
    conv.zero_grad();
    conv.backward(&Array4::from_shape_vec(out.raw_dim(), w.clone()).unwrap());
    let analytic: Vec<f64> = conv.weight.grad.iter().copied().collect();

    let mut wflat: Vec<f64> = conv.weight.value.iter().copied().collect();
    let shape = conv.weight.value.raw_dim();
    let numeric = finite_diff(&mut wflat, 1e-6, |ws| {
        let mut c = conv.clone();
        c.weight.value = ArrayD::from_shape_vec(shape.clone(), ws.to_vec()).unwrap();
        weighted_sum(&c.forward(&x).into_dyn(), &w)
    });
    assert!(max_rel_err(&analytic, &numeric, 1e-6) < 1e-6);
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lin = Linear::new(&mut rng, 5, 4);
    let mut x = rand_vec(&mut rng, 3 * 5);
    let w = rand_vec(&mut rng, 3 * 4);

    let x_arr = Array2::from_shape_vec((3, 5), x.clone()).unwrap();
    lin.forward(&x_arr);
    lin.zero_grad();
    let dx = lin.backward(&Array2::from_shape_vec((3, 4), w.clone()).unwrap());

    let numeric = finite_diff(&mut x, 1e-6, |xs| {
        let mut l = lin.clone();
        let arr = Array2::from_shape_vec((3, 5), xs.to_vec()).unwrap();
        weighted_sum(&l.forward(&arr).into_dyn(), &w)
    });
    let analytic: Vec<f64> = dx.iter().copied().collect();
    assert!(max_rel_err(&analytic, &numeric, 1e-6) < 1e-6);
}

#[test]
fn fc_res_block_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut block = FcResBlock::new(&mut rng, 6);
    let mut x = rand_vec(&mut rng, 2 * 6);
    let w = rand_vec(&mut rng, 2 * 6);

    let x_arr = Array2::from_shape_vec((2, 6), x.clone()).unwrap();
    block.forward(&x_arr);
    block.zero_grad();
    let dx = block.backward(&Array2::from_shape_vec((2, 6), w.clone()).unwrap());

    let numeric = finite_diff(&mut x, 1e-6, |xs| {
        let mut b = block.clone();
        let arr = Array2::from_shape_vec((2, 6), xs.to_vec()).unwrap();
        weighted_sum(&b.forward(&arr).into_dyn(), &w)
    });
    let analytic: Vec<f64> = dx.iter().copied().collect();
    assert!(max_rel_err(&analytic, &numeric, 1e-5) < 1e-5);
}

#[test]
fn upsample_backward_is_transpose_of_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let up = Upsample2x;
    let x = Array4::from_shape_vec((1, 2, 3, 3), rand_vec(&mut rng, 18)).unwrap();
    let g = Array4::from_shape_vec((1, 2, 6, 6), rand_vec(&mut rng, 72)).unwrap();
    // <Ax, g> == <x, A^T g> for linear maps.
    let lhs: f64 = up.forward(&x).iter().zip(g.iter()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(up.backward(&g).iter()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn leaky_relu_backward_uses_configured_slope() {
    let mut act = Activation::new(Act::LeakyRelu(0.2));
    let x = ArrayD::from_shape_vec(ndarray::IxDyn(&[4]), vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
    act.forward(&x);
    let g = ArrayD::from_shape_vec(ndarray::IxDyn(&[4]), vec![1.0; 4]).unwrap();
    let dx = act.backward(&g);
    assert_eq!(dx.as_slice().unwrap(), &[0.2, 0.2, 1.0, 1.0]);
}

#[test]
fn adam_skips_frozen_params_and_bias_correction_is_exact_on_step_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lin = Linear::new(&mut rng, 2, 2);
    let before = lin.weight.value.clone();
    lin.weight.trainable = false;
    lin.bias.trainable = true;
    lin.weight.grad.fill(1.0);
    lin.bias.grad.fill(1.0);
    let mut adam = Adam::default();
    adam.step(&mut lin, 0.1);
    assert_eq!(lin.weight.value, before, "frozen weight must not move");
    // With bias correction, the first step moves by exactly lr regardless of
    // gradient scale (up to eps).
    for v in lin.bias.value.iter() {
        assert!((v + 0.1).abs() < 1e-6, "got {v}");
    }
}
