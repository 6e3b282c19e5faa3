use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn check(input_shape: &[usize], specs: Vec<LayerSpec>, batch: usize, loss: CheckLoss, seed: u64) -> GradCheckReport {
    let mut net = Sequential::<f64>::new(input_shape, specs, InitScheme::HeNormal, seed).unwrap();
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let x = random_input(&shape, seed + 1000);
    grad_check(&mut net, &x, &loss, &GradCheckConfig::default()).unwrap()
}

fn ws() -> CheckLoss {
    CheckLoss::WeightedSum { seed: 5 }
}

#[test]
fn identity_kernel_conv_reproduces_input() {
    let mut net = Sequential::<f64>::new(&[1, 5, 4], vec![LayerSpec::conv(1, 3, 1, 1)], InitScheme::HeNormal, 1).unwrap();
    let w = &mut net.params_mut().get_mut(0).value;
    w.fill(0.0);
    w.values_mut()[4] = 1.0;
    let x = random_input(&[2, 1, 5, 4], 3);
    let y = net.infer(&x).unwrap();
    assert_eq!(y, x);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let net = Sequential::<f64>::new(&[5], vec![LayerSpec::Softmax], InitScheme::HeNormal, 1).unwrap();
    let y = net.infer(&Tensor::zeros(&[1, 5])).unwrap();
    assert!(y.values().iter().all(|v| (*v - 0.2).abs() < 1e-15));
}

#[test]
fn transposed_conv_shape_law() {
    for (h, w) in [(20, 12), (7, 3), (1, 1)] {
        let spec = LayerSpec::Tconv2d {
            maps: 2,
            kernel: [3, 3],
            stride: [1, 2],
            padding: [1, 1],
            output_padding: [0, 1],
        };
        assert_eq!(spec.output_shape(0, &[1, h, w]).unwrap(), vec![2, h, 2 * w]);
    }
}

#[test]
fn shape_errors_name_the_layer() {
    let err = Sequential::<f32>::new(&[1, 4, 4], vec![LayerSpec::Relu, LayerSpec::dense(3)], InitScheme::HeNormal, 0).unwrap_err();
    assert!(matches!(err, Error::Dimension { layer: 1, .. }), "{err}");
    let mut net = Sequential::<f32>::new(&[3], vec![LayerSpec::dense(2)], InitScheme::HeNormal, 0).unwrap();
    let err = net.forward(&Tensor::zeros(&[2, 4]), Mode::Eval, &mut rng_from_seed(0)).unwrap_err();
    assert!(matches!(err, Error::Dimension { layer: 0, .. }));
    assert!(LayerSpec::Dropout { rate: 1.0 }.output_shape(0, &[3]).is_err());
    assert!(LayerSpec::conv(1, 3, 0, 0).output_shape(0, &[1, 5, 5]).is_err());
}

#[test]
fn backward_before_forward_is_a_state_error() {
    let mut net = Sequential::<f64>::new(&[3], vec![LayerSpec::dense(2)], InitScheme::HeNormal, 0).unwrap();
    assert!(matches!(net.backward(&Tensor::zeros(&[1, 2]), false), Err(Error::State(_))));
}

#[test]
fn dense_sum_gradient_is_outer_product() {
    let mut net = Sequential::<f64>::new(&[3], vec![LayerSpec::dense(2)], InitScheme::HeNormal, 0).unwrap();
    let x = Tensor::from_vec(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
    net.forward(&x, Mode::Train, &mut rng_from_seed(0)).unwrap();
    net.backward(&Tensor::filled(&[1, 2], 1.0), false).unwrap();
    let g = net.params().get(0).grad.as_ref().unwrap();
    assert_eq!(g.values(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    assert_eq!(net.params().get(1).grad.as_ref().unwrap().values(), &[1.0, 1.0]);
}

#[test]
fn relu_blocks_gradient_at_negative_input() {
    let mut net = Sequential::<f64>::new(&[2], vec![LayerSpec::Relu], InitScheme::HeNormal, 0).unwrap();
    let x = Tensor::from_vec(vec![1, 2], vec![-0.5, 0.5]).unwrap();
    net.forward(&x, Mode::Train, &mut rng_from_seed(0)).unwrap();
    let dx = net.backward(&Tensor::filled(&[1, 2], 1.0), true).unwrap().unwrap();
    assert_eq!(dx.values(), &[0.0, 1.0]);
}

#[test]
fn untouched_parameters_get_zero_gradient() {
    // the second dense layer's bias receives gradient, but a zero upstream
    // gradient leaves everything at zero
    let mut net = Sequential::<f64>::new(&[3], vec![LayerSpec::dense(4), LayerSpec::Relu, LayerSpec::dense(2)], InitScheme::HeNormal, 2).unwrap();
    let x = random_input(&[3, 3], 1);
    net.forward(&x, Mode::Train, &mut rng_from_seed(0)).unwrap();
    net.backward(&Tensor::zeros(&[3, 2]), false).unwrap();
    assert!(net.params().iter().filter_map(|p| p.grad.as_ref()).all(|g| g.values().iter().all(|v| *v == 0.0)));
}

#[test]
fn identity_network_has_zero_error() {
    let r = check(&[2, 3, 3], vec![LayerSpec::Flatten], 2, ws(), 1);
    assert_eq!(r.max_param_error(), 0.0);
    assert!(r.input.max_rel_error < 1e-8);
    assert!(r.passed);
}

#[test]
fn gradients_match_finite_differences_per_layer() {
    let cases: Vec<(Vec<usize>, Vec<LayerSpec>)> = vec![
        (vec![2, 5, 4], vec![LayerSpec::conv(3, 3, 1, 1)]),
        (vec![1, 7, 8], vec![LayerSpec::conv(2, 3, 3, 0)]),
        (
            vec![2, 4, 3],
            vec![LayerSpec::Tconv2d {
                maps: 3,
                kernel: [3, 3],
                stride: [1, 2],
                padding: [1, 1],
                output_padding: [0, 1],
            }],
        ),
        (vec![3, 2, 3], vec![LayerSpec::local1x1(2)]),
        (vec![6], vec![LayerSpec::dense(4)]),
        (vec![2, 3, 3], vec![LayerSpec::Batchnorm]),
        (vec![5], vec![LayerSpec::Batchnorm]),
        (vec![7], vec![LayerSpec::LeakyRelu { slope: 0.2 }]),
        (vec![7], vec![LayerSpec::Tanh]),
        (vec![7], vec![LayerSpec::Sigmoid]),
        (vec![7], vec![LayerSpec::Softmax]),
        (vec![7], vec![LayerSpec::Dropout { rate: 0.3 }]),
        (vec![7], vec![LayerSpec::Relu]),
        (vec![2, 3, 2], vec![LayerSpec::Flatten, LayerSpec::Reshape { shape: vec![3, 2, 2] }]),
    ];
    for (shape, specs) in cases {
        let name = specs[0].name();
        let r = check(&shape, specs, 3, ws(), 11);
        assert!(r.passed, "{name}: {r:?}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let r = check(&[4], vec![LayerSpec::dense(1), LayerSpec::Sigmoid], 3, CheckLoss::Bce { targets: vec![1.0, 0.0, 1.0] }, 3);
    assert!(r.passed, "{r:?}");
    let r = check(&[4], vec![LayerSpec::dense(3), LayerSpec::Softmax], 4, CheckLoss::Xent { labels: vec![0, 2, 1, 2] }, 4);
    assert!(r.passed, "{r:?}");
}

#[test]
fn batchnorm_train_mode_normalizes_batch() {
    let mut net = Sequential::<f64>::new(&[3, 2, 2], vec![LayerSpec::Batchnorm], InitScheme::HeNormal, 0).unwrap();
    let x = random_input(&[4, 3, 2, 2], 9).map(|v| 3.0 * v + 1.5);
    let y = net.forward(&x, Mode::Train, &mut rng_from_seed(0)).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|s| y.sample(s)[c * 4..(c + 1) * 4].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
    // running statistics moved away from their initial values
    assert!(net.params().by_name("0.batchnorm.running_mean").unwrap().value.values().iter().any(|v| *v != 0.0));
    let before = net.params().clone();
    net.forward(&x, Mode::TrainFrozenStats, &mut rng_from_seed(0)).unwrap();
    assert_eq!(&before, net.params());
}

#[test]
fn dropout_is_identity_in_eval_and_unbiased_in_train() {
    let mut net = Sequential::<f64>::new(&[1000], vec![LayerSpec::Dropout { rate: 0.2 }], InitScheme::HeNormal, 0).unwrap();
    let x = Tensor::filled(&[20, 1000], 1.0);
    assert_eq!(net.infer(&x).unwrap(), x);
    let y = net.forward(&x, Mode::Train, &mut rng_from_seed(3)).unwrap();
    let mean = y.sum() / y.len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    assert!(y.values().iter().all(|v| *v == 0.0 || (*v - 1.25).abs() < 1e-12));
}

#[test]
fn locally_connected_does_not_share_weights() {
    let mut net = Sequential::<f64>::new(&[1, 1, 2], vec![LayerSpec::local1x1(1)], InitScheme::HeNormal, 0).unwrap();
    net.params_mut().get_mut(0).value = Tensor::from_vec(vec![2, 1, 1], vec![2.0, -3.0]).unwrap();
    let y = net.infer(&Tensor::filled(&[1, 1, 1, 2], 1.0)).unwrap();
    assert_eq!(y.values(), &[2.0, -3.0]);
}

#[test]
fn training_is_reproducible() {
    let run = || {
        let mut net = Sequential::<f32>::new(
            &[1, 6, 4],
            vec![
                LayerSpec::conv(2, 3, 1, 1),
                LayerSpec::Batchnorm,
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::dense(3),
                LayerSpec::Softmax,
            ],
            InitScheme::HeNormal,
            42,
        )
        .unwrap();
        let x = random_input(&[4, 1, 6, 4], 1).cast::<f32>();
        let mut rng = rng_from_seed(9);
        let sgd = Sgd::new(StepSchedule::default());
        for _ in 0..5 {
            net.zero_grad();
            let y = net.forward(&x, Mode::Train, &mut rng).unwrap();
            let (_, dy) = xent_batch(&y, &[0, 1, 2, 0]).unwrap();
            net.backward(&dy, false).unwrap();
            sgd.step(net.params_mut(), 0);
        }
        param_digest(net.params())
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_loads_into_matching_network() {
    let net = Sequential::<f32>::new(&[3], vec![LayerSpec::dense(2), LayerSpec::Batchnorm], InitScheme::Dcgan, 5).unwrap();
    let bytes = encode_checkpoint(&net.params().named_tensors());
    let tensors = decode_checkpoint(&bytes).unwrap();
    let mut other = Sequential::<f32>::new(&[3], vec![LayerSpec::dense(2), LayerSpec::Batchnorm], InitScheme::Dcgan, 6).unwrap();
    assert_ne!(param_digest(net.params()), param_digest(other.params()));
    other.params_mut().load(&tensors).unwrap();
    assert_eq!(param_digest(net.params()), param_digest(other.params()));
    let mut wrong = Sequential::<f32>::new(&[4], vec![LayerSpec::dense(2), LayerSpec::Batchnorm], InitScheme::Dcgan, 6).unwrap();
    assert!(wrong.params_mut().load(&tensors).is_err());
}
