use approx::assert_abs_diff_eq;
use lungseg_core::nn::{BatchNormMode, Padding, Tape, Tensor, Var};
use proptest::prelude::*;

fn t(dims: &[usize], v: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(dims, v).unwrap()
}

fn eval(f: impl FnOnce(&mut Tape<f64>) -> Var) -> Tensor<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape);
    tape.take_value(v)
}

#[test]
fn identity_pointwise_kernel() {
    let x = t(&[1, 3, 3, 1], (0..9).map(f64::from).collect());
    let y = eval(|tp| {
        let (a, k) = (tp.constant(x.clone()), tp.constant(t(&[1, 1, 1, 1], vec![1.0])));
        tp.conv2d(a, k, 1, Padding::Same).unwrap()
    });
    assert_eq!(y, x);
}

#[test]
fn ones_kernel_on_constant_image() {
    let c = 1.75;
    let x = Tensor::full(&[1, 6, 6, 1], c);
    let y = eval(|tp| {
        let (a, k) = (tp.constant(x), tp.constant(Tensor::full(&[3, 3, 1, 1], 1.0)));
        tp.conv2d(a, k, 1, Padding::Same).unwrap()
    });
    assert_eq!(y.dims(), &[1, 6, 6, 1]);
    for r in 1..5 {
        for col in 1..5 {
            assert_eq!(y.values()[r * 6 + col], 9.0 * c);
        }
    }
    // corners see four in-bounds taps
    assert_eq!(y.values()[0], 4.0 * c);
}

#[test]
fn valid_and_strided_shapes() {
    let x = Tensor::<f64>::zeros(&[2, 9, 8, 3]);
    let k = Tensor::<f64>::zeros(&[3, 3, 3, 5]);
    let same2 = eval(|tp| {
        let (a, b) = (tp.constant(x.clone()), tp.constant(k.clone()));
        tp.conv2d(a, b, 2, Padding::Same).unwrap()
    });
    assert_eq!(same2.dims(), &[2, 5, 4, 5]);
    let valid = eval(|tp| {
        let (a, b) = (tp.constant(x.clone()), tp.constant(k.clone()));
        tp.conv2d(a, b, 1, Padding::Valid).unwrap()
    });
    assert_eq!(valid.dims(), &[2, 7, 6, 5]);
    let mut tp = Tape::new();
    let (a, b) = (tp.constant(x), tp.constant(Tensor::zeros(&[3, 3, 4, 5])));
    assert!(tp.conv2d(a, b, 1, Padding::Same).is_err());
}

#[test]
fn pool_and_upsample_examples() {
    let y = eval(|tp| {
        let a = tp.constant(t(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]));
        tp.maxpool2(a).unwrap()
    });
    assert_eq!(y.values(), &[4.0]);
    let y = eval(|tp| {
        let a = tp.constant(t(&[1, 1, 1, 1], vec![1.0]));
        tp.upsample2(a).unwrap()
    });
    assert_eq!(y.values(), &[1.0; 4]);
    let mut tp = Tape::new();
    let a = tp.constant(Tensor::<f64>::zeros(&[1, 3, 4, 1]));
    assert!(tp.maxpool2(a).is_err());
}

#[test]
fn pool_ties_route_to_first_cell() {
    let mut tp = Tape::new();
    let x = tp.leaf(Tensor::full(&[1, 2, 2, 1], 5.0));
    let p = tp.maxpool2(x).unwrap();
    let s = tp.sigmoid(p);
    let l = tp.bce_loss(s, &Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
    let g = tp.backward(l).unwrap();
    let g = g.get(x).unwrap().values();
    assert!(g[0] != 0.0);
    assert_eq!(&g[1..], &[0.0; 3]);
}

#[test]
fn batchnorm_examples() {
    // zero mean, unit (biased) variance per channel
    let x = t(&[2, 1, 2, 1], vec![-1.0, 1.0, 1.0, -1.0]);
    let y = eval(|tp| {
        let (a, s, b) = (tp.constant(x.clone()), tp.constant(Tensor::full(&[1], 1.0)), tp.constant(Tensor::zeros(&[1])));
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        tp.batchnorm(a, s, b, BatchNormMode::Train { running_mean: &mut m, running_var: &mut v }).unwrap()
    });
    for (a, b) in y.values().iter().zip(x.values()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-4);
    }

    let x = t(&[3, 2, 2, 2], (0..24).map(|i| f64::from(i * i % 7) - 1.5).collect());
    let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
    let y = eval(|tp| {
        let (a, s, b) = (tp.constant(x.clone()), tp.constant(Tensor::full(&[2], 1.0)), tp.constant(Tensor::zeros(&[2])));
        tp.batchnorm(a, s, b, BatchNormMode::Train { running_mean: &mut m, running_var: &mut v }).unwrap()
    });
    for ch in 0..2 {
        let vals: Vec<f64> = y.values().iter().skip(ch).step_by(2).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-3);
    }
    // running statistics moved 10% toward the batch statistics
    let xs: Vec<f64> = x.values().iter().step_by(2).copied().collect();
    let bm = xs.iter().sum::<f64>() / xs.len() as f64;
    let bv = xs.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / xs.len() as f64;
    assert_abs_diff_eq!(m[0], 0.1 * bm, epsilon = 1e-12);
    assert_abs_diff_eq!(v[0], 0.9 + 0.1 * bv, epsilon = 1e-12);

    // inference uses the given statistics
    let y = eval(|tp| {
        let (a, s, b) = (tp.constant(Tensor::full(&[1, 1, 1, 1], 3.0)), tp.constant(Tensor::full(&[1], 2.0)), tp.constant(Tensor::full(&[1], 0.5)));
        tp.batchnorm(a, s, b, BatchNormMode::Infer { mean: &[1.0], var: &[4.0] }).unwrap()
    });
    assert_abs_diff_eq!(y.values()[0], 2.0 * 2.0 / (4.0f64 + 1e-5).sqrt() + 0.5, epsilon = 1e-12);
}

#[test]
fn activations_and_merges() {
    let y = eval(|tp| {
        let a = tp.constant(t(&[3], vec![0.0, -2.0, 3.0]));
        tp.sigmoid(a)
    });
    assert_eq!(y.values()[0], 0.5);
    let y = eval(|tp| {
        let a = tp.constant(t(&[3], vec![-2.0, 0.0, 3.0]));
        tp.relu(a)
    });
    assert_eq!(y.values(), &[0.0, 0.0, 3.0]);
    let y = eval(|tp| {
        let a = tp.constant(Tensor::zeros(&[2, 3, 3, 2]));
        let b = tp.constant(Tensor::zeros(&[2, 3, 3, 5]));
        tp.concat_channels(a, b).unwrap()
    });
    assert_eq!(y.dims(), &[2, 3, 3, 7]);
    let mut tp = Tape::new();
    let a = tp.constant(Tensor::<f64>::zeros(&[1, 2, 2, 1]));
    let b = tp.constant(Tensor::<f64>::zeros(&[1, 2, 2, 2]));
    assert!(tp.add(a, b).is_err());
    let c = tp.constant(Tensor::<f64>::zeros(&[1, 3, 2, 1]));
    assert!(tp.concat_channels(a, c).is_err());
}

#[test]
fn bce_closed_forms() {
    let half = eval(|tp| {
        let p = tp.constant(Tensor::full(&[1, 4, 4, 1], 0.5));
        tp.bce_loss(p, &t(&[1, 4, 4, 1], (0..16).map(|i| f64::from(i % 2)).collect())).unwrap()
    });
    assert_abs_diff_eq!(half.values()[0], core::f64::consts::LN_2, epsilon = 1e-12);
    let target = t(&[1, 2, 2, 1], vec![0.0, 1.0, 1.0, 0.0]);
    let exact = eval(|tp| {
        let p = tp.constant(target.clone());
        tp.bce_loss(p, &target).unwrap()
    });
    assert!(exact.values()[0] < 1e-5 && exact.values()[0] >= 0.0);
    let mut tp = Tape::new();
    let p = tp.constant(Tensor::<f64>::zeros(&[4]));
    assert!(tp.bce_loss(p, &Tensor::zeros(&[5])).is_err());
}

fn image(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn upsample_inverts_pool_on_block_constants(blocks in image(2 * 3 * 4 * 2)) {
        let coarse = t(&[2, 3, 4, 2], blocks);
        let fine = eval(|tp| { let a = tp.constant(coarse.clone()); tp.upsample2(a).unwrap() });
        let round = eval(|tp| {
            let a = tp.constant(fine.clone());
            let p = tp.maxpool2(a).unwrap();
            tp.upsample2(p).unwrap()
        });
        prop_assert_eq!(round, fine);
    }

    #[test]
    fn bce_is_non_negative(p in proptest::collection::vec(0.0f64..=1.0, 12), bits in proptest::collection::vec(any::<bool>(), 12)) {
        let target = t(&[12], bits.iter().map(|&b| f64::from(b)).collect());
        let l = eval(|tp| { let v = tp.constant(t(&[12], p.clone())); tp.bce_loss(v, &target).unwrap() });
        prop_assert!(l.values()[0] >= 0.0 && l.values()[0].is_finite());
    }

    #[test]
    fn forward_is_deterministic(x in image(2 * 5 * 5 * 3), k in image(3 * 3 * 3 * 2)) {
        let run = || eval(|tp| {
            let (a, b) = (tp.constant(t(&[2, 5, 5, 3], x.clone())), tp.constant(t(&[3, 3, 3, 2], k.clone())));
            let y = tp.conv2d(a, b, 1, Padding::Same).unwrap();
            let y = tp.relu(y);
            tp.sigmoid(y)
        });
        prop_assert_eq!(run(), run());
    }
}
