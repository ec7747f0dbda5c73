use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stpp_core::nn::{activation_eval, Activation, Bound, ConvLstmCell, IntensityActivation, Mlp, ParamStore};
use stpp_core::tensor::gradcheck::{max_relative_error, DEFAULT_STEP};
use stpp_core::{Graph, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn zero_all(store: &mut ParamStore) {
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn forget_bias_is_initialized_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let cell = ConvLstmCell::new(&mut store, "cell", 3, 4, 3, &mut rng);
    let bias = store.get(cell.bias).data();
    assert!(bias[4..8].iter().all(|&b| b == 1.0));
    assert!(bias[..4].iter().all(|&b| b.abs() < 1.0));
}

#[test]
fn zero_cell_yields_zero_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let cell = ConvLstmCell::new(&mut store, "cell", 2, 3, 3, &mut rng);
    zero_all(&mut store);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let h0 = g.constant(&random(&mut rng, &[3, 5, 5]));
    let c0 = g.constant(&Tensor::zeros(&[3, 5, 5]));
    let x = g.constant(&random(&mut rng, &[2, 5, 5]));
    let (h, c) = cell.step(&mut g, &p, h0, c0, x).unwrap();
    assert!(g.value(h).iter().all(|&v| v == 0.0));
    assert!(g.value(c).iter().all(|&v| v == 0.0));
}

#[test]
fn saturated_forget_gate_preserves_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let cell = ConvLstmCell::new(&mut store, "cell", 2, 3, 3, &mut rng);
    zero_all(&mut store);
    store.get_mut(cell.bias).data_mut()[3..6]
        .iter_mut()
        .for_each(|b| *b = 50.0);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let c_prev = random(&mut rng, &[3, 4, 4]);
    let h0 = g.constant(&random(&mut rng, &[3, 4, 4]));
    let c0 = g.constant(&c_prev);
    let x = g.constant(&random(&mut rng, &[2, 4, 4]));
    let (_, c) = cell.step(&mut g, &p, h0, c0, x).unwrap();
    for (a, b) in g.value(c).iter().zip(c_prev.data()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn step_rejects_mismatched_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let cell = ConvLstmCell::new(&mut store, "cell", 2, 3, 3, &mut rng);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let h0 = g.constant(&Tensor::zeros(&[3, 4, 4]));
    let c0 = g.constant(&Tensor::zeros(&[3, 4, 4]));
    let x = g.constant(&Tensor::zeros(&[2, 5, 4]));
    assert!(cell.step(&mut g, &p, h0, c0, x).is_err());
    let x_bad_channels = g.constant(&Tensor::zeros(&[1, 4, 4]));
    assert!(cell.step(&mut g, &p, h0, c0, x_bad_channels).is_err());
}

#[test]
fn conv_lstm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let cell = ConvLstmCell::new(&mut store, "cell", 2, 3, 3, &mut rng);
    let h0 = random(&mut rng, &[3, 4, 5]);
    let c0 = random(&mut rng, &[3, 4, 5]);
    let x = random(&mut rng, &[2, 4, 5]);
    let leaves: Vec<Tensor> = store.tensors().to_vec();
    let err = max_relative_error(&leaves, DEFAULT_STEP, |g, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let (hv, cv, xv) = (g.constant(&h0), g.constant(&c0), g.constant(&x));
        let (h, c) = cell.step(g, &p, hv, cv, xv)?;
        let (h2, _) = cell.step(g, &p, h, c, xv)?;
        g.sum(h2)
    })
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn spatially_constant_inputs_give_constant_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kernel in [1usize, 3] {
        let mut store = ParamStore::new();
        let cell = ConvLstmCell::new(&mut store, "cell", 2, 3, kernel, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let plane = |g: &mut Graph, vals: &[f64]| {
            let data = vals.iter().flat_map(|&v| std::iter::repeat_n(v, 64)).collect();
            g.constant(&Tensor::new(vec![vals.len(), 8, 8], data).unwrap())
        };
        let h0 = plane(&mut g, &[0.1, -0.3, 0.2]);
        let c0 = plane(&mut g, &[0.5, 0.0, -0.4]);
        let x = plane(&mut g, &[1.0, -2.0]);
        let (h, _) = cell.step(&mut g, &p, h0, c0, x).unwrap();
        let hv = g.value(h);
        let margin = kernel / 2;
        for ch in 0..3 {
            let reference = hv[ch * 64 + margin * 8 + margin];
            for y in margin..8 - margin {
                for xx in margin..8 - margin {
                    assert_eq!(hv[ch * 64 + y * 8 + xx].to_bits(), reference.to_bits());
                }
            }
        }
    }
}

#[test]
fn activation_examples() {
    let sp = IntensityActivation::Softplus;
    assert!((sp.eval(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((sp.eval(40.0) - 40.0).abs() < 1e-12);
    assert_eq!(IntensityActivation::EluPlusOne.eval(0.0), 1.0);
    assert_eq!(IntensityActivation::BiasedRelu { eps: 1e-3 }.eval(-5.0), 1e-3);
    let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    let out = activation_eval(IntensityActivation::EluPlusOne, &t);
    assert_eq!(out.data(), &[(-1.0f64).exp(), 1.0, 3.0]);
    assert!(sp.eval(1000.0).is_finite() && sp.eval(-1000.0) >= 0.0);
}

#[test]
fn graph_activations_agree_with_pointwise_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[10]);
    for sigma in [
        IntensityActivation::Sigmoid,
        IntensityActivation::Softplus,
        IntensityActivation::EluPlusOne,
        IntensityActivation::BiasedRelu { eps: 1e-3 },
    ] {
        let mut g = Graph::new();
        let v = g.constant(&x);
        let y = sigma.apply(&mut g, v).unwrap();
        assert_eq!(g.value(y), activation_eval(sigma, &x).data(), "{}", sigma.name());
    }
}

proptest! {
    #[test]
    fn positive_heads_are_strictly_positive(x in -100.0f64..100.0) {
        prop_assert!(IntensityActivation::Softplus.eval(x) > 0.0);
        prop_assert!(IntensityActivation::EluPlusOne.eval(x) > 0.0);
        let relu = IntensityActivation::BiasedRelu { eps: 1e-3 };
        prop_assert!(relu.eval(x) >= 1e-3);
    }
}

#[test]
fn mlp_degenerate_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "m",
        &[4, 5, 5, 3],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    assert_eq!(mlp.widths(), vec![4, 5, 5, 3]);
    zero_all(&mut store);
    let out_bias = mlp.layers[2].bias;
    store.get_mut(out_bias).data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(&random(&mut rng, &[4]));
    let y = mlp.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.value(y), &[0.5, -1.0, 2.0]);

    let mut store = ParamStore::new();
    let single = Mlp::new(
        &mut store,
        "id",
        &[3, 3],
        Activation::Identity,
        Activation::Identity,
        &mut rng,
    );
    zero_all(&mut store);
    let w = single.layers[0].weight;
    for i in 0..3 {
        store.get_mut(w).data_mut()[i * 3 + i] = 1.0;
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let input = random(&mut rng, &[3]);
    let x = g.constant(&input);
    let y = single.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.value(y), input.data());

    let wrong = g.constant(&Tensor::zeros(&[4]));
    assert!(single.forward(&mut g, &p, wrong).is_err());
}

#[test]
fn mlp_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "m",
        &[3, 4, 4, 2],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    let input = random(&mut rng, &[3]);

    let mut a = input.data().to_vec();
    for layer in &mlp.layers {
        let w = store.get(layer.weight).data();
        let b = store.get(layer.bias).data();
        let mut next = vec![0.0; layer.outputs];
        for (o, n) in next.iter_mut().enumerate() {
            let mut z = b[o];
            for (i, ai) in a.iter().enumerate() {
                z += w[o * layer.inputs + i] * ai;
            }
            *n = layer.activation.eval(z);
        }
        a = next;
    }

    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(&input);
    let y = mlp.forward(&mut g, &p, x).unwrap();
    for (u, v) in g.value(y).iter().zip(&a) {
        assert!((u - v).abs() < 1e-14);
    }
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "m",
        &[3, 4, 4, 2],
        Activation::Tanh,
        Activation::Identity,
        &mut rng,
    );
    let x = random(&mut rng, &[3, 5]);
    let leaves = store.tensors().to_vec();
    let err = max_relative_error(&leaves, DEFAULT_STEP, |g, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let xv = g.constant(&x);
        let y = mlp.forward(g, &p, xv)?;
        let y = g.mul(y, y)?;
        g.sum(y)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}
