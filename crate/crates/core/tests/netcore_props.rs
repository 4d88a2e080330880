use deepfosls::netcore::{forward_jac, init_params, pullback, Activation, LayerSpec, Network, NetworkSpec, ParamVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random smooth network with nonzero biases, plus an input point.
fn smooth_case(seed: u64) -> (NetworkSpec, ParamVector, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=5);
    let depth = rng.random_range(1..=3);
    let hidden = (0..depth)
        .map(|_| {
            let act = if rng.random_bool(0.15) {
                Activation::Identity
            } else {
                Activation::SoftPlus {
                    beta: [1.0, 5.0, 100.0][rng.random_range(0..3)],
                }
            };
            LayerSpec::new(rng.random_range(2..=8), act)
        })
        .collect();
    let spec = NetworkSpec::new(d, hidden, rng.random_range(1..=3)).unwrap();
    let mut theta = init_params(&spec, rng.random()).unwrap();
    for p in theta.as_mut_slice() {
        *p += 0.2 * rng.random_range(-1.0..1.0);
    }
    let x = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
    (spec, theta, x)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn jacobian_matches_central_differences(seed in any::<u64>()) {
        let (spec, theta, x) = smooth_case(seed);
        let d = spec.input_dim;
        let ev = forward_jac(&spec, &theta, &x, true).unwrap();
        let jac = ev.jac.unwrap();
        let mut fd = vec![0.0; jac.len()];
        for j in 0..d {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let yp = forward_jac(&spec, &theta, &xp, false).unwrap().y;
            let ym = forward_jac(&spec, &theta, &xm, false).unwrap().y;
            for o in 0..spec.output_dim {
                fd[o * d + j] = (yp[o] - ym[o]) / (xp[j] - xm[j]);
            }
        }
        let diff: Vec<f64> = jac.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = max_abs(&diff) / max_abs(&jac).max(1e-3);
        prop_assert!(rel <= 1e-6, "relative error {rel:e}");
    }

    #[test]
    fn values_do_not_depend_on_jacobian_flag(seed in any::<u64>()) {
        let (spec, theta, x) = smooth_case(seed);
        let a = forward_jac(&spec, &theta, &x, false).unwrap();
        let b = forward_jac(&spec, &theta, &x, true).unwrap();
        prop_assert_eq!(a.y, b.y);
        prop_assert!(a.jac.is_none());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pullback_matches_central_differences(seed in any::<u64>()) {
        let (spec, theta, x) = smooth_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let n_y = spec.output_dim;
        let d = spec.input_dim;
        let cot_y: Vec<f64> = (0..n_y).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cot_jac: Vec<f64> = (0..n_y * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = pullback(&spec, &theta, &x, &cot_y, Some(&cot_jac)).unwrap();
        let pairing = |t: &ParamVector| {
            let ev = forward_jac(&spec, t, &x, true).unwrap();
            let a: f64 = ev.y.iter().zip(&cot_y).map(|(p, q)| p * q).sum();
            let b: f64 = ev.jac.unwrap().iter().zip(&cot_jac).map(|(p, q)| p * q).sum();
            a + b
        };
        let mut t = theta.clone();
        let mut diff = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let h = 1e-5;
            t.as_mut_slice()[i] = theta.as_slice()[i] + h;
            let plus = pairing(&t);
            t.as_mut_slice()[i] = theta.as_slice()[i] - h;
            let minus = pairing(&t);
            t.as_mut_slice()[i] = theta.as_slice()[i];
            diff.push((plus - minus) / (2.0 * h) - grad.as_slice()[i]);
        }
        let rel = max_abs(&diff) / max_abs(grad.as_slice()).max(1e-3);
        prop_assert!(rel <= 1e-5, "relative error {rel:e}");
    }

    #[test]
    fn step_layer_outputs_are_binary(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = NetworkSpec::new(
            2,
            vec![LayerSpec::new(5, Activation::Heaviside { ste_width: 0.5 })],
            1,
        )
        .unwrap();
        let net = Network::init(spec, rng.random()).unwrap();
        let mut tape = net.tape(true);
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        net.forward(&mut tape, &x).unwrap();
        // Output is an affine combination of exact 0/1 values; the Jacobian
        // is zero because the step is flat almost everywhere.
        prop_assert_eq!(tape.jac(0, 0), 0.0);
        prop_assert_eq!(tape.jac(0, 1), 0.0);
        let theta = net.params().as_slice();
        let y = tape.value(0, 0);
        let mut hits = 0;
        for mask in 0..32u32 {
            let mut s = theta[20];
            for i in 0..5 {
                if mask & (1 << i) != 0 {
                    s += theta[15 + i];
                }
            }
            if s == y {
                hits += 1;
            }
        }
        prop_assert!(hits >= 1);
    }
}

#[test]
fn batched_and_single_point_passes_agree() {
    let (spec, theta, _) = smooth_case(42);
    let net = Network::new(spec.clone(), theta).unwrap();
    let d = spec.input_dim;
    let n_y = spec.output_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 37;
    let xs: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cots: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .map(|_| {
            (
                (0..n_y).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..n_y * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();

    let mut tape = net.batch_tape(true, 64);
    net.forward(&mut tape, &xs).unwrap();
    for (p, (cy, cj)) in cots.iter().enumerate() {
        tape.set_cotangent(p, cy, Some(cj)).unwrap();
    }
    let mut batched = vec![0.0; net.params().len()];
    net.pullback_batch(&mut tape, &mut batched).unwrap();

    let mut single = vec![0.0; net.params().len()];
    for (p, x) in xs.chunks_exact(d).enumerate() {
        let ev = net.eval(x, true).unwrap();
        for o in 0..n_y {
            assert!((ev.y[o] - tape.value(o, p)).abs() <= 1e-14 * (1.0 + ev.y[o].abs()));
            for j in 0..d {
                let a = ev.jac.as_ref().unwrap()[o * d + j];
                assert!((a - tape.jac_at(o, j, p)).abs() <= 1e-14 * (1.0 + a.abs()));
            }
        }
        let g = pullback(&spec, net.params(), x, &cots[p].0, Some(&cots[p].1)).unwrap();
        for (s, gi) in single.iter_mut().zip(g.as_slice()) {
            *s += gi;
        }
    }
    let scale = max_abs(&single).max(1.0);
    for (a, b) in batched.iter().zip(&single) {
        assert!((a - b).abs() <= 1e-12 * scale);
    }
}

#[test]
fn tape_rejects_oversized_blocks() {
    let (spec, theta, _) = smooth_case(3);
    let net = Network::new(spec.clone(), theta).unwrap();
    let mut tape = net.batch_tape(false, 2);
    let xs = vec![0.1; 3 * spec.input_dim];
    assert!(net.forward(&mut tape, &xs).is_err());
}
