use altruist_nn::{conv3d_forward, softmax, Network, NetworkParams, NetworkSpec, Tensor};
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_observation(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // sparse occupancy-like input: mostly zeros, a few speed-coded blobs
    (0..spec.input_len()).map(|_| if rng.random_bool(0.1) { rng.random_range(0.0..1.0) } else { 0.0 }).collect()
}

/// Cross-entropy on action 2 plus a squared value error.
fn scalar_loss(net: &Network, p: &NetworkParams<f64>, x: &[f64]) -> f64 {
    let c = net.forward(p, x).unwrap();
    -c.probs[2].ln() + 0.5 * (c.value - 0.3).powi(2)
}

#[test]
fn desk_network_finite_differences() {
    let spec = NetworkSpec::desk();
    let net = Network::new(spec.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut p = NetworkParams::<f64>::init(&spec, 17).unwrap();
    let x = desk_observation(&spec, &mut rng);

    let c = net.forward(&p, &x).unwrap();
    let mut dlogits = c.probs.clone();
    dlogits[2] -= 1.0;
    let mut g = p.zeros_like();
    net.backward(&p, &c, &dlogits, c.value - 0.3, &mut g).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in sample(&mut rng, p.num_params(), 200) {
        let v = p.get(i);
        p.set(i, v + h);
        let lp = scalar_loss(&net, &p, &x);
        p.set(i, v - h);
        let lm = scalar_loss(&net, &p, &x);
        p.set(i, v);
        let fd = (lp - lm) / (2.0 * h);
        let an = g.get(i);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "param {i}: fd {fd:e} analytic {an:e} rel {rel:e}");
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn softmax_of_forward_matches_probs() {
    let spec = NetworkSpec::desk();
    let net = Network::new(spec.clone()).unwrap();
    let p = NetworkParams::<f64>::init(&spec, 1).unwrap();
    let x = desk_observation(&spec, &mut ChaCha8Rng::seed_from_u64(5));
    let c = net.forward(&p, &x).unwrap();
    assert_eq!(softmax(&c.logits), c.probs);
    assert!((c.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, stride: [usize; 3], pad: [usize; 3]) -> Vec<f64> {
    let [ci, d, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [co, _, kd, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3], k.shape()[4]];
    let out = |n: usize, kk: usize, s: usize, p: usize| (n + 2 * p - kk) / s + 1;
    let (od, oh, ow) = (out(d, kd, stride[0], pad[0]), out(h, kh, stride[1], pad[1]), out(w, kw, stride[2], pad[2]));
    let mut y = Vec::with_capacity(co * od * oh * ow);
    for o in 0..co {
        for z in 0..od {
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for a in 0..kd {
                            for e in 0..kh {
                                for f in 0..kw {
                                    let (iz, ir, iq) = ((z * stride[0] + a) as isize - pad[0] as isize, (r * stride[1] + e) as isize - pad[1] as isize, (q * stride[2] + f) as isize - pad[2] as isize);
                                    if iz < 0 || ir < 0 || iq < 0 || iz >= d as isize || ir >= h as isize || iq >= w as isize {
                                        continue;
                                    }
                                    let xi = ((c * d + iz as usize) * h + ir as usize) * w + iq as usize;
                                    let ki = (((o * ci + c) * kd + a) * kh + e) * kw + f;
                                    acc += x.data()[xi] * k.data()[ki];
                                }
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
    }
    y
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn conv_matches_naive_at_desk_layer_shapes() {
    let spec = NetworkSpec::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut shape = spec.input;
    for layer in &spec.convs {
        let x = random_tensor(&shape, &mut rng);
        let mut kshape = vec![layer.out_channels, shape[0]];
        kshape.extend(layer.kernel);
        let k = random_tensor(&kshape, &mut rng);
        let b = random_tensor(&[layer.out_channels], &mut rng);
        let fast = conv3d_forward(&x, &k, &b, layer.stride, layer.padding).unwrap();
        let slow = naive_conv(&x, &k, &b, layer.stride, layer.padding);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        shape = [fast.shape()[0], fast.shape()[1], fast.shape()[2], fast.shape()[3]];
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_matches_naive_random_geometry(
        ci in 1usize..3, co in 1usize..4,
        d in 1usize..4, h in 3usize..7, w in 3usize..7,
        kd in 1usize..3, kh in 1usize..4, kw in 1usize..4,
        s in prop::array::uniform3(1usize..3), pd in prop::array::uniform3(0usize..2),
        seed in any::<u64>(),
    ) {
        prop_assume!(kd <= d + 2 * pd[0] && kh <= h + 2 * pd[1] && kw <= w + 2 * pd[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&[ci, d, h, w], &mut rng);
        let k = random_tensor(&[co, ci, kd, kh, kw], &mut rng);
        let b = random_tensor(&[co], &mut rng);
        let fast = conv3d_forward(&x, &k, &b, s, pd).unwrap();
        let slow = naive_conv(&x, &k, &b, s, pd);
        prop_assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.data().iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
