use aift_core::tensor::{check_gradients, Graph, Tensor, Var};
use aift_core::training::losses::{atcl_loss, recon_loss, total_loss_var};
use aift_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values in `[-hi, -0.05] U [0.05, hi]`, away from activation kinks.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize], hi: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// Contracts an op's output with fixed random weights to get a scalar.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let w = random(&mut rng, g.shape(y), -1.0, 1.0);
    let wv = g.constant(&w);
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

fn assert_grad(inputs: &[Tensor], seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let r = check_gradients(inputs, STEP, |g, v| {
        let y = f(g, v)?;
        project(g, y, seed)
    })
    .unwrap();
    assert!(r.max_rel_error < TOLERANCE, "relative error {} on input {}", r.max_rel_error, r.worst_input);
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn conv2d_gradients(seed in any::<u64>(), n in 1usize..3, c in 1usize..3, k in 1usize..3,
                        h in 3usize..7, w in 3usize..7, kh in 1usize..4, kw in 1usize..4,
                        stride in 1usize..3, pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, c, h, w], -1.0, 1.0);
        let kern = random(&mut rng, &[k, c, kh, kw], -1.0, 1.0);
        assert_grad(&[x, kern], seed, |g, v| g.conv2d(v[0], v[1], stride, pad));
    }

    #[test]
    fn conv_transpose2d_gradients(seed in any::<u64>(), n in 1usize..3, c in 1usize..3, k in 1usize..3,
                                  h in 2usize..5, w in 2usize..5, kh in 2usize..5, kw in 2usize..5,
                                  stride in 1usize..3, pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, c, h, w], -1.0, 1.0);
        let kern = random(&mut rng, &[c, k, kh, kw], -1.0, 1.0);
        assert_grad(&[x, kern], seed, |g, v| g.conv_transpose2d(v[0], v[1], stride, pad));
    }

    #[test]
    fn dense_and_bias_gradients(seed in any::<u64>(), n in 1usize..4, d in 1usize..6, m in 1usize..5,
                                c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, d], -1.0, 1.0);
        let wt = random(&mut rng, &[d, m], -1.0, 1.0);
        let b = random(&mut rng, &[m], -1.0, 1.0);
        assert_grad(&[x, wt, b], seed, |g, v| g.dense(v[0], v[1], v[2]));
        let fm = random(&mut rng, &[n, c, 2, 3], -1.0, 1.0);
        let cb = random(&mut rng, &[c], -1.0, 1.0);
        assert_grad(&[fm, cb], seed, |g, v| g.channel_bias(v[0], v[1]));
    }

    #[test]
    fn activation_gradients(seed in any::<u64>(), len in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = off_kink(&mut rng, &[len], 3.0);
        assert_grad(std::slice::from_ref(&x), seed, |g, v| Ok(g.leaky_relu(v[0], 0.2)));
        assert_grad(std::slice::from_ref(&x), seed, |g, v| Ok(g.sigmoid(v[0])));
        assert_grad(std::slice::from_ref(&x), seed, |g, v| Ok(g.tanh(v[0])));
        assert_grad(std::slice::from_ref(&x), seed, |g, v| Ok(g.affine(v[0], -1.7, 0.3)));
        let pos = random(&mut rng, &[len], 0.1, 2.0);
        assert_grad(&[pos], seed, |g, v| g.log(v[0]));
        // Probe points stay clear of the clamp edges.
        let inner = random(&mut rng, &[len], -0.45, 0.45);
        assert_grad(&[inner], seed, |g, v| Ok(g.clamp(v[0], -0.5, 0.5)));
    }

    #[test]
    fn elementwise_and_reduction_gradients(seed in any::<u64>(), a in 1usize..4, b in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b], -1.0, 1.0);
        let y = random(&mut rng, &[a, b], -1.0, 1.0);
        assert_grad(&[x.clone(), y.clone()], seed, |g, v| g.add(v[0], v[1]));
        assert_grad(&[x.clone(), y.clone()], seed, |g, v| g.sub(v[0], v[1]));
        assert_grad(&[x.clone(), y.clone()], seed, |g, v| g.mul(v[0], v[1]));
        assert_grad(std::slice::from_ref(&x), seed, |g, v| { let s = g.sum(v[0]); g.mul(s, s) });
        assert_grad(std::slice::from_ref(&x), seed, |g, v| { let m = g.mean(v[0]); g.mul(m, m) });
        assert_grad(std::slice::from_ref(&x), seed, |g, v| g.reshape(v[0], &[b, a]));
        assert_grad(&[x.clone(), y.clone()], seed, |g, v| g.concat(&[v[0], v[1]]));
        assert_grad(&[x], seed, |g, v| g.narrow(v[0], a - 1, 1));
    }

    #[test]
    fn loss_gradients(seed in any::<u64>(), n in 1usize..5, lambda in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let likelihoods: Vec<Tensor> = (0..4).map(|_| random(&mut rng, &[n, 1], 0.05, 0.95)).collect();
        let r = check_gradients(&likelihoods, STEP, |g, v| atcl_loss(g, v[0], v[1], v[2], v[3])).unwrap();
        prop_assert!(r.max_rel_error < TOLERANCE, "atcl {}", r.max_rel_error);

        let maps: Vec<Tensor> = (0..4).map(|_| random(&mut rng, &[n, 1, 2, 2], 0.0, 1.0)).collect();
        let r = check_gradients(&maps, STEP, |g, v| recon_loss(g, v[0], v[1], v[2], v[3])).unwrap();
        prop_assert!(r.max_rel_error < TOLERANCE, "recon {}", r.max_rel_error);

        let mut all = likelihoods;
        all.extend(maps);
        let r = check_gradients(&all, STEP, |g, v| {
            let a = atcl_loss(g, v[0], v[1], v[2], v[3])?;
            let rc = recon_loss(g, v[4], v[5], v[6], v[7])?;
            total_loss_var(g, a, rc, lambda)
        })
        .unwrap();
        prop_assert!(r.max_rel_error < TOLERANCE, "total {}", r.max_rel_error);
    }

    #[test]
    fn transpose_is_the_adjoint_of_conv(seed in any::<u64>(), n in 1usize..3, c in 1usize..3, k in 1usize..4,
                                        oh in 1usize..5, ow in 1usize..5, kh in 1usize..5, kw in 1usize..5,
                                        stride in 1usize..3, pad in 0usize..2) {
        // Input extents chosen so the transpose maps back onto exactly [n, c, h, w].
        let h = (oh - 1) * stride + kh;
        let w = (ow - 1) * stride + kw;
        prop_assume!(h > 2 * pad && w > 2 * pad);
        let (h, w) = (h - 2 * pad, w - 2 * pad);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, c, h, w], -1.0, 1.0);
        let kern = random(&mut rng, &[k, c, kh, kw], -1.0, 1.0);
        let y = random(&mut rng, &[n, k, oh, ow], -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, kv, yv) = (g.constant(&x), g.constant(&kern), g.constant(&y));
        let ax = g.conv2d(xv, kv, stride, pad).unwrap();
        prop_assert_eq!(g.shape(ax), y.shape());
        let aty = g.conv_transpose2d(yv, kv, stride, pad).unwrap();
        prop_assert_eq!(g.shape(aty), x.shape());
        let lhs: f64 = g.data(ax).iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(g.data(aty)).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn backward_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
        let kern = random(&mut rng, &[3, 1, 4, 4], -0.5, 0.5);
        let run = || {
            let mut g = Graph::new();
            let (xv, kv) = (g.param(&x), g.param(&kern));
            let y = g.conv2d(xv, kv, 2, 1).unwrap();
            let a = g.leaky_relu(y, 0.2);
            let s = g.sigmoid(a);
            let l = g.mean(s);
            let grads = g.backward(l).unwrap();
            (grads.get(xv).unwrap().to_vec(), grads.get(kv).unwrap().to_vec())
        };
        prop_assert_eq!(run(), run());
    }
}
