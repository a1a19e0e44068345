//! Finite-difference checks for every differentiable op, random composed
//! graphs, determinism, and linearity of the reverse sweep.

use aet_core::diffcore::{gradcheck, Graph, Tensor, Var};
use aet_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Keep clear of relu/clamp kinks so central differences stay valid.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.3..2.0)).collect()).unwrap()
}

/// Reduces an arbitrary tensor to a scalar through a fixed random weighting,
/// so every output element carries a distinct cotangent.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, &shape);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn check(name: &str, report: aet_core::diffcore::GradcheckReport) {
    assert!(report.passes(TOL), "{name}: max relative error {:?}", report.max_rel_error);
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[3, 4]);
    check(
        "add",
        gradcheck(
            |g, v| {
                let y = g.add(v[0], v[1])?;
                weighted_sum(g, y, 1)
            },
            &[a.clone(), b.clone()],
        )
        .unwrap(),
    );
    check(
        "sub",
        gradcheck(
            |g, v| {
                let y = g.sub(v[0], v[1])?;
                weighted_sum(g, y, 2)
            },
            &[a.clone(), b.clone()],
        )
        .unwrap(),
    );
    check(
        "mul",
        gradcheck(
            |g, v| {
                let y = g.mul(v[0], v[1])?;
                weighted_sum(g, y, 3)
            },
            &[a.clone(), b.clone()],
        )
        .unwrap(),
    );
    check(
        "scale",
        gradcheck(
            |g, v| {
                let y = g.scale(v[0], -1.7);
                weighted_sum(g, y, 4)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    check(
        "add_scalar",
        gradcheck(
            |g, v| {
                let y = g.add_scalar(v[0], 0.3);
                let y = g.mul(y, y)?;
                weighted_sum(g, y, 5)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    check(
        "relu",
        gradcheck(
            |g, v| {
                let y = g.relu(v[0]);
                weighted_sum(g, y, 6)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    check(
        "exp",
        gradcheck(
            |g, v| {
                let y = g.exp(v[0]);
                weighted_sum(g, y, 7)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    let p = positive(&mut rng, &[3, 4]);
    check(
        "log",
        gradcheck(
            |g, v| {
                let y = g.log(v[0]);
                weighted_sum(g, y, 8)
            },
            &[p],
        )
        .unwrap(),
    );
    check(
        "clamp",
        gradcheck(
            |g, v| {
                let y = g.clamp(v[0], -0.8, 0.9);
                weighted_sum(g, y, 9)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
}

#[test]
fn reductions_and_shape_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random(&mut rng, &[2, 3, 4]);
    check(
        "sum",
        gradcheck(
            |g, v| {
                let y = g.mul(v[0], v[0])?;
                Ok(g.sum(y))
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    check(
        "mean",
        gradcheck(
            |g, v| {
                let y = g.mul(v[0], v[0])?;
                Ok(g.mean(y))
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    check(
        "sum_last",
        gradcheck(
            |g, v| {
                let y = g.sum_last(v[0])?;
                weighted_sum(g, y, 10)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    check(
        "reshape",
        gradcheck(
            |g, v| {
                let y = g.reshape(v[0], &[6, 4])?;
                weighted_sum(g, y, 11)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    let b = random(&mut rng, &[2, 2, 4]);
    check(
        "concat",
        gradcheck(
            |g, v| {
                let y = g.concat(&[v[0], v[1]], 1)?;
                weighted_sum(g, y, 12)
            },
            &[a.clone(), b],
        )
        .unwrap(),
    );
    check(
        "narrow",
        gradcheck(
            |g, v| {
                let y = g.narrow(v[0], 2, 1, 2)?;
                weighted_sum(g, y, 13)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    check(
        "select_rows",
        gradcheck(
            |g, v| {
                let y = g.select_rows(v[0], &[1, 0, 1])?;
                weighted_sum(g, y, 14)
            },
            &[a.clone()],
        )
        .unwrap(),
    );
    let bias = random(&mut rng, &[1, 3, 1, 1]);
    check(
        "broadcast",
        gradcheck(
            |g, v| {
                let y = g.broadcast(v[0], &[2, 3, 2, 2])?;
                weighted_sum(g, y, 15)
            },
            &[bias],
        )
        .unwrap(),
    );
    let img = random(&mut rng, &[2, 2, 4, 6]);
    check(
        "avgpool2d",
        gradcheck(
            |g, v| {
                let y = g.avgpool2d(v[0], 2)?;
                weighted_sum(g, y, 16)
            },
            &[img],
        )
        .unwrap(),
    );
    let logits = random(&mut rng, &[3, 5]);
    check(
        "log_softmax",
        gradcheck(
            |g, v| {
                let y = g.log_softmax(v[0])?;
                weighted_sum(g, y, 17)
            },
            &[logits],
        )
        .unwrap(),
    );
}

#[test]
fn matmul_and_conv_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    check(
        "matmul",
        gradcheck(
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y, 20)
            },
            &[a, b],
        )
        .unwrap(),
    );
    for (stride, pad, h, w) in [(1, 1, 5, 5), (2, 1, 6, 5), (1, 0, 4, 4), (2, 0, 5, 7)] {
        let x = random(&mut rng, &[2, 2, h, w]);
        let k = random(&mut rng, &[3, 2, 3, 3]);
        check(
            "conv2d",
            gradcheck(
                |g, v| {
                    let y = g.conv2d(v[0], v[1], stride, pad)?;
                    weighted_sum(g, y, 21)
                },
                &[x, k],
            )
            .unwrap(),
        );
    }
}

#[test]
fn conv_relu_mean_network_and_softmax_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&mut rng, &[2, 1, 6, 6]);
    let k1 = random(&mut rng, &[3, 1, 3, 3]);
    let k2 = random(&mut rng, &[2, 3, 3, 3]);
    check(
        "conv+relu+mean",
        gradcheck(
            |g, v| {
                let h = g.conv2d(v[0], v[1], 1, 1)?;
                let h = g.relu(h);
                let h = g.conv2d(h, v[2], 2, 1)?;
                let h = g.relu(h);
                let h = g.mul(h, h)?;
                Ok(g.mean(h))
            },
            &[x, k1, k2],
        )
        .unwrap(),
    );

    let logits = random(&mut rng, &[4, 3]);
    let onehot = Tensor::new(&[4, 3], vec![1., 0., 0., 0., 0., 1., 0., 1., 0., 1., 0., 0.]).unwrap();
    check(
        "softmax cross-entropy",
        gradcheck(
            move |g, v| {
                let lp = g.log_softmax(v[0])?;
                let t = g.constant(onehot.clone());
                let p = g.mul(lp, t)?;
                let s = g.sum(p);
                Ok(g.scale(s, -0.25))
            },
            &[logits],
        )
        .unwrap(),
    );
}

#[test]
fn identity_function_has_zero_error() {
    let report = gradcheck(|g, v| Ok(g.sum(v[0])), &[Tensor::from_vec(vec![1.0, -2.0])]).unwrap();
    assert!(report.worst() < 1e-9);
}

/// Builds a random chain of up to six unary/binary stages over a vector.
fn random_program(g: &mut Graph, x: Var, w: Var, ops: &[u8]) -> Result<Var> {
    let mut h = x;
    for &op in ops {
        h = match op % 7 {
            0 => g.relu(h),
            1 => {
                let t = g.scale(h, 0.5);
                g.exp(t)
            }
            2 => g.mul(h, w)?,
            3 => g.add(h, w)?,
            4 => {
                let sq = g.mul(h, h)?;
                let t = g.add_scalar(sq, 1.0);
                g.log(t)
            }
            5 => g.clamp(h, -2.0, 2.0),
            _ => {
                let r = g.reshape(h, &[2, 3])?;
                let s = g.log_softmax(r)?;
                g.reshape(s, &[6])?
            }
        };
    }
    let s = g.mul(h, h)?;
    Ok(g.sum(s))
}

#[test]
fn random_composed_graphs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..40 {
        let depth = rng.gen_range(1..=6);
        let ops: Vec<u8> = (0..depth).map(|_| rng.gen()).collect();
        let x = random(&mut rng, &[6]);
        let w = random(&mut rng, &[6]);
        let ops_c = ops.clone();
        let report = gradcheck(move |g, v| random_program(g, v[0], v[1], &ops_c), &[x, w]).unwrap();
        assert!(report.passes(TOL), "ops {ops:?}: {:?}", report.max_rel_error);
    }
}

#[test]
fn identical_tapes_give_bit_identical_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random(&mut rng, &[2, 2, 5, 5]);
    let k = random(&mut rng, &[3, 2, 3, 3]);
    let run = || {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let kv = g.leaf(k.clone(), true);
        let y = g.conv2d(xv, kv, 2, 1).unwrap();
        let y = g.relu(y);
        let l = g.mean(y);
        let grads = g.backward(l).unwrap();
        (grads.get(xv).unwrap().clone(), grads.get(kv).unwrap().clone())
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert_eq!(a1.data(), a2.data());
    assert_eq!(b1.data(), b2.data());
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random(&mut rng, &[4, 3]);
    let w = random(&mut rng, &[3, 2]);
    let (a, b) = (0.7, -1.3);
    let grad_of = |ca: f64, cb: f64| {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let wv = g.constant(w.clone());
        let y = g.matmul(xv, wv).unwrap();
        let l1 = {
            let r = g.relu(y);
            g.sum(r)
        };
        let l2 = {
            let e = g.exp(y);
            g.mean(e)
        };
        let t1 = g.scale(l1, ca);
        let t2 = g.scale(l2, cb);
        let l = g.add(t1, t2).unwrap();
        g.backward(l).unwrap().get(xv).unwrap().clone()
    };
    let combined = grad_of(a, b);
    let g1 = grad_of(1.0, 0.0);
    let g2 = grad_of(0.0, 1.0);
    for i in 0..combined.len() {
        let expect = a * g1.data()[i] + b * g2.data()[i];
        assert!((combined.data()[i] - expect).abs() < 1e-12);
    }
}
