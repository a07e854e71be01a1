use pedilung::autodiff::{finite_difference_check, store_gradient_check, Graph, ParamStore, Rng, Tensor, Var};
use pedilung::objective::FocalParams;
use pedilung::Result;

const TOL: f64 = 1e-5;
const EPS: f64 = 1e-6;

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn projection(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed ^ 0xabc);
    (0..n).map(|_| rng.range(-1.0, 1.0)).collect()
}

/// Reduce any node to a scalar with fixed random weights.
fn reduce(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let n = g.value(y).len();
    g.weighted_sum(y, &projection(n, n as u64))
}

fn check<F>(inputs: &[Tensor<f64>], training: bool, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    finite_difference_check(inputs, EPS, training, |g, _, v| {
        let y = f(g, v)?;
        reduce(g, y)
    })
    .unwrap()
}

#[test]
fn matmul_all_transpose_modes() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { rand(&[2, 4, 3], 1) } else { rand(&[2, 3, 4], 1) };
        let b = if tb { rand(&[2, 5, 4], 2) } else { rand(&[2, 4, 5], 2) };
        let e = check(&[a, b], false, |g, v| g.matmul(v[0], v[1], ta, tb));
        assert!(e < TOL, "{ta} {tb}: {e}");
    }
}

#[test]
fn linear_with_shared_weight() {
    let e = check(&[rand(&[2, 3, 4], 3), rand(&[4, 5], 4), rand(&[5], 5)], false, |g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn conv2d_strides() {
    for (k, s) in [(3, 1), (3, 2), (1, 1), (1, 2)] {
        let e = check(&[rand(&[2, 5, 6, 3], 6), rand(&[k, k, 3, 4], 7)], false, |g, v| g.conv2d(v[0], v[1], s));
        assert!(e < TOL, "k{k} s{s}: {e}");
    }
}

#[test]
fn depthwise_and_separable() {
    for s in [1, 2] {
        let e = check(&[rand(&[2, 5, 5, 4], 8), rand(&[3, 3, 4], 9)], false, |g, v| g.depthwise_conv2d(v[0], v[1], s));
        assert!(e < TOL, "s{s}: {e}");
    }
    let e = check(&[rand(&[1, 6, 4, 3], 10), rand(&[3, 3, 3], 11), rand(&[1, 1, 3, 5], 12)], false, |g, v| {
        g.depthwise_separable_conv(v[0], v[1], v[2], 2)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn batch_norm_training_statistics() {
    let inputs = [rand(&[3, 2, 2, 4], 13), rand(&[4], 14), rand(&[4], 15), Tensor::zeros(&[4]), Tensor::filled(&[4], 1.0)];
    let e = finite_difference_check(&inputs, EPS, true, |g, s, v| {
        let y = g.batch_norm(s, v[0], 1, 2, 3, 4)?;
        reduce(g, y)
    })
    .unwrap();
    assert!(e < 1e-5, "{e}");
}

#[test]
fn batch_norm_running_statistics() {
    let mut store = ParamStore::new();
    let x = store.add("x", rand(&[2, 3, 3], 16), true);
    let gamma = store.add("gamma", rand(&[3], 17), true);
    let beta = store.add("beta", rand(&[3], 18), true);
    let mean = store.add("mean", rand(&[3], 19), false);
    let var = store.add("var", Tensor::from_f64(&[3], &[0.5, 1.0, 2.0]).unwrap(), false);
    let coords: Vec<_> = [x, gamma, beta].iter().flat_map(|&id| (0..store.get(id).len()).map(move |j| (id, j))).collect();
    let e = store_gradient_check(&mut store, &coords, EPS, false, |g, s| {
        let xv = g.param(s, x);
        let y = g.batch_norm(s, xv, gamma, beta, mean, var)?;
        reduce(g, y)
    })
    .unwrap();
    assert!(e < TOL, "{e}");
}

#[test]
fn layer_norm() {
    let e = check(&[rand(&[2, 3, 6], 20), rand(&[6], 21), rand(&[6], 22)], false, |g, v| g.layer_norm(v[0], v[1], v[2]));
    assert!(e < 1e-5, "{e}");
}

/// Push probe points at least 0.1 away from the activation kinks at 0 and 6.
fn away_from_kinks(x: &mut Tensor<f64>) {
    for v in x.data.iter_mut() {
        for k in [0.0, 6.0] {
            if (*v - k).abs() < 0.1 {
                *v = k + 0.1f64.copysign(*v - k);
            }
        }
    }
}

#[test]
fn activations_and_softmax() {
    let mut x = rand(&[4, 5], 23);
    x.data.iter_mut().for_each(|v| *v *= 4.0);
    away_from_kinks(&mut x);
    assert!(check(&[x.clone()], false, |g, v| Ok(g.relu6(v[0]))) < TOL);
    assert!(check(&[x.clone()], false, |g, v| Ok(g.relu(v[0]))) < TOL);
    assert!(check(&[x.clone()], false, |g, v| Ok(g.scale(v[0], -0.7))) < TOL);
    let e = check(&[x], false, |g, v| g.softmax(v[0]));
    assert!(e < TOL, "{e}");
}

#[test]
fn pooling_and_shape_ops() {
    assert!(check(&[rand(&[2, 3, 4, 5], 24)], false, |g, v| g.mean_pool(v[0])) < TOL);
    assert!(check(&[rand(&[2, 3, 4, 5], 25)], false, |g, v| g.global_avg_pool(v[0])) < TOL);
    assert!(check(&[rand(&[2, 3, 4], 26)], false, |g, v| g.permute(v[0], &[2, 0, 1])) < TOL);
    assert!(check(&[rand(&[2, 3, 4], 27)], false, |g, v| g.reshape(v[0], &[6, 4])) < TOL);
    assert!(check(&[rand(&[2, 3, 4], 28), rand(&[3, 4], 29)], false, |g, v| g.add_broadcast(v[0], v[1])) < TOL);
    assert!(check(&[rand(&[3, 4], 30), rand(&[3, 4], 31)], false, |g, v| g.add(v[0], v[1])) < TOL);
    assert!(check(&[rand(&[3, 4], 32)], false, |g, v| Ok(g.sum_all(v[0]))) < TOL);
}

#[test]
fn dropout_with_fixed_mask() {
    let e = check(&[rand(&[4, 8], 33)], true, |g, v| Ok(g.dropout(v[0], 0.3, 7)));
    assert!(e < TOL, "{e}");
}

#[test]
fn focal_loss_node() {
    for gamma in [0.0, 2.0, 5.0] {
        let p = FocalParams::new(gamma, vec![0.5, 1.0, 2.0]).unwrap();
        let e = finite_difference_check(&[rand(&[4, 3], 34)], EPS, false, |g, _, v| g.focal_loss(v[0], &[0, 2, 1, 2], &p)).unwrap();
        assert!(e < 1e-5, "gamma {gamma}: {e}");
    }
}

#[test]
fn scaled_dot_product_attention() {
    let (b, h, t, dk) = (2, 2, 3, 4);
    let inputs = [rand(&[b, t, h * dk], 35), rand(&[h * dk, h * dk], 36), rand(&[h * dk, h * dk], 37), rand(&[h * dk, h * dk], 38)];
    let e = check(&inputs, false, |g, v| {
        let mut heads = |w: Var| -> Result<Var> {
            let y = g.linear(v[0], w, None)?;
            let y = g.reshape(y, &[b, t, h, dk])?;
            g.permute(y, &[0, 2, 1, 3])
        };
        let (q, k, val) = (heads(v[1])?, heads(v[2])?, heads(v[3])?);
        let s = g.matmul(q, k, false, true)?;
        let s = g.scale(s, 0.5);
        let a = g.softmax(s)?;
        let c = g.matmul(a, val, false, false)?;
        let c = g.permute(c, &[0, 2, 1, 3])?;
        g.reshape(c, &[b, t, h * dk])
    });
    assert!(e < 1e-5, "{e}");
}

#[test]
fn shared_leaf_accumulates() {
    let e = check(&[rand(&[3, 3], 39)], false, |g, v| {
        let y = g.matmul(v[0], v[0], false, true)?;
        g.add(y, v[0])
    });
    assert!(e < TOL, "{e}");
}
