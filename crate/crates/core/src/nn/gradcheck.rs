//! Central finite-difference oracle for the layer backward passes.

use super::*;
use crate::rng::SeededRng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps exact zeros comparable.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn probe(y: &Tensor4, weights: &[f64]) -> f64 {
    y.data().iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Checks input and parameter gradients of `layer` for the scalar probe `sum(r * y)`.
fn check_layer(layer: &Layer, x: &Tensor4, mode: Mode, rng: &mut SeededRng) -> f64 {
    let (y, cache) = layer.forward(x, mode).unwrap();
    let r: Vec<f64> = (0..y.len()).map(|_| rng.normal()).collect();
    let grads = layer.backward(&cache, &Tensor4::new(y.dims(), r.clone())).unwrap();
    let mut worst: f64 = 0.0;

    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let fp = probe(&layer.forward(&xp, mode).unwrap().0, &r);
        let fm = probe(&layer.forward(&xm, mode).unwrap().0, &r);
        worst = worst.max(rel_err(grads.input.data()[i], (fp - fm) / (2.0 * STEP)));
    }
    for (k, g) in grads.params.iter().enumerate() {
        for i in 0..g.len() {
            let eval = |delta: f64| {
                let mut l = layer.clone();
                l.params_mut()[k][i] += delta;
                probe(&l.forward(x, mode).unwrap().0, &r)
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(g[i], numeric));
        }
    }
    worst
}

fn random_tensor(dims: [usize; 4], rng: &mut SeededRng) -> Tensor4 {
    let n = dims.iter().product();
    // keep values away from the LeakyReLU kink so the probe stays smooth
    Tensor4::new(
        dims,
        (0..n)
            .map(|_| {
                let v = rng.normal();
                if v.abs() < 0.05 {
                    v.signum() * 0.05 + v
                } else {
                    v
                }
            })
            .collect(),
    )
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(3);
    for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 1, 0)] {
        let mut conv = Conv2d::new(2, 3, k, s, p, &mut rng);
        conv.bias = (0..3).map(|_| rng.normal()).collect();
        let x = random_tensor([2, 2, 4, 4], &mut rng);
        let err = check_layer(&Layer::Conv(conv), &x, Mode::Eval, &mut rng);
        assert!(err < TOL, "conv k={k} s={s} p={p}: {err}");
    }
}

#[test]
fn batchnorm_gradients_match_in_both_modes() {
    let mut rng = SeededRng::new(4);
    let mut bn = BatchNorm2d::new(3);
    bn.gamma = vec![0.5, 1.5, -0.7];
    bn.beta = vec![0.1, -0.2, 0.3];
    bn.running_mean = vec![0.2, -0.1, 0.0];
    bn.running_var = vec![0.8, 1.3, 0.5];
    let x = random_tensor([3, 3, 3, 2], &mut rng);
    for mode in [Mode::Eval, Mode::Train] {
        let err = check_layer(&Layer::BatchNorm(bn.clone()), &x, mode, &mut rng);
        assert!(err < TOL, "batchnorm {mode:?}: {err}");
    }
}

#[test]
fn activation_pool_linear_gradients() {
    let mut rng = SeededRng::new(5);
    let x = random_tensor([2, 3, 4, 4], &mut rng);
    for layer in [Layer::LeakyRelu { slope: 0.2 }, Layer::GlobalAvgPool] {
        let err = check_layer(&layer, &x, Mode::Eval, &mut rng);
        assert!(err < TOL, "{:?}: {err}", layer.spec());
    }
    let mut lin = Linear::new(3 * 4 * 4, 4, &mut rng);
    lin.bias = (0..4).map(|_| rng.normal()).collect();
    let err = check_layer(&Layer::Linear(lin), &x, Mode::Eval, &mut rng);
    assert!(err < TOL, "linear: {err}");
}
