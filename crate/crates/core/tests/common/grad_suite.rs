//! Central finite-difference checks for every differentiable primitive and
//! for the full encoder + adapter path, in double precision. Each check
//! panics with the worst relative error when it exceeds the tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skadapter::adapter::{CompositeModel, SkeletonInput};
use skadapter::backbone::{self, LatentGrid};
use skadapter::nn::{grad_check, Binder, Graph, ModelConfig, NnError, ParamStore, Tensor, Var};
use skadapter::skeleton::{sample_random_tree, Family};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const CASES: u64 = 20;

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

pub fn check<F>(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NnError>,
{
    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let inputs = make(&mut rng);
        let err = grad_check(&f, &inputs, EPS, case).unwrap();
        worst = worst.max(err);
    }
    assert!(worst <= TOL, "{name}: max relative error {worst:e}");
}

pub fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..6))
}

pub fn linear() {
    check(
        "linear",
        |r| {
            let (m, k) = dims(r);
            let n = r.random_range(1..5);
            vec![randn(&[m, k], r), randn(&[k, n], r), randn(&[n], r)]
        },
        |g, v| g.linear(v[0], v[1], v[2]),
    );
}

pub fn elementwise() {
    check(
        "add",
        |r| {
            let (m, k) = dims(r);
            vec![randn(&[m, k], r), randn(&[m, k], r)]
        },
        |g, v| g.add(v[0], v[1]),
    );
    check(
        "add_row",
        |r| {
            let (m, k) = dims(r);
            vec![randn(&[m, k], r), randn(&[k], r)]
        },
        |g, v| g.add_row(v[0], v[1]),
    );
    check(
        "scale",
        |r| {
            let (m, k) = dims(r);
            vec![randn(&[m, k], r)]
        },
        |g, v| g.scale(v[0], -1.7),
    );
}

pub fn layer_norm() {
    check(
        "layer_norm",
        |r| {
            let m = r.random_range(1..5);
            let k = r.random_range(2..7);
            vec![randn(&[m, k], r), randn(&[k], r), randn(&[k], r)]
        },
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
    );
}

pub fn activations() {
    let make = |r: &mut ChaCha8Rng| {
        let (m, k) = dims(r);
        vec![Tensor::randn(&[m, k], 2.0, r)]
    };
    check("gelu", make, |g, v| g.gelu(v[0]));
    check("silu", make, |g, v| g.silu(v[0]));
    check("softmax_rows", make, |g, v| g.softmax_rows(v[0]));
}

pub fn multi_head_attention() {
    check(
        "attention",
        |r| {
            let m = r.random_range(1..5);
            let n = r.random_range(1..5);
            vec![randn(&[m, 4], r), randn(&[n, 4], r), randn(&[n, 4], r)]
        },
        |g, v| g.attention(v[0], v[1], v[2], 2, 0.7, None, None),
    );
}

pub fn biased_attention() {
    check(
        "attention with biases",
        |r| {
            let m = r.random_range(1..4);
            let n = r.random_range(1..4);
            let f = r.random_range(1..4);
            vec![
                randn(&[m, f], r),
                randn(&[n, f], r),
                randn(&[n, f], r),
                randn(&[m, n], r),
                randn(&[m, n, f], r),
            ]
        },
        |g, v| g.attention(v[0], v[1], v[2], 1, 0.5, Some(v[3]), Some(v[4])),
    );
}

pub fn relative_bias() {
    check(
        "relative_bias",
        |r| {
            let m = r.random_range(1..4);
            let n = r.random_range(1..4);
            vec![randn(&[m, 3], r), randn(&[n, 3], r), randn(&[5, 3], r), randn(&[5, 3], r)]
        },
        |g, v| {
            let (m, n) = (g.value(v[0]).rows_cols().0, g.value(v[1]).rows_cols().0);
            let codes: Vec<usize> = (0..m * n).map(|i| (i * 7 + 3) % 5).collect();
            g.relative_bias(v[0], v[1], v[2], v[3], &codes)
        },
    );
}

pub fn embedding_and_mse() {
    check(
        "embedding",
        |r| vec![randn(&[4, 3], r)],
        |g, v| g.embedding(v[0], &[2, 0, 2, 3, 1], &[5]),
    );
    check(
        "mse",
        |r| {
            let (m, k) = dims(r);
            vec![randn(&[m, k], r)]
        },
        |g, v| {
            let target = Tensor::from_fn(g.value(v[0]).shape(), |i| (i as f64 * 0.37).sin());
            g.mse(v[0], &target)
        },
    );
}

pub fn tiny() -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        n_blocks: 2,
        n_heads: 2,
        ffn_multiplier: 2,
        d_max: 3,
        freq_bands: 1,
        time_freqs: 4,
        latent_res: 2,
        latent_channels: 2,
        ..ModelConfig::default()
    }
}

/// Random values for every parameter so that no path is blocked by the
/// zero-initialized projections.
pub fn randomized(store: &ParamStore<f64>, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut out = ParamStore::new();
    for (name, p) in store.iter() {
        let t = Tensor::randn(p.tensor.shape(), 0.3, rng);
        out.insert(name, t, p.frozen).unwrap();
    }
    out
}

pub fn composite_output(model: &CompositeModel<f64>, g: &mut Graph<f64>, train: bool, z: &LatentGrid, skel: &skadapter::skeleton::Skeleton, weights: &[f64]) -> (Var, Vec<(String, Var)>) {
    let mut p = Binder::new(&model.params, train);
    let out = model.forward_graph(g, &mut p, z, 0.37, Some(1), SkeletonInput::Encoded(skel)).unwrap();
    let loss = g.project(out, weights).unwrap();
    (loss, p.trainable_vars())
}

pub fn full_encoder_adapter_path() {
    let cfg = tiny();
    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + case);
        let bb: ParamStore<f64> = backbone::init_params(&cfg, &mut rng).unwrap();
        let fresh = CompositeModel::fresh(&cfg, bb, &mut rng).unwrap();
        let mut model = CompositeModel {
            cfg: cfg.clone(),
            params: randomized(&fresh.params, &mut rng),
        };
        let n_joints = rng.random_range(1..5);
        let family = Family::ALL[case as usize % 4];
        let skel = sample_random_tree(case, n_joints.max(4), family).unwrap();
        let z = LatentGrid::from_values(2, 2, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let weights: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let (loss, vars) = composite_output(&model, &mut g, true, &z, &skel, &weights);
        let grads = g.backward(loss).unwrap();
        assert!(vars.iter().all(|(n, _)| n.starts_with("encoder.") || n.starts_with("adapter.")));
        let eval = |m: &CompositeModel<f64>| {
            let mut g = Graph::new();
            let (loss, _) = composite_output(m, &mut g, false, &z, &skel, &weights);
            g.value(loss).data()[0]
        };
        // A strided subset of entries per tensor keeps the check fast.
        for (name, var) in &vars {
            let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; model.params.tensor(name).unwrap().len()]);
            let len = analytic.len();
            for e in (case as usize % 3..len).step_by(3) {
                let orig = model.params.tensor(name).unwrap().data()[e];
                model.params.tensor_mut(name).unwrap().data_mut()[e] = orig + EPS;
                let plus = eval(&model);
                model.params.tensor_mut(name).unwrap().data_mut()[e] = orig - EPS;
                let minus = eval(&model);
                model.params.tensor_mut(name).unwrap().data_mut()[e] = orig;
                let numeric = (plus - minus) / (2.0 * EPS);
                let denom = analytic[e].abs().max(numeric.abs()).max(skadapter::nn::gradcheck::GRAD_FLOOR);
                let err = (analytic[e] - numeric).abs() / denom;
                assert!(err <= TOL, "{name}[{e}]: analytic {} numeric {numeric}", analytic[e]);
                worst = worst.max(err);
            }
        }
    }
    assert!(worst <= TOL);
}
