//! Finite-difference check of the attention primitive and of a full
//! encoder plus adapter forward pass in double precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skadapter::adapter::adapter_block;
use skadapter::encoder::encode_skeleton_graph;
use skadapter::nn::{grad_check, Binder, ModelConfig, ParamStore, Tensor};
use skadapter::skeleton::{sample_random_tree, Family};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn(&[5, 8], 1.0, &mut rng)).collect();
    let err = grad_check(|g, v| g.attention(v[0], v[1], v[2], 2, 0.5, None, None), &inputs, 1e-5, 1)?;
    println!("attention max relative error {err:.3e}");

    let cfg = ModelConfig {
        feature_dim: 16,
        n_blocks: 1,
        n_heads: 2,
        freq_bands: 2,
        ..ModelConfig::default()
    };
    let mut params = skadapter::encoder::init_params::<f64, _>(&cfg, &mut rng)?;
    params.merge(skadapter::adapter::init_params(&cfg, &mut rng)?)?;
    perturb(&mut params, &mut rng);
    let skel = sample_random_tree(2, 5, Family::Chain)?;
    let h = Tensor::randn(&[6, cfg.feature_dim], 1.0, &mut rng);
    let err = grad_check(
        |g, v| {
            let mut p = Binder::new(&params, false);
            let tokens = encode_skeleton_graph(g, &mut p, &cfg, &skel)?;
            adapter_block(g, &mut p, &cfg, 0, v[0], tokens)
        },
        &[h],
        1e-5,
        2,
    )?;
    println!("encoder+adapter max relative error w.r.t. hidden state {err:.3e}");
    Ok(())
}

fn perturb(params: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().map(String::from).collect();
    for n in names {
        let t = params.tensor_mut(&n).unwrap();
        let noise = Tensor::<f64>::randn(t.shape(), 0.2, rng);
        for (a, b) in t.data_mut().iter_mut().zip(noise.data()) {
            *a += b;
        }
    }
}
