//! Scalar re-evaluation of one topology-aware attention unit and helpers
//! around it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skadapter::encoder::{self, embed_joints, grpe_attention_unit, CODEBOOK_TABLES};
use skadapter::layers;
use skadapter::nn::{Binder, Graph, ModelConfig, ParamStore, Tensor};
use skadapter::skeleton::{Skeleton, TopologyMatrices};

pub const PREFIX: &str = "encoder.unit0.attn";

pub fn cfg(f: usize, d_max: usize) -> ModelConfig {
    ModelConfig {
        feature_dim: f,
        n_heads: 2,
        freq_bands: 1,
        d_max,
        ..ModelConfig::default()
    }
}

/// Encoder parameters with every entry (biases, norms, codebooks) random.
pub fn random_store(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = encoder::init_params::<f64, _>(cfg, &mut rng).unwrap();
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let shape = store.tensor(&name).unwrap().shape().to_vec();
        *store.tensor_mut(&name).unwrap() = Tensor::randn(&shape, 0.5, &mut rng);
    }
    store
}

pub fn zero_codebooks(store: &mut ParamStore<f64>, prefix: &str) {
    for t in CODEBOOK_TABLES {
        let name = format!("{prefix}.codebook.{t}");
        let shape = store.tensor(&name).unwrap().shape().to_vec();
        *store.tensor_mut(&name).unwrap() = Tensor::zeros(&shape);
    }
}

pub fn star3() -> Skeleton {
    Skeleton::new(vec![[0.0, 0.0, 0.0], [0.2, -0.1, 0.05], [-0.15, 0.3, 0.1]], &[-1, 0, 0]).unwrap()
}

pub fn chain3() -> Skeleton {
    Skeleton::new(vec![[0.1, 0.1, -0.2], [0.0, 0.25, 0.0], [-0.3, 0.4, 0.2]], &[-1, 0, 1]).unwrap()
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (_, f) = t.rows_cols();
    t.data().chunks(f).map(<[f64]>::to_vec).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scalar evaluation of the unit: per-joint sinusoid embedding, projections,
/// biased scores over sqrt(F), softmax, enriched values, output projection.
pub fn scalar_unit(store: &ParamStore<f64>, skel: &Skeleton, d_max: usize, f: usize, plain: bool) -> Vec<Vec<f64>> {
    let n = skel.len();
    let x: Vec<Vec<f64>> = skel
        .joints()
        .iter()
        .map(|j| {
            let mut row = vec![0.0; f];
            for (a, c) in j.iter().enumerate() {
                let arg = std::f64::consts::PI * *c as f64;
                row[2 * a] = arg.sin();
                row[2 * a + 1] = arg.cos();
            }
            row
        })
        .collect();
    let tensor = |name: &str| store.tensor(&format!("{PREFIX}.{name}")).unwrap();
    let lin = |name: &str, row: &[f64]| -> Vec<f64> {
        let w = tensor(&format!("{name}.weight")).data();
        let b = tensor(&format!("{name}.bias")).data();
        (0..f).map(|o| b[o] + (0..f).map(|i| row[i] * w[i * f + o]).sum::<f64>()).collect()
    };
    let table = |name: &str, row: usize| -> Vec<f64> {
        if plain {
            return vec![0.0; f];
        }
        tensor(&format!("codebook.{name}")).data()[row * f..(row + 1) * f].to_vec()
    };
    let q: Vec<_> = x.iter().map(|r| lin("q", r)).collect();
    let k: Vec<_> = x.iter().map(|r| lin("k", r)).collect();
    let v: Vec<_> = x.iter().map(|r| lin("v", r)).collect();
    // Hop distances and relation codes written out by hand for the 3-joint trees.
    let (d, r) = relation_tables(skel, d_max);
    let mut out = Vec::new();
    for i in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|j| {
                let (dij, rij) = (d[i][j], r[i][j]);
                (dot(&q[i], &k[j])
                    + dot(&q[i], &table("dist_q", dij))
                    + dot(&k[j], &table("dist_k", dij))
                    + dot(&q[i], &table("rel_q", rij))
                    + dot(&k[j], &table("rel_k", rij)))
                    / (f as f64).sqrt()
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = e.iter().sum();
        let mut z = vec![0.0; f];
        for j in 0..n {
            let (dv, rv) = (table("dist_v", d[i][j]), table("rel_v", r[i][j]));
            for c in 0..f {
                z[c] += e[j] / sum * (v[j][c] + dv[c] + rv[c]);
            }
        }
        out.push(lin("out", &z));
    }
    out
}

pub fn relation_tables(skel: &Skeleton, d_max: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    // Self 0, parent 1, child 2, sibling 3, distant 4, end effector 5.
    let parents = skel.parent_indices();
    if parents == [-1, 0, 0] {
        let d = vec![vec![0, 1, 1], vec![1, 0, 2], vec![1, 2, 0]];
        let r = vec![vec![0, 2, 2], vec![1, 5, 3], vec![1, 3, 5]];
        (clip(d, d_max), r)
    } else if parents == [-1, 0, 1] {
        let d = vec![vec![0, 1, 2], vec![1, 0, 1], vec![2, 1, 0]];
        let r = vec![vec![0, 2, 4], vec![1, 0, 2], vec![4, 1, 5]];
        (clip(d, d_max), r)
    } else {
        panic!("no hand table for {parents:?}")
    }
}

pub fn clip(d: Vec<Vec<usize>>, d_max: usize) -> Vec<Vec<usize>> {
    d.into_iter().map(|r| r.into_iter().map(|x| x.min(d_max)).collect()).collect()
}

pub fn run_unit(store: &ParamStore<f64>, cfg: &ModelConfig, skel: &Skeleton) -> Tensor<f64> {
    let topo = TopologyMatrices::new(skel, cfg.d_max).unwrap();
    let mut g = Graph::new();
    let mut p = Binder::new(store, false);
    let x = g.constant(embed_joints(skel, cfg.freq_bands, cfg.feature_dim).unwrap());
    let out = grpe_attention_unit(&mut g, &mut p, PREFIX, x, &topo).unwrap();
    g.value(out).clone()
}

pub fn run_plain(store: &ParamStore<f64>, cfg: &ModelConfig, x: Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let mut p = Binder::new(store, false);
    let x = g.constant(x);
    let q = layers::linear(&mut g, &mut p, &format!("{PREFIX}.q"), x).unwrap();
    let k = layers::linear(&mut g, &mut p, &format!("{PREFIX}.k"), x).unwrap();
    let v = layers::linear(&mut g, &mut p, &format!("{PREFIX}.v"), x).unwrap();
    let scale = 1.0 / (cfg.feature_dim as f64).sqrt();
    let z = g.attention(q, k, v, 1, scale, None, None).unwrap();
    let out = layers::linear(&mut g, &mut p, &format!("{PREFIX}.out"), z).unwrap();
    g.value(out).clone()
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

