//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grad_suite;
pub mod grpe_oracle;

use std::collections::VecDeque;

use proptest::prelude::*;
use skadapter::backbone::OccupancyGrid;
use skadapter::skeleton::{relation_matrix, sample_random_tree, topo_distance_matrix, Family, Relation, Skeleton, MAX_SAMPLED_JOINTS, MIN_SAMPLED_JOINTS};

/// Random rooted tree with up to 12 joints and shuffled joint indices.
pub fn arb_tree() -> impl Strategy<Value = Skeleton> {
    (1usize..=12)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(any::<usize>(), n),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
                prop::collection::vec(prop::array::uniform3(-0.5f32..=0.5), n),
            )
        })
        .prop_map(|(n, raw, perm, joints)| {
            // Joint k attaches to an earlier joint, then labels are shuffled.
            let mut parents = vec![-1i64; n];
            for k in 1..n {
                parents[perm[k]] = perm[raw[k] % k] as i64;
            }
            Skeleton::new(joints, &parents).unwrap()
        })
}

pub fn arb_sampled() -> impl Strategy<Value = Skeleton> {
    (any::<u64>(), MIN_SAMPLED_JOINTS..=MAX_SAMPLED_JOINTS, 0usize..4)
        .prop_map(|(seed, n, f)| sample_random_tree(seed, n, Family::ALL[f]).unwrap())
}

/// All-pairs hop counts by breadth-first search over the undirected bones.
pub fn bfs_hops(skel: &Skeleton) -> Vec<usize> {
    let n = skel.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        if let Some(p) = skel.parent(i) {
            adj[i].push(p);
            adj[p].push(i);
        }
    }
    let mut out = vec![usize::MAX; n * n];
    for s in 0..n {
        let mut queue = VecDeque::from([s]);
        out[s * n + s] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if out[s * n + v] == usize::MAX {
                    out[s * n + v] = out[s * n + u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    out
}

fn seg_dist_sq(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let mut ab = [0.0; 3];
    let mut ap = [0.0; 3];
    for k in 0..3 {
        ab[k] = b[k] - a[k];
        ap[k] = p[k] - a[k];
    }
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let mut s = 0.0;
    if len2 > 0.0 {
        s = ap.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>() / len2;
        s = s.clamp(0.0, 1.0);
    }
    (0..3).map(|k| (ap[k] - s * ab[k]) * (ap[k] - s * ab[k])).sum()
}

/// Scans every voxel center against every bone.
pub fn brute_rasterize(skel: &Skeleton, res: usize, radius: f32) -> OccupancyGrid {
    let vox = |j: [f32; 3]| j.map(|c| (c as f64 + 0.5) * res as f64);
    let mut segs = Vec::new();
    for c in 0..skel.len() {
        if let Some(p) = skel.parent(c) {
            segs.push((vox(skel.joints()[p]), vox(skel.joints()[c])));
        }
    }
    if segs.is_empty() {
        let j = vox(skel.joints()[0]);
        segs.push((j, j));
    }
    let r2 = radius as f64 * radius as f64;
    OccupancyGrid::from_fn(res, |x, y, z| {
        let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
        segs.iter().any(|(a, b)| seg_dist_sq(p, *a, *b) <= r2)
    })
    .unwrap()
}

/// Chamfer by explicit all-pairs distance tables.
pub fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let d = |p: [f64; 3], q: [f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let table: Vec<Vec<f64>> = a.iter().map(|p| b.iter().map(|q| d(*p, *q)).collect()).collect();
    let mut ab = 0.0;
    for row in &table {
        ab += row.iter().cloned().fold(f64::INFINITY, f64::min);
    }
    let mut ba = 0.0;
    for j in 0..b.len() {
        ba += table.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min);
    }
    ab / a.len() as f64 + ba / b.len() as f64
}

/// Small configuration that keeps model tests fast.
pub fn tiny_cfg() -> skadapter::nn::ModelConfig {
    skadapter::nn::ModelConfig {
        feature_dim: 16,
        n_blocks: 2,
        n_heads: 2,
        ffn_multiplier: 2,
        freq_bands: 2,
        time_freqs: 4,
        latent_res: 4,
        latent_channels: 2,
        ..Default::default()
    }
}

/// Composite model on a random backbone. With `perturb`, the adapter and
/// encoder get random values too, so the skeleton changes the output.
pub fn tiny_model(cfg: &skadapter::nn::ModelConfig, seed: u64, perturb: bool) -> skadapter::adapter::CompositeModel<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let backbone = skadapter::backbone::init_params::<f64, _>(cfg, &mut rng).unwrap();
    let mut model = skadapter::adapter::CompositeModel::fresh(cfg, backbone, &mut rng).unwrap();
    if perturb {
        let names: Vec<String> = model.params.trainable_names().into_iter().map(String::from).collect();
        for name in names {
            let t = model.params.tensor_mut(&name).unwrap();
            let noise = skadapter::nn::Tensor::<f64>::randn(t.shape(), 0.2, &mut rng);
            for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
    }
    model
}

/// Clipped distances against BFS, symmetry, zero diagonal and the clipped
/// triangle inequality.
pub fn check_distances(skel: &Skeleton, d_max: usize) {
    let n = skel.len();
    let d = topo_distance_matrix(skel, d_max).unwrap();
    let hops = bfs_hops(skel);
    let unclipped = topo_distance_matrix(skel, usize::MAX).unwrap();
    assert_eq!(unclipped, hops);
    for i in 0..n {
        assert_eq!(d[i * n + i], 0);
        for j in 0..n {
            assert_eq!(d[i * n + j], d[j * n + i]);
            assert_eq!(d[i * n + j], hops[i * n + j].min(d_max));
            for k in 0..n {
                assert!(d[i * n + j] <= (d[i * n + k] + d[k * n + j]).min(d_max));
            }
        }
    }
}

/// Diagonal, parent/child, sibling and distant rules of the relation codes.
pub fn check_relations(skel: &Skeleton) {
    let n = skel.len();
    let r = relation_matrix(skel);
    let code = |i: usize, j: usize| r[i * n + j];
    for i in 0..n {
        let leaf = skel.is_leaf(i);
        let diag = if leaf { Relation::EndEffector } else { Relation::SelfLoop };
        assert_eq!(code(i, i), diag.code());
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = code(i, j);
            assert!(c < 5 && c != Relation::SelfLoop.code());
            assert_eq!(c == Relation::Parent.code(), code(j, i) == Relation::Child.code());
            assert_eq!(c == Relation::Parent.code(), skel.parent(i) == Some(j));
            let siblings = skel.parent(i).is_some() && skel.parent(i) == skel.parent(j);
            assert_eq!(c == Relation::Sibling.code(), siblings);
            assert_eq!(c == Relation::Sibling.code(), code(j, i) == Relation::Sibling.code());
            assert_eq!(c == Relation::Distant.code(), code(j, i) == Relation::Distant.code());
        }
    }
}
