mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skadapter::adapter::{CompositeModel, SkeletonInput};
use skadapter::backbone;
use skadapter::data::{make_dataset, DataConfig};
use skadapter::flow::{gaussian_latent, TrainConfig};
use skadapter::nn::{checkpoint, Adam, ParamStore};
use skadapter::skeleton::{sample_random_tree, Family};
use skadapter::train::{items_from_samples, train_step, Stage, TrainItem};

#[test]
fn fresh_adapter_is_a_null_signal() {
    let cfg = common::tiny_cfg();
    let model = common::tiny_model(&cfg, 21, false);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for i in 0..50u64 {
        let z = gaussian_latent(&mut rng, cfg.latent_res, cfg.latent_channels);
        let t: f64 = rng.random();
        let label = (i % 5 < 4).then_some(i as usize % 4);
        let skel = sample_random_tree(i, 4 + i as usize % 9, Family::ALL[i as usize % 4]).unwrap();
        let bare = model.velocity(&z, t, label, SkeletonInput::Absent).unwrap();
        let hooked = model.velocity(&z, t, label, SkeletonInput::Encoded(&skel)).unwrap();
        assert_eq!(bare, hooked, "input {i}");
    }
}

#[test]
fn trained_adapter_depends_on_the_skeleton() {
    let cfg = common::tiny_cfg();
    let model = common::tiny_model(&cfg, 23, true);
    let z = gaussian_latent(&mut ChaCha8Rng::seed_from_u64(1), cfg.latent_res, cfg.latent_channels);
    let a = sample_random_tree(1, 6, Family::Chain).unwrap();
    let b = sample_random_tree(2, 9, Family::Star).unwrap();
    let va = model.velocity(&z, 0.5, Some(0), SkeletonInput::Encoded(&a)).unwrap();
    let vb = model.velocity(&z, 0.5, Some(0), SkeletonInput::Encoded(&b)).unwrap();
    assert_ne!(va, vb);
}

fn adapter_items(cfg: &skadapter::nn::ModelConfig) -> Vec<TrainItem> {
    let data = DataConfig { res: 2 * cfg.latent_res, ..DataConfig::default() };
    items_from_samples(&make_dataset(4, 8, &data).unwrap(), cfg)
}

fn snapshot(store: &ParamStore<f64>, prefix: &str) -> Vec<(String, Vec<f64>)> {
    store
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, p)| (n.to_string(), p.tensor.data().to_vec()))
        .collect()
}

#[test]
fn hundred_adapter_steps_leave_the_backbone_untouched() {
    let cfg = common::tiny_cfg();
    let mut model: CompositeModel<f64> = common::tiny_model(&cfg, 31, false);
    let items = adapter_items(&cfg);
    let before_hash = model.backbone_hash();
    let before_enc = snapshot(&model.params, "encoder.");
    let before_ad = snapshot(&model.params, "adapter.");
    let tcfg = TrainConfig { batch_size: 2, lr: 1e-3, ..TrainConfig::default() };
    let mut opt = Adam::new(tcfg.lr);
    let mut stats = Default::default();
    for step in 0..100u64 {
        let batch = [&items[(2 * step as usize) % 8], &items[(2 * step as usize + 1) % 8]];
        train_step(&mut model, &mut opt, &batch, Stage::Adapter, &tcfg, 2 * step, &mut stats).unwrap();
    }
    assert_eq!(model.backbone_hash(), before_hash);
    let changed = |before: &[(String, Vec<f64>)], prefix| {
        let after = snapshot(&model.params, prefix);
        before.iter().zip(&after).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0.clone()).collect::<Vec<_>>()
    };
    let enc = changed(&before_enc, "encoder.");
    let ad = changed(&before_ad, "adapter.");
    assert!(!enc.is_empty() && !ad.is_empty());
    assert!(ad.iter().any(|n| n.contains("zero_proj")));
    assert!(enc.iter().any(|n| n.contains("codebook")));
}

#[test]
fn frozen_entries_reject_updates_in_the_optimizer() {
    let cfg = common::tiny_cfg();
    let mut model: CompositeModel<f64> = common::tiny_model(&cfg, 32, false);
    let before = model.backbone_hash();
    // Gradients addressed to frozen tensors are ignored or refused, never applied.
    let name = model.params.names().find(|n| n.starts_with("backbone.")).unwrap().to_string();
    let len = model.params.tensor(&name).unwrap().len();
    let grads = std::collections::BTreeMap::from([(name, vec![1.0f64; len])]);
    let _ = Adam::new(1e-2).step(&mut model.params, &grads);
    assert_eq!(model.backbone_hash(), before);
}

#[test]
fn checkpoints_round_trip_byte_exact() {
    let cfg = common::tiny_cfg();
    let model = common::tiny_model(&cfg, 41, true);
    let text = cfg.to_text();
    let bytes = checkpoint::encode(&text, &model.params);
    let (back_text, back) = checkpoint::decode::<f64>(&bytes).unwrap();
    assert_eq!(back_text, text);
    assert_eq!(checkpoint::encode(&back_text, &back), bytes);
    for ((na, a), (nb, b)) in model.params.iter().zip(back.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.frozen, b.frozen);
        assert_eq!(a.tensor.shape(), b.tensor.shape());
        assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let single: ParamStore<f32> = model.params.cast();
    let bytes32 = checkpoint::encode(&text, &single);
    let (_, back32) = checkpoint::decode::<f32>(&bytes32).unwrap();
    assert_eq!(checkpoint::encode(&text, &back32), bytes32);
}

#[test]
fn corrupt_checkpoints_are_errors() {
    let cfg = common::tiny_cfg();
    let bytes = checkpoint::encode(&cfg.to_text(), &common::tiny_model(&cfg, 42, false).params);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode::<f64>(&bad).is_err());
    assert!(checkpoint::decode::<f64>(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn forward_is_deterministic_and_shape_preserving() {
    let cfg = common::tiny_cfg();
    let model = common::tiny_model(&cfg, 51, true);
    let skel = sample_random_tree(5, 5, Family::Random).unwrap();
    let z = gaussian_latent(&mut ChaCha8Rng::seed_from_u64(2), cfg.latent_res, cfg.latent_channels);
    let a = model.velocity(&z, 0.3, Some(2), SkeletonInput::Encoded(&skel)).unwrap();
    let b = model.velocity(&z, 0.3, Some(2), SkeletonInput::Encoded(&skel)).unwrap();
    assert_eq!(a, b);
    assert!(a.same_shape(&z));
    let bare = backbone::init_params::<f64, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(bare.names().all(|n| n.starts_with("backbone.")));
}
