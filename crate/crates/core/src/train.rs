//! Flow-matching training loops for backbone pretraining and adapter training.
//!
//! Every item of a minibatch gets its own graph and its own generator
//! (stream = running item counter), so per-item gradients can be computed in
//! parallel. They are summed in batch order before the Adam step.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adapter::{CompositeModel, SkeletonInput};
use crate::backbone::{self, encode_occupancy, LatentGrid};
use crate::data::DatasetSample;
use crate::flow::{fm_loss, interpolate, target_velocity, DropoutStats, FlowDraw, FlowItem, TrainConfig};
use crate::nn::{Adam, Binder, Graph, ModelConfig, ParamStore, Scalar};
use crate::skeleton::Skeleton;
use crate::Error;

/// One training example in latent form.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub latent: LatentGrid,
    pub skeleton: Skeleton,
    pub label: usize,
}

impl TrainItem {
    pub fn from_sample(s: &DatasetSample, channels: usize) -> Self {
        Self {
            latent: encode_occupancy(&s.occupancy, channels),
            skeleton: s.skeleton.clone(),
            label: s.label,
        }
    }
}

pub fn items_from_samples(samples: &[DatasetSample], cfg: &ModelConfig) -> Vec<TrainItem> {
    samples.iter().map(|s| TrainItem::from_sample(s, cfg.latent_channels)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation loss per epoch (empty without a validation set).
    pub val_losses: Vec<f64>,
    pub steps: u64,
    pub dropout: DropoutStats,
}

/// Which pathway a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Backbone alone, no adapter hook.
    Pretrain,
    /// Frozen backbone with trainable encoder and adapters.
    Adapter,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Adapter => "train-adapter",
        }
    }
}

fn item_gradient<T: Scalar>(
    model: &CompositeModel<T>,
    item: &TrainItem,
    stage: Stage,
    tcfg: &TrainConfig,
    stream: u64,
) -> Result<(f64, BTreeMap<String, Vec<T>>, FlowDraw), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(stream);
    let draw = FlowDraw::sample(&mut rng, item.latent.res(), item.latent.channels(), tcfg);
    let z_t = interpolate(&item.latent, &draw.eps, draw.t)?;
    let target = target_velocity(&item.latent, &draw.eps)?.to_tensor::<T>();
    let label = (!draw.drop_label).then_some(item.label);
    let skeleton = match stage {
        Stage::Pretrain => SkeletonInput::Absent,
        Stage::Adapter if draw.drop_skeleton => SkeletonInput::Absent,
        Stage::Adapter => SkeletonInput::Encoded(&item.skeleton),
    };
    let mut g = Graph::new();
    let mut p = Binder::new(&model.params, true);
    let pred = model.forward_graph(&mut g, &mut p, &z_t, draw.t, label, skeleton)?;
    let loss = g.mse(pred, &target)?;
    let mut grads = g.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, var) in p.trainable_vars() {
        if let Some(gr) = grads.take(var) {
            out.insert(name, gr);
        }
    }
    Ok((g.value(loss).data()[0].f64(), out, draw))
}

/// One optimizer step on a minibatch. Returns the mean loss.
pub fn train_step<T: Scalar>(
    model: &mut CompositeModel<T>,
    opt: &mut Adam,
    batch: &[&TrainItem],
    stage: Stage,
    tcfg: &TrainConfig,
    first_stream: u64,
    stats: &mut DropoutStats,
) -> Result<f64, Error> {
    let results: Vec<_> = batch
        .par_iter()
        .enumerate()
        .map(|(i, item)| item_gradient(model, item, stage, tcfg, first_stream + i as u64))
        .collect::<Result<_, _>>()?;
    let inv = T::one() / T::of(batch.len() as f64);
    let mut total: BTreeMap<String, Vec<T>> = BTreeMap::new();
    let mut loss = 0.0;
    for (l, grads, draw) in results {
        loss += l;
        stats.record(&draw);
        for (name, g) in grads {
            match total.get_mut(&name) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b * inv),
                None => {
                    total.insert(name, g.into_iter().map(|v| v * inv).collect());
                }
            }
        }
    }
    opt.step(&mut model.params, &total)?;
    Ok(loss / batch.len() as f64)
}

/// Epoch loop shared by both stages. `on_epoch(epoch, train_loss, val_loss)`
/// runs after every epoch.
pub fn train<T: Scalar>(
    model: &mut CompositeModel<T>,
    items: &[TrainItem],
    validation: &[TrainItem],
    stage: Stage,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, Option<f64>),
) -> Result<TrainLog, Error> {
    tcfg.validate()?;
    if items.is_empty() {
        return Err(Error::Config("no training items".into()));
    }
    let frozen_hash = model.backbone_hash();
    let mut opt = Adam::new(tcfg.lr);
    let mut log = TrainLog::default();
    let mut stream = 0u64;
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..tcfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5eed_0000_0000);
        shuffle_rng.set_stream(epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&TrainItem> = chunk.iter().map(|i| &items[*i]).collect();
            sum += train_step(model, &mut opt, &batch, stage, tcfg, stream, &mut log.dropout)?;
            stream += batch.len() as u64;
            batches += 1;
            log.steps += 1;
        }
        let train_loss = sum / batches as f64;
        log.epoch_losses.push(train_loss);
        let val = if validation.is_empty() {
            None
        } else {
            Some(validation_loss(model, validation, stage, tcfg)?)
        };
        if let Some(v) = val {
            log.val_losses.push(v);
        }
        if stage == Stage::Adapter {
            check_frozen(&frozen_hash, model)?;
        }
        on_epoch(epoch, train_loss, val);
    }
    Ok(log)
}

/// Errors with `FrozenViolation` if the backbone changed since `expected`.
pub fn check_frozen<T: Scalar>(expected: &str, model: &CompositeModel<T>) -> Result<(), Error> {
    let now = model.backbone_hash();
    if now != expected {
        return Err(Error::FrozenViolation {
            before: expected.to_string(),
            after: now,
        });
    }
    Ok(())
}

/// Flow-matching loss on a fixed validation set with fixed noise, without
/// label dropout.
pub fn validation_loss<T: Scalar>(
    model: &CompositeModel<T>,
    items: &[TrainItem],
    stage: Stage,
    tcfg: &TrainConfig,
) -> Result<f64, Error> {
    let vcfg = TrainConfig {
        text_dropout_p: 0.0,
        ..tcfg.clone()
    };
    let losses: Vec<f64> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x7a1d);
            rng.set_stream(i as u64);
            let batch = [FlowItem {
                z0: &item.latent,
                skeleton: (stage == Stage::Adapter).then_some(&item.skeleton),
                label: Some(item.label),
            }];
            fm_loss(model, &batch, &mut rng, &vcfg, &mut DropoutStats::default())
        })
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Fresh trainable backbone wrapped as a composite without adapters.
pub fn fresh_backbone<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<CompositeModel<T>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: ParamStore<T> = backbone::init_params(cfg, &mut rng)?;
    Ok(CompositeModel {
        cfg: cfg.clone(),
        params,
    })
}
