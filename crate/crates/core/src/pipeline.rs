//! The operational commands behind the CLI: dataset generation, the two
//! training stages, sampling, editing, evaluation, parameter accounting and
//! the end-to-end smoke run. Progress is logged as `key=value` lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adapter::{self, attach_adapter, CompositeModel};
use crate::backbone::{self, decode_latent, encode_occupancy, GridError, OccupancyGrid};
use crate::config::RunConfig;
use crate::data::{family_histogram, load_dataset, make_dataset, mean_occupancy_fraction, save_dataset, DataConfig, DatasetSample};
use crate::encoder;
use crate::flow::{repaint_sample, sample as flow_sample, FlowSampleConfig, LatentBox, ZeroedSkeleton};
use crate::metrics::{chamfer, occupancy_iou, rerigging_score, sample_bone_points, WORST_RERIGGING};
use crate::nn::{checkpoint, count_params as accounting, ModelConfig, ParamStore};
use crate::skeleton::{Family, Skeleton};
use crate::train::{self, fresh_backbone, items_from_samples, Stage, TrainLog};
use crate::Error;

/// Seed salts for the stages of a run.
const SALT_HELDOUT: u64 = 0x4e1d;
const SALT_PRETRAIN: u64 = 0x9e7a;
const SALT_ADAPTER_INIT: u64 = 0xada0;
const SALT_ADAPTER: u64 = 0xada1;
const SALT_EVAL: u64 = 0xe7a1;

/// Occupancy file magic; followed by the side as `u16` and the packed bits.
pub const OCC_MAGIC: &[u8; 4] = b"OCC1";

fn log_line(log: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), Error> {
    writeln!(log, "{line}")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub n_samples: usize,
    pub histogram: [usize; 4],
    pub mean_occupancy: f64,
}

/// Generates `n` samples with `seed` and writes them to `out`.
pub fn gen_data(data: &DataConfig, n: usize, seed: u64, out: &Path, log: &mut dyn Write) -> Result<GenSummary, Error> {
    let samples = make_dataset(seed, n, data)?;
    save_dataset(out, data, &samples)?;
    let summary = GenSummary {
        n_samples: samples.len(),
        histogram: family_histogram(&samples),
        mean_occupancy: mean_occupancy_fraction(&samples),
    };
    let h = summary.histogram;
    log_line(
        log,
        format_args!(
            "stage=gen-data n_samples={} {}={} {}={} {}={} {}={} mean_occupancy={:.5} out={}",
            summary.n_samples,
            Family::ALL[0].name(),
            h[0],
            Family::ALL[1].name(),
            h[1],
            Family::ALL[2].name(),
            h[2],
            Family::ALL[3].name(),
            h[3],
            summary.mean_occupancy,
            out.display()
        ),
    )?;
    Ok(summary)
}

fn load_samples(path: &Path, cfg: &RunConfig) -> Result<Vec<DatasetSample>, Error> {
    let (header, samples) = load_dataset(path)?;
    if header.res != cfg.data.res {
        return Err(Error::ConfigMismatch(format!(
            "dataset {} has side {}, config voxel_res {}",
            path.display(),
            header.res,
            cfg.data.res
        )));
    }
    Ok(samples)
}

fn check_model_config(text: &str, cfg: &ModelConfig, path: &Path) -> Result<(), Error> {
    let stored = ModelConfig::from_text(text)?;
    if &stored != cfg {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint {} was written for a different model config",
            path.display()
        )));
    }
    Ok(())
}

/// Trains the backbone alone and writes it with every tensor frozen.
pub fn pretrain(cfg: &RunConfig, log: &mut dyn Write) -> Result<TrainLog, Error> {
    let samples = load_samples(&cfg.dataset, cfg)?;
    let items = items_from_samples(&samples, &cfg.model);
    let tcfg = crate::flow::TrainConfig {
        seed: cfg.stage_seed(SALT_PRETRAIN),
        ..cfg.pretrain.clone()
    };
    let mut model = fresh_backbone::<f32>(&cfg.model, tcfg.seed)?;
    let start = Instant::now();
    let mut io = Ok(());
    let result = train::train(&mut model, &items, &[], Stage::Pretrain, &tcfg, |epoch, loss, _| {
        if io.is_ok() {
            io = writeln!(log, "stage=pretrain epoch={epoch} loss={loss:.6} elapsed_s={:.1}", start.elapsed().as_secs_f64());
        }
    })?;
    io?;
    let mut store = model.params.subset(backbone::PREFIX);
    store.set_frozen(backbone::PREFIX, true);
    checkpoint::save(&cfg.backbone_ckpt, &cfg.model.to_text(), &store)?;
    log_line(
        log,
        format_args!("stage=pretrain saved={} hash={}", cfg.backbone_ckpt.display(), store.content_hash(backbone::PREFIX)),
    )?;
    Ok(result)
}

/// Loads the frozen backbone checkpoint. Every tensor must be flagged frozen.
pub fn load_backbone(cfg: &RunConfig) -> Result<ParamStore<f32>, Error> {
    let (text, store) = checkpoint::load::<f32>(&cfg.backbone_ckpt)?;
    check_model_config(&text, &cfg.model, &cfg.backbone_ckpt)?;
    if let Some((name, _)) = store.iter().find(|(n, p)| !p.frozen || !n.starts_with(backbone::PREFIX)) {
        return Err(Error::Config(format!(
            "{}: `{name}` is not a frozen backbone tensor",
            cfg.backbone_ckpt.display()
        )));
    }
    Ok(store)
}

/// Trains the encoder and adapters on top of the frozen backbone and writes
/// exactly the `encoder.*` and `adapter.*` tensors.
pub fn train_adapter(cfg: &RunConfig, log: &mut dyn Write) -> Result<TrainLog, Error> {
    let backbone_params = load_backbone(cfg)?;
    let samples = load_samples(&cfg.dataset, cfg)?;
    let items = items_from_samples(&samples, &cfg.model);
    let validation = if cfg.val_items == 0 {
        Vec::new()
    } else {
        let held = load_samples(&cfg.heldout, cfg)?;
        items_from_samples(&held[..cfg.val_items.min(held.len())], &cfg.model)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(SALT_ADAPTER_INIT));
    let mut model = CompositeModel::fresh(&cfg.model, backbone_params, &mut rng)?;
    let before = model.backbone_hash();
    let tcfg = crate::flow::TrainConfig {
        seed: cfg.stage_seed(SALT_ADAPTER),
        ..cfg.adapter.clone()
    };
    let start = Instant::now();
    let mut io = Ok(());
    let result = train::train(&mut model, &items, &validation, Stage::Adapter, &tcfg, |epoch, loss, val| {
        if io.is_ok() {
            let val = val.map_or("none".to_string(), |v| format!("{v:.6}"));
            io = writeln!(
                log,
                "stage=train-adapter epoch={epoch} loss={loss:.6} val_loss={val} elapsed_s={:.1}",
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    io?;
    train::check_frozen(&before, &model)?;
    let mut store = model.params.subset(encoder::PREFIX);
    store.merge(model.params.subset(adapter::PREFIX))?;
    checkpoint::save(&cfg.adapter_ckpt, &cfg.model.to_text(), &store)?;
    log_line(
        log,
        format_args!(
            "stage=train-adapter saved={} backbone_hash={before} label_null_fraction={:.4}",
            cfg.adapter_ckpt.display(),
            result.dropout.label_fraction()
        ),
    )?;
    Ok(result)
}

/// Backbone plus trained encoder and adapters.
pub fn load_model(cfg: &RunConfig) -> Result<CompositeModel<f32>, Error> {
    let backbone_params = load_backbone(cfg)?;
    let (text, store) = checkpoint::load::<f32>(&cfg.adapter_ckpt)?;
    check_model_config(&text, &cfg.model, &cfg.adapter_ckpt)?;
    attach_adapter(
        &cfg.model,
        backbone_params,
        store.subset(adapter::PREFIX),
        store.subset(encoder::PREFIX),
    )
}

pub fn write_occupancy(path: &Path, occ: &OccupancyGrid) -> Result<(), Error> {
    let mut bytes = OCC_MAGIC.to_vec();
    bytes.extend_from_slice(&(occ.res() as u16).to_le_bytes());
    bytes.extend_from_slice(&occ.pack());
    fs::write(path, bytes).map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_occupancy(path: &Path) -> Result<OccupancyGrid, Error> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    if bytes.len() < 6 || &bytes[..4] != OCC_MAGIC {
        return Err(Error::Config(format!("{}: not an occupancy file", path.display())));
    }
    let res = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    Ok(OccupancyGrid::unpack(res, &bytes[6..])?)
}

/// One `x y z` line per occupied voxel center, in normalized coordinates.
pub fn write_points(path: &Path, occ: &OccupancyGrid) -> Result<(), Error> {
    let mut text = String::new();
    for p in occ.occupied_centers() {
        text.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))?;
    Ok(())
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

/// Generates one grid for `skeleton` and writes `<out>.occ` and `<out>.pts`.
pub fn sample(
    cfg: &RunConfig,
    skeleton: &Skeleton,
    label: Option<usize>,
    out: &Path,
    log: &mut dyn Write,
) -> Result<OccupancyGrid, Error> {
    let model = load_model(cfg)?;
    let scfg = FlowSampleConfig {
        seed: cfg.seed,
        mask: None,
        ..cfg.sampling.clone()
    };
    let res = flow_sample(&model, Some(skeleton), label, &scfg, cfg.model.latent_res, cfg.model.latent_channels)?;
    let occ = decode_latent(&res.latent, cfg.decode_threshold);
    write_occupancy(&with_ext(out, "occ"), &occ)?;
    write_points(&with_ext(out, "pts"), &occ)?;
    log_line(
        log,
        format_args!("stage=sample occupied={} seed={} steps={} out={}", occ.count(), scfg.seed, scfg.steps, out.display()),
    )?;
    Ok(occ)
}

/// Voxel box `[min, max)` converted to the latent tokens it touches.
pub fn voxel_mask_to_latent(min: [usize; 3], max: [usize; 3], cfg: &RunConfig) -> Result<LatentBox, Error> {
    let cell = cfg.data.res / cfg.model.latent_res;
    if (0..3).any(|a| min[a] > max[a] || max[a] > cfg.data.res) {
        return Err(Error::MaskOutOfBounds(format!("{min:?}..{max:?} in a {}^3 grid", cfg.data.res)));
    }
    let b = LatentBox::from_voxels(min, max, cell);
    b.validate(cfg.model.latent_res)?;
    Ok(b)
}

/// Regenerates the masked region of `input` under `skeleton`. Voxels outside
/// the decoded footprint of the mask are copied from `input`.
pub fn edit(
    cfg: &RunConfig,
    input: &OccupancyGrid,
    mask: LatentBox,
    skeleton: &Skeleton,
    label: Option<usize>,
    log: &mut dyn Write,
) -> Result<OccupancyGrid, Error> {
    if input.res() != cfg.data.res {
        return Err(GridError::ResolutionMismatch(input.res(), cfg.data.res).into());
    }
    mask.validate(cfg.model.latent_res)?;
    let model = load_model(cfg)?;
    let z0 = encode_occupancy(input, cfg.model.latent_channels);
    let scfg = FlowSampleConfig {
        seed: cfg.seed,
        mask: Some(mask),
        ..cfg.sampling.clone()
    };
    let res = repaint_sample(&model, &z0, Some(skeleton), label, &scfg)?;
    let generated = decode_latent(&res.latent, cfg.decode_threshold);
    let cell = cfg.data.res / cfg.model.latent_res;
    let out = OccupancyGrid::from_fn(cfg.data.res, |x, y, z| {
        if mask.contains([x / cell, y / cell, z / cell]) {
            generated.get(x, y, z)
        } else {
            input.get(x, y, z)
        }
    })?;
    log_line(log, format_args!("stage=edit occupied={} mask={:?}..{:?}", out.count(), mask.min, mask.max))?;
    Ok(out)
}

/// Per-sample evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: usize,
    pub family: String,
    pub mode: &'static str,
    pub rerigging: f64,
    pub iou: f64,
    /// Chamfer between all generated voxel centers and the bone samples.
    pub chamfer_raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Means {
    pub n: usize,
    pub rerigging: f64,
    pub iou: f64,
    pub chamfer_raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub records: Vec<EvalRecord>,
    pub conditional: Means,
    pub unconditional: Means,
    /// `(mode, family, means)` rows, families in label order then `overall`.
    pub rows: Vec<(&'static str, String, Means)>,
}

fn means<'a>(records: impl Iterator<Item = &'a EvalRecord>) -> Means {
    let mut m = Means::default();
    for r in records {
        m.n += 1;
        m.rerigging += r.rerigging;
        m.iou += r.iou;
        m.chamfer_raw += r.chamfer_raw;
    }
    if m.n > 0 {
        let n = m.n as f64;
        m.rerigging /= n;
        m.iou /= n;
        m.chamfer_raw /= n;
    }
    m
}

fn score(id: usize, s: &DatasetSample, mode: &'static str, gen: &OccupancyGrid, cfg: &RunConfig) -> Result<EvalRecord, Error> {
    let spacing = cfg.rerig_spacing();
    let (rerigging, chamfer_raw) = if gen.is_empty() {
        (WORST_RERIGGING, WORST_RERIGGING)
    } else {
        let bones = sample_bone_points(&s.skeleton, spacing)?;
        (
            rerigging_score(gen, &s.skeleton, spacing)?,
            chamfer(&gen.occupied_centers(), &bones)?,
        )
    };
    Ok(EvalRecord {
        id,
        family: s.family().map_or("unknown", |f| f.name()).to_string(),
        mode,
        rerigging,
        iou: occupancy_iou(gen, &s.occupancy)?,
        chamfer_raw,
    })
}

/// Scores a model on held-out samples, conditionally and with the skeleton
/// tokens zeroed. Both modes share the per-sample seed.
pub fn evaluate(model: &CompositeModel<f32>, samples: &[DatasetSample], cfg: &RunConfig) -> Result<EvalSummary, Error> {
    let base = cfg.stage_seed(SALT_EVAL);
    let (lr, ch) = (cfg.model.latent_res, cfg.model.latent_channels);
    let pairs: Vec<(EvalRecord, EvalRecord)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let scfg = FlowSampleConfig {
                seed: base.wrapping_add(i as u64),
                mask: None,
                ..cfg.sampling.clone()
            };
            let label = Some(s.label);
            let cond = flow_sample(model, Some(&s.skeleton), label, &scfg, lr, ch)?;
            let uncond = flow_sample(&ZeroedSkeleton(model), Some(&s.skeleton), label, &scfg, lr, ch)?;
            Ok((
                score(i, s, "conditional", &decode_latent(&cond.latent, cfg.decode_threshold), cfg)?,
                score(i, s, "unconditional", &decode_latent(&uncond.latent, cfg.decode_threshold), cfg)?,
            ))
        })
        .collect::<Result<_, Error>>()?;
    let mut records = Vec::with_capacity(2 * pairs.len());
    for (c, u) in pairs {
        records.push(c);
        records.push(u);
    }
    let mut rows = Vec::new();
    for mode in ["conditional", "unconditional"] {
        for fam in Family::ALL {
            let m = means(records.iter().filter(|r| r.mode == mode && r.family == fam.name()));
            if m.n > 0 {
                rows.push((mode, fam.name().to_string(), m));
            }
        }
        rows.push((mode, "overall".to_string(), means(records.iter().filter(|r| r.mode == mode))));
    }
    let overall = |mode: &str| rows.iter().find(|r| r.0 == mode && r.1 == "overall").map(|r| r.2).unwrap_or_default();
    Ok(EvalSummary {
        conditional: overall("conditional"),
        unconditional: overall("unconditional"),
        rows,
        records,
    })
}

/// Per-sample table for one mode.
pub fn report_csv(summary: &EvalSummary, mode: &str) -> String {
    let mut out = String::from("id,family,rerigging,iou,chamfer_raw\n");
    for r in summary.records.iter().filter(|r| r.mode == mode) {
        out.push_str(&format!("{},{},{:.6},{:.6},{:.6}\n", r.id, r.family, r.rerigging, r.iou, r.chamfer_raw));
    }
    out
}

pub fn summary_csv(summary: &EvalSummary) -> String {
    let mut out = String::from("mode,family,n,rerigging,iou,chamfer_raw\n");
    for (mode, fam, m) in &summary.rows {
        out.push_str(&format!("{mode},{fam},{},{:.6},{:.6},{:.6}\n", m.n, m.rerigging, m.iou, m.chamfer_raw));
    }
    out
}

/// Evaluates the trained model on the held-out set and writes `report.csv`
/// (conditional), `report_unconditional.csv` and `summary.csv` under `out_dir`.
pub fn eval(cfg: &RunConfig, log: &mut dyn Write) -> Result<EvalSummary, Error> {
    let model = load_model(cfg)?;
    let samples = load_samples(&cfg.heldout, cfg)?;
    let start = Instant::now();
    let summary = evaluate(&model, &samples, cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("report.csv"), report_csv(&summary, "conditional"))?;
    fs::write(cfg.out_dir.join("report_unconditional.csv"), report_csv(&summary, "unconditional"))?;
    fs::write(cfg.out_dir.join("summary.csv"), summary_csv(&summary))?;
    for (mode, m) in [("conditional", summary.conditional), ("unconditional", summary.unconditional)] {
        log_line(
            log,
            format_args!(
                "stage=eval mode={mode} n={} iou={:.4} rerigging={:.4} chamfer_raw={:.4}",
                m.n, m.iou, m.rerigging, m.chamfer_raw
            ),
        )?;
    }
    log_line(log, format_args!("stage=eval elapsed_s={:.1}", start.elapsed().as_secs_f64()))?;
    Ok(summary)
}

/// Table of the parameter breakdown for a config.
pub fn count_params_table(cfg: &ModelConfig) -> String {
    format!("{}\n", accounting(cfg))
}

/// Margin the conditional mean IoU must hold over the zeroed-skeleton ablation.
pub const IOU_MARGIN: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeOutcome {
    pub checks: Vec<(String, bool)>,
    pub eval: EvalSummary,
    pub elapsed_s: f64,
}

impl SmokeOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }
}

/// Full chain in `dir`: gen-data (training and held-out), pretrain,
/// train-adapter, eval. Writes `smoke_summary.txt` with one
/// `check=<name> result=<pass|fail>` line per check.
pub fn run_smoke(base: &RunConfig, dir: &Path, log: &mut dyn Write) -> Result<SmokeOutcome, Error> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let cfg = RunConfig {
        dataset: dir.join("train.tms"),
        heldout: dir.join("heldout.tms"),
        backbone_ckpt: dir.join("backbone.ckpt"),
        adapter_ckpt: dir.join("adapter.ckpt"),
        out_dir: dir.join("eval"),
        ..base.clone()
    };
    cfg.validate()?;
    gen_data(&cfg.data, cfg.n_samples, cfg.seed, &cfg.dataset, log).map_err(|e| e.in_stage("gen-data"))?;
    gen_data(&cfg.data, cfg.n_heldout, cfg.stage_seed(SALT_HELDOUT), &cfg.heldout, log).map_err(|e| e.in_stage("gen-data"))?;
    let pre = pretrain(&cfg, log).map_err(|e| e.in_stage("pretrain"))?;
    let ad = train_adapter(&cfg, log).map_err(|e| e.in_stage("train-adapter"))?;
    let summary = eval(&cfg, log).map_err(|e| e.in_stage("eval"))?;
    let (c, u) = (summary.conditional, summary.unconditional);
    let first_last = |v: &[f64]| v.first().zip(v.last()).is_some_and(|(a, b)| b < a);
    let checks = vec![
        ("pretrain_loss_decreases".to_string(), first_last(&pre.epoch_losses)),
        ("adapter_val_loss_decreases".to_string(), ad.val_losses.is_empty() || first_last(&ad.val_losses)),
        ("iou_margin".to_string(), c.iou - u.iou >= IOU_MARGIN),
        ("rerigging_lower".to_string(), c.rerigging < u.rerigging),
    ];
    let elapsed_s = start.elapsed().as_secs_f64();
    let mut text = String::new();
    for (name, ok) in &checks {
        text.push_str(&format!("check={name} result={}\n", if *ok { "pass" } else { "fail" }));
    }
    text.push_str(&format!(
        "iou_conditional={:.6}\niou_unconditional={:.6}\nrerigging_conditional={:.6}\nrerigging_unconditional={:.6}\nelapsed_s={elapsed_s:.1}\n",
        c.iou, u.iou, c.rerigging, u.rerigging
    ));
    fs::write(dir.join("smoke_summary.txt"), &text)?;
    log.write_all(text.as_bytes())?;
    Ok(SmokeOutcome {
        checks,
        eval: summary,
        elapsed_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = OccupancyGrid::from_fn(16, |x, y, z| (x + 2 * y + 3 * z) % 7 == 0).unwrap();
        let path = dir.path().join("g.occ");
        write_occupancy(&path, &g).unwrap();
        assert_eq!(read_occupancy(&path).unwrap(), g);
    }

    #[test]
    fn voxel_mask_conversion() {
        let cfg = RunConfig::default();
        let b = voxel_mask_to_latent([1, 0, 0], [3, 16, 16], &cfg).unwrap();
        assert_eq!((b.min, b.max), ([0, 0, 0], [2, 8, 8]));
        assert!(matches!(
            voxel_mask_to_latent([0, 0, 0], [17, 1, 1], &cfg),
            Err(Error::MaskOutOfBounds(_))
        ));
    }

    #[test]
    fn table_lists_total() {
        let t = count_params_table(&ModelConfig::full_scale());
        assert!(t.contains("151,316,480"), "{t}");
    }
}
