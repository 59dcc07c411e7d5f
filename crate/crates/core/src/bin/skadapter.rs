use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skadapter::config::RunConfig;
use skadapter::pipeline;
use skadapter::skeleton::{parse_skeleton, Family};
use skadapter::Error;

#[derive(Parser)]
#[command(name = "skadapter", version, about = "Skeleton-conditioned voxel generation")]
struct Cli {
    /// Config file of `key=value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting; applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Sampling {
    #[arg(long)]
    steps: Option<usize>,
    /// Guidance weight.
    #[arg(long)]
    cfg: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backbone: Option<PathBuf>,
    #[arg(long)]
    adapter: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic skeleton/occupancy dataset.
    GenData {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..u32::MAX as u64))]
        n: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the backbone and write it frozen.
    Pretrain {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the skeleton encoder and adapters on the frozen backbone.
    TrainAdapter {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate one occupancy grid for a skeleton file.
    Sample {
        #[arg(long)]
        skeleton: PathBuf,
        /// Family name or label index; omitted means the null label.
        #[arg(long)]
        label: Option<String>,
        /// Output prefix; `.occ` and `.pts` are appended.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Regenerate a voxel box of an occupancy grid under a new skeleton.
    Edit {
        #[arg(long)]
        input: PathBuf,
        /// Half-open voxel box `x0 y0 z0 x1 y1 z1`.
        #[arg(long, num_args = 6, value_names = ["X0", "Y0", "Z0", "X1", "Y1", "Z1"])]
        mask: Vec<usize>,
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Score conditional and zeroed-skeleton generations on held-out data.
    Eval {
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Print the trainable-parameter breakdown.
    CountParams {
        #[arg(long = "F")]
        f: Option<usize>,
        #[arg(long = "L")]
        l: Option<usize>,
    },
    /// Run gen-data, pretrain, train-adapter and eval in a directory.
    Smoke {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn push(flags: &mut Vec<(String, String)>, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        flags.push((key.to_string(), v.to_string()));
    }
}

fn push_path(flags: &mut Vec<(String, String)>, key: &str, value: &Option<PathBuf>) {
    push(flags, key, value.as_ref().map(|p| p.display().to_string()));
}

fn push_sampling(flags: &mut Vec<(String, String)>, s: &Sampling) {
    push(flags, "steps", s.steps);
    push(flags, "cfg_weight", s.cfg);
    push(flags, "seed", s.seed);
    push_path(flags, "backbone_ckpt", &s.backbone);
    push_path(flags, "adapter_ckpt", &s.adapter);
}

fn parse_label(text: &Option<String>) -> Result<Option<usize>, Error> {
    let Some(t) = text else { return Ok(None) };
    if let Some(f) = Family::ALL.iter().find(|f| f.name() == t) {
        return Ok(Some(f.label()));
    }
    t.parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("unknown label `{t}`")))
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut flags = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    match &cli.command {
        Command::GenData { n, seed, out } => {
            push(&mut flags, "n_samples", *n);
            push(&mut flags, "seed", *seed);
            push_path(&mut flags, "dataset", out);
        }
        Command::Pretrain { dataset, out, epochs, seed } => {
            push_path(&mut flags, "dataset", dataset);
            push_path(&mut flags, "backbone_ckpt", out);
            push(&mut flags, "pretrain_epochs", *epochs);
            push(&mut flags, "seed", *seed);
        }
        Command::TrainAdapter {
            dataset,
            heldout,
            backbone,
            out,
            epochs,
            seed,
        } => {
            push_path(&mut flags, "dataset", dataset);
            push_path(&mut flags, "heldout", heldout);
            push_path(&mut flags, "backbone_ckpt", backbone);
            push_path(&mut flags, "adapter_ckpt", out);
            push(&mut flags, "adapter_epochs", *epochs);
            push(&mut flags, "seed", *seed);
        }
        Command::Sample { sampling, .. } | Command::Edit { sampling, .. } => push_sampling(&mut flags, sampling),
        Command::Eval { heldout, out_dir, sampling } => {
            push_path(&mut flags, "heldout", heldout);
            push_path(&mut flags, "out_dir", out_dir);
            push_sampling(&mut flags, sampling);
        }
        Command::CountParams { f, l } => {
            push(&mut flags, "feature_dim", *f);
            push(&mut flags, "n_blocks", *l);
        }
        Command::Smoke { seed, .. } => push(&mut flags, "seed", *seed),
    }
    let file = cli.config.as_deref().map(read_text).transpose()?;
    let cfg = match &cli.command {
        // Accounting only needs the model fields.
        Command::CountParams { .. } => {
            let mut cfg = RunConfig::default();
            if let Some(text) = &file {
                cfg.apply_text(text)?;
            }
            for (k, v) in &flags {
                cfg.set(k, v)?;
            }
            cfg.model.validate()?;
            cfg
        }
        _ => RunConfig::resolve(file.as_deref(), &flags)?,
    };
    let stage = match &cli.command {
        Command::GenData { .. } => "gen-data",
        Command::Pretrain { .. } => "pretrain",
        Command::TrainAdapter { .. } => "train-adapter",
        Command::Sample { .. } => "sample",
        Command::Edit { .. } => "edit",
        Command::Eval { .. } => "eval",
        Command::CountParams { .. } => "count-params",
        Command::Smoke { .. } => "smoke",
    };
    execute(cli.command, &cfg).map_err(|e| match e {
        Error::Stage { .. } => e,
        e => e.in_stage(stage),
    })
}

fn execute(command: Command, cfg: &RunConfig) -> Result<(), Error> {
    let stdout = io::stdout();
    let mut log = stdout.lock();
    match command {
        Command::GenData { .. } => {
            pipeline::gen_data(&cfg.data, cfg.n_samples, cfg.seed, &cfg.dataset, &mut log)?;
        }
        Command::Pretrain { .. } => {
            pipeline::pretrain(&cfg, &mut log)?;
        }
        Command::TrainAdapter { .. } => {
            pipeline::train_adapter(&cfg, &mut log)?;
        }
        Command::Sample { skeleton, label, out, .. } => {
            let skel = parse_skeleton(&read_text(&skeleton)?)?;
            pipeline::sample(&cfg, &skel, parse_label(&label)?, &out, &mut log)?;
        }
        Command::Edit {
            input,
            mask,
            skeleton,
            label,
            out,
            ..
        } => {
            let grid = pipeline::read_occupancy(&input)?;
            let skel = parse_skeleton(&read_text(&skeleton)?)?;
            let mask = pipeline::voxel_mask_to_latent([mask[0], mask[1], mask[2]], [mask[3], mask[4], mask[5]], &cfg)?;
            let edited = pipeline::edit(&cfg, &grid, mask, &skel, parse_label(&label)?, &mut log)?;
            pipeline::write_occupancy(&out.with_extension("occ"), &edited)?;
            pipeline::write_points(&out.with_extension("pts"), &edited)?;
        }
        Command::Eval { .. } => {
            pipeline::eval(&cfg, &mut log)?;
        }
        Command::CountParams { .. } => {
            write!(log, "{}", pipeline::count_params_table(&cfg.model))?;
        }
        Command::Smoke { dir, .. } => {
            let outcome = pipeline::run_smoke(&cfg, &dir, &mut log)?;
            if !outcome.passed() {
                return Err(Error::Config("smoke checks failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
