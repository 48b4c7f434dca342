//! Command-line front end for DehazeMamba: synthetic data, training, inference,
//! evaluation, haze statistics and the scan scaling benchmark.

pub mod bench;
pub mod config;
pub mod eval;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use dehazemamba_core::data::{self, pnm, ImagePair};
use dehazemamba_core::network::{DehazeMamba, ParamStore};
use dehazemamba_core::train::{load_params, Trainer, LOG_HEADER};
use dehazemamba_core::{Error, Result, Tensor};

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    GenData,
    Train,
    Infer,
    Eval,
    BenchScan,
    Stats,
}

#[derive(Debug, Parser)]
#[command(name = "dehazemamba", version, about = "SAR-guided dehazing with selective state-space scans")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the data, training and benchmark seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue training from the configured checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub dump_config: bool,
    /// Report destination (dehazed image for `infer`, metrics log for `train`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub hazy: Option<PathBuf>,
    #[arg(long)]
    pub sar: Option<PathBuf>,
    /// Stop training once this step is reached (checkpointing as usual).
    #[arg(long)]
    pub until: Option<u64>,
}

/// 2 configuration, 3 data, 4 numeric.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Shape { .. } => 2,
        Error::Data(_) | Error::Parse(_) | Error::Io { .. } | Error::Alignment { .. } => 3,
        Error::Numeric(_) | Error::Domain(_) | Error::Tape(_) => 4,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            ensure_parent(p)?;
            std::fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.data.validate()?;
    Ok(cfg)
}

pub fn build_model(cfg: &RunConfig) -> Result<(DehazeMamba, ParamStore<f32>)> {
    DehazeMamba::new(&cfg.model, cfg.train.seed)
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<(DehazeMamba, ParamStore<f32>)> {
    let (model, mut store) = build_model(cfg)?;
    load_params(checkpoint, &mut store)?;
    Ok((model, store))
}

/// Dehazes one `[3, H, W]` image with its `[1, H, W]` SAR companion.
pub fn dehaze(model: &DehazeMamba, store: &ParamStore<f32>, hazy: &Tensor<f32>, sar: &Tensor<f32>) -> Result<Tensor<f32>> {
    let batched = |t: &Tensor<f32>| {
        let mut s = vec![1];
        s.extend_from_slice(t.shape());
        t.clone().reshape(&s)
    };
    if hazy.rank() != 3 || sar.rank() != 3 {
        return Err(Error::Alignment {
            optical: hazy.shape().to_vec(),
            sar: sar.shape().to_vec(),
        });
    }
    Ok(model.infer(store, &batched(hazy)?, &batched(sar)?)?.select0(0))
}

pub fn dehaze_all(model: &DehazeMamba, store: &ParamStore<f32>, pairs: &[ImagePair]) -> Result<Vec<Tensor<f32>>> {
    pairs.iter().map(|p| dehaze(model, store, &p.hazy, &p.sar)).collect()
}

fn gen_data(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let pairs = data::generate(&cfg.data)?;
    data::write_dataset(&cfg.data.dir, &pairs)?;
    eprintln!("wrote {} pairs to {}", pairs.len(), cfg.data.dir.display());
    if let Some(out) = &cli.out {
        let manifest = cfg.data.dir.join(data::dataset::MANIFEST);
        std::fs::copy(&manifest, out).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn train(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let pairs = data::load_dataset(&cfg.data.dir)?;
    let (model, store) = build_model(cfg)?;
    let mut trainer = Trainer::new(model, store, cfg.train.clone())?;
    trainer.check_data(&pairs)?;
    let ckpt = cli.checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    if cli.resume {
        trainer.load(&ckpt)?;
    }
    let log_path = cli.out.clone().unwrap_or_else(|| cfg.paths.log.clone());
    ensure_parent(&log_path)?;
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(cli.resume)
        .truncate(!cli.resume)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if !cli.resume {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    }
    let every = cfg.train.log_every.max(1);
    let last = cfg.train.steps - 1;
    let ck_every = cfg.train.checkpoint_every;
    trainer.run(&pairs, cli.until, |t, l| {
        if l.step % every == 0 || l.step == last {
            writeln!(log, "{}", l.line()).map_err(|e| Error::io(&log_path, e))?;
            eprintln!("{}", l.line());
        }
        if ck_every > 0 && (l.step + 1) % ck_every == 0 {
            t.save(&ckpt)?;
        }
        Ok(())
    })?;
    trainer.save(&ckpt)
}

fn infer(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let need = |p: &Option<PathBuf>, flag: &str| p.clone().ok_or_else(|| Error::Config(format!("infer needs --{flag}")));
    let hazy = pnm::read(&need(&cli.hazy, "hazy")?)?;
    let sar = pnm::read(&need(&cli.sar, "sar")?)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("dehazed.ppm"));
    if hazy.shape()[1..] != sar.shape()[1..] || hazy.shape()[0] != 3 || sar.shape()[0] != 1 {
        return Err(Error::Alignment {
            optical: hazy.shape().to_vec(),
            sar: sar.shape().to_vec(),
        });
    }
    let ckpt = cli.checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let (model, store) = load_model(cfg, &ckpt)?;
    let result = dehaze(&model, &store, &hazy, &sar)?;
    ensure_parent(&out)?;
    pnm::write(&out, &result)
}

fn evaluate(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let pairs = data::load_dataset(&cfg.data.dir)?;
    let mut table = eval::EvalTable::default();
    if !pairs.is_empty() {
        let ckpt = cli.checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
        let (model, store) = load_model(cfg, &ckpt)?;
        for (i, (out, p)) in dehaze_all(&model, &store, &pairs)?.iter().zip(&pairs).enumerate() {
            table.rows.push(eval::eval_row(i, out, p)?);
        }
    }
    write_text(cli.out.as_deref().or(cfg.paths.report.as_deref()), &table.to_tsv())
}

fn stats(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let pairs = data::load_dataset(&cfg.data.dir)?;
    let stats = pairs.iter().map(ImagePair::stats).collect::<Result<Vec<_>>>()?;
    let report = data::dataset_report(&stats);
    write_text(cli.out.as_deref().or(cfg.paths.report.as_deref()), &report.to_tsv())
}

fn bench_scan(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let report = bench::run(&cfg.bench)?;
    write_text(cli.out.as_deref().or(cfg.paths.report.as_deref()), &report.to_tsv())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    if cli.dump_config {
        return write_text(cli.out.as_deref(), &cfg.dump()?);
    }
    match cli.command {
        Command::GenData => gen_data(cli, &cfg),
        Command::Train => train(cli, &cfg),
        Command::Infer => infer(cli, &cfg),
        Command::Eval => evaluate(cli, &cfg),
        Command::BenchScan => bench_scan(cli, &cfg),
        Command::Stats => stats(cli, &cfg),
    }
}
