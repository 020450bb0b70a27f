//! The `sdu-seg` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure. `SDU_SEG_THREADS` sets the worker count of the
//! compute pool. Every command writes a [`RunManifest`]; `replay` reruns one.

pub mod config;
pub mod manifest;
pub mod overlay;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    load_root, make_folds, synth_dataset, write_image, SampleSet, SynthConfig,
};
use crate::error::{Error, Result};
use crate::models::{parse_widths, BlockKind, ModelConfig, ParameterReport, SegModel, REFERENCE_TOTALS};
use crate::train::{
    cross_validate, evaluate, Checkpoint, CrossValOptions, EpochSummary, Pairing, Trainer,
};

pub use config::RunConfig;
pub use manifest::{digest_path, RunManifest};

pub const THREADS_ENV: &str = "SDU_SEG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sdu-seg", version, about = "Segmentation networks with stacked dilated convolutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Parameter counts.
    Params(ParamsArgs),
    /// Receptive fields per level and branch.
    Rf(RfArgs),
    /// k-fold cross-validation, optionally comparing two architectures.
    Crossval(CrossvalArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 250)]
    pub n: usize,
    /// Square extent; overridden per axis by --height/--width.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub speckle: bool,
}

/// Model and optimizer settings shared by `train` and `crossval`.
#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct RunFlags {
    /// key = value file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated widths of the four levels.
    #[arg(long)]
    pub widths: Option<String>,
    #[arg(long, action = ArgAction::Set)]
    pub norm: Option<bool>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Resize every sample to this square extent first.
    #[arg(long)]
    pub resize: Option<usize>,
    /// Resolved configuration; set when replaying a manifest.
    #[arg(skip)]
    pub resolved: Option<RunConfig>,
}

impl RunFlags {
    fn resolve(&self, arch: Option<BlockKind>) -> Result<RunConfig> {
        if let Some(r) = &self.resolved {
            return Ok(r.clone());
        }
        let mut c = RunConfig::default();
        if let Some(p) = &self.config {
            c.apply_file(p)?;
        }
        if let Some(a) = arch {
            c.model.block_kind = a;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.seed {
            c.train.seed = v;
        }
        if let Some(w) = &self.widths {
            c.model.widths = parse_widths(w)?;
        }
        if let Some(v) = self.norm {
            c.model.use_norm = v;
        }
        if let Some(v) = self.threshold {
            c.train.threshold = v;
        }
        c.validate()?;
        Ok(c)
    }

    /// Flags with the configuration folded in, for the manifest.
    fn materialized(&self, resolved: &RunConfig) -> RunFlags {
        RunFlags {
            config: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            seed: None,
            widths: None,
            norm: None,
            threshold: None,
            resize: self.resize,
            resolved: Some(resolved.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset root holding images/ and masks/.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset root; without it one seeded fold of five is held out.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub val_fold: usize,
    /// sdu, unet or single.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint with optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Write PPM overlays of the predicted boundaries here.
    #[arg(long)]
    pub overlay_dir: Option<PathBuf>,
    /// Output directory for scores.csv, summary.csv and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub resize: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ParamsArgs {
    #[arg(long, default_value = "sdu")]
    pub arch: String,
    #[arg(long, default_value = "64,128,256,512")]
    pub widths: String,
    #[arg(long, default_value_t = 1)]
    pub in_ch: usize,
    #[arg(long, default_value_t = 1)]
    pub out_ch: usize,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub norm: bool,
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct RfArgs {
    #[arg(long, default_value = "sdu")]
    pub arch: String,
    #[arg(long, default_value = "64,128,256,512")]
    pub widths: String,
    #[arg(long, default_value = "bilinear")]
    pub upsample: String,
    /// Write the table as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "sdu")]
    pub arch_a: String,
    #[arg(long)]
    pub arch_b: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Seed of the fold plan; training seeds come from the run flags.
    #[arg(long = "fold-seed", default_value_t = 0)]
    pub fold_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "fold")]
    pub pairing: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Redirect the recorded output location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Unsupported(_) | Error::Tape(_) => 1,
        Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) | Error::ShapeMismatch { .. } | Error::Degenerate(_) => 2,
        Error::NonFinite(_) => 3,
    }
}

/// Sizes the global compute pool from `SDU_SEG_THREADS` once per process.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if the pool already exists, which is fine.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_threads();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Params(a) => cmd_params(a),
        Command::Rf(a) => cmd_rf(a),
        Command::Crossval(a) => cmd_crossval(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn create_dir(d: &Path) -> Result<()> {
    fs::create_dir_all(d).map_err(|e| Error::io(d, e))
}

fn write_text(p: &Path, s: &str) -> Result<()> {
    fs::write(p, s).map_err(|e| Error::io(p, e))
}

fn file_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_data(root: &Path, resize: Option<usize>) -> Result<SampleSet> {
    let set = load_root(root)?;
    match resize {
        Some(s) => set.resized(s, s),
        None => Ok(set),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n: a.n,
        height: a.height.unwrap_or(a.size),
        width: a.width.unwrap_or(a.size),
        seed: a.seed,
        speckle: a.speckle,
    };
    cfg.validate()?;
    let resolved = SynthArgs {
        height: Some(cfg.height),
        width: Some(cfg.width),
        ..a.clone()
    };
    let mut m = RunManifest::new(Command::Synth(resolved), Some(a.seed));
    m.output(a.out.join("images"));
    m.output(a.out.join("masks"));
    m.emit(Some(&a.out.join("manifest.json")))?;
    let set = synth_dataset(&a.out, &cfg)?;
    println!(
        "wrote {} samples of {}x{} to {}",
        set.len(),
        cfg.height,
        cfg.width,
        a.out.display()
    );
    Ok(())
}

fn log_epoch(quiet: bool) -> impl FnMut(&EpochSummary) {
    move |s: &EpochSummary| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  loss {:.5}  train dice {:.4}  val dice {}{}",
                s.epoch,
                s.train_loss,
                s.train_dice,
                s.val_dice.map_or("-".into(), |d| format!("{d:.4}")),
                if s.improved { "  (best)" } else { "" }
            );
        }
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let arch = a.arch.as_deref().map(str::parse::<BlockKind>).transpose()?;
    let mut resolved = a.run.resolve(arch)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    if let Some(ck) = &resume {
        resolved.model = ck.meta.model.clone();
    }
    let data = load_data(&a.data, a.run.resize)?;
    let (train, val, plan) = match &a.val_data {
        Some(v) => (data, load_data(v, a.run.resize)?, None),
        None => {
            let plan = make_folds(&data, 5, resolved.train.seed)?;
            if a.val_fold >= plan.k {
                return Err(Error::Config(format!("val_fold must be < {}", plan.k)));
            }
            let tr = data.select(&plan.training_ids(a.val_fold))?;
            let va = data.select(&plan.validation_ids(a.val_fold))?;
            (tr, va, Some(plan))
        }
    };

    let recorded = TrainArgs {
        arch: Some(resolved.model.block_kind.arch_name().to_string()),
        run: a.run.materialized(&resolved),
        ..a.clone()
    };
    let mut m = RunManifest::new(Command::Train(recorded), Some(resolved.train.seed));
    m.input(&a.data)?;
    if let Some(v) = &a.val_data {
        m.input(v)?;
    }
    if let Some(r) = &a.resume {
        m.input(r)?;
    }
    for f in ["config.txt", "history.csv", "best.sduc", "last.sduc"] {
        m.output(a.out.join(f));
    }
    if plan.is_some() {
        m.output(a.out.join("fold_plan.csv"));
    }
    create_dir(&a.out)?;
    m.emit(Some(&a.out.join("manifest.json")))?;
    write_text(&a.out.join("config.txt"), &resolved.to_text())?;
    if let Some(p) = &plan {
        p.write_csv(&a.out.join("fold_plan.csv"))?;
    }

    let mut trainer = match &resume {
        Some(ck) => Trainer::resume(ck, Some(resolved.train.clone()))?,
        None => Trainer::new(&resolved.model, resolved.train.clone())?,
    };
    trainer.fit(&train, Some(&val), Some(&a.out), &mut log_epoch(a.quiet))?;
    let h = trainer.history();
    let first = h.dice(0, crate::train::Split::Train).unwrap_or(f64::NAN);
    let last = h.dice(trainer.epoch(), crate::train::Split::Train).unwrap_or(f64::NAN);
    let best = trainer.best().expect("fit evaluates at least once");
    println!(
        "{}: {} train / {} val samples, epochs {}; train dice {:.4} -> {:.4}; best val dice {:.4} at epoch {}",
        resolved.model.block_kind,
        train.len(),
        val.len(),
        trainer.epoch(),
        first,
        last,
        best.val_dice,
        best.epoch
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let threshold = a
        .threshold
        .or_else(|| ck.meta.train.as_ref().map(|t| t.threshold))
        .unwrap_or(0.5);
    let smoothing = ck
        .meta
        .train
        .as_ref()
        .map_or(crate::metrics::DEFAULT_SMOOTHING, |t| t.loss_smoothing);
    let data = load_data(&a.data, a.resize)?;

    let recorded = EvalArgs {
        threshold: Some(threshold),
        ..a.clone()
    };
    let mut m = RunManifest::new(Command::Eval(recorded), None);
    m.input(&a.checkpoint)?;
    m.input(&a.data)?;
    if let Some(o) = &a.out {
        m.output(o.join("scores.csv"));
        m.output(o.join("summary.csv"));
    }
    if let Some(d) = &a.overlay_dir {
        m.output(d.clone());
    }
    match &a.out {
        Some(o) => {
            create_dir(o)?;
            m.emit(Some(&o.join("manifest.json")))?;
        }
        None => m.emit(None)?,
    }

    let report = evaluate(&model, &data, threshold, smoothing)?;
    let mut summary = String::from("class,mean,std,n\n");
    for (c, s) in report.per_class.iter().enumerate() {
        summary.push_str(&format!("{c},{},{},{}\n", s.mean, s.std, s.n));
    }
    match &a.out {
        Some(o) => {
            write_text(&o.join("scores.csv"), &report.to_csv())?;
            write_text(&o.join("summary.csv"), &summary)?;
        }
        None => print!("{}", report.to_csv()),
    }
    if let Some(d) = &a.overlay_dir {
        create_dir(d)?;
        for (s, pred) in data.samples().iter().zip(&report.masks) {
            let img = overlay::render_overlay(s, data.channels(), pred, data.classes());
            write_image(&d.join(format!("{}.ppm", s.id)), &img)?;
        }
    }
    for (c, s) in report.per_class.iter().enumerate() {
        println!("class {c}: dice {s} over {} images", s.n);
    }
    Ok(())
}

fn group(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn cmd_params(a: &ParamsArgs) -> Result<()> {
    let kind: BlockKind = a.arch.parse()?;
    let base = ModelConfig {
        in_channels: a.in_ch,
        out_channels: a.out_ch,
        widths: parse_widths(&a.widths)?,
        use_norm: a.norm,
        ..ModelConfig::default()
    };
    let sdu_cfg = base.clone().with_kind(BlockKind::Sdu);
    let unet_cfg = base.clone().with_kind(BlockKind::DoubleConv);
    let report = ParameterReport::for_config(&base.clone().with_kind(kind))?;
    let sdu = ParameterReport::for_config(&sdu_cfg)?.compare_with(&unet_cfg)?;
    let cmp = sdu.ratio_vs.clone().expect("comparison attached");

    let mut m = RunManifest::new(Command::Params(a.clone()), None);
    if let Some(o) = &a.out {
        m.output(o.clone());
    }
    m.emit(a.out.as_deref().map(file_manifest_path).as_deref())?;

    print!("{report}");
    println!();
    println!("sdu total:  {:>12}", group(sdu.total));
    println!("unet total: {:>12}", group(cmp.other_total));
    println!("ratio sdu/unet: {:.4}", cmp.ratio);
    let reference = |name: &str| REFERENCE_TOTALS.iter().find(|r| r.network == name).expect("listed").parameters;
    let (ref_sdu, ref_unet) = (reference("SDU-Net"), reference("U-Net"));
    println!(
        "reference totals: {}",
        REFERENCE_TOTALS
            .iter()
            .map(|r| format!("{} {}", r.network, group(r.parameters)))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!(
        "delta vs reference: sdu {:+}, unet {:+}; reference ratio {:.4}",
        sdu.total as i64 - ref_sdu as i64,
        cmp.other_total as i64 - ref_unet as i64,
        ref_sdu as f64 / ref_unet as f64
    );
    if let Some(o) = &a.out {
        let json = serde_json::json!({ "report": report, "sdu_vs_unet": sdu.ratio_vs });
        write_text(o, &(serde_json::to_string_pretty(&json).expect("serializable") + "\n"))?;
    }
    Ok(())
}

pub fn cmd_rf(a: &RfArgs) -> Result<()> {
    let kind: BlockKind = a.arch.parse()?;
    let cfg = ModelConfig {
        widths: parse_widths(&a.widths)?,
        block_kind: kind,
        upsample_mode: a.upsample.parse().map_err(Error::Config)?,
        use_norm: false,
        ..ModelConfig::default()
    };
    let model = SegModel::<f32>::new(cfg)?;
    let rows = model.receptive_fields()?;

    let mut m = RunManifest::new(Command::Rf(a.clone()), None);
    if let Some(o) = &a.out {
        m.output(o.clone());
    }
    m.emit(a.out.as_deref().map(file_manifest_path).as_deref())?;

    println!("{:<6} {:>5}  {:<28} {:>7}", "level", "jump", "branch extents", "max");
    for r in &rows {
        let b = r.branches.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        println!(
            "{:<6} {:>5}  {:<28} {:>7}",
            r.name,
            r.jump,
            format!("{{{b}}}"),
            r.extents.iter().next_back().copied().unwrap_or(0)
        );
    }
    if let Some(o) = &a.out {
        write_text(o, &(serde_json::to_string_pretty(&rows).expect("serializable") + "\n"))?;
    }
    Ok(())
}

pub fn cmd_crossval(a: &CrossvalArgs) -> Result<()> {
    let kind_a: BlockKind = a.arch_a.parse()?;
    let kind_b = a.arch_b.as_deref().map(str::parse::<BlockKind>).transpose()?;
    if a.k < 2 {
        return Err(Error::Config(format!("--k must be >= 2, got {}", a.k)));
    }
    if a.jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    let pairing: Pairing = a.pairing.parse()?;
    let resolved = a.run.resolve(Some(kind_a))?;
    let data = load_data(&a.data, a.run.resize)?;
    let model_a = resolved.model.clone();
    let model_b = kind_b.map(|k| model_a.clone().with_kind(k));
    if let Some(b) = &model_b {
        b.validate()?;
    }

    let recorded = CrossvalArgs {
        run: a.run.materialized(&resolved),
        ..a.clone()
    };
    let mut m = RunManifest::new(Command::Crossval(recorded), Some(resolved.train.seed));
    m.input(&a.data)?;
    if let Some(o) = &a.out {
        for f in ["fold_plan.csv", "folds.csv", "scores.csv", "report.txt"] {
            m.output(o.join(f));
        }
        create_dir(o)?;
        m.emit(Some(&o.join("manifest.json")))?;
    } else {
        m.emit(None)?;
    }

    let opts = CrossValOptions {
        k: a.k,
        jobs: a.jobs,
        pairing,
    };
    let quiet = a.quiet;
    let log = move |arch: &str, fold: usize, s: &EpochSummary| {
        if !quiet {
            eprintln!(
                "{arch} fold {fold} epoch {:>4}  loss {:.5}  val dice {}",
                s.epoch,
                s.train_loss,
                s.val_dice.map_or("-".into(), |d| format!("{d:.4}"))
            );
        }
    };
    let report = cross_validate(
        &data,
        &model_a,
        model_b.as_ref(),
        &resolved.train,
        a.fold_seed,
        &opts,
        &log,
    )?;
    print!("{report}");
    if let Some(o) = &a.out {
        report.plan.write_csv(&o.join("fold_plan.csv"))?;
        write_text(&o.join("folds.csv"), &report.folds_csv())?;
        let mut scores = String::from("arch,fold,id,class,dice\n");
        for (c, evals) in report.evaluations.iter().enumerate() {
            for (f, r) in evals.iter().enumerate() {
                for s in &r.per_image {
                    scores.push_str(&format!("{},{f},{},{},{}\n", report.archs[c], s.id, s.class, s.dice));
                }
            }
        }
        write_text(&o.join("scores.csv"), &scores)?;
        write_text(&o.join("report.txt"), &report.to_string())?;
    }
    Ok(())
}

fn redirect(cmd: &Command, out: &Path) -> Result<Command> {
    let mut c = cmd.clone();
    match &mut c {
        Command::Synth(a) => a.out = out.to_path_buf(),
        Command::Train(a) => a.out = out.to_path_buf(),
        Command::Eval(a) => a.out = Some(out.to_path_buf()),
        Command::Params(a) => a.out = Some(out.to_path_buf()),
        Command::Rf(a) => a.out = Some(out.to_path_buf()),
        Command::Crossval(a) => a.out = Some(out.to_path_buf()),
        Command::Replay(_) => return Err(Error::Config("a manifest cannot record a replay".into())),
    }
    Ok(c)
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let m = RunManifest::load(&a.manifest)?;
    m.verify_inputs()?;
    let cmd = match &a.out {
        Some(o) => redirect(&m.command, o)?,
        None => m.command.clone(),
    };
    if matches!(cmd, Command::Replay(_)) {
        return Err(Error::Config("a manifest cannot record a replay".into()));
    }
    run(&cmd)
}
