//! `framemix` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use framemix::data::{self, Splits};
use framemix::detector::checkpoint::load_checkpoint;
use framemix::eval::{evaluate_detector, DEFAULT_IOU_THRESHOLD};
use framemix::mixup;
use framemix::seed::{self, tag};
use framemix::synth::{self, CorpusConfig, SplitTag};
use framemix::train::{self, MatrixSpec};
use framemix::{Arm, BoundingBox, MixupConfig, Pixels, TrainingConfig};
use rand::Rng;

#[derive(Parser)]
#[command(name = "framemix", version, about = "Train detectors on labeled stills plus negative video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic still/video corpus.
    Generate(GenerateArgs),
    /// Train one arm and write checkpoints and a run record.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled test split.
    Eval(EvalArgs),
    /// Train every arm for every seed and tabulate AP.
    Matrix(MatrixArgs),
    /// Write blended training samples with their boxes drawn.
    Preview(PreviewArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Number of labeled stills (train and test together).
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    neg_videos: Option<usize>,
    #[arg(long)]
    pos_videos: Option<usize>,
    /// Frames per video, negative and positive alike.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    arm: Arm,
    /// TOML file with every training setting.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `image-test` or `video-test`.
    #[arg(long)]
    split: SplitTag,
    /// JSON report path; the PR curve goes next to it with a `.csv` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Base training settings; the desk schedule when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also run mixup rows with λ ~ Beta(α, α + 1) for each listed α.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
}

#[derive(Args)]
struct PreviewArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// TOML file describing the λ distribution.
    #[arg(long)]
    mixup_config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Marks an error as the caller's fault.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<Usage>() || e.downcast_ref::<framemix::Error>().is_some_and(framemix::Error::is_usage)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Matrix(a) => matrix(a),
        Command::Preview(a) => preview(a),
    }
}

fn load_corpus(path: &Path) -> anyhow::Result<Splits> {
    data::load_manifest(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_training_config(path: &Path) -> anyhow::Result<TrainingConfig> {
    TrainingConfig::load(path).map_err(|e| match e {
        framemix::Error::Io { .. } => usage(format!("cannot read config: {e}")),
        other => anyhow!(other).context(format!("config {}", path.display())),
    })
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let mut cfg = CorpusConfig { seed: a.seed, ..CorpusConfig::default() };
    if let Some(n) = a.images {
        cfg.images = n;
    }
    if let Some(n) = a.neg_videos {
        cfg.negative_videos = n;
    }
    if let Some(n) = a.pos_videos {
        cfg.positive_videos = n;
    }
    if let Some(n) = a.frames {
        cfg.negative_frames = n;
        cfg.positive_frames = n;
    }
    let manifest = synth::gen_corpus(&cfg, &a.out)?;
    for (t, n) in manifest.split_counts() {
        println!("{:<12} {n}", t.as_str());
    }
    println!("checksum     {}", manifest.checksum()?);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_training_config(&a.config)?;
    cfg.arm = a.arm;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let splits = load_corpus(&a.corpus)?;
    let record = train::train_on(cfg, &splits, Some(&a.out))?;
    for e in &record.epochs {
        let ap = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "epoch {:>2}  lr {:.0e}  det {:.4}  reg {:.4}  image-test {}  video-test {}",
            e.epoch,
            e.lr,
            e.detection_loss,
            e.regularization_loss,
            ap(e.image_test_ap),
            ap(e.video_test_ap)
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> anyhow::Result<()> {
    let splits = load_corpus(&a.corpus)?;
    let split = splits.labeled(a.split)?;
    let (state, _) = load_checkpoint(&a.checkpoint)?;
    let report = evaluate_detector(&state, split, DEFAULT_IOU_THRESHOLD)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    report.save_json(&a.out)?;
    report.save_curve_csv(&a.out.with_extension("csv"))?;
    println!(
        "{} AP@0.5 = {:.4}  (TP {}, FP {}, FN {})",
        a.split.as_str(),
        report.ap,
        report.true_positives,
        report.false_positives,
        report.false_negatives
    );
    Ok(())
}

fn matrix(a: MatrixArgs) -> anyhow::Result<()> {
    let base = match &a.config {
        Some(p) => load_training_config(p)?,
        None => TrainingConfig::desk(),
    };
    let splits = load_corpus(&a.corpus)?;
    let mut spec = MatrixSpec::four_arms(base.clone(), a.seeds.clone());
    if !a.alphas.is_empty() {
        spec.rows.extend(MatrixSpec::beta_sweep(base, &a.alphas, a.seeds).rows);
    }
    let report = train::run_experiment_matrix(&splits, &spec, Some(&a.out))?;
    print!("{}", report.markdown());
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Outline a box in pure green, one pixel wide.
fn draw_box(p: &mut Pixels, b: &BoundingBox) {
    let (h, w) = (p.height(), p.width());
    let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
    let (x1, x2) = (clamp(b.x_min, w), clamp(b.x_max - 1e-9, w));
    let (y1, y2) = (clamp(b.y_min, h), clamp(b.y_max - 1e-9, h));
    let mut put = |y: usize, x: usize| {
        for (c, v) in [0.0, 1.0, 0.0].into_iter().enumerate().take(p.channels()) {
            p.set(y, x, c, v);
        }
    };
    for x in x1..=x2 {
        put(y1, x);
        put(y2, x);
    }
    for y in y1..=y2 {
        put(y, x1);
        put(y, x2);
    }
}

fn preview(a: PreviewArgs) -> anyhow::Result<()> {
    let cfg = MixupConfig::load(&a.mixup_config).map_err(|e| match e {
        framemix::Error::Io { .. } => usage(format!("cannot read mixup config: {e}")),
        other => anyhow!(other),
    })?;
    let splits = load_corpus(&a.corpus)?;
    let (stills, frames) = (splits.image_train.len(), splits.video_train.total_frames());
    if frames == 0 {
        return Err(usage("preview needs negative frames but video-train is empty"));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut index = String::from("file,still,frame,lambda\n");
    for i in 0..a.count {
        let mut rng = seed::stream(a.seed, &[tag::PREVIEW, i as u64]);
        let still = rng.random_range(0..stills);
        let pick = rng.random_range(0..frames);
        let image = splits.image_train.load(still)?;
        let frame = splits.video_train.load_global(pick)?;
        let mut sample = mixup::make_virtual_sample(&image, &frame, &cfg, &mut rng)?;
        for b in &sample.boxes {
            draw_box(&mut sample.pixels, b);
        }
        let name = format!("preview_{i:03}.png");
        sample.pixels.save_png(&a.out.join(&name))?;
        index.push_str(&format!(
            "{name},{},{}/{},{}\n",
            splits.image_train.id(still),
            frame.source_video,
            frame.frame_index,
            sample.lambda_used
        ));
    }
    let path = a.out.join("index.csv");
    fs::write(&path, index).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} previews to {}", a.count, a.out.display());
    Ok(())
}
