//! Command-line front end: `gen-data`, `train`, `eval`, `detect`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::dataset::{self, read_ppm, write_ppm, Image, SceneSpec};
use crate::detection::NmsConfig;
use crate::evaluator::evaluate;
use crate::head::Orientation;
use crate::pipeline::{detect, draw_box, AnchorCache};
use crate::trainer::{parse_key_values, Checkpoint, TrainConfig, Trainer};
use crate::{verify, Detector, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "vssa", version, about = "Train and evaluate the sequence-attention traffic-sign detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a detector and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run a checkpoint on one image and write an overlay.
    Detect(DetectArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub train: usize,
    #[arg(long, default_value_t = 4)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub pole_rate: f64,
    /// Distractors per image, `K` or `K-L`.
    #[arg(long, default_value = "0")]
    pub distractors: String,
    /// Labeled signs per image, `K` or `K-L`.
    #[arg(long, default_value = "1-3")]
    pub signs: String,
    /// Image side in pixels.
    #[arg(long, default_value_t = 300)]
    pub size: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` file; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path; defaults to a timestamped run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub orientation: Option<Orientation>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Resume from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Build the model from this config instead of the one stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report directory; defaults to a timestamped run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Overlay PPM; detections go to the same path with a `.txt` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Minimum score drawn and listed.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "all")]
    pub op: String,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::NonFiniteGradient(_) | Error::EmptyLoss => 3,
        Error::Tensor(vssa_autodiff::Error::NonFinite { .. }) => 3,
        Error::Tensor(vssa_autodiff::Error::Config(_)) => 1,
        _ => 2,
    }
}

/// Parses `K` or `K-L`.
fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected `K` or `K-L`, got `{s}`"));
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if b < a {
        return Err(bad());
    }
    Ok((a, b))
}

fn run_dir() -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    PathBuf::from("runs").join(format!("run-{secs}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Resolved settings of a `train` run: training keys plus paths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    /// Reads a config file. Keys it does not mention keep their defaults and are logged.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut rc = RunConfig::default();
        let pairs = parse_key_values(text, source)?;
        for (k, v) in &pairs {
            rc.set(k, v)?;
        }
        for k in crate::trainer::TRAIN_KEYS {
            if !pairs.iter().any(|(p, _)| p == k) {
                info!("config: `{k}` not set, using default {}", rc.train.value_of(k).unwrap());
            }
        }
        Ok(rc)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.train.to_text();
        if let Some(d) = &self.data {
            s.push_str(&format!("data = {}\n", d.display()));
        }
        if let Some(o) = &self.out {
            s.push_str(&format!("out = {}\n", o.display()));
        }
        s
    }
}

/// Rebuilds a detector from a checkpoint, using `config` when given instead
/// of the config stored in the file.
pub fn load_detector(ckpt_path: &Path, config: Option<&Path>) -> Result<(Detector<f32>, TrainConfig)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cfg = match config {
        Some(p) => RunConfig::from_file(p)?.train,
        None => {
            let text = ckpt
                .config_text()
                .ok_or_else(|| Error::Format(format!("{}: checkpoint carries no config; pass --config", ckpt_path.display())))?;
            RunConfig::from_text(&text, "checkpoint config")?.train
        }
    };
    let mut det = Detector::new(cfg.model(), cfg.seed)?;
    det.load_params(ckpt.params())?;
    Ok((det, cfg))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.pole_rate) {
        return Err(Error::Config(format!("--pole-rate must lie in [0, 1], got {}", a.pole_rate)));
    }
    let spec = SceneSpec {
        width: a.size,
        height: a.size,
        signs: parse_range(&a.signs)?,
        distractors: parse_range(&a.distractors)?,
        pole_rate: a.pole_rate,
        seed: a.seed,
        ..SceneSpec::default()
    };
    dataset::write_dataset(&a.out, &spec, a.train, a.test, a.force)?;
    println!("wrote {} train and {} test images to {}", a.train, a.test, a.out.display());
    Ok(())
}

fn check_classes(data_dir: &Path, items: &[dataset::LabeledImage], classes: usize) -> Result<()> {
    let manifest = data_dir.join("manifest.txt");
    if let Ok(text) = fs::read_to_string(&manifest) {
        for (k, v) in parse_key_values(&text, &manifest.display().to_string())? {
            if k == "classes" && v.parse::<usize>().ok() != Some(classes) {
                return Err(Error::Data(format!("dataset has {v} classes but the config says classes = {classes}")));
            }
        }
    }
    let max = dataset::max_class(items);
    if max > classes {
        return Err(Error::Data(format!("dataset uses class {max} but the config says classes = {classes}")));
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        rc.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        rc.out = Some(o.clone());
    }
    if let Some(o) = a.orientation {
        rc.train.orientation = o;
    }
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        rc.set(k.trim(), v.trim())?;
    }
    rc.train.validate()?;
    let data_dir = rc.data.clone().ok_or_else(|| Error::Config("no dataset: pass --data or set `data`".into()))?;
    let out = rc.out.clone().unwrap_or_else(|| run_dir().join("model.ckpt"));
    rc.out = Some(out.clone());

    let items = dataset::load_split(&data_dir, "train")?;
    if items.is_empty() {
        return Err(Error::Data(format!("{}: training split is empty", data_dir.display())));
    }
    check_classes(&data_dir, &items, rc.train.classes)?;
    write(&with_suffix(&out, ".config"), &rc.to_text())?;

    let mut trainer = Trainer::new(rc.train.clone())?;
    if let Some(r) = &a.resume {
        trainer.restore(&Checkpoint::load(r)?)?;
    }
    info!(
        "training {} parameters on {} images for {} iterations",
        trainer.detector.params.numel(),
        items.len(),
        rc.train.iterations
    );
    let start = Instant::now();
    let every = (rc.train.iterations / 20).max(1);
    let total = rc.train.iterations;
    trainer.train(&items, total, |r| {
        if (r.iteration as usize + 1) % every == 0 {
            info!("iter {:>6}  size {}  loss {:.5}  ({:.0?})", r.iteration + 1, r.input_size, r.loss, start.elapsed());
        }
    })?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    trainer.checkpoint().save(&out)?;
    let mut history = String::from("iteration,loss,classification,localization,positives,input_size\n");
    for r in &trainer.history {
        history.push_str(&format!("{},{},{},{},{},{}\n", r.iteration, r.loss, r.classification, r.localization, r.positives, r.input_size));
    }
    write(&with_suffix(&out, ".loss.csv"), &history)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (det, cfg) = load_detector(&a.ckpt, a.config.as_deref())?;
    let items = dataset::load_split(&a.data, &a.split)?;
    check_classes(&a.data, &items, cfg.classes)?;
    let mut anchors = AnchorCache::default();
    let mut dets = Vec::with_capacity(items.len());
    for chunk in items.chunks(8) {
        let imgs: Vec<&Image> = chunk.iter().map(|i| &i.image).collect();
        dets.extend(detect(&det, &imgs, cfg.base_size, &NmsConfig::default(), &mut anchors)?);
    }
    let gts: Vec<_> = items.iter().map(|i| i.objects.clone()).collect();
    let report = evaluate(&dets, &gts, cfg.classes, a.iou)?;
    let dir = a.out.clone().unwrap_or_else(run_dir);
    write(&dir.join("report.txt"), &report.to_table())?;
    write(&dir.join("report.csv"), &report.to_csv())?;
    let mut log = String::from("image,class,score,iou,true_positive\n");
    for m in &report.matches {
        log.push_str(&format!("{},{},{},{},{}\n", items[m.image].path.display(), m.class_id, m.score, m.iou, m.true_positive));
    }
    write(&dir.join("matches.csv"), &log)?;
    write(
        &dir.join("eval.config"),
        &format!("ckpt = {}\ndata = {}\nsplit = {}\niou = {}\n{}", a.ckpt.display(), a.data.display(), a.split, a.iou, cfg.to_text()),
    )?;
    print!("{}", report.to_table());
    Ok(())
}

fn detect_cmd(a: &DetectArgs) -> Result<()> {
    let (det, cfg) = load_detector(&a.ckpt, a.config.as_deref())?;
    let image = read_ppm(&a.image)?;
    let found = detect(&det, &[&image], cfg.base_size, &NmsConfig::default(), &mut AnchorCache::default())?.remove(0);
    let out = a.out.clone().unwrap_or_else(|| run_dir().join("overlay.ppm"));
    let mut overlay = image.clone();
    let mut listing = String::new();
    for d in found.iter().filter(|d| d.score >= a.threshold) {
        draw_box(&mut overlay, &d.bbox, [255, 0, 255]);
        let b = d.bbox;
        listing.push_str(&format!("{} {} {} {} {} {}\n", d.class_id, d.score, b.xmin, b.ymin, b.xmax, b.ymax));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_ppm(&out, &overlay)?;
    write(&out.with_extension("txt"), &listing)?;
    println!("{} detections at score >= {}; overlay {}", listing.lines().count(), a.threshold, out.display());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let results = verify::run(&a.op)?;
    let mut ok = true;
    for r in &results {
        let status = if r.passed { "pass" } else { "FAIL" };
        match &r.error {
            Some(e) => println!("{status}  {:<18} {e}", r.name),
            None => println!("{status}  {:<18} max rel err {:.2e}  ({:.2?})", r.name, r.max_rel_error, r.elapsed),
        }
        ok &= r.passed;
    }
    Ok(ok)
}

/// Caps the worker pool at `VSSA_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("VSSA_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("VSSA_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Detect(a) => detect_cmd(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
    });
    match result {
        Ok(true) => 0,
        Ok(false) => 3,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
