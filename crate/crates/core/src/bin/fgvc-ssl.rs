use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fgvc_ssl::config::read_experiment;
use fgvc_ssl::dataset::{apply_manifest, generate_synthetic, write_dataset, write_manifest, SplitTag, MANIFEST_FILE};
use fgvc_ssl::explain::{export_heatmap, grad_cam, hit_rate};
use fgvc_ssl::model::{load_checkpoint, save_checkpoint, CheckpointInfo};
use fgvc_ssl::trainer::{evaluate, train, write_metrics, Mode, TrainConfig};
use fgvc_ssl::transforms::Preprocess;
use fgvc_ssl::verify::{self, Suite};
use fgvc_ssl::{Error, Result};

#[derive(Parser)]
#[command(name = "fgvc-ssl", version, about = "Self-supervised auxiliary tasks for fine-grained classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic glyph dataset as pixmap trees plus a manifest
    GenData(GenData),
    /// Train a model and write metrics.csv, summary.json and final.ckpt
    Train(Train),
    /// Print top-1 / top-2 accuracy of a checkpoint on the test split
    Eval(Eval),
    /// Export Grad-CAM heatmaps and overlays for the test split
    Cam(Cam),
    /// Run the numerical self-checks
    Verify(Verify),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class_train: usize,
    #[arg(long, default_value_t = 50)]
    per_class_test: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Train {
    /// Experiment file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    label_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("target").required(true).args(["class", "auto"]))]
struct Cam {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Explain this class for every sample
    #[arg(long)]
    class: Option<usize>,
    /// Explain each sample's predicted class
    #[arg(long)]
    auto: bool,
    /// Export only the first N samples
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct Verify {
    #[arg(long, default_value = "all")]
    suite: Suite,
}

fn gen_data(a: &GenData) -> Result<()> {
    let (train, test) = generate_synthetic(a.classes, a.per_class_train, a.per_class_test, a.size, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let mut entries = write_dataset(&train, &a.out)?;
    entries.extend(write_dataset(&test, &a.out)?);
    write_manifest(&entries, &a.out.join(MANIFEST_FILE))?;
    println!(
        "wrote {} train / {} test images ({} classes) to {}",
        train.len(),
        test.len(),
        a.classes,
        a.out.display()
    );
    Ok(())
}

fn resolve(a: &Train) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_experiment(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(f) = a.label_fraction {
        cfg.split.label_fraction = f;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_train(a: &Train) -> Result<()> {
    let cfg = resolve(a)?;
    let train_set = apply_manifest(&a.data, SplitTag::Train)?;
    let test_set = apply_manifest(&a.data, SplitTag::Test)?;
    print!("{}", cfg.to_toml());
    let out = train::<f32>(&cfg, &train_set, &test_set)?;
    fs::create_dir_all(&a.out)?;
    write_metrics(&out.history, &cfg, &a.out.join("metrics.csv"), &a.out.join("summary.json"))?;
    let info = CheckpointInfo {
        epoch: cfg.epochs as u32,
        config_hash: cfg.hash(),
    };
    save_checkpoint(&out.model, &a.out.join("final.ckpt"), info)?;
    if let Some(last) = out.history.last() {
        println!("final top1 {:.2} top2 {:.2}", last.test_top1, last.test_top2);
    }
    Ok(())
}

fn run_eval(a: &Eval) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&a.ckpt)?;
    let test = apply_manifest(&a.data, SplitTag::Test)?;
    let acc = evaluate(&model, &test)?;
    println!("top1 {:.2} top2 {:.2}", acc.top1, acc.top2);
    Ok(())
}

fn run_cam(a: &Cam) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&a.ckpt)?;
    if let Some(c) = a.class {
        if c >= model.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "class {c} out of range for {} classes",
                model.num_classes()
            )));
        }
    }
    let test = apply_manifest(&a.data, SplitTag::Test)?;
    let Some((size, _)) = test.image_size() else {
        return Err(Error::InvalidArgument("empty test split".into()));
    };
    let pre = Preprocess::for_size(size);
    fs::create_dir_all(&a.out)?;
    let take = a.limit.unwrap_or(test.len()).min(test.len());
    let mut maps = Vec::with_capacity(take);
    for s in &test.samples()[..take] {
        let view = pre.eval(&s.image)?;
        let class = match a.class {
            Some(c) => c,
            None => {
                let scores = model.predict(&fgvc_ssl::dataset::Image::batch(&[&view])?)?;
                argmax(scores.data())
            }
        };
        let mut hm = grad_cam(&model, &view, class)?;
        hm.sample_id = Some(s.id);
        let stem = format!("{:06}_c{class}", s.id);
        export_heatmap(&hm, &view, &a.out.join(format!("{stem}_cam.pgm")), &a.out.join(format!("{stem}_overlay.ppm")))?;
        maps.push(hm);
    }
    println!("wrote {take} heatmaps to {}", a.out.display());
    if test.samples()[..take].iter().all(|s| s.glyph_box.is_some()) && take > 0 {
        let subset = fgvc_ssl::dataset::Dataset::new(test.samples()[..take].to_vec(), test.num_classes(), test.split())?;
        println!("localization {:.2}", hit_rate(&maps, &subset, &pre)?);
    }
    Ok(())
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn run_verify(a: &Verify) -> Result<bool> {
    let checks = verify::run(a.suite)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

fn exists(p: &Path, what: &str) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} {} not found", p.display()),
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => exists(&a.data, "data directory").and_then(|_| run_train(a)),
        Command::Eval(a) => exists(&a.ckpt, "checkpoint").and_then(|_| run_eval(a)),
        Command::Cam(a) => exists(&a.ckpt, "checkpoint").and_then(|_| run_cam(a)),
        Command::Verify(a) => match run_verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(4),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
