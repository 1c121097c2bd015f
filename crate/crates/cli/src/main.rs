use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use lenscoder::e2e::{
    encoder_psf, evaluate_checkpoint, precompute_fixed_dataset, scene_for, slm_psf, summary_csv, train, Checkpoint,
    EmbeddingSet, EncoderKind, ExperimentConfig, RunReport, Split,
};
use lenscoder::io::{contact_sheet, ingest_mnist, read_pfm, read_real_grid, write_pfm, write_ppm, write_real_grid, write_tensor, Tensor};
use lenscoder::recon::{admm_tv, privacy_sweep, AdmmConfig, InverseProblem};
use lenscoder::simcam::Simulator;
use lenscoder::slm::SlmState;
use lenscoder::{Error, ErrorClass, RealGrid};

#[derive(Parser)]
#[command(name = "lenscoder", version, about = "Programmable lensless camera toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON); unspecified fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set sim.snr_db=20` or `--set transform.kind="shift"`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the encoder PSF (or the PSF of a trained SLM checkpoint).
    GenPsf {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Simulate and normalize embeddings for every train and test digit.
    SimulateDataset,
    /// Train the classifier (and the SLM for learned-slm) and write a run report.
    Train,
    /// Accuracy of a checkpoint on its test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Recover a scene from a measurement with TV-regularized ADMM.
    Reconstruct {
        #[arg(long)]
        measurement: PathBuf,
        #[arg(long)]
        psf: PathBuf,
        #[arg(long, default_value_t = AdmmConfig::default().iters)]
        iters: usize,
        #[arg(long, default_value_t = AdmmConfig::default().tau)]
        tau: f64,
    },
    /// Reconstruction quality of test digits across embedding sizes.
    PrivacySweep {
        #[arg(long, default_value_t = 25)]
        count: usize,
        /// Descending sizes, e.g. `192x253,24x32,6x8`.
        #[arg(long, value_delimiter = ',', default_value = "24x32,12x16,6x8")]
        sizes: Vec<String>,
        #[arg(long, default_value_t = AdmmConfig::default().iters)]
        iters: usize,
    },
    /// Contact sheet of tensors/PFMs, or a results table of run reports.
    Render {
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        cols: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::class) {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Numeric) => 4,
        Some(ErrorClass::Data) | None => 3,
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LENSCODER_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("LENSCODER_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenPsf { checkpoint } => gen_psf(g, checkpoint.as_deref()),
        Command::SimulateDataset => simulate_dataset(g),
        Command::Train => run_train(g),
        Command::Evaluate { checkpoint } => run_evaluate(g, checkpoint),
        Command::Reconstruct {
            measurement,
            psf,
            iters,
            tau,
        } => reconstruct(g, measurement, psf, *iters, *tau),
        Command::PrivacySweep { count, sizes, iters } => run_privacy_sweep(g, *count, sizes, *iters),
        Command::Render { inputs, cols } => render(g, inputs, *cols),
    }
}

/// Merge `b` into `a`, recursing into objects.
fn merge(a: &mut Value, b: Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), Error> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("--set {key}: {p:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut v = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut v, file);
    }
    for kv in &g.overrides {
        let (k, raw) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut v, k, val)?;
    }
    if let Some(seed) = g.seed {
        v["seed"] = Value::from(seed);
    }
    let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global) -> Result<&Path> {
    std::fs::create_dir_all(&g.out).map_err(|e| Error::io(&g.out, e))?;
    Ok(&g.out)
}

fn write_json(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn gen_psf(g: &Global, checkpoint: Option<&Path>) -> Result<()> {
    let psf = match checkpoint {
        Some(dir) => {
            let ck = Checkpoint::load(dir)?;
            let theta = ck
                .theta
                .ok_or_else(|| Error::Config(format!("{} holds no SLM weights", dir.display())))?;
            let state = SlmState::new(ck.config.slm_geometry(), theta, true)?;
            slm_psf(&ck.config, &state)?
        }
        None => {
            let cfg = load_config(g)?;
            if cfg.encoder.reads_psf_file() {
                return Err(Error::Config(format!(
                    "gen-psf simulates PSFs; encoder {} is measured",
                    cfg.encoder.name()
                ))
                .into());
            }
            encoder_psf(&cfg)?
        }
    };
    let out = out_dir(g)?;
    write_real_grid(out.join("psf.lct"), &psf)?;
    write_pfm(out.join("psf.pfm"), &psf)?;
    write_ppm(out.join("psf.ppm"), &psf)?;
    println!("wrote {}x{}x{} PSF to {}", psf.channels, psf.height, psf.width, out.display());
    Ok(())
}

fn embedding_tensor(set: &EmbeddingSet, dims: (usize, usize)) -> Result<Tensor> {
    let c = set.dim / (dims.0 * dims.1);
    Ok(Tensor::real(vec![set.len(), c, dims.0, dims.1], set.x.clone())?)
}

fn simulate_dataset(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let splits = ingest_mnist(&cfg.mnist_dir)?;
    let splits = lenscoder::io::MnistSplits {
        train: cfg.n_train.map_or(splits.train.clone(), |n| splits.train.truncated(n)),
        test: cfg.n_test.map_or(splits.test.clone(), |n| splits.test.truncated(n)),
    };
    let psf = encoder_psf(&cfg)?;
    let data = precompute_fixed_dataset(&cfg, &splits, &psf)?;
    let out = out_dir(g)?;
    let dims = cfg.effective_sim().embedding_dims;
    for (name, set) in [("train", &data.train), ("test", &data.test)] {
        write_tensor(out.join(format!("{name}_embeddings.lct")), &embedding_tensor(set, dims)?)?;
        let labels = set.labels.iter().map(|&l| l as f64).collect::<Vec<_>>();
        write_tensor(out.join(format!("{name}_labels.lct")), &Tensor::real(vec![set.len()], labels)?)?;
    }
    let c = data.train.dim / (dims.0 * dims.1);
    let tiles: Vec<RealGrid> = (0..data.train.len().min(25))
        .map(|i| RealGrid::from_vec(dims.0, dims.1, c, data.train.row(i).to_vec()))
        .collect::<Result<_, _>>()?;
    write_ppm(out.join("embeddings.ppm"), &contact_sheet(&tiles, 5)?)?;
    let stats = serde_json::json!({
        "encoder": cfg.encoder.name(),
        "n_train": data.train.len(),
        "n_test": data.test.len(),
        "mean": data.mean,
        "std": data.std,
    });
    write_json(&out.join("stats.json"), &serde_json::to_string_pretty(&stats)?)?;
    println!("simulated {} + {} embeddings into {}", data.train.len(), data.test.len(), out.display());
    Ok(())
}

fn run_train(g: &Global) -> Result<()> {
    let mut cfg = load_config(g)?;
    let out = out_dir(g)?.to_path_buf();
    if cfg.checkpoint_dir.is_none() {
        cfg.checkpoint_dir = Some(out.join("checkpoint"));
    }
    write_json(&out.join("config.json"), &cfg.to_json())?;
    let report = train(&cfg)?;
    report.write(&out, "report")?;
    println!(
        "{}: best accuracy {:.4}, final {:.4} ({:.1} s)",
        report.name,
        report.best_accuracy,
        report.final_accuracy(),
        report.wall_time_s
    );
    Ok(())
}

fn run_evaluate(g: &Global, dir: &Path) -> Result<()> {
    let ck = Checkpoint::load(dir)?;
    let splits = ingest_mnist(&ck.config.mnist_dir)?;
    let test = ck.config.n_test.map_or(splits.test.clone(), |n| splits.test.truncated(n));
    let acc = evaluate_checkpoint(dir, &test)?;
    let body = serde_json::json!({ "checkpoint": dir, "epoch": ck.epoch, "n_test": test.len(), "accuracy": acc });
    write_json(&out_dir(g)?.join("evaluation.json"), &serde_json::to_string_pretty(&body)?)?;
    println!("accuracy {acc:.4} on {} test examples", test.len());
    Ok(())
}

fn read_grid(path: &Path) -> Result<RealGrid> {
    let is_pfm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    Ok(if is_pfm { read_pfm(path)? } else { read_real_grid(path)? })
}

fn reconstruct(g: &Global, measurement: &Path, psf: &Path, iters: usize, tau: f64) -> Result<()> {
    let problem = InverseProblem {
        measurement: read_grid(measurement)?,
        psf: read_grid(psf)?,
        config: AdmmConfig {
            iters,
            tau,
            ..AdmmConfig::default()
        },
    };
    let rec = admm_tv(&problem)?;
    let out = out_dir(g)?;
    write_real_grid(out.join("reconstruction.lct"), &rec)?;
    write_ppm(out.join("reconstruction.ppm"), &rec)?;
    println!("wrote {}x{} reconstruction to {}", rec.height, rec.width, out.display());
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Config(format!("size must look like HxW, got {s:?}"));
    let (h, w) = s.trim().split_once('x').ok_or_else(bad)?;
    let h: usize = h.parse().map_err(|_| bad())?;
    let w: usize = w.parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn run_privacy_sweep(g: &Global, count: usize, sizes: &[String], iters: usize) -> Result<()> {
    let cfg = load_config(g)?;
    if cfg.encoder == EncoderKind::LearnedSlm {
        return Err(Error::Config("privacy-sweep runs fixed encoders; use gen-psf --checkpoint for learned ones".into()).into());
    }
    let dims: Vec<(usize, usize)> = sizes.iter().map(|s| parse_size(s)).collect::<Result<_, _>>()?;
    let splits = ingest_mnist(&cfg.mnist_dir)?;
    let test = splits.test.truncated(count);
    let sim = cfg.effective_sim();
    let psf = encoder_psf(&cfg)?;
    let simulator = Simulator::new(sim.clone(), &psf)?;
    let scenes: Vec<RealGrid> = (0..test.len())
        .map(|i| scene_for(&cfg, &sim, &test, Split::Test, i))
        .collect::<Result<_, _>>()?;
    let sensor: Vec<RealGrid> = scenes
        .iter()
        .map(|s| simulator.sensor_image(s))
        .collect::<Result<_, _>>()?;
    let admm = AdmmConfig {
        iters,
        ..AdmmConfig::default()
    };
    let levels = privacy_sweep(&scenes, &sensor, &psf, &dims, &admm)?;
    let out = out_dir(g)?;
    let mut csv = String::from("height,width,mean_psnr_db\n");
    for l in &levels {
        csv.push_str(&format!("{},{},{:.4}\n", l.dims.0, l.dims.1, l.mean_psnr()));
        let tiles: Vec<RealGrid> = l.reconstructions.iter().take(25).cloned().collect();
        write_ppm(out.join(format!("recon_{}x{}.ppm", l.dims.0, l.dims.1)), &contact_sheet(&tiles, 5)?)?;
        println!("{}x{}: mean PSNR {:.2} dB", l.dims.0, l.dims.1, l.mean_psnr());
    }
    write_json(&out.join("privacy_sweep.csv"), &csv)?;
    Ok(())
}

fn render(g: &Global, inputs: &[PathBuf], cols: usize) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config("render needs at least one input".into()).into());
    }
    let out = out_dir(g)?;
    let is_json = |p: &PathBuf| p.extension().is_some_and(|e| e == "json");
    if inputs.iter().all(is_json) {
        let reports: Vec<RunReport> = inputs
            .iter()
            .map(|p| -> Result<RunReport> {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?)
            })
            .collect::<Result<_>>()?;
        write_json(&out.join("results.csv"), &summary_csv(&reports))?;
        println!("wrote results table for {} runs", reports.len());
        return Ok(());
    }
    let mut tiles = Vec::new();
    for p in inputs {
        let g = read_grid(p)?;
        tiles.push(g);
    }
    let sheet = if tiles.len() == 1 {
        tiles.pop().expect("one tile")
    } else {
        contact_sheet(&tiles, cols)?
    };
    write_ppm(out.join("render.ppm"), &sheet)?;
    println!("wrote {}x{} sheet of {} images", sheet.height, sheet.width, inputs.len());
    Ok(())
}
