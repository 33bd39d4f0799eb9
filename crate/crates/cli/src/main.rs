mod config;
mod output;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affspace::baseline::{baseline_train, read_baseline, write_baseline_to, BaselineModel, BaselineVariant, BASELINE_MAGIC};
use affspace::dataspec::{read_dataset, write_dataset_to, Dataset, GenerationRequest, Split};
use affspace::eval::{
    object_latents, rms_table, run_transfer, silhouette, trace_from_latents, InputConfiguration, PretrainCache, Predictor,
    TransferSuite,
};
use affspace::model::{read_model, train, write_model_to, AffordanceModel, ChannelPrediction, MODEL_MAGIC};
use affspace::synthgen::{gen_graspability, gen_insertability, gen_rollability, GenCommon, GraspabilityConfig, InsertabilityConfig, RollabilityConfig};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use output::Outputs;

#[derive(Parser)]
#[command(name = "affspace", version, about = "Affordance-space experiments: data synthesis, training, generation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Task {
    Insertability,
    Graspability,
    Rollability,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Synth {
        /// Scenario to generate.
        #[arg(long, value_enum)]
        task: Task,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Seed for the measurement noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard deviation of the additive trajectory noise (0 for ground truth).
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Noisy repetitions per object (and per action for rollability).
        #[arg(long, default_value_t = 20)]
        samples_per_object: usize,
    },
    /// Train the affordance model, or a baseline variant, on a dataset.
    Train {
        /// Dataset file; only its training split is used.
        #[arg(long)]
        data: PathBuf,
        /// Run configuration JSON (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the final model, snapshots and loss.csv.
        #[arg(long)]
        out_dir: PathBuf,
        /// Snapshot period in steps, overriding the config (0 disables).
        #[arg(long)]
        snapshot_every: Option<usize>,
        /// Training steps, overriding the config.
        #[arg(long)]
        iterations: Option<usize>,
        /// Train a baseline variant instead: nll-with-time, nll-without-time,
        /// mse-with-time or mse-without-time.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Decode the channels a request asks for.
    Generate {
        /// Model (.affm) or baseline (.affb) file.
        #[arg(long)]
        model: PathBuf,
        /// Request JSON naming observed channels and outputs.
        #[arg(long)]
        request: PathBuf,
        /// Output CSV with one row per channel, step and component.
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-input RMS table of a model on a dataset.
    Evaluate {
        /// Model (.affm) or baseline (.affb) file.
        #[arg(long)]
        model: PathBuf,
        /// Dataset file with ground truth.
        #[arg(long)]
        data: PathBuf,
        /// `all` or comma-separated configurations like `object+effect,effect`.
        #[arg(long, default_value = "all")]
        configs: String,
        /// Which samples to evaluate.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Directory for report.csv and summary.json.
        #[arg(long)]
        report_dir: PathBuf,
    },
    /// Project per-object latents of training snapshots onto shared principal components.
    AnalyzeLatent {
        /// Directory of snapshot model files (.affm), processed in name order.
        #[arg(long)]
        snapshots: PathBuf,
        /// Dataset supplying one sample per object.
        #[arg(long)]
        data: PathBuf,
        /// Output CSV (snapshot, object, pc1, pc2).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run transfer/generalization protocols.
    Transfer {
        /// Protocol suite JSON.
        #[arg(long)]
        protocol: PathBuf,
        /// Output CSV verdict table; a JSON with every check is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            task,
            out,
            seed,
            noise,
            samples_per_object,
        } => synth(task, &out, GenCommon { noise, seed, samples_per_object }),
        Command::Train {
            data,
            config,
            out_dir,
            snapshot_every,
            iterations,
            baseline,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = snapshot_every {
                cfg.train.snapshot_every = s;
            }
            if let Some(i) = iterations {
                cfg.train.iterations = i;
            }
            let variant = baseline.map(|b| b.parse::<BaselineVariant>()).transpose()?;
            train_cmd(&data, &cfg, &out_dir, variant)
        }
        Command::Generate { model, request, out } => generate(&model, &request, &out),
        Command::Evaluate {
            model,
            data,
            configs,
            split,
            report_dir,
        } => evaluate(&model, &data, &configs, split, &report_dir),
        Command::AnalyzeLatent { snapshots, data, out } => analyze_latent(&snapshots, &data, &out),
        Command::Transfer { protocol, report } => transfer(&protocol, &report),
    }
}

fn load_data(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn synth(task: Task, out: &Path, common: GenCommon) -> Result<()> {
    let data = match task {
        Task::Insertability => gen_insertability(&InsertabilityConfig {
            common,
            ..Default::default()
        })?,
        Task::Graspability => gen_graspability(&GraspabilityConfig {
            common,
            ..Default::default()
        })?,
        Task::Rollability => gen_rollability(&RollabilityConfig {
            common,
            ..Default::default()
        })?,
    };
    let mut outputs = Outputs::new();
    outputs.write(out, |w| Ok(write_dataset_to(&data, &mut WriteAdapter(w))?))?;
    outputs.commit();
    let mut counts: BTreeMap<(String, String), (usize, Vec<String>)> = BTreeMap::new();
    for s in &data.samples {
        let split = format!("{:?}", s.meta.split).to_lowercase();
        let entry = counts.entry((split, s.meta.outcome.clone())).or_default();
        entry.0 += 1;
        if !entry.1.contains(&s.meta.object) {
            entry.1.push(s.meta.object.clone());
        }
    }
    println!("{} samples, {} objects -> {}", data.len(), data.objects().len(), out.display());
    for ((split, outcome), (n, objects)) in counts {
        println!("  {split:5} {outcome:15} {n:5} samples  {} objects", objects.len());
    }
    Ok(())
}

/// `write_dataset_to` wants a sized writer.
struct WriteAdapter<'a>(&'a mut dyn Write);

impl Write for WriteAdapter<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

fn write_losses(losses: &[f64], w: &mut dyn Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        out.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

fn train_cmd(data_path: &Path, cfg: &RunConfig, out_dir: &Path, variant: Option<BaselineVariant>) -> Result<()> {
    let data = load_data(data_path)?;
    let mut outputs = Outputs::new();
    outputs.dir(out_dir)?;
    let snap_dir = out_dir.join("snapshots");
    if cfg.train.snapshot_every > 0 {
        outputs.dir(&snap_dir)?;
    }
    let mut snapshot_files = Vec::new();
    let report = match variant {
        None => {
            let mut model = AffordanceModel::for_dataset(&data.split(Split::Train), cfg.model.clone())?;
            let report = train(&mut model, &data, &cfg.train, &mut |step, m| {
                let path = snap_dir.join(format!("step-{step:07}.affm"));
                let mut buf = Vec::new();
                write_model_to(m, &mut buf)?;
                std::fs::write(&path, buf)?;
                snapshot_files.push(path);
                Ok(())
            });
            for p in &snapshot_files {
                outputs.track(p);
            }
            let report = report?;
            outputs.write(&out_dir.join("model.affm"), |w| Ok(write_model_to(&model, &mut WriteAdapter(w))?))?;
            report
        }
        Some(v) => {
            let result = baseline_train(&data, v, &cfg.baseline, &cfg.train, &mut |step, m| {
                let path = snap_dir.join(format!("step-{step:07}.affb"));
                let mut buf = Vec::new();
                write_baseline_to(m, &mut buf)?;
                std::fs::write(&path, buf)?;
                snapshot_files.push(path);
                Ok(())
            });
            for p in &snapshot_files {
                outputs.track(p);
            }
            let (model, report) = result?;
            outputs.write(&out_dir.join("baseline.affb"), |w| Ok(write_baseline_to(&model, &mut WriteAdapter(w))?))?;
            report
        }
    };
    outputs.write(&out_dir.join("loss.csv"), |w| write_losses(&report.losses, w))?;
    outputs.commit();
    let tail = &report.losses[report.losses.len().saturating_sub(100)..];
    let mean_tail = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "trained {} steps, {} snapshots, mean loss over last {} steps {mean_tail:.4} -> {}",
        report.losses.len(),
        report.snapshot_steps.len(),
        tail.len(),
        out_dir.display()
    );
    Ok(())
}

enum Loaded {
    Model(AffordanceModel),
    Baseline(BaselineModel),
}

impl Loaded {
    fn open(path: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?)
            .read_exact(&mut magic)
            .with_context(|| format!("reading {}", path.display()))?;
        let loaded = if magic == MODEL_MAGIC {
            Loaded::Model(read_model(path)?)
        } else if magic == BASELINE_MAGIC {
            Loaded::Baseline(read_baseline(path)?)
        } else {
            bail!("{} is neither a model nor a baseline file", path.display());
        };
        Ok(loaded)
    }

    fn predictor(&self) -> &dyn Predictor {
        match self {
            Loaded::Model(m) => m,
            Loaded::Baseline(b) => b,
        }
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<ChannelPrediction>> {
        Ok(match self {
            Loaded::Model(m) => m.generate(request)?,
            Loaded::Baseline(b) => b.generate(request)?,
        })
    }
}

fn write_predictions(preds: &[ChannelPrediction], w: &mut dyn Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["channel", "step", "t", "component", "mu", "sigma"])?;
    for p in preds {
        let shape = p.mean.shape();
        let (rows, cols) = (shape[0], shape[1]);
        let image = p.times.is_empty();
        for r in 0..rows {
            let t = if image { String::new() } else { p.times[r].to_string() };
            for c in 0..cols {
                let sigma = if image { p.sigma.data()[0] } else { p.sigma.data()[r * cols + c] };
                out.write_record([
                    p.channel.clone(),
                    r.to_string(),
                    t.clone(),
                    c.to_string(),
                    p.mean.data()[r * cols + c].to_string(),
                    sigma.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn generate(model: &Path, request: &Path, out: &Path) -> Result<()> {
    let loaded = Loaded::open(model)?;
    let text = std::fs::read_to_string(request).with_context(|| format!("reading {}", request.display()))?;
    let req: GenerationRequest = serde_json::from_str(&text).with_context(|| format!("parsing {}", request.display()))?;
    let preds = loaded.generate(&req)?;
    let mut outputs = Outputs::new();
    outputs.write(out, |w| write_predictions(&preds, w))?;
    outputs.commit();
    for p in &preds {
        println!("{}: {:?}, mean sigma {:.5}", p.channel, p.mean.shape(), p.mean_sigma());
    }
    Ok(())
}

fn evaluate(model: &Path, data: &Path, configs: &str, split: SplitArg, report_dir: &Path) -> Result<()> {
    let loaded = Loaded::open(model)?;
    let data = load_data(data)?;
    let data = match split {
        SplitArg::Train => data.split(Split::Train),
        SplitArg::Test => data.split(Split::Test),
        SplitArg::All => data,
    };
    if data.is_empty() {
        bail!("no samples in the selected split");
    }
    let configs = InputConfiguration::parse_list(configs, &data.specs)?;
    let report = rms_table(loaded.predictor(), &data, &configs)?;
    let mut outputs = Outputs::new();
    outputs.dir(report_dir)?;
    outputs.write(&report_dir.join("report.csv"), |w| Ok(report.write_csv(w)?))?;
    outputs.write(&report_dir.join("summary.json"), |w| Ok(report.write_json(w)?))?;
    outputs.commit();
    println!("{} configurations, {} rows -> {}", configs.len(), report.rows.len(), report_dir.display());
    Ok(())
}

fn analyze_latent(snapshots: &Path, data: &Path, out: &Path) -> Result<()> {
    let data = load_data(data)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(snapshots)
        .with_context(|| format!("listing {}", snapshots.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "affm"));
    files.sort();
    if files.len() < 2 {
        bail!("need at least two snapshot files in {}", snapshots.display());
    }
    let mut latents = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let model = read_model(f).with_context(|| format!("reading {}", f.display()))?;
        let step = f
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.rsplit('-').next())
            .and_then(|s| s.parse().ok())
            .unwrap_or(i);
        latents.push((step, object_latents(&model, &data)?));
    }
    let trace = trace_from_latents(&latents)?;
    let mut outputs = Outputs::new();
    outputs.write(out, |w| Ok(trace.write_csv(w)?))?;
    outputs.commit();
    if trace.degenerate {
        println!("warning: all latents identical; projections are zero");
    }
    for step in trace.snapshots() {
        let (p, l) = trace.at(step);
        println!("snapshot {step}: silhouette {:.3}", silhouette(&p, &l));
    }
    Ok(())
}

fn transfer(protocol: &Path, report: &Path) -> Result<()> {
    let text = std::fs::read_to_string(protocol).with_context(|| format!("reading {}", protocol.display()))?;
    let suite: TransferSuite = serde_json::from_str(&text).with_context(|| format!("parsing {}", protocol.display()))?;
    let result = run_transfer(&suite, &mut PretrainCache::new(), &mut |m| eprintln!("{m}"))?;
    let json = report.with_extension("json");
    if json == report {
        return Err(anyhow!("report path must not end in .json"));
    }
    let mut outputs = Outputs::new();
    outputs.write(report, |w| Ok(result.write_csv(w)?))?;
    outputs.write(&json, |w| Ok(result.write_json(w)?))?;
    outputs.commit();
    for r in &result.runs {
        println!(
            "{:32} transfer {:3} direction {:3} retention {:.4} -> {:.4}",
            r.label,
            if r.transfer { "yes" } else { "no" },
            if r.direction { "yes" } else { "no" },
            r.retention_before,
            r.retention_after
        );
    }
    Ok(())
}
