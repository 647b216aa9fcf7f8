//! `tsk` — synthetic benchmarks, training, evaluation, parameter counting
//! and filter inspection for the temporal structure kit.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage/config error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tsk_core::checkpoint::{load_model, save_model};
use tsk_core::data::{
    generate_synthetic_continuous, generate_synthetic_pitch_type, generate_synthetic_segmented,
    generate_synthetic_speed, SegmentedAnnotation, SyntheticSpec, PITCH_TYPES,
};
use tsk_core::dataset::{load_dataset, write_continuous_dataset, write_segmented_dataset, Task};
use tsk_core::heads::{count_parameters, HeadConfig, HeadKind, Mode, Model};
use tsk_core::train::{evaluate, train, TrainConfig};
use tsk_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tsk", version, about = "temporal structure kit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-motif dataset.
    Synth(SynthArgs),
    /// Train a head on a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset manifest.
    Eval(EvalArgs),
    /// Print parameter counts per head for given dimensions.
    Params(ParamsArgs),
    /// Export materialized filter curves from a checkpoint as CSV.
    InspectFilters(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// multilabel | detection | speed | pitch_type
    #[arg(long)]
    task: String,
    /// Number of clips (videos for detection).
    #[arg(long, default_value_t = 200)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 40)]
    t_min: usize,
    #[arg(long, default_value_t = 80)]
    t_max: usize,
    #[arg(long, default_value_t = 8)]
    motif_min: usize,
    #[arg(long, default_value_t = 16)]
    motif_max: usize,
    #[arg(long, default_value_t = 2.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.3)]
    label_prob: f64,
    /// Events per video (detection only).
    #[arg(long, default_value_t = 7)]
    events: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Held-out manifest for the per-epoch eval metric (defaults to the
    /// training set).
    #[arg(long)]
    eval_manifest: Option<PathBuf>,
    #[arg(long)]
    head: String,
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    decay_factor: f64,
    #[arg(long, default_value_t = 10)]
    decay_every: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    head_opts: HeadOpts,
}

#[derive(Args)]
struct HeadOpts {
    /// Sub-/super-event filter count.
    #[arg(long)]
    m: Option<usize>,
    /// Gaussians per sub-event filter.
    #[arg(long)]
    n: Option<usize>,
    /// LSTM hidden size per direction.
    #[arg(long)]
    hidden: Option<usize>,
    /// Window / kernel length.
    #[arg(long)]
    l: Option<usize>,
    /// Comma-separated pyramid levels, e.g. 1,2,4.
    #[arg(long)]
    pyramid_levels: Option<String>,
}

impl HeadOpts {
    fn apply(&self, cfg: &mut HeadConfig) -> Result<()> {
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(h) = self.hidden {
            cfg.hidden = h;
        }
        if let Some(l) = self.l {
            cfg.l = l;
        }
        if let Some(levels) = &self.pyramid_levels {
            cfg.pyramid_levels = levels
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad pyramid level '{s}'")))
                })
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Metrics JSON output path (printed to stdout as well).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-class AP table in CSV form.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Worker threads for per-clip evaluation (TSK_THREADS as fallback).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    c: usize,
    /// Comma-separated head kinds.
    #[arg(long)]
    head: String,
    /// segmented | continuous
    #[arg(long, default_value = "segmented")]
    mode: String,
    #[command(flatten)]
    head_opts: HeadOpts,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sequence length at which to materialize the filters.
    #[arg(long, default_value_t = 64)]
    t: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Params(args) => cmd_params(args),
        Command::InspectFilters(args) => cmd_inspect_filters(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Tensor(_) => 2,
        _ => 1,
    }
}

fn parse_task(s: &str) -> Result<Task> {
    Task::parse(s).ok_or_else(|| Error::Config(format!("unknown task '{s}'")))
}

fn parse_head(s: &str) -> Result<HeadKind> {
    HeadKind::parse(s).ok_or_else(|| Error::Config(format!("unknown head '{s}'")))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let task = parse_task(&args.task)?;
    if args.out.exists()
        && args.out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false)
        && !args.force
    {
        return Err(Error::Config(format!(
            "output directory {} is not empty (use --force to overwrite)",
            args.out.display()
        )));
    }
    let mut spec = SyntheticSpec::new(args.classes, args.dim, args.seed);
    spec.t_range = (args.t_min, args.t_max);
    spec.motif_len_range = (args.motif_min, args.motif_max);
    spec.motif_amplitude = args.amplitude;
    spec.noise_scale = args.noise;
    spec.multi_label_prob = args.label_prob;
    let n = match task {
        Task::Multilabel => {
            let clips = generate_synthetic_segmented(&spec, args.clips);
            let pairs: Vec<_> = clips
                .into_iter()
                .map(|c| (c.features, c.annotation))
                .collect();
            write_segmented_dataset(&args.out, task, &spec.class_names(), &pairs)?;
            pairs.len()
        }
        Task::Detection => {
            let videos = generate_synthetic_continuous(&spec, args.clips, args.events)?;
            write_continuous_dataset(&args.out, &spec.class_names(), &videos)?;
            videos.len()
        }
        Task::Speed => {
            let clips = generate_synthetic_speed(&spec, args.clips);
            let pairs: Vec<_> = clips
                .into_iter()
                .map(|c| {
                    let ann = SegmentedAnnotation {
                        id: c.features.source_id.clone(),
                        labels: vec!["pitch".to_string()],
                        pitch_type: None,
                        pitch_speed: Some(c.mph),
                    };
                    (c.features, ann)
                })
                .collect();
            write_segmented_dataset(&args.out, task, &["pitch".to_string()], &pairs)?;
            pairs.len()
        }
        Task::PitchType => {
            if args.classes > PITCH_TYPES.len() {
                return Err(Error::Config(format!(
                    "pitch_type supports at most {} classes",
                    PITCH_TYPES.len()
                )));
            }
            let clips = generate_synthetic_pitch_type(&spec, args.clips);
            let pairs: Vec<_> = clips
                .into_iter()
                .map(|c| (c.features, c.annotation))
                .collect();
            let classes: Vec<String> = PITCH_TYPES[..args.classes]
                .iter()
                .map(|s| s.to_string())
                .collect();
            write_segmented_dataset(&args.out, task, &classes, &pairs)?;
            pairs.len()
        }
    };
    println!(
        "wrote {} {} clips (seed {}) to {}",
        n,
        task.name(),
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let task = parse_task(&args.task)?;
    let kind = parse_head(&args.head)?;
    let (manifest_task, dataset) = load_dataset(&args.manifest)?;
    if manifest_task != task {
        return Err(Error::Config(format!(
            "manifest task '{}' does not match --task '{}'",
            manifest_task.name(),
            task.name()
        )));
    }
    let eval_set = args
        .eval_manifest
        .as_deref()
        .map(load_dataset)
        .transpose()?
        .map(|(_, d)| d);
    let mode = if task.continuous() {
        Mode::Continuous
    } else {
        Mode::Segmented
    };
    let d = match &dataset {
        tsk_core::dataset::Dataset::Segmented(s) => s.clips[0].0.d,
        tsk_core::dataset::Dataset::Continuous(c) => c.videos[0].0.d,
    };
    let c = if task == Task::Speed {
        1
    } else {
        dataset.classes().len()
    };
    let mut cfg = HeadConfig::new(mode, kind, d, c);
    args.head_opts.apply(&mut cfg)?;
    let mut model = Model::new(cfg, args.seed)?;
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        decay_factor: args.decay_factor,
        decay_every: args.decay_every,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let history = train(&mut model, &dataset, eval_set.as_ref(), &train_cfg, task)?;
    fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join("checkpoint.tskm");
    save_model(&ckpt, &model)?;
    let mut csv = String::from("epoch,lr,train_loss,eval_metric\n");
    for rec in &history {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            rec.epoch, rec.lr, rec.train_loss, rec.eval_metric
        ));
    }
    fs::write(args.out.join("history.csv"), csv)?;
    let last = history.last().expect("epochs >= 1");
    println!(
        "trained {} for {} epochs: final loss {:.6}, eval metric {:.4} -> {}",
        kind.name(),
        history.len(),
        last.train_loss,
        last.eval_metric,
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let (task, dataset) = load_dataset(&args.manifest)?;
    let threads = args
        .threads
        .or_else(|| {
            std::env::var("TSK_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(1);
    let result = evaluate(&model, &dataset, task, threads)?;
    let mut report = serde_json::Map::new();
    report.insert("task".into(), task.name().into());
    if let Some(map) = &result.map {
        let classes = dataset.classes();
        let per_class: serde_json::Map<String, serde_json::Value> = map
            .per_class
            .iter()
            .zip(classes)
            .map(|(ap, name)| {
                (
                    name.clone(),
                    ap.map(serde_json::Value::from)
                        .unwrap_or(serde_json::Value::Null),
                )
            })
            .collect();
        report.insert("per_class_ap".into(), per_class.into());
        report.insert("mAP".into(), map.map.into());
    }
    if let Some(acc) = result.accuracy {
        report.insert("accuracy".into(), acc.into());
    }
    if let Some(err) = result.speed {
        report.insert("mae".into(), err.mae.into());
        report.insert("rmse".into(), err.rmse.into());
    }
    let json = serde_json::to_string_pretty(&serde_json::Value::Object(report))?;
    println!("{json}");
    if let Some(out) = &args.out {
        write_with_parents(out, &json)?;
    }
    if let Some(csv_path) = &args.csv {
        if let Some(map) = &result.map {
            let mut csv = String::from("method");
            for class in dataset.classes() {
                csv.push(',');
                csv.push_str(class);
            }
            csv.push_str(",mAP\n");
            csv.push_str(model.config.kind.name());
            for ap in &map.per_class {
                match ap {
                    Some(v) => csv.push_str(&format!(",{v:.4}")),
                    None => csv.push_str(",-"),
                }
            }
            csv.push_str(&format!(",{:.4}\n", map.map));
            write_with_parents(csv_path, &csv)?;
        }
    }
    Ok(())
}

fn cmd_params(args: ParamsArgs) -> Result<()> {
    let mode = match args.mode.as_str() {
        "segmented" => Mode::Segmented,
        "continuous" => Mode::Continuous,
        other => return Err(Error::Config(format!("unknown mode '{other}'"))),
    };
    println!("{:<16} {:>14}", "head", "parameters");
    for name in args.head.split(',') {
        let kind = parse_head(name.trim())?;
        let mut cfg = HeadConfig::new(mode, kind, args.d, args.c);
        args.head_opts.apply(&mut cfg)?;
        cfg.validate()?;
        println!("{:<16} {:>14}", kind.name(), count_parameters(&cfg));
    }
    Ok(())
}

fn cmd_inspect_filters(args: InspectArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let rows = model.filter_rows(args.t)?.ok_or_else(|| {
        Error::Config(format!(
            "head '{}' has no filter bank to inspect",
            model.config.kind.name()
        ))
    })?;
    let mut csv = String::from("filter_index,gaussian_index,t,weight\n");
    for row in &rows {
        for (t, w) in row.weights.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                row.filter_index, row.gaussian_index, t, w
            ));
        }
    }
    write_with_parents(&args.out, &csv)?;
    println!("wrote {} filter rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn write_with_parents(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, content)?;
    Ok(())
}
