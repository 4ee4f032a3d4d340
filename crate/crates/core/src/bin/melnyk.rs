//! Command-line front end: train, evaluate, render activation maps, analyze
//! costs, and inspect checkpoints.
//!
//! Exit codes: 2 configuration error, 3 data error, 4 I/O error.

use std::collections::HashMap;
use std::fs;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use melnyk_net::analysis::{mac_conv, network_cost, reduction_ratio, LayerCostSpec};
use melnyk_net::cam::{compute_cam, emit_overlay};
use melnyk_net::checkpoint;
use melnyk_net::data::{GntReader, GntRecord, synth_glyphs};
use melnyk_net::data::{preprocess, image_from_gray, LabelMap, Sample, IMAGE_SIZE};
use melnyk_net::pgm::read_pgm;
use melnyk_net::train::{evaluate, train_loop, TrainConfig};
use melnyk_net::{build, ModelConfig, Variant};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: msg.into() }
    }
    fn data(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: msg.into() }
    }
    fn io(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: msg.into() }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(name = "melnyk", about = "Melnyk-Net HCCR engine", version)]
struct Cli {
    /// Worker threads for sample-parallel paths (default: MELNYK_THREADS or 1)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a training log
    Train(TrainArgs),
    /// Evaluate a checkpoint: top-k accuracy
    Eval(EvalArgs),
    /// Render class activation maps for input images
    Cam(CamArgs),
    /// Print the MAC/parameter cost report
    Analyze(AnalyzeArgs),
    /// Print checkpoint metadata
    Inspect(InspectArgs),
}

#[derive(Args)]
struct DataArgs {
    /// GNT file or directory of .gnt files
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic glyph dataset, "CLASSESxSAMPLES" (e.g. 10x200)
    #[arg(long)]
    synthetic: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "A")]
    variant: String,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for model.ckpt and train.log
    #[arg(long)]
    out: PathBuf,
    /// Plain-text key=value file with TrainConfig overrides
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    /// Stop once validation top-1 reaches this value
    #[arg(long)]
    target_val_acc: Option<f64>,
    /// Global-norm gradient clipping threshold; 0 disables clipping
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Fraction of each class held out for validation
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Expected variant; the checkpoint must match when given
    #[arg(long)]
    variant: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated k values for top-k accuracy
    #[arg(long, default_value = "1")]
    topk: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input images: .pgm files (GNT-convention grayscale, 255=background)
    /// or .gnt files (every record is processed)
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    variant: Option<String>,
    /// Custom block spec "H=6,C=256,M=448,MB=256" (Eq. 5 evaluation)
    #[arg(long)]
    block: Option<String>,
    /// Assert the published parameter counts at 3755 classes
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 3755)]
    classes: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("MELNYK_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    if rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global()
        .is_err()
    {
        // pool already initialized (only possible under test harnesses)
    }
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Cam(args) => cmd_cam(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, CliError> {
    s.parse()
        .map_err(|_| CliError::config(format!("unknown variant {s:?}; expected A, B, or C")))
}

fn parse_synthetic(spec: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::config(format!("bad --synthetic spec {spec:?}; expected CLASSESxSAMPLES"));
    let (c, n) = spec.split_once(['x', 'X']).ok_or_else(bad)?;
    let classes: usize = c.parse().map_err(|_| bad())?;
    let samples: usize = n.parse().map_err(|_| bad())?;
    if classes < 2 || samples == 0 {
        return Err(bad());
    }
    Ok((classes, samples))
}

fn load_gnt_records(path: &Path) -> Result<Vec<GntRecord>, CliError> {
    let mut files = Vec::new();
    let meta = fs::metadata(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    if meta.is_dir() {
        let entries = fs::read_dir(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        for entry in entries {
            let p = entry
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?
                .path();
            if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("gnt")) {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(CliError::data(format!(
                "no .gnt files in {}",
                path.display()
            )));
        }
    } else {
        files.push(path.to_path_buf());
    }
    let mut records = Vec::new();
    for f in files {
        let file =
            File::open(&f).map_err(|e| CliError::data(format!("cannot open {}: {e}", f.display())))?;
        for record in GntReader::new(BufReader::new(file)) {
            records.push(record.map_err(|e| {
                CliError::data(format!("corrupt GNT data in {}: {e}", f.display()))
            })?);
        }
    }
    Ok(records)
}

/// Loads the dataset named by `--data`/`--synthetic`; exactly one must be set.
fn load_dataset(args: &DataArgs, seed: u64) -> Result<Vec<Sample>, CliError> {
    match (&args.data, &args.synthetic) {
        (Some(_), Some(_)) => Err(CliError::config(
            "--data and --synthetic are mutually exclusive",
        )),
        (None, None) => Err(CliError::config("one of --data or --synthetic is required")),
        (None, Some(spec)) => {
            let (classes, samples) = parse_synthetic(spec)?;
            Ok(synth_glyphs(classes, samples, seed))
        }
        (Some(path), None) => {
            let records = load_gnt_records(path)?;
            if records.is_empty() {
                return Err(CliError::data(format!(
                    "{} contains no records",
                    path.display()
                )));
            }
            let labels = LabelMap::from_records(&records);
            records
                .iter()
                .map(|r| {
                    preprocess(r, &labels).map_err(|e| CliError::data(format!("{e}")))
                })
                .collect()
        }
    }
}

fn num_classes(dataset: &[Sample]) -> usize {
    dataset.iter().map(|s| s.label).max().unwrap_or(0) + 1
}

/// Class-stratified split: within each class the last `val_fraction` of
/// samples (dataset order) are held out.
fn split_train_val(dataset: Vec<Sample>, val_fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let classes = num_classes(&dataset);
    let mut per_class: Vec<Vec<Sample>> = (0..classes).map(|_| Vec::new()).collect();
    for s in dataset {
        per_class[s.label].push(s);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for bucket in per_class {
        let n_val = ((bucket.len() as f64) * val_fraction).round() as usize;
        let cut = bucket.len() - n_val.min(bucket.len());
        for (i, s) in bucket.into_iter().enumerate() {
            if i < cut {
                train.push(s);
            } else {
                val.push(s);
            }
        }
    }
    (train, val)
}

fn read_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                ln + 1
            ))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn config_get<T: std::str::FromStr>(
    file: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
            CliError::config(format!("config key {key}: cannot parse value {raw:?}"))
        }),
    }
}

fn build_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => HashMap::new(),
    };
    let defaults = TrainConfig::default();
    // precedence: flag, then config file, then default
    macro_rules! pick {
        ($flag:expr, $key:literal, $default:expr) => {
            match $flag {
                Some(v) => v,
                None => config_get(&file, $key)?.unwrap_or($default),
            }
        };
    }
    let config = TrainConfig {
        lr_initial: pick!(args.lr_initial, "lr_initial", defaults.lr_initial),
        momentum: pick!(args.momentum, "momentum", defaults.momentum),
        batch_size: pick!(args.batch_size, "batch_size", defaults.batch_size),
        max_epochs: pick!(args.max_epochs, "max_epochs", defaults.max_epochs),
        l2_lambda: pick!(args.l2_lambda, "l2_lambda", defaults.l2_lambda),
        lr_decay_factor: pick!(
            args.lr_decay_factor,
            "lr_decay_factor",
            defaults.lr_decay_factor
        ),
        seed: pick!(args.seed, "seed", defaults.seed),
        target_val_acc: match args.target_val_acc {
            Some(v) => Some(v),
            None => config_get(&file, "target_val_acc")?,
        },
        grad_clip_norm: {
            let raw = match args.grad_clip {
                Some(v) => Some(v),
                None => config_get(&file, "grad_clip")?,
            };
            match raw {
                Some(v) if v == 0.0 => None,
                Some(v) => Some(v),
                None => defaults.grad_clip_norm,
            }
        },
    };
    config.validate().map_err(CliError::config)?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let variant = parse_variant(&args.variant)?;
    if !(0.0..1.0).contains(&args.val_fraction) {
        return Err(CliError::config("--val-fraction must be in [0,1)"));
    }
    let config = build_train_config(&args)?;
    let dataset = load_dataset(&args.data, config.seed)?;
    let classes = num_classes(&dataset);
    if classes < 2 {
        return Err(CliError::data("dataset must contain at least 2 classes"));
    }
    let (train_set, val_set) = split_train_val(dataset, args.val_fraction);
    if train_set.is_empty() {
        return Err(CliError::data("training split is empty"));
    }

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", args.out.display())))?;
    let model_config = ModelConfig::new(variant, classes);
    let mut net = build::<f32>(&model_config, config.seed)
        .map_err(|e| CliError::config(format!("{e}")))?;

    let mut log_lines = String::new();
    let logs = train_loop(&mut net, &train_set, &val_set, &config, |log| {
        println!("{log}");
        log_lines.push_str(&log.to_string());
        log_lines.push('\n');
    })
    .map_err(|e| CliError::data(format!("training failed: {e}")))?;

    let ckpt_path = args.out.join("model.ckpt");
    checkpoint::save(&net, &ckpt_path)
        .map_err(|e| CliError::io(format!("cannot write checkpoint: {e}")))?;
    fs::write(args.out.join("train.log"), log_lines)
        .map_err(|e| CliError::io(format!("cannot write train.log: {e}")))?;
    if let Some(last) = logs.last() {
        println!(
            "done: {} epochs, final val_acc={:.4}, checkpoint {}",
            last.epoch,
            last.val_acc,
            ckpt_path.display()
        );
    }
    Ok(())
}

fn load_checkpoint(path: &Path, variant: Option<Variant>) -> Result<melnyk_net::Network<f32>, CliError> {
    checkpoint::load(path, variant).map_err(|e| match e {
        checkpoint::CheckpointError::Io(err) => {
            CliError::io(format!("cannot read {}: {err}", path.display()))
        }
        other => CliError::config(format!("{}: {other}", path.display())),
    })
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let variant = args.variant.as_deref().map(parse_variant).transpose()?;
    let net = load_checkpoint(&args.checkpoint, variant)?;
    let dataset = load_dataset(&args.data, args.seed)?;
    if dataset.is_empty() {
        return Err(CliError::data("dataset is empty"));
    }
    let mut ks = Vec::new();
    for part in args.topk.split(',') {
        let k: usize = part
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("bad --topk entry {part:?}")))?;
        if k < 1 || k > net.classifier.classes() {
            return Err(CliError::config(format!(
                "k={k} out of range for {} classes",
                net.classifier.classes()
            )));
        }
        ks.push(k);
    }
    let accs = evaluate(&net, &dataset, &ks)
        .map_err(|e| CliError::data(format!("evaluation failed: {e}")))?;
    let line: Vec<String> = ks
        .iter()
        .zip(&accs)
        .map(|(k, a)| format!("top{k}={a:.6}"))
        .collect();
    println!("{}", line.join(" "));
    Ok(())
}

fn cam_samples(input: &Path) -> Result<Vec<(String, Sample)>, CliError> {
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("input")
        .to_string();
    let ext = input
        .extension()
        .and_then(|s| s.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "pgm" => {
            let (w, h, pixels) = read_pgm(input)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", input.display())))?;
            let image = image_from_gray(&pixels, h, w);
            Ok(vec![(stem, Sample { image, label: 0 })])
        }
        "gnt" => {
            let records = load_gnt_records(input)?;
            Ok(records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let image = image_from_gray(&r.bitmap, r.height as usize, r.width as usize);
                    (format!("{stem}_{i}"), Sample { image, label: 0 })
                })
                .collect())
        }
        _ => Err(CliError::config(format!(
            "{}: unsupported input type (expected .pgm or .gnt)",
            input.display()
        ))),
    }
}

fn cmd_cam(args: CamArgs) -> CliResult {
    let net = load_checkpoint(&args.checkpoint, None)?;
    if net.config.input_size != IMAGE_SIZE {
        return Err(CliError::config("checkpoint input size is not 96"));
    }
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", args.out.display())))?;
    for input in &args.inputs {
        for (stem, sample) in cam_samples(input)? {
            let cam = compute_cam(&net, &sample)
                .map_err(|e| CliError::data(format!("{}: {e}", input.display())))?;
            let (cam_path, overlay_path) =
                emit_overlay(&sample, &cam, &args.out.join(&stem))
                    .map_err(|e| CliError::io(format!("cannot write outputs: {e}")))?;
            println!(
                "{stem}: class={} cam={} overlay={}",
                cam.predicted_class,
                cam_path.display(),
                overlay_path.display()
            );
        }
    }
    Ok(())
}

fn parse_block_spec(spec: &str) -> Result<(u64, u64, u64, u64), CliError> {
    let mut fields: HashMap<&str, u64> = HashMap::new();
    for part in spec.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("bad --block entry {part:?}")))?;
        let value: u64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("bad --block value {v:?}")))?;
        fields.insert(k.trim(), value);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| CliError::config(format!("--block is missing {k}")))
    };
    Ok((get("H")?, get("C")?, get("M")?, get("MB")?))
}

fn cmd_analyze(args: AnalyzeArgs) -> CliResult {
    if let Some(spec) = &args.block {
        let (h, c, m, mb) = parse_block_spec(spec)?;
        let unit = LayerCostSpec::same_3x3(h, h, c, mb);
        let plain = melnyk_net::analysis::mac_block_plain(&unit, m)
            .map_err(|e| CliError::config(format!("{e}")))?;
        let bottleneck = melnyk_net::analysis::mac_block_bottleneck(&unit, m, mb)
            .map_err(|e| CliError::config(format!("{e}")))?;
        let ratio = reduction_ratio(c, m, mb);
        println!("macs_plain={plain}");
        println!("macs_bottleneck={bottleneck}");
        println!("reduction_ratio={}/{}", ratio.numer(), ratio.denom());
        // Eq. 2 sanity line for the first conv of the block
        let first = mac_conv(&LayerCostSpec::same_3x3(h, h, c, mb))
            .map_err(|e| CliError::config(format!("{e}")))?;
        println!("macs_first_conv={first}");
        return Ok(());
    }
    let variant = parse_variant(args.variant.as_deref().ok_or_else(|| {
        CliError::config("analyze needs --variant or --block")
    })?)?;
    let config = ModelConfig::new(variant, args.classes);
    let report = network_cost(&config);
    print!("{report}");
    if args.check {
        let expected = match variant {
            Variant::A => 6_507_691u64,
            Variant::B => 6_508_139,
            Variant::C => 6_523_819,
        };
        let check_config = ModelConfig::new(variant, 3755);
        let total = network_cost(&check_config).total_params();
        if total != expected {
            return Err(CliError::config(format!(
                "parameter check failed: model {variant} has {total}, expected {expected}"
            )));
        }
        println!("check: model {variant} total params {total} (matches published count)");
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> CliResult {
    let info = checkpoint::inspect(&args.checkpoint).map_err(|e| match e {
        checkpoint::CheckpointError::Io(err) => {
            CliError::io(format!("cannot read {}: {err}", args.checkpoint.display()))
        }
        other => CliError::config(format!("{}: {other}", args.checkpoint.display())),
    })?;
    println!("variant={}", info.variant);
    println!("num_classes={}", info.num_classes);
    println!("bn_eps={}", info.bn_eps);
    println!("bn_momentum={}", info.bn_momentum);
    println!("tensor_count={}", info.tensor_count);
    Ok(())
}
