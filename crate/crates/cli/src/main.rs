use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use graftnn::augment::{build_dataset, load_dataset, load_image, load_trigger, save_dataset};
use graftnn::graph::{
    codec::{decode_tensor, encode_tensor}, decode, encode, find_io, infer_shapes_declared, ResizeMode, ATTR_HEIGHT,
    ATTR_MODE, ATTR_WIDTH,
};
use graftnn::inject::{inject, PayloadSpec, Target};
use graftnn::interp::{eval_node, node_cost, Executor};
use graftnn::payload::{build_detector, DetectorArch};
use graftnn::profile::Profile;
use graftnn::scan::{diff, scan, Verdict};
use graftnn::train::train;
use graftnn::zoo::generate_zoo;
use graftnn::{Graph, Node, Op, Tensor};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*)?
    };
}

macro_rules! out {
    ($($arg:tt)*) => {
        write!(io::stdout().lock(), $($arg)*)?
    };
}

const EXIT_USAGE: u8 = 64;
const EXIT_SUSPICIOUS: u8 = 2;

#[derive(Parser)]
#[command(name = "graftnn", version, about = "Inspect, run, backdoor and scan NNIR models")]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Scale constants: `desk` (64 px, 400/class) or `paper` (160 px, 13,394/class).
    #[arg(long, global = true, default_value = "desk", value_parser = parse_profile)]
    profile: Profile,
    #[command(subcommand)]
    command: Command,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Print the node table, input/output signature and operation counts.
    Inspect { model: PathBuf },
    /// Execute a model on one image or tensor and print the output.
    Run(RunArgs),
    /// Generate a labeled trigger-detector dataset.
    Augment(AugmentArgs),
    /// Train a trigger detector on a generated dataset.
    Train(TrainArgs),
    /// Graft a detector and conditional onto a victim model.
    Inject(InjectArgs),
    /// Look for grafted bypass structures. Exits 2 when suspicious.
    Scan {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = ScanFormat::Lines)]
        format: ScanFormat,
    },
    /// Node-level structural difference between two models.
    Diff { a: PathBuf, b: PathBuf },
    /// Write random victim classifiers.
    Zoo {
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScanFormat {
    Tsv,
    Lines,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    /// PPM/PNG image (scaled to [0, 1]) or a `.bin` tensor.
    #[arg(long)]
    input: PathBuf,
    /// Bilinearly resize an image that does not match the model input.
    #[arg(long)]
    resize: bool,
    /// Also write the output tensor here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    out: PathBuf,
    /// Samples per stratum; defaults to the profile's value.
    #[arg(long)]
    n_per_class: Option<usize>,
    /// Directory of trigger photos; synthetic alert icons when absent.
    #[arg(long)]
    triggers: Option<PathBuf>,
    /// Number of synthetic trigger photos.
    #[arg(long)]
    trigger_photos: Option<usize>,
    /// Extra base images, resized to the profile's image size.
    #[arg(long)]
    bases: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `augment`.
    #[arg(long)]
    data: PathBuf,
    /// Detector architecture file; defaults to the profile's architecture.
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Per-sample gradients in parallel (same result as serial).
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    detector: PathBuf,
    #[arg(long, conflicts_with = "target_tensor", required_unless_present = "target_tensor")]
    target_class: Option<usize>,
    #[arg(long)]
    target_tensor: Option<PathBuf>,
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    /// `SCALE,SHIFT` applied to the resized input before the detector.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    prescale: Option<(f32, f32)>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(f32, f32), String> {
    let (a, b) = s.split_once(',').ok_or("expected SCALE,SHIFT")?;
    let num = |v: &str| v.trim().parse::<f32>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Inspect { model } => inspect_cmd(model),
        Command::Run(args) => run_cmd(args),
        Command::Augment(args) => augment_cmd(cli, args),
        Command::Train(args) => train_cmd(cli, args),
        Command::Inject(args) => inject_cmd(args),
        Command::Scan { model, format } => scan_cmd(model, *format),
        Command::Diff { a, b } => {
            out!("{}", diff(&read(a)?, &read(b)?)?.to_tsv());
            Ok(0)
        }
        Command::Zoo { count, out } => zoo_cmd(cli.seed, *count, out),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<Graph> {
    decode(&read(path)?).with_context(|| format!("decoding {}", path.display()))
}

fn dims(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn inspect_cmd(path: &Path) -> Result<u8> {
    let g = load_model(path)?;
    let io = find_io(&g)?;
    let shapes = infer_shapes_declared(&g)?;
    let order = g.canonical_order().expect("decoded graphs are acyclic");
    outln!("name\top\tinputs\tshape\tops");
    let mut total = 0u64;
    for i in order {
        let n = &g.nodes[i];
        let ins: Vec<&[usize]> = n.inputs.iter().map(|e| shapes[&g.nodes[e.node].name].as_slice()).collect();
        let ops = node_cost(n, &ins, &shapes[&n.name]);
        total += ops;
        let names: Vec<&str> = n.inputs.iter().map(|e| g.nodes[e.node].name.as_str()).collect();
        outln!("{}\t{}\t{}\t{}\t{ops}", n.name, n.op.name(), names.join(","), dims(&shapes[&n.name]));
    }
    outln!("# input\t{}\t{}", io.input_node, dims(&io.input_shape));
    outln!("# output\t{}\t{}", io.output_node, dims(&io.output_shape));
    outln!("# nodes\t{}", g.len());
    outln!("# params\t{}", g.const_scalar_count());
    outln!("# total_ops\t{total}");
    Ok(0)
}

/// Bilinear resize through the interpreter's own kernel.
fn resize(img: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let node = Node::new("resize", Op::Resize)
        .with_attr(ATTR_HEIGHT, height as u32)
        .with_attr(ATTR_WIDTH, width as u32)
        .with_attr(ATTR_MODE, ResizeMode::Bilinear);
    Ok(eval_node(&node, &[img])?)
}

fn run_cmd(args: &RunArgs) -> Result<u8> {
    let g = load_model(&args.model)?;
    let io = find_io(&g)?;
    let mut input = if args.input.extension().is_some_and(|e| e == "bin") {
        decode_tensor(&read(&args.input)?)?
    } else {
        load_image(&args.input)?
    };
    if input.shape() != io.input_shape.as_slice() {
        if !(args.resize && input.rank() == 3 && io.input_shape.len() == 3) {
            bail!("input is {} but the model expects {}", dims(input.shape()), dims(&io.input_shape));
        }
        input = resize(&input, io.input_shape[0], io.input_shape[1])?;
    }
    let out = Executor::new(&g)?.run_single(input)?;
    outln!("index\tvalue");
    for (i, v) in out.as_f32()?.iter().enumerate() {
        outln!("{i}\t{v}");
    }
    if let Some(path) = &args.out {
        write(path, encode_tensor(&out))?;
    }
    Ok(0)
}

fn augment_cmd(cli: &Cli, args: &AugmentArgs) -> Result<u8> {
    let profile = cli.profile;
    let n = args.n_per_class.unwrap_or(profile.n_per_class());
    if n == 0 {
        bail!("--n-per-class must be at least 1");
    }
    let n_triggers = args.trigger_photos.unwrap_or(profile.trigger_photos());
    let (mut bases, mut triggers) = profile.synth_corpus(n, n_triggers, cli.seed);
    if let Some(dir) = &args.triggers {
        triggers = image_files(dir)?.iter().map(|p| load_trigger(p)).collect::<Result<_, _>>()?;
    }
    if let Some(dir) = &args.bases {
        let size = profile.image_size();
        for p in image_files(dir)? {
            bases.push(resize(&load_image(&p)?, size, size)?);
        }
    }
    let data = build_dataset(&bases, &triggers, &profile.augment(cli.seed), n)?;
    save_dataset(&args.out, &data)?;
    outln!(
        "samples\t{}\ntrain\t{}\nvalidation\t{}\nbases\t{}\ntriggers\t{}",
        data.len(),
        data.train.len(),
        data.validation.len(),
        bases.len(),
        triggers.len()
    );
    Ok(0)
}

/// Image files directly inside `dir`, sorted by name.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("ppm" | "png")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no .ppm or .png images in {}", dir.display());
    }
    Ok(files)
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> Result<u8> {
    let arch = match &args.arch {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            DetectorArch::parse(&text)?
        }
        None => cli.profile.arch(),
    };
    let data = load_dataset(&args.data)?;
    let detector = build_detector(&arch, cli.seed)?;
    let mut cfg = cli.profile.train(cli.seed);
    cfg.parallel = args.parallel;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let report = train(&detector, &data, &cfg)?;
    write(&args.out, encode(&report.detector)?)?;
    if let Some(path) = &args.report {
        write(path, report.to_tsv())?;
    }
    if let Some(m) = report.final_metrics() {
        outln!("precision\t{:.4}\nrecall\t{:.4}\naccuracy\t{:.4}", m.precision, m.recall, m.accuracy);
    }
    Ok(0)
}

fn inject_cmd(args: &InjectArgs) -> Result<u8> {
    let target = match (&args.target_class, &args.target_tensor) {
        (&Some(index), _) => Target::Class { index, confidence: args.confidence },
        (None, Some(path)) => Target::Tensor(decode_tensor(&read(path)?)?),
        (None, None) => unreachable!("clap requires one target"),
    };
    let spec = PayloadSpec {
        detector: load_model(&args.detector)?,
        target,
        threshold: args.threshold,
        prescale: args.prescale,
    };
    let (bytes, report) = inject(&read(&args.model)?, &spec)?;
    write(&args.out, bytes)?;
    let tsv = report.to_tsv();
    match &args.report {
        Some(path) => write(path, tsv)?,
        None => out!("{tsv}"),
    }
    Ok(0)
}

fn scan_cmd(path: &Path, format: ScanFormat) -> Result<u8> {
    let report = scan(&read(path)?)?;
    match format {
        ScanFormat::Tsv => out!("{}", report.to_tsv()),
        ScanFormat::Lines => out!("{}", report.to_lines()),
    }
    Ok(if report.verdict == Verdict::Suspicious { EXIT_SUSPICIOUS } else { 0 })
}

fn zoo_cmd(seed: u64, count: u64, out: &Path) -> Result<u8> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, g) in generate_zoo(count as usize, seed).iter().enumerate() {
        write(&out.join(format!("model_{i:03}.nnir")), encode(g)?)?;
    }
    outln!("wrote {count} models to {}", out.display());
    Ok(0)
}
