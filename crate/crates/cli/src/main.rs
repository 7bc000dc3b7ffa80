mod manifest;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use wdgda::data::{
    case_paths, generate_phantom, load_dataset, read_mask, read_volume, write_mask, write_volume, Appearance, Case,
    PatchSampler, PhantomSpec,
};
use wdgda::losses::{dice_metric, jaccard_metric, LossReport};
use wdgda::networks::Domain;
use wdgda::training::{
    batch_stream, evaluate_case, export_content, load_bundle, parse_triple, run_experiment, stream_seeds,
    train_adaptation, train_segmentation, ExperimentMode, SegSource, TrainConfig, TrainState,
};
use wdgda::verify::{run_suite, worst, Suite};
use wdgda::Error;

use manifest::Manifest;

const CHECKPOINT: &str = "checkpoint.wdgc";
const CONFIG_SNAPSHOT: &str = "config.txt";

#[derive(Parser)]
#[command(name = "wdgda", version, about = "Disentangled domain adaptation on synthetic volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled phantom volumes of one domain.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Volume extents as D,H,W.
        #[arg(long, default_value = "10,48,48")]
        dims: String,
        /// Alternative target appearance (0 is the standard one).
        #[arg(long, default_value_t = 0)]
        variant: usize,
    },
    /// Train the translation model, critics and content discriminator.
    TrainDa {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_x: PathBuf,
        #[arg(long)]
        data_y: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode a volume's content code with a neutral style.
    ExportContent {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Domain of the input; read from the dataset manifest when omitted.
        #[arg(long)]
        domain: Option<Domain>,
        /// Defaults to the config saved next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the segmentation head on content codes of labeled data.
    TrainSeg {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "x")]
        domain: Domain,
    },
    /// Score predictions against ground-truth masks.
    Evaluate {
        /// Segment the data with this checkpoint.
        #[arg(long, conflicts_with = "pred")]
        checkpoint: Option<PathBuf>,
        /// Compare `.mask` files of this directory instead.
        #[arg(long, required_unless_present = "checkpoint")]
        pred: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        domain: Option<Domain>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cross-validated experiment on generated phantoms.
    Experiment {
        #[arg(long)]
        mode: ExperimentMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long)]
        suite: Suite,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Invalid(_) => 2,
            Error::Io { .. } | Error::Format(_) | Error::CheckpointMissing(_) => 3,
            Error::NonFinite(_) => 4,
            Error::Tensor(_) | Error::MissingParameter(_) => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: msg.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::SynthData {
            out,
            domain,
            count,
            seed,
            dims,
            variant,
        } => synth_data(&out, domain, count, seed, &dims, variant),
        Command::TrainDa {
            config,
            data_x,
            data_y,
            out,
            resume,
        } => train_da(&config, &data_x, &data_y, &out, resume.as_deref()),
        Command::ExportContent {
            checkpoint,
            input,
            out,
            domain,
            config,
        } => cmd_export_content(&checkpoint, &input, &out, domain, config.as_deref()),
        Command::TrainSeg {
            checkpoint,
            config,
            data,
            out,
            domain,
        } => train_seg(&checkpoint, &config, &data, &out, domain),
        Command::Evaluate {
            checkpoint,
            pred,
            data,
            out,
            domain,
            config,
        } => evaluate(checkpoint.as_deref(), pred.as_deref(), &data, &out, domain, config.as_deref()),
        Command::Experiment { mode, config, out } => experiment(mode, config.as_deref(), &out),
        Command::Gradcheck { suite } => gradcheck(suite),
    }
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn require_dir(dir: &Path) -> CmdResult {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")).into());
    }
    Ok(())
}

fn synth_data(out: &Path, domain: Domain, count: usize, seed: u64, dims: &str, variant: usize) -> CmdResult {
    let dims = parse_triple("dims", dims)?;
    create_dir(out)?;
    let mut m = Manifest::new("synth-data");
    m.param("domain", domain.to_string());
    m.param("count", count);
    m.param("seed", seed);
    m.param("dims", format!("{},{},{}", dims[0], dims[1], dims[2]));
    m.param("variant", variant);
    for i in 0..count {
        let mut spec = PhantomSpec::new(domain, seed.wrapping_add(i as u64)).with_dims(dims);
        if domain == Domain::Y {
            spec.appearance = Appearance::y_variant(variant);
        }
        let (vol, mask) = generate_phantom(&spec)?;
        let (vp, mp) = case_paths(out, i);
        write_volume(&vp, &vol)?;
        write_mask(&mp, &mask)?;
        m.output(&vp)?;
        m.output(&mp)?;
    }
    println!("wrote {count} {domain} phantoms to {}", out.display());
    m.write(out)?;
    Ok(())
}

fn load_config(path: &Path) -> Result<TrainConfig, Failure> {
    if !path.is_file() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")).into());
    }
    Ok(TrainConfig::load(path)?)
}

/// An explicit config, or the snapshot saved next to the checkpoint.
fn checkpoint_config(checkpoint: &Path, config: Option<&Path>) -> Result<TrainConfig, Failure> {
    match config {
        Some(p) => load_config(p),
        None => load_config(&checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_SNAPSHOT)),
    }
}

fn load_cases(dir: &Path) -> Result<Vec<Case>, Failure> {
    require_dir(dir)?;
    let cases = load_dataset(dir)?;
    if cases.is_empty() {
        return Err(usage(format!("{}: no .vol files", dir.display())));
    }
    Ok(cases)
}

fn train_da(config: &Path, data_x: &Path, data_y: &Path, out: &Path, resume: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    cfg.validate()?;
    let xs = load_cases(data_x)?;
    let ys = load_cases(data_y)?;
    let mut m = Manifest::new("train-da");
    m.config(&cfg);
    m.dataset_inputs(data_x, &xs)?;
    m.dataset_inputs(data_y, &ys)?;
    let unlabeled = |cs: Vec<Case>| cs.into_iter().map(|c| (c.volume, None)).collect::<Vec<_>>();
    let sx = Arc::new(PatchSampler::new(unlabeled(xs), cfg.net.patch, cfg.augment)?);
    let sy = Arc::new(PatchSampler::new(unlabeled(ys), cfg.net.patch, cfg.augment)?);
    let mut state = match resume {
        Some(p) => {
            m.input(p)?;
            TrainState::load(&cfg, p)?
        }
        None => TrainState::new(&cfg)?,
    };
    create_dir(out)?;
    let target = cfg.adapt_iterations as u64;
    let remaining = target.saturating_sub(state.iteration);
    let (seed_x, seed_y, _) = stream_seeds(cfg.seed);
    let mut stream_x = batch_stream(&cfg, sx, seed_x, state.iteration, remaining);
    let mut stream_y = batch_stream(&cfg, sy, seed_y, state.iteration, remaining);

    let csv_path = out.join("loss.csv");
    let mut csv = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let io = |e| Error::io(&csv_path, e);
    writeln!(csv, "{}", LossReport::CSV_HEADER).map_err(io)?;
    let every = (target / 20).max(1);
    let result = train_adaptation(&cfg, &mut state, &mut *stream_x, &mut *stream_y, remaining, &mut |log| {
        writeln!(csv, "{}", log.csv_row()).map_err(io)?;
        if (log.step + 1) % every == 0 {
            println!("iteration {}/{target} total {:.4}", log.step + 1, log.report.total);
        }
        Ok(())
    });
    drop(csv);
    result?;
    let ckpt = out.join(CHECKPOINT);
    state.save(&ckpt)?;
    let snapshot = out.join(CONFIG_SNAPSHOT);
    write_file(&snapshot, &cfg.to_kv_string())?;
    m.output(&csv_path)?;
    m.output(&ckpt)?;
    m.output(&snapshot)?;
    m.write(out)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

/// Domain recorded by `synth-data` in a dataset directory's manifest.
fn dataset_domain(dir: &Path) -> Option<Domain> {
    manifest::read_param(&dir.join(manifest::FILE_NAME), "domain")?.parse().ok()
}

fn cmd_export_content(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    domain: Option<Domain>,
    config: Option<&Path>,
) -> CmdResult {
    let cfg = checkpoint_config(checkpoint, config)?;
    let domain = domain
        .or_else(|| input.parent().and_then(dataset_domain))
        .ok_or_else(|| usage(format!("cannot infer the domain of {}; pass --domain", input.display())))?;
    let bundle = load_bundle(&cfg, checkpoint)?;
    let vol = read_volume(input)?;
    let content = export_content(&bundle, domain, &vol)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_volume(out, &content)?;
    println!("content-only volume written to {}", out.display());
    Ok(())
}

fn train_seg(checkpoint: &Path, config: &Path, data: &Path, out: &Path, domain: Domain) -> CmdResult {
    let cfg = load_config(config)?;
    cfg.validate()?;
    let cases = load_cases(data)?;
    if cases.iter().any(|c| c.mask.is_none()) {
        return Err(usage(format!("{}: every volume needs a .mask file", data.display())));
    }
    let mut m = Manifest::new("train-seg");
    m.config(&cfg);
    m.input(checkpoint)?;
    m.dataset_inputs(data, &cases)?;
    let mut state = TrainState::load(&cfg, checkpoint)?;
    let labeled = cases.into_iter().map(|c| (c.volume, c.mask)).collect();
    let sampler = Arc::new(PatchSampler::new(labeled, cfg.net.patch, cfg.augment)?);
    let iters = (cfg.seg_iterations as u64).saturating_sub(state.seg_iteration);
    let (_, _, seed) = stream_seeds(cfg.seed);
    let mut stream = batch_stream(&cfg, sampler, seed, state.seg_iteration, iters);
    create_dir(out)?;
    let csv_path = out.join("seg_loss.csv");
    let mut csv = String::from("step,loss\n");
    let every = (iters / 20).max(1);
    let mut sources = [SegSource {
        domain,
        stream: &mut *stream,
    }];
    train_segmentation(&mut state, &mut sources, iters, cfg.joint_finetune, &mut |log| {
        csv.push_str(&format!("{},{}\n", log.step, log.loss));
        if (log.step + 1) % every == 0 {
            println!("seg iteration {} loss {:.4}", log.step + 1, log.loss);
        }
        Ok(())
    })?;
    write_file(&csv_path, &csv)?;
    let ckpt = out.join(CHECKPOINT);
    state.save(&ckpt)?;
    let snapshot = out.join(CONFIG_SNAPSHOT);
    write_file(&snapshot, &cfg.to_kv_string())?;
    m.output(&csv_path)?;
    m.output(&ckpt)?;
    m.output(&snapshot)?;
    m.write(out)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn evaluate(
    checkpoint: Option<&Path>,
    pred: Option<&Path>,
    data: &Path,
    out: &Path,
    domain: Option<Domain>,
    config: Option<&Path>,
) -> CmdResult {
    let cases = load_cases(data)?;
    let mut csv = String::from("case,dice,jaccard\n");
    let (mut sum_d, mut sum_j) = (0.0, 0.0);
    let mut scored = 0usize;
    let mut m = Manifest::new("evaluate");
    m.dataset_inputs(data, &cases)?;
    let model = match checkpoint {
        Some(ckpt) => {
            let cfg = checkpoint_config(ckpt, config)?;
            m.config(&cfg);
            m.input(ckpt)?;
            let domain = domain
                .or_else(|| dataset_domain(data))
                .ok_or_else(|| usage(format!("cannot infer the domain of {}; pass --domain", data.display())))?;
            Some((load_bundle(&cfg, ckpt)?, domain))
        }
        None => None,
    };
    for c in &cases {
        let Some(truth) = &c.mask else {
            continue;
        };
        let (dice, jaccard) = match (&model, pred) {
            (Some((bundle, domain)), _) => {
                let s = evaluate_case(bundle, *domain, &c.volume, truth)?;
                (s.dice, s.jaccard)
            }
            (None, Some(dir)) => {
                let p = dir.join(format!("{}.mask", c.name));
                m.input(&p)?;
                let pm = read_mask(&p)?;
                if pm.dims != truth.dims {
                    return Err(usage(format!(
                        "{}: dims {:?} differ from ground truth {:?}",
                        p.display(),
                        pm.dims,
                        truth.dims
                    )));
                }
                (dice_metric(&pm.labels, &truth.labels)?, jaccard_metric(&pm.labels, &truth.labels)?)
            }
            (None, None) => return Err(usage("pass --checkpoint or --pred")),
        };
        csv.push_str(&format!("{},{dice},{jaccard}\n", c.name));
        sum_d += dice;
        sum_j += jaccard;
        scored += 1;
    }
    if scored == 0 {
        return Err(usage(format!("{}: no labeled volumes to score", data.display())));
    }
    let n = scored as f64;
    csv.push_str(&format!("mean,{},{}\n", sum_d / n, sum_j / n));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(out, &csv)?;
    println!("{scored} volumes, mean dice {:.4}, mean jaccard {:.4}", sum_d / n, sum_j / n);
    m.output(out)?;
    m.write_as(&out.with_extension("manifest.json"))?;
    Ok(())
}

fn experiment(mode: ExperimentMode, config: Option<&Path>, out: &Path) -> CmdResult {
    let mut cfg = match config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    cfg.mode = mode;
    cfg.validate()?;
    create_dir(out)?;
    let mut m = Manifest::new("experiment");
    m.config(&cfg);
    if let Some(p) = config {
        m.input(p)?;
    }
    let report = run_experiment(&cfg, &mut |line| println!("{line}"))?;
    let path = out.join(format!("{mode}.csv"));
    report.write_csv(&path)?;
    let (dm, ds) = report.dice("target");
    println!("{mode}: target dice {dm:.4} ± {ds:.4}");
    m.output(&path)?;
    m.write_as(&out.join(format!("{mode}.manifest.json")))?;
    Ok(())
}

fn gradcheck(suite: Suite) -> CmdResult {
    let checks = run_suite(suite)?;
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{status:4} {:40} {:.3e} (tol {:.0e})", c.name, c.max_rel_error, c.tolerance);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        let w = worst(&checks).expect("non-empty");
        return Err(Failure {
            code: 4,
            message: format!(
                "{failed} of {} checks failed; worst {} with relative error {:.3e}",
                checks.len(),
                w.name,
                w.max_rel_error
            ),
        });
    }
    println!("{suite}: all {} checks passed", checks.len());
    Ok(())
}
