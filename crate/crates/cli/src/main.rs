use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use meshattn::aggregation::receptive_field;
use meshattn::decimation::{build_hierarchy, MeshHierarchy};
use meshattn::mesh::{generate_synthetic_dataset, parse_obj, serialize_obj, serialize_ply, SynthConfig};
use meshattn::model::{deformation_transfer, latent_extrapolate, latent_interpolate, Direction, TransferMode};
use meshattn::pipeline::{
    ablation_sweep, compare_aggregators, default_sweep_values, evaluate, gradient_suite, train, write_gradcheck_csv,
    write_results_csv, ExperimentConfig, Method,
};
use meshattn::{Autoencoder64, Dataset64, Hierarchy64, Tensor64, TriMesh64};

#[derive(Parser)]
#[command(name = "meshattn", version, about = "Mesh autoencoders with attention-based down/upsampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic icosphere dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 3)]
        subdiv: usize,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.2)]
        amplitude: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decimate a template OBJ into a mesh hierarchy.
    Hierarchy {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 4)]
        factor: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an autoencoder.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-vertex reconstruction errors of a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Metrics CSV; the cumulative curve goes next to it with a `_curve` suffix.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Freeze attention modules into fixed sparse matrices and write every mapping.
    ExportMaps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Color the input level of one mapping row by its weights.
    Rf {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        level: usize,
        #[arg(long)]
        vertex: usize,
        #[arg(long, value_enum, default_value_t = DirArg::Down)]
        direction: DirArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latent-space arithmetic on dataset samples.
    Latent {
        #[command(subcommand)]
        op: LatentOp,
    },
    /// Train every aggregation method under one budget.
    Compare {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated method names; all by default.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Sensitivity sweep over one attention hyperparameter.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference check of every operation and the full model loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON experiment configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pre-built hierarchy directory; otherwise decimated from the template.
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    /// Overrides both the model and the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum LatentOp {
    /// Decode `alpha·z(a) + (1 − alpha)·z(b)`.
    Interp(PairArgs),
    /// Same formula with `alpha` outside `[0, 1]`.
    Extrap(PairArgs),
    /// Apply the deformation from sample `s0` to `s1` onto sample `t0`.
    Transfer {
        #[command(flatten)]
        common: LatentCommon,
        #[arg(long)]
        s0: usize,
        #[arg(long)]
        s1: usize,
        #[arg(long)]
        t0: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Latent)]
        mode: ModeArg,
    },
}

#[derive(Args)]
struct LatentCommon {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output OBJ.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairArgs {
    #[command(flatten)]
    common: LatentCommon,
    #[arg(long)]
    a: usize,
    #[arg(long)]
    b: usize,
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirArg {
    Down,
    Up,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Vertex,
    Latent,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset64> {
    let mut ds = Dataset64::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if ds.normalization().is_none() {
        ds.normalize()?;
    }
    Ok(ds)
}

fn load_model(dir: &Path) -> Result<Autoencoder64> {
    Autoencoder64::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn create_file(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

struct Experiment {
    cfg: ExperimentConfig,
    data: Dataset64,
    hierarchy: Arc<Hierarchy64>,
}

fn prepare(args: &ExperimentArgs) -> Result<Experiment> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    let data = load_dataset(&args.data)?;
    let hierarchy = match &args.hierarchy {
        Some(dir) => MeshHierarchy::import(dir)?,
        None => build_hierarchy(data.template(), cfg.levels, cfg.factor)?,
    };
    log::info!("hierarchy vertex counts {:?}", hierarchy.counts());
    Ok(Experiment { cfg, data, hierarchy: Arc::new(hierarchy) })
}

fn write_mesh(path: &Path, template: &TriMesh64, features: &[[f64; 3]]) -> Result<()> {
    let mesh = template.with_positions(features.to_vec())?;
    serialize_obj(&mesh, create_file(path)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { samples, subdiv, order, amplitude, seed, out } => {
            let cfg = SynthConfig { n_samples: samples, subdivisions: subdiv, harmonic_order: order, amplitude, seed };
            let mut ds: Dataset64 = generate_synthetic_dataset(&cfg)?;
            ds.normalize()?;
            ds.save(&out)?;
            println!("{} samples of {} vertices written to {}", ds.len(), ds.template().num_vertices(), out.display());
        }
        Command::Hierarchy { mesh, levels, factor, out } => {
            let file = fs::File::open(&mesh).with_context(|| format!("opening {}", mesh.display()))?;
            let template: TriMesh64 = parse_obj(BufReader::new(file))?;
            let h = build_hierarchy(&template, levels, factor)?;
            h.export(&out)?;
            let counts: Vec<String> = h.counts().iter().map(|c| c.to_string()).collect();
            println!("{}", counts.join(","));
        }
        Command::Train { exp, out } => {
            let Experiment { cfg, data, hierarchy } = prepare(&exp)?;
            let mut model = Autoencoder64::build(cfg.model.clone(), hierarchy)?;
            log::info!("{} parameters ({} at inference)", model.count_parameters(false), model.count_parameters(true));
            let ckpt = out.join("checkpoints");
            let report = train(&mut model, &data, &cfg.train, Some(&ckpt))?;
            model.save(&out.join("model"))?;
            let mut w = create_file(&out.join("history.csv"))?;
            writeln!(w, "epoch,lr,loss")?;
            for (e, l) in report.history.iter().enumerate() {
                writeln!(w, "{},{},{}", e + 1, cfg.train.lr_at(e), l)?;
            }
            fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
            if report.degenerate_rows > 0 {
                log::warn!("{} degenerate attention rows during training", report.degenerate_rows);
            }
            println!("loss {} -> {}", report.initial_loss, report.final_loss);
        }
        Command::Eval { data, checkpoint, split, report, scale } => {
            let ds = load_dataset(&data)?;
            let model = load_model(&checkpoint)?;
            let m = evaluate(&model, &ds, &split, scale)?;
            m.write_csv(create_file(&report)?)?;
            let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
            m.write_curve_csv(create_file(&report.with_file_name(format!("{stem}_curve.csv")))?)?;
            println!("mean {} median {} std {}", m.mean, m.median, m.std);
        }
        Command::ExportMaps { checkpoint, out } => {
            let mut model = load_model(&checkpoint)?;
            model.export()?;
            for rec in model.mapping_matrices()? {
                let stem = format!("{}_{}", rec.direction.as_str(), rec.level);
                rec.mapping.write(&out, &stem, &rec.sidecar)?;
            }
            model.save(&out.join("model"))?;
            println!("{} inference parameters", model.count_parameters(true));
        }
        Command::Rf { checkpoint, level, vertex, direction, out } => {
            let model = load_model(&checkpoint)?;
            let dir = match direction {
                DirArg::Down => Direction::Down,
                DirArg::Up => Direction::Up,
            };
            let rec = model
                .mapping_matrices()?
                .into_iter()
                .find(|r| r.direction == dir && r.level == level)
                .with_context(|| format!("no {} mapping at level {level}", dir.as_str()))?;
            let field = receptive_field(&rec.mapping.matrix, vertex)?;
            let src = match dir {
                Direction::Down => level + 1,
                Direction::Up => level,
            };
            let bytes = serialize_ply(model.hierarchy().level(src), Some(&field))?;
            create_file(&out)?.write_all(&bytes)?;
            let nz = field.iter().filter(|&&w| w != 0.0).count();
            println!("{nz} vertices in the receptive field");
        }
        Command::Latent { op } => run_latent(op)?,
        Command::Compare { exp, methods, seeds, report } => {
            let e = prepare(&exp)?;
            let methods: Vec<Method> = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?
            };
            let res = compare_aggregators(&e.data, &e.hierarchy, &e.cfg, &methods, &seeds)?;
            write_results_csv(&res, create_file(&report)?)?;
            write_results_csv(&res, std::io::stdout().lock())?;
        }
        Command::Sweep { exp, param, values, report } => {
            let e = prepare(&exp)?;
            let values = if values.is_empty() { default_sweep_values(&param)? } else { values };
            let res = ablation_sweep(&e.data, &e.hierarchy, &e.cfg, &param, &values)?;
            write_results_csv(&res, create_file(&report)?)?;
            write_results_csv(&res, std::io::stdout().lock())?;
        }
        Command::Gradcheck { seed, tol, report } => {
            let cases = gradient_suite(seed, tol)?;
            if let Some(path) = report {
                write_gradcheck_csv(&cases, create_file(&path)?)?;
            }
            write_gradcheck_csv(&cases, std::io::stdout().lock())?;
            let failed: Vec<&str> = cases.iter().filter(|c| !c.report.passed).map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                bail!("gradient check failed for {}", failed.join(", "));
            }
        }
    }
    Ok(())
}

fn sample(ds: &Dataset64, i: usize) -> Result<Tensor64> {
    if i >= ds.len() {
        bail!("sample {i} out of range ({} samples)", ds.len());
    }
    Ok(ds.normalized_sample(i)?)
}

fn run_latent(op: LatentOp) -> Result<()> {
    let (common, pick) = match op {
        LatentOp::Interp(p) => (p.common, LatentPick::Pair { a: p.a, b: p.b, alpha: p.alpha, extrapolate: false }),
        LatentOp::Extrap(p) => (p.common, LatentPick::Pair { a: p.a, b: p.b, alpha: p.alpha, extrapolate: true }),
        LatentOp::Transfer { common, s0, s1, t0, mode } => (common, LatentPick::Transfer { s0, s1, t0, mode }),
    };
    let model = load_model(&common.checkpoint)?;
    let ds = load_dataset(&common.data)?;
    let y = match pick {
        LatentPick::Pair { a, b, alpha, extrapolate } => {
            let (za, zb) = (model.encode(&sample(&ds, a)?)?, model.encode(&sample(&ds, b)?)?);
            let z = if extrapolate { latent_extrapolate(&za, &zb, alpha)? } else { latent_interpolate(&za, &zb, alpha)? };
            model.decode(&z)?
        }
        LatentPick::Transfer { s0, s1, t0, mode } => {
            let mode = match mode {
                ModeArg::Vertex => TransferMode::VertexSpace,
                ModeArg::Latent => TransferMode::LatentSpace,
            };
            deformation_transfer(&model, &sample(&ds, s0)?, &sample(&ds, s1)?, &sample(&ds, t0)?, mode)?
        }
    };
    write_mesh(&common.out, ds.template(), &ds.denormalize(&y)?)?;
    println!("wrote {}", common.out.display());
    Ok(())
}

enum LatentPick {
    Pair { a: usize, b: usize, alpha: f64, extrapolate: bool },
    Transfer { s0: usize, s1: usize, t0: usize, mode: ModeArg },
}
