use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dmrirecon::btpde::{fitting_step, simulate_btpde};
use dmrirecon::deform::Augment;
use dmrirecon::experiments::{
    ablation_csv, beading_specs, bending_specs, fanning_specs, run_ablations, write_dataset, AblationPreset,
    GenerateConfig, Protocol,
};
use dmrirecon::fem::{assemble, PhysicsParams};
use dmrirecon::inverse::{reconstruct, GradientMethod, Optimizer, ReconConfig, ReconOptions, TraceRecord};
use dmrirecon::laplace_eig::{solve_basis_cached, BasisCache, BasisOptions, Truncation};
use dmrirecon::mesh::{load_mesh, save_mesh, TetMesh};
use dmrirecon::metrics::{evaluate, vertex_distance_csv};
use dmrirecon::sequence::GradientScheme;
use dmrirecon::signal::{simulate, SignalSet};
use dmrirecon::spectral::{CodecCache, LatentLayout};

/// Diffusion MRI simulation on tetrahedral meshes and mesh reconstruction
/// from signals.
///
/// Exit codes: 0 success, 2 invalid input, 3 numerical failure. Set
/// DMRIRECON_CACHE_DIR to cache eigenbases and spectral codecs on disk.
#[derive(Parser, Debug)]
#[command(name = "dmrirecon", version)]
struct Cli {
    /// JSON config with optional sections `params`, `protocol`, `recon`,
    /// `generate`, `basis`, `dt`; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (direction-set rotation, random
    /// rotations in `generate`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write deformed cylinder meshes and a manifest.
    Generate(GenerateArgs),
    /// Simulate the signal of a mesh.
    Simulate(SimulateArgs),
    /// Reconstruct a mesh from a reference signal.
    Reconstruct(ReconstructArgs),
    /// Compare two meshes (Chamfer, modified Chamfer, volumes).
    Evaluate(EvaluateArgs),
    /// Run an ablation batch and write a results table.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GeneratePreset {
    /// bend {0, 0.1, 0.3, 0.5} × twist {0, 0.5}
    Bending,
    /// {0, 2, 4, 6, 8} beads of amplitude 0.3
    Beading,
    /// fan angles {0, 32, 46, 60} degrees
    Fanning,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Deformation grid; otherwise `generate.specs` from the config.
    #[arg(long, value_enum)]
    preset: Option<GeneratePreset>,
    #[arg(long)]
    out: PathBuf,
    /// Vertex budget of the base cylinder [default: 315]
    #[arg(long)]
    vertex_budget: Option<usize>,
    /// Also write every mesh under the standard scaling and rotation
    /// augmentations.
    #[arg(long)]
    augment: bool,
    /// Also write every mesh this many times randomly rotated.
    #[arg(long)]
    random_rotations: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Mf,
    Btpde,
}

/// Acquisition flags shared by `simulate` and `ablate`.
#[derive(Args, Debug)]
struct SchemeArgs {
    /// Number of gradient directions [default: 30]
    #[arg(long)]
    ndir: Option<usize>,
    /// Comma-separated diffusion times Δ in ms [default: 5,20,45]
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Comma-separated b-values in ms/µm² [default: 1]
    #[arg(long, value_delimiter = ',')]
    bvals: Option<Vec<f64>>,
    /// Pulse duration δ in ms [default: 1]
    #[arg(long)]
    pulse: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Mesh as `<stem>`, `<stem>.node` or `<stem>.ele`.
    #[arg(long)]
    mesh: PathBuf,
    /// Scheme JSON; otherwise built from the acquisition flags.
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[command(flatten)]
    acquisition: SchemeArgs,
    #[arg(long, value_enum, default_value = "mf")]
    solver: SolverArg,
    /// Crank–Nicolson step in ms [default: largest δ/k ≤ δ/20 fitting
    /// every interval]
    #[arg(long)]
    dt: Option<f64>,
    /// Fixed number of Laplace eigenfunctions [default: geometric cutoff]
    #[arg(long)]
    n_eig: Option<usize>,
    /// Signal CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the scheme used as JSON.
    #[arg(long)]
    save_scheme: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Gd,
    Adam,
}

/// Optimizer flags shared by `reconstruct` and `ablate`.
#[derive(Args, Debug)]
struct ReconArgs {
    /// [default: 750]
    #[arg(long)]
    max_iters: Option<usize>,
    /// Learning rate η [default: 0.01]
    #[arg(long)]
    lr: Option<f64>,
    /// Loss multiplier k [default: 1000]
    #[arg(long)]
    loss_multiplier: Option<f64>,
    /// [default: gd]
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Use forward instead of central differences.
    #[arg(long)]
    forward_fd: bool,
    /// Finite-difference step in latent units [default: 0.01]
    #[arg(long)]
    fd_step: Option<f64>,
    /// Latent dimension, interleaved over the lowest spectral modes
    /// [default: 16]
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Fixed basis size [default: from the initial mesh]
    #[arg(long)]
    n_eig: Option<usize>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Reference signal CSV.
    #[arg(long)]
    reference: PathBuf,
    /// Initial mesh stem; its connectivity is kept.
    #[arg(long)]
    init: PathBuf,
    /// True mesh, to trace the modified Chamfer distance.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory for the mesh, trace, summary and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint and progress interval [default: 50]
    #[arg(long)]
    log_every: Option<usize>,
    #[command(flatten)]
    recon: ReconArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Reconstructed mesh stem.
    a: PathBuf,
    /// Reference mesh stem.
    b: PathBuf,
    /// Report JSON [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-vertex nearest distances from A to B as CSV.
    #[arg(long)]
    per_vertex: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    /// Results CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Vertex budget of the cylinder [default: 315]
    #[arg(long)]
    vertex_budget: Option<usize>,
    #[command(flatten)]
    acquisition: SchemeArgs,
    #[command(flatten)]
    recon: ReconArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    /// 3, 15, 30 and 60 directions on a β = 0.3 bend
    Directions,
    /// Δ ∈ {5}, {5,20}, {5,20,45}, {5,20,45,95} ms on a β = 0.3 bend
    DiffusionTimes,
    Bending,
    Beading,
    Fanning,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    params: PhysicsParams,
    protocol: Protocol,
    recon: ReconConfig,
    generate: GenerateConfig,
    basis: BasisOptions,
    dt: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<dmrirecon::Error>().is_some_and(|e| e.is_numerical()));
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().context("thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<FileConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => FileConfig::default(),
    };
    cfg.protocol.params = cfg.params.clone();
    if let Some(s) = cli.seed {
        cfg.protocol.rotation_seed = Some(s);
        cfg.generate.seed = s;
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(a, cfg),
        Command::Simulate(a) => cmd_simulate(a, cfg),
        Command::Reconstruct(a) => cmd_reconstruct(a, cfg),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a, cfg, cli.jobs),
    }
}

fn read_mesh(path: &Path) -> anyhow::Result<TetMesh> {
    let s = path.to_string_lossy();
    let stem = s.strip_suffix(".node").or_else(|| s.strip_suffix(".ele")).unwrap_or(&s).to_string();
    let mesh = load_mesh(Path::new(&format!("{stem}.node")), Path::new(&format!("{stem}.ele")))?;
    Ok(mesh)
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_generate(a: GenerateArgs, cfg: FileConfig) -> anyhow::Result<()> {
    let mut g = cfg.generate;
    if let Some(p) = a.preset {
        g.specs = match p {
            GeneratePreset::Bending => bending_specs(),
            GeneratePreset::Beading => beading_specs(),
            GeneratePreset::Fanning => fanning_specs(),
        };
    }
    if let Some(v) = a.vertex_budget {
        g.vertex_budget = v;
    }
    if a.augment {
        g.augment = Augment::standard_set();
    }
    if let Some(n) = a.random_rotations {
        g.random_rotations = n;
    }
    let manifest = write_dataset(&g, &a.out)?;
    eprintln!("wrote {} meshes to {}", manifest.meshes.len(), a.out.display());
    Ok(())
}

fn apply_scheme_args(p: &mut Protocol, a: &SchemeArgs) {
    if let Some(n) = a.ndir {
        p.ndir = n;
    }
    if let Some(d) = &a.deltas {
        p.diffusion_times = d.clone();
    }
    if let Some(b) = &a.bvals {
        p.bvalues = b.clone();
    }
    if let Some(d) = a.pulse {
        p.pulse = d;
    }
}

fn cmd_simulate(a: SimulateArgs, cfg: FileConfig) -> anyhow::Result<()> {
    let mesh = read_mesh(&a.mesh)?;
    let params = cfg.params;
    let scheme = match &a.scheme {
        Some(p) => GradientScheme::load(p)?,
        None => {
            let mut p = cfg.protocol;
            apply_scheme_args(&mut p, &a.acquisition);
            p.scheme()?
        }
    };
    if let Some(p) = &a.save_scheme {
        scheme.save(p)?;
    }
    let fem = assemble(&mesh, &params)?;
    let signal: SignalSet = match a.solver {
        SolverArg::Mf => {
            let mut opts = cfg.basis;
            if let Some(n) = a.n_eig {
                opts.truncation = Truncation::Count { n };
            }
            let cache = BasisCache::from_env();
            let basis = solve_basis_cached(&fem, &mesh, &params, &opts, cache.as_ref())?;
            simulate(&basis, &params, &scheme)?
        }
        SolverArg::Btpde => {
            let dt = match a.dt.or(cfg.dt) {
                Some(dt) => dt,
                None => {
                    let target = scheme.sequences.iter().map(|s| s.delta).fold(f64::INFINITY, f64::min) / 20.0;
                    fitting_step(&scheme.sequences, target).context("no time step divides every interval")?
                }
            };
            simulate_btpde(&fem, &params, &scheme, dt)?
        }
    };
    write_output(a.out.as_deref(), &signal.to_csv())
}

fn apply_recon_args(r: &mut ReconConfig, a: &ReconArgs) {
    if let Some(v) = a.max_iters {
        r.max_iters = v;
    }
    if let Some(v) = a.lr {
        r.learning_rate = v;
    }
    if let Some(v) = a.loss_multiplier {
        r.loss_multiplier = v;
    }
    if let Some(o) = a.optimizer {
        r.optimizer = match o {
            OptimizerArg::Gd => Optimizer::GradientDescent,
            OptimizerArg::Adam => Optimizer::AdaptiveMoment,
        };
    }
    if a.forward_fd {
        r.gradient = GradientMethod::ForwardFd;
    }
    if let Some(v) = a.fd_step {
        r.fd_step = v;
    }
    if let Some(d) = a.latent_dim {
        r.latent = LatentLayout::Interleaved { dim: d };
    }
    if let Some(n) = a.n_eig {
        r.n_eig = Some(n);
    }
}

#[derive(Serialize)]
struct ReconSummary {
    iterations: usize,
    best_iter: usize,
    initial_loss: f64,
    best_loss: f64,
    n_eig: usize,
    stop: dmrirecon::inverse::StopReason,
    initial_modified_chamfer: Option<f64>,
    best_modified_chamfer: Option<f64>,
}

fn cmd_reconstruct(a: ReconstructArgs, cfg: FileConfig) -> anyhow::Result<()> {
    let reference = SignalSet::load(&a.reference)?;
    let init = read_mesh(&a.init)?;
    let truth = a.truth.as_deref().map(read_mesh).transpose()?;
    let mut r = cfg.recon;
    apply_recon_args(&mut r, &a.recon);
    if let Some(v) = a.log_every {
        r.log_every = v;
    }
    r.validate()?;
    let codec = match BasisCache::from_env() {
        Some(c) => Some(CodecCache::new(c.dir()).codec(&init, r.n_coeff.min(init.n_vertices()), &r.latent)?),
        None => None,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let every = r.log_every.max(1);
    let progress = Box::new(move |rec: &TraceRecord| {
        if rec.iter % every == 0 {
            match rec.chamfer {
                Some(c) => eprintln!("iter {:5}  loss {:.6e}  volume {:.4}  chamfer {:.4}", rec.iter, rec.loss, rec.volume, c),
                None => eprintln!("iter {:5}  loss {:.6e}  volume {:.4}", rec.iter, rec.loss, rec.volume),
            }
        }
    });
    let opts = ReconOptions {
        codec,
        truth: truth.as_ref(),
        checkpoint_dir: Some(a.out.join("checkpoints")),
        progress: Some(progress),
    };
    let out = reconstruct(&init, &reference, &cfg.params, &r, opts)?;
    save_mesh(&out.mesh, &a.out.join("reconstructed"))?;
    std::fs::write(a.out.join("trace.csv"), out.trace.to_csv()).context("writing trace")?;
    let summary = ReconSummary {
        iterations: out.trace.records.len(),
        best_iter: out.best_iter,
        initial_loss: out.trace.records[0].loss,
        best_loss: out.best_loss,
        n_eig: out.n_eig,
        stop: out.stop,
        initial_modified_chamfer: out.trace.records[0].chamfer,
        best_modified_chamfer: out.trace.records[out.best_iter].chamfer,
    };
    std::fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?).context("writing summary")?;
    eprintln!("best loss {:.6e} at iteration {}", out.best_loss, out.best_iter);
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let ma = read_mesh(&a.a)?;
    let mb = read_mesh(&a.b)?;
    let report = evaluate(&ma, &mb)?;
    if let Some(p) = &a.per_vertex {
        std::fs::write(p, vertex_distance_csv(&ma, &mb)).with_context(|| format!("writing {}", p.display()))?;
    }
    write_output(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn cmd_ablate(a: AblateArgs, cfg: FileConfig, jobs: Option<usize>) -> anyhow::Result<()> {
    let mut protocol = cfg.protocol;
    apply_scheme_args(&mut protocol, &a.acquisition);
    if let Some(v) = a.vertex_budget {
        protocol.vertex_budget = v;
    }
    let mut r = cfg.recon;
    apply_recon_args(&mut r, &a.recon);
    let preset = match a.preset {
        PresetArg::Directions => AblationPreset::Directions,
        PresetArg::DiffusionTimes => AblationPreset::DiffusionTimes,
        PresetArg::Bending => AblationPreset::Bending,
        PresetArg::Beading => AblationPreset::Beading,
        PresetArg::Fanning => AblationPreset::Fanning,
    };
    let runs = preset.runs(&protocol);
    let jobs = jobs.unwrap_or_else(rayon::current_num_threads);
    eprintln!("running {} reconstructions", runs.len());
    let rows = run_ablations(&runs, &r, jobs)?;
    write_output(a.out.as_deref(), &ablation_csv(&rows))
}
