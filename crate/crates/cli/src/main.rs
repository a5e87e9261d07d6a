//! Command-line driver for the adaptive multi-mesh demo problems.
//!
//! `run` executes one configured problem and writes VTK snapshots, a CSV
//! time series and a final summary. `bench` executes the same configuration
//! in single-mesh and multi-mesh mode and prints mean per-step timings side
//! by side. `check-mesh` parses and validates a macro mesh file.
//!
//! Configuration files are flat `key = value` text with section prefixes
//! (`problem.*`, `mesh.*`, `adapt.<component>.*`, `solver.*`, `output.*`).
//! Unknown keys are rejected by name; command-line flags override file
//! settings.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use multimesh::config::Config;
use multimesh::driver::{run, Problem, RunOptions};
use multimesh::mesh::{MacroMesh, Mesh};
use multimesh::problems::biharmonic::{Biharmonic, BiharmonicConfig};
use multimesh::problems::cahn_hilliard::{CahnHilliard, CahnHilliardConfig};
use multimesh::problems::cavity::{Cavity, CavityConfig};
use multimesh::problems::dendrite::{Dendrite, DendriteConfig};
use multimesh::report::{BenchRow, BenchTable, RunLog};

#[derive(Parser)]
#[command(name = "multimesh", version, about = "Adaptive multi-mesh finite element demos")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a configured problem and write its outputs
    Run(RunArgs),
    /// Run the same problem in single-mesh and multi-mesh mode and compare
    Bench(RunArgs),
    /// Parse and validate a macro mesh file
    CheckMesh(CheckMeshArgs),
}

#[derive(Args)]
struct RunArgs {
    /// configuration file
    #[arg(long)]
    config: PathBuf,
    /// where to write VTK/CSV output (overrides output.dir)
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// random seed (overrides problem.seed)
    #[arg(long)]
    seed: Option<u64>,
    /// discretization mode (overrides problem.mode)
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// step limit (overrides problem.max_steps)
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct CheckMeshArgs {
    /// macro mesh file to inspect
    #[arg(long, required_unless_present = "config")]
    file: Option<PathBuf>,
    /// configuration file whose mesh.file key names the mesh
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Single,
    Multi,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::CheckMesh(args) => cmd_check_mesh(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// A constructed problem, kept concrete so each kind can print its own
/// summary after the run.
enum Built {
    Biharmonic(Biharmonic),
    CahnHilliard(CahnHilliard),
    Dendrite(Dendrite),
    Cavity(Cavity),
}

impl Built {
    fn as_problem(&mut self) -> &mut dyn Problem {
        match self {
            Built::Biharmonic(p) => p,
            Built::CahnHilliard(p) => p,
            Built::Dendrite(p) => p,
            Built::Cavity(p) => p,
        }
    }
}

/// Everything the runner needs besides the problem itself.
struct OutputPlan {
    kind: String,
    dir: PathBuf,
    every: usize,
    max_steps: usize,
}

fn load_config(args: &RunArgs) -> anyhow::Result<Config> {
    let mut cfg = Config::from_file(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(dir) = &args.output_dir {
        cfg.set("output.dir", dir.display());
    }
    if let Some(seed) = args.seed {
        cfg.set("problem.seed", seed);
    }
    if let Some(mode) = args.mode {
        cfg.set("problem.mode", match mode {
            Mode::Single => "single",
            Mode::Multi => "multi",
        });
    }
    if let Some(n) = args.max_steps {
        cfg.set("problem.max_steps", n);
    }
    Ok(cfg)
}

/// Reads the run-shape keys and builds the configured problem, consuming
/// every recognized key so that leftovers can be rejected by name.
fn build(cfg: &mut Config) -> anyhow::Result<(Built, OutputPlan)> {
    let kind = cfg.require_str("problem.kind")?;
    let default_steps = match kind.as_str() {
        "biharmonic" => 1,
        "cahn_hilliard" => 200,
        "dendrite" => 500,
        "cavity" => 2000,
        other => bail!("unknown problem.kind `{other}`"),
    };
    let plan = OutputPlan {
        kind: kind.clone(),
        dir: PathBuf::from(cfg.str_or("output.dir", "out")),
        every: cfg.usize_or("output.every", 0)?,
        max_steps: cfg.usize_or("problem.max_steps", default_steps)?,
    };

    let mode = cfg.str_or("problem.mode", "multi");
    let multi = match mode.as_str() {
        "multi" => true,
        "single" => false,
        other => bail!("problem.mode must be `single` or `multi`, got `{other}`"),
    };
    let macro_mesh = match cfg.get_str("mesh.file") {
        Some(p) => Some(
            Arc::new(MacroMesh::from_file(Path::new(&p)).with_context(|| format!("mesh.file {p}"))?),
        ),
        None => None,
    };

    let built = match kind.as_str() {
        "biharmonic" => {
            let d = BiharmonicConfig::default();
            let c = BiharmonicConfig {
                levels: cfg.usize_or("mesh.levels", d.levels)?,
                degree: cfg.usize_or("mesh.degree", d.degree as usize)? as u32,
                multimesh: multi,
                solver_tol: cfg.f64_or("solver.tol", d.solver_tol)?,
                solver_max_iter: cfg.usize_or("solver.max_iter", d.solver_max_iter)?,
            };
            let p = match macro_mesh {
                Some(m) => Biharmonic::new_on(c, m)?,
                None => Biharmonic::new(c)?,
            };
            Built::Biharmonic(p)
        }
        "cahn_hilliard" => {
            let d = CahnHilliardConfig::default();
            let c = CahnHilliardConfig {
                pre_refine: cfg.usize_or("mesh.pre_refine", d.pre_refine)?,
                single_mesh: !multi,
                epsilon: cfg.f64_or("problem.epsilon", d.epsilon)?,
                timestep: cfg.f64_or("problem.timestep", d.timestep)?,
                seed: cfg.u64_or("problem.seed", d.seed)?,
                noise_lo: cfg.f64_or("problem.noise_lo", d.noise_lo)?,
                noise_hi: cfg.f64_or("problem.noise_hi", d.noise_hi)?,
                adapt_from: cfg.usize_or("adapt.start", d.adapt_from)?,
                phi_tolerance: cfg.f64_or("adapt.phi.tolerance", d.phi_tolerance)?,
                mu_tolerance: cfg.f64_or("adapt.mu.tolerance", d.mu_tolerance)?,
                theta_refine: cfg.f64_or("adapt.theta_refine", d.theta_refine)?,
                theta_coarsen: cfg.f64_or("adapt.theta_coarsen", d.theta_coarsen)?,
                max_level: read_level(cfg, "mesh.max_level", d.max_level)?,
                solver_tol: cfg.f64_or("solver.tol", d.solver_tol)?,
                solver_max_iter: cfg.usize_or("solver.max_iter", d.solver_max_iter)?,
            };
            let p = match macro_mesh {
                Some(m) => CahnHilliard::new_on(c, m)?,
                None => CahnHilliard::new(c)?,
            };
            Built::CahnHilliard(p)
        }
        "dendrite" => {
            if macro_mesh.is_some() {
                bail!("mesh.file is not supported for `dendrite`: it builds its own geometry");
            }
            let d = DendriteConfig::default();
            let c = DendriteConfig {
                extent: cfg.f64_or("problem.extent", d.extent)?,
                undercooling: cfg.f64_or("problem.undercooling", d.undercooling)?,
                diffusivity: cfg.f64_or("problem.diffusivity", d.diffusivity)?,
                anisotropy: cfg.f64_or("problem.anisotropy", d.anisotropy)?,
                relax_time: cfg.f64_or("problem.relax_time", d.relax_time)?,
                timestep: cfg.f64_or("problem.timestep", d.timestep)?,
                seed_radius: cfg.f64_or("problem.seed_radius", d.seed_radius)?,
                pre_refine: cfg.usize_or("mesh.pre_refine", d.pre_refine)?,
                single_mesh: !multi,
                max_level: read_level(cfg, "mesh.max_level", d.max_level)?,
                phi_tolerance: cfg.f64_or("adapt.phi.tolerance", d.phi_tolerance)?,
                u_tolerance: cfg.f64_or("adapt.u.tolerance", d.u_tolerance)?,
                theta_coarsen: cfg.f64_or("adapt.theta_coarsen", d.theta_coarsen)?,
                solver_tol: cfg.f64_or("solver.tol", d.solver_tol)?,
                solver_max_iter: cfg.usize_or("solver.max_iter", d.solver_max_iter)?,
            };
            Built::Dendrite(Dendrite::new(c)?)
        }
        "cavity" => {
            if macro_mesh.is_some() {
                bail!("mesh.file is not supported for `cavity`: it builds its own geometry");
            }
            let d = CavityConfig::default();
            let c = CavityConfig {
                reynolds: cfg.f64_or("problem.reynolds", d.reynolds)?,
                pressure_levels: cfg.usize_or("mesh.pressure_levels", d.pressure_levels)?,
                velocity_extra_levels: cfg
                    .usize_or("mesh.velocity_extra_levels", d.velocity_extra_levels)?,
                taylor_hood: !multi,
                regularized_lid: cfg.bool_or("problem.regularized_lid", d.regularized_lid)?,
                tau0: cfg.f64_or("problem.tau0", d.tau0)?,
                tau_max: cfg.f64_or("problem.tau_max", d.tau_max)?,
                tau_growth: cfg.f64_or("problem.tau_growth", d.tau_growth)?,
                steady_tol: cfg.f64_or("problem.steady_tol", d.steady_tol)?,
                penalty: cfg.f64_or("problem.penalty", d.penalty)?,
                solver_tol: cfg.f64_or("solver.tol", d.solver_tol)?,
                solver_max_iter: cfg.usize_or("solver.max_iter", d.solver_max_iter)?,
            };
            Built::Cavity(Cavity::new(c)?)
        }
        _ => unreachable!("kind validated above"),
    };
    Ok((built, plan))
}

fn read_level(cfg: &mut Config, key: &str, default: u8) -> anyhow::Result<u8> {
    let v = cfg.usize_or(key, default as usize)?;
    if v > 60 {
        bail!("{key} = {v} is out of range (limit 60)");
    }
    Ok(v as u8)
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args)?;
    let (mut built, plan) = build(&mut cfg)?;
    cfg.finish()?;

    let opts = RunOptions {
        max_steps: plan.max_steps,
        output_dir: Some(plan.dir.clone()),
        output_every: plan.every,
    };
    let log = run(built.as_problem(), &opts)?;
    let csv = plan.dir.join(format!("{}.csv", plan.kind));
    log.write_csv(&csv)?;

    print_summary(&built, &plan, &log)?;
    println!("time series: {}", csv.display());
    Ok(())
}

fn print_summary(built: &Built, plan: &OutputPlan, log: &RunLog) -> anyhow::Result<()> {
    let steps = log.records().len();
    println!("== {} ==", plan.kind);
    if let Some(last) = log.records().last() {
        println!("steps: {steps}   final time: {:.6}", last.time);
        for c in &last.components {
            println!("  {}: {} dofs on {} leaf elements", c.name, c.dofs, c.leaves);
        }
    }
    match built {
        Built::Biharmonic(p) => {
            println!("L2 error against the manufactured solution: {:.3e}", p.last_error);
        }
        Built::CahnHilliard(p) => {
            println!("relative mass drift: {:.3e}", p.max_mass_drift);
        }
        Built::Dendrite(p) => {
            match p.tip_position() {
                Ok(tip) => println!("tip position: {tip:.4}"),
                Err(_) => println!("tip position: no interface crossing on the axis"),
            }
            println!("system nonzeros: {}", p.last_nnz);
        }
        Built::Cavity(p) => {
            println!(
                "steady: {}   last relative change: {:.3e}",
                if p.finished() { "yes" } else { "no" },
                p.last_rel_change
            );
            println!("velocity divergence norm: {:.6e}", p.divergence_norm()?);
            let eddies = p.eddies()?;
            println!("eddies (stream-function extrema), strongest first:");
            for (i, e) in eddies.iter().enumerate() {
                println!(
                    "  {}: center ({:.4}, {:.4})   strength {:+.4e}",
                    i + 1,
                    e.center[0],
                    e.center[1],
                    e.strength
                );
            }
        }
    }
    Ok(())
}

/// Mean per-step seconds spent in assembly, the linear solver, and the
/// estimate-mark-adapt stage, plus their sum and the final total dof count.
fn mean_times(log: &RunLog) -> (f64, f64, f64, f64, usize) {
    let n = log.records().len().max(1) as f64;
    let (mut a, mut s, mut e) = (0.0, 0.0, 0.0);
    for r in log.records() {
        a += r.assemble_seconds;
        s += r.solve_seconds;
        e += r.adapt_seconds;
    }
    let dofs = log
        .records()
        .last()
        .map(|r| r.components.iter().map(|c| c.dofs).sum())
        .unwrap_or(0);
    (a / n, s / n, e / n, (a + s + e) / n, dofs)
}

fn cmd_bench(args: &RunArgs) -> anyhow::Result<()> {
    let mut logs = Vec::new();
    let mut kind = String::new();
    for mode in ["single", "multi"] {
        let mut cfg = load_config(args)?;
        cfg.set("problem.mode", mode);
        let (mut built, plan) = build(&mut cfg)?;
        cfg.finish()?;
        let opts = RunOptions {
            max_steps: plan.max_steps,
            output_dir: None,
            output_every: 0,
        };
        let log = run(built.as_problem(), &opts)?;
        println!("{} `{}`: {} steps", mode, plan.kind, log.records().len());
        kind = plan.kind;
        logs.push(log);
    }
    let (sa, ss, se, so, sd) = mean_times(&logs[0]);
    let (ma, ms, me, mo, md) = mean_times(&logs[1]);
    let mut table = BenchTable::default();
    for (label, single, multi) in [
        ("assembler", sa, ma),
        ("solver", ss, ms),
        ("estimator", se, me),
        ("overall", so, mo),
    ] {
        table.push(BenchRow {
            label: format!("{kind} {label}"),
            single_seconds: single,
            multi_seconds: multi,
            single_dofs: sd,
            multi_dofs: md,
        });
    }
    let rendered = table.render();
    println!("mean per-step times, single-mesh vs multi-mesh:");
    print!("{rendered}");
    if let Some(dir) = &args.output_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("bench.txt");
        std::fs::write(&path, &rendered)?;
        println!("table written to {}", path.display());
    }
    Ok(())
}

fn cmd_check_mesh(args: &CheckMeshArgs) -> anyhow::Result<()> {
    let path = match (&args.file, &args.config) {
        (Some(f), _) => f.clone(),
        (None, Some(c)) => {
            let mut cfg = Config::from_file(c)?;
            PathBuf::from(cfg.require_str("mesh.file")?)
        }
        (None, None) => bail!("pass --file or --config"),
    };
    let m = MacroMesh::from_file(&path).with_context(|| format!("reading {}", path.display()))?;
    m.validate()?;
    let mesh = Mesh::new(Arc::new(m));
    mesh.validate_conformity()?;
    let m = mesh.macro_mesh();
    println!(
        "{}: OK — dim {}, {} vertices, {} macro elements",
        path.display(),
        m.dim,
        m.vertices.len(),
        m.elements.len()
    );
    Ok(())
}
